use std::rc::Rc;

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn add<'t, T: Scalar>(a: Var<'t, T>, b: Var<'t, T>) -> Var<'t, T> {
    let (va, vb) = (a.value(), b.value());
    assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
    let out = va.zip_map(&vb, |x, y| x + y);
    a.tape.op(out, &[a, b], Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]))
}

pub fn sub<'t, T: Scalar>(a: Var<'t, T>, b: Var<'t, T>) -> Var<'t, T> {
    let (va, vb) = (a.value(), b.value());
    assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
    let out = va.zip_map(&vb, |x, y| x - y);
    a.tape.op(
        out,
        &[a, b],
        Box::new(|g, _| vec![Some(g.clone()), Some(g.map(|v| -v))]),
    )
}

pub fn scale<'t, T: Scalar>(a: Var<'t, T>, s: T) -> Var<'t, T> {
    let out = a.value().scale(s);
    a.tape.op(out, &[a], Box::new(move |g, _| vec![Some(g.scale(s))]))
}

/// `sum_i a_i * w_i` against a constant weight tensor of the same shape.
pub fn weighted_sum<'t, T: Scalar>(a: Var<'t, T>, weights: &Tensor<T>) -> Var<'t, T> {
    let va = a.value();
    assert_eq!(va.shape(), weights.shape(), "weighted_sum shape mismatch");
    let s = va.data().iter().zip(weights.data()).map(|(&x, &w)| x * w).sum::<T>();
    let weights = weights.clone();
    a.tape.op(
        Tensor::scalar(s),
        &[a],
        Box::new(move |g, _| vec![Some(weights.scale(g.data()[0]))]),
    )
}

/// Mean over every element.
pub fn mean_all<'t, T: Scalar>(a: Var<'t, T>) -> Var<'t, T> {
    let va = a.value();
    let n = T::of(va.len() as f64);
    let shape = va.shape().to_vec();
    a.tape.op(
        Tensor::scalar(va.sum() / n),
        &[a],
        Box::new(move |g, _| vec![Some(Tensor::full(&shape, g.data()[0] / n))]),
    )
}

/// `sum_i w_i * x_i` over single-element vars.
pub fn sum_scalars<'t, T: Scalar>(tape: &'t Tape<T>, terms: &[(Var<'t, T>, T)]) -> Var<'t, T> {
    let total = terms.iter().fold(T::zero(), |acc, (v, w)| acc + v.item() * *w);
    let weights: Vec<T> = terms.iter().map(|(_, w)| *w).collect();
    let parents: Vec<Var<'t, T>> = terms.iter().map(|(v, _)| *v).collect();
    tape.op(
        Tensor::scalar(total),
        &parents,
        Box::new(move |g, _| {
            weights
                .iter()
                .map(|&w| Some(Tensor::scalar(g.data()[0] * w)))
                .collect()
        }),
    )
}

pub fn leaky_relu<'t, T: Scalar>(a: Var<'t, T>, slope: T) -> Var<'t, T> {
    let x = a.value();
    let out = x.map(|v| if v > T::zero() { v } else { v * slope });
    a.tape.op(
        out,
        &[a],
        Box::new(move |g, _| {
            vec![Some(g.zip_map(&x, |gv, xv| if xv > T::zero() { gv } else { gv * slope }))]
        }),
    )
}

/// Element-wise absolute value; the gradient at zero is zero.
pub fn abs<'t, T: Scalar>(a: Var<'t, T>) -> Var<'t, T> {
    let x = a.value();
    a.tape.op(
        x.map(|v| v.abs()),
        &[a],
        Box::new(move |g, _| {
            vec![Some(g.zip_map(&x, |gv, xv| {
                if xv > T::zero() {
                    gv
                } else if xv < T::zero() {
                    -gv
                } else {
                    T::zero()
                }
            }))]
        }),
    )
}

/// Average of adjacent row pairs: `[B,C,H,W] -> [B,C,H/2,W]`.
pub fn avg_pool_h2<'t, T: Scalar>(a: Var<'t, T>) -> Result<Var<'t, T>> {
    let x = a.value();
    let (b, c, h, w) = x.dims4();
    if h % 2 != 0 {
        return Err(Error::Shape(format!("average pooling needs even H, got {h}")));
    }
    let ho = h / 2;
    let half = T::of(0.5);
    let mut out = Tensor::zeros(&[b, c, ho, w]);
    let src = x.data();
    for (plane, dst) in out.data_mut().chunks_exact_mut(ho * w).enumerate() {
        let base = plane * h * w;
        for r in 0..ho {
            for col in 0..w {
                dst[r * w + col] = (src[base + 2 * r * w + col] + src[base + (2 * r + 1) * w + col]) * half;
            }
        }
    }
    Ok(a.tape.op(
        out,
        &[a],
        Box::new(move |g, _| {
            let mut gx = Tensor::zeros(&[b, c, h, w]);
            let gd = g.data();
            for (plane, dst) in gx.data_mut().chunks_exact_mut(h * w).enumerate() {
                let base = plane * ho * w;
                for r in 0..ho {
                    for col in 0..w {
                        let v = gd[base + r * w + col] * half;
                        dst[2 * r * w + col] = v;
                        dst[(2 * r + 1) * w + col] = v;
                    }
                }
            }
            vec![Some(gx)]
        }),
    ))
}

/// Nearest-neighbour doubling along H: `[B,C,H,W] -> [B,C,2H,W]`.
pub fn upsample_h2<'t, T: Scalar>(a: Var<'t, T>) -> Var<'t, T> {
    let x = a.value();
    let (b, c, h, w) = x.dims4();
    let mut out = Tensor::zeros(&[b, c, 2 * h, w]);
    let src = x.data();
    for (plane, dst) in out.data_mut().chunks_exact_mut(2 * h * w).enumerate() {
        let row_src = &src[plane * h * w..(plane + 1) * h * w];
        for r in 0..h {
            let row = &row_src[r * w..(r + 1) * w];
            dst[2 * r * w..(2 * r + 1) * w].copy_from_slice(row);
            dst[(2 * r + 1) * w..(2 * r + 2) * w].copy_from_slice(row);
        }
    }
    a.tape.op(
        out,
        &[a],
        Box::new(move |g, _| {
            let mut gx = Tensor::zeros(&[b, c, h, w]);
            let gd = g.data();
            for (plane, dst) in gx.data_mut().chunks_exact_mut(h * w).enumerate() {
                let base = plane * 2 * h * w;
                for r in 0..h {
                    for col in 0..w {
                        dst[r * w + col] = gd[base + 2 * r * w + col] + gd[base + (2 * r + 1) * w + col];
                    }
                }
            }
            vec![Some(gx)]
        }),
    )
}

/// Mean over the spatial plane: `[B,C,H,W] -> [B,C]`.
pub fn global_avg_pool<'t, T: Scalar>(a: Var<'t, T>) -> Var<'t, T> {
    let x = a.value();
    let (b, c, h, w) = x.dims4();
    let inv = T::one() / T::of((h * w) as f64);
    let data = x
        .data()
        .chunks_exact(h * w)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    let out = Tensor::from_vec(&[b, c], data).expect("pool shape");
    a.tape.op(
        out,
        &[a],
        Box::new(move |g, _| {
            let mut gx = Tensor::zeros(&[b, c, h, w]);
            for (dst, &gv) in gx.data_mut().chunks_exact_mut(h * w).zip(g.data()) {
                dst.fill(gv * inv);
            }
            vec![Some(gx)]
        }),
    )
}

/// Concatenation along axis 1 of rank-4 tensors sharing `B, H, W`.
pub fn concat_channels<'t, T: Scalar>(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|p| p.value()).collect();
    let (b, _, h, w) = values[0].dims4();
    let mut channels = Vec::with_capacity(values.len());
    for v in &values {
        let (vb, vc, vh, vw) = v.dims4();
        if (vb, vh, vw) != (b, h, w) {
            return Err(Error::Shape(format!(
                "channel concat of {:?} and {:?}",
                values[0].shape(),
                v.shape()
            )));
        }
        channels.push(vc);
    }
    let total: usize = channels.iter().sum();
    let plane = h * w;
    let mut out = Vec::with_capacity(b * total * plane);
    for n in 0..b {
        for (v, &c) in values.iter().zip(&channels) {
            out.extend_from_slice(&v.data()[n * c * plane..(n + 1) * c * plane]);
        }
    }
    let out = Tensor::from_vec(&[b, total, h, w], out)?;
    Ok(parts[0].tape.op(
        out,
        parts,
        Box::new(move |g, needs| {
            let mut offset = 0;
            channels
                .iter()
                .zip(needs)
                .map(|(&c, &need)| {
                    let start = offset;
                    offset += c;
                    need.then(|| {
                        let mut data = Vec::with_capacity(b * c * plane);
                        for n in 0..b {
                            let base = (n * total + start) * plane;
                            data.extend_from_slice(&g.data()[base..base + c * plane]);
                        }
                        Tensor::from_vec(&[b, c, h, w], data).expect("split shape")
                    })
                })
                .collect()
        }),
    ))
}

/// Concatenation along the leading (batch) axis.
pub fn concat_batch<'t, T: Scalar>(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|p| p.value()).collect();
    let inner_shape = values[0].shape()[1..].to_vec();
    let mut rows = Vec::with_capacity(values.len());
    let mut data = Vec::new();
    for v in &values {
        if v.shape()[1..] != inner_shape[..] {
            return Err(Error::Shape(format!(
                "batch concat of {:?} and {:?}",
                values[0].shape(),
                v.shape()
            )));
        }
        rows.push(v.shape()[0]);
        data.extend_from_slice(v.data());
    }
    let mut shape = vec![rows.iter().sum()];
    shape.extend_from_slice(&inner_shape);
    let inner: usize = inner_shape.iter().product();
    let out = Tensor::from_vec(&shape, data)?;
    Ok(parts[0].tape.op(
        out,
        parts,
        Box::new(move |g, needs| {
            let mut offset = 0;
            rows.iter()
                .zip(needs)
                .map(|(&r, &need)| {
                    let start = offset;
                    offset += r;
                    need.then(|| {
                        let mut s = vec![r];
                        s.extend_from_slice(&inner_shape);
                        Tensor::from_vec(&s, g.data()[start * inner..(start + r) * inner].to_vec())
                            .expect("split shape")
                    })
                })
                .collect()
        }),
    ))
}

/// `y = x W^T + b` with `x: [B, D]`, `W: [N, D]`, `b: [N]`.
pub fn linear<'t, T: Scalar>(x: Var<'t, T>, weight: Var<'t, T>, bias: Var<'t, T>) -> Result<Var<'t, T>> {
    let (vx, vw, vb) = (x.value(), weight.value(), bias.value());
    let (batch, d) = vx.dims2();
    let (n, dw) = vw.dims2();
    if d != dw || vb.len() != n {
        return Err(Error::Shape(format!(
            "linear of {:?} with weight {:?} and bias {:?}",
            vx.shape(),
            vw.shape(),
            vb.shape()
        )));
    }
    let mut out = Tensor::zeros(&[batch, n]);
    for row in out.data_mut().chunks_exact_mut(n) {
        row.copy_from_slice(vb.data());
    }
    let (di, ni) = (d as isize, n as isize);
    T::gemm(batch, d, n, T::one(), vx.data(), di, 1, vw.data(), 1, di, T::one(), out.data_mut(), ni, 1);
    Ok(x.tape.op(
        out,
        &[x, weight, bias],
        Box::new(move |g, needs| {
            let gx = needs[0].then(|| {
                let mut gx = Tensor::zeros(&[batch, d]);
                T::gemm(batch, n, d, T::one(), g.data(), ni, 1, vw.data(), di, 1, T::zero(), gx.data_mut(), di, 1);
                gx
            });
            let gw = needs[1].then(|| {
                let mut gw = Tensor::zeros(&[n, d]);
                T::gemm(n, batch, d, T::one(), g.data(), 1, ni, vx.data(), di, 1, T::zero(), gw.data_mut(), di, 1);
                gw
            });
            let gb = needs[2].then(|| {
                let mut gb = Tensor::zeros(&[n]);
                for row in g.data().chunks_exact(n) {
                    for (acc, &v) in gb.data_mut().iter_mut().zip(row) {
                        *acc = *acc + v;
                    }
                }
                gb
            });
            vec![gx, gw, gb]
        }),
    ))
}

/// Wraps an angle difference into `(-pi, pi]`.
#[inline]
pub(crate) fn wrap_angle<T: Scalar>(d: T) -> T {
    let two_pi = T::PI() + T::PI();
    let mut w = d - two_pi * (d / two_pi).round();
    if w <= -T::PI() {
        w = w + two_pi;
    }
    w
}

/// Mean absolute difference of two equally shaped tensors.
///
/// With `wrap` the difference is first wrapped into `(-pi, pi]`, which is
/// the circular distance between two angles.
pub fn mean_abs_diff<'t, T: Scalar>(a: Var<'t, T>, b: Var<'t, T>, wrap: bool) -> Result<Var<'t, T>> {
    let (va, vb) = (a.value(), b.value());
    same_shape(&va, &vb, "mean absolute difference")?;
    let n = T::of(va.len() as f64);
    let diff = va.zip_map(&vb, |x, y| if wrap { wrap_angle(x - y) } else { x - y });
    let value = diff.data().iter().map(|d| d.abs()).sum::<T>() / n;
    Ok(a.tape.op(
        Tensor::scalar(value),
        &[a, b],
        Box::new(move |g, needs| {
            let s = g.data()[0] / n;
            let ga = diff.map(|d| {
                if d > T::zero() {
                    s
                } else if d < T::zero() {
                    -s
                } else {
                    T::zero()
                }
            });
            let gb = needs[1].then(|| ga.map(|v| -v));
            vec![needs[0].then_some(ga), gb]
        }),
    ))
}

/// Row-wise log-softmax with max subtraction.
pub(crate) fn log_softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let (_, n) = logits.dims2();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(n) {
        let m = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let lse = row.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
        row.iter_mut().for_each(|v| *v = *v - lse);
    }
    out
}

/// Mean negative log-likelihood of `labels` under the softmax of `logits`.
pub fn cross_entropy<'t, T: Scalar>(logits: Var<'t, T>, labels: &[usize]) -> Result<Var<'t, T>> {
    let v = logits.value();
    let (b, n) = v.dims2();
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for {b} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {n} classes"
        )));
    }
    let logp = log_softmax_rows(&v);
    let bt = T::of(b as f64);
    let loss = -labels
        .iter()
        .enumerate()
        .map(|(i, &l)| logp.data()[i * n + l])
        .sum::<T>()
        / bt;
    let labels = labels.to_vec();
    Ok(logits.tape.op(
        Tensor::scalar(loss),
        &[logits],
        Box::new(move |g, _| {
            let s = g.data()[0] / bt;
            let mut gx = logp.map(|lp| lp.exp() * s);
            for (i, &l) in labels.iter().enumerate() {
                gx.data_mut()[i * n + l] = gx.data()[i * n + l] - s;
            }
            vec![Some(gx)]
        }),
    ))
}
