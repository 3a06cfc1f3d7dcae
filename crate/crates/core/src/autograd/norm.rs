use super::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-channel batch statistics observed during a training-mode pass.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Tensor<T>,
    /// Unbiased variance, as used for running estimates.
    pub var_unbiased: Tensor<T>,
}

fn check<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(usize, usize, usize)> {
    if x.shape().len() != 4 {
        return Err(Error::Shape(format!("batch norm of {:?}", x.shape())));
    }
    let (b, c, h, w) = x.dims4();
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Shape(format!(
            "batch norm affine parameters {:?}/{:?} for {c} channels",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok((b, c, h * w))
}

/// Normalizes each channel with the statistics of the current batch.
pub fn batch_norm_train<'t, T: Scalar>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    eps: T,
) -> Result<(Var<'t, T>, BatchStats<T>)> {
    let (vx, vg, vb) = (x.value(), gamma.value(), beta.value());
    let (b, c, plane) = check(&vx, &vg, &vb)?;
    let count = b * plane;
    let nt = T::of(count as f64);
    let xd = vx.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for n in 0..b {
        for ch in 0..c {
            let p = &xd[(n * c + ch) * plane..(n * c + ch + 1) * plane];
            mean[ch] = mean[ch] + p.iter().copied().sum::<T>();
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / nt);
    for n in 0..b {
        for ch in 0..c {
            let p = &xd[(n * c + ch) * plane..(n * c + ch + 1) * plane];
            var[ch] = var[ch] + p.iter().map(|&v| (v - mean[ch]) * (v - mean[ch])).sum::<T>();
        }
    }
    let var_unbiased: Vec<T> = var
        .iter()
        .map(|&s| if count > 1 { s / T::of((count - 1) as f64) } else { T::zero() })
        .collect();
    let inv_std: Vec<T> = var.iter().map(|&s| T::one() / (s / nt + eps).sqrt()).collect();

    let mut xhat = vx.as_ref().clone();
    let mut out = vx.as_ref().clone();
    for n in 0..b {
        for ch in 0..c {
            let r = (n * c + ch) * plane..(n * c + ch + 1) * plane;
            for (xh, o) in xhat.data_mut()[r.clone()].iter_mut().zip(&mut out.data_mut()[r]) {
                *xh = (*xh - mean[ch]) * inv_std[ch];
                *o = *xh * vg.data()[ch] + vb.data()[ch];
            }
        }
    }
    let stats = BatchStats {
        mean: Tensor::from_vec(&[c], mean)?,
        var_unbiased: Tensor::from_vec(&[c], var_unbiased)?,
    };
    let shape = vx.shape().to_vec();
    let var = x.tape().op(
        out,
        &[x, gamma, beta],
        Box::new(move |g, needs| {
            let gd = g.data();
            let xh = xhat.data();
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gx = vec![T::zero(); c];
            for n in 0..b {
                for ch in 0..c {
                    let r = (n * c + ch) * plane..(n * c + ch + 1) * plane;
                    for (&gv, &xv) in gd[r.clone()].iter().zip(&xh[r]) {
                        sum_g[ch] = sum_g[ch] + gv;
                        sum_gx[ch] = sum_gx[ch] + gv * xv;
                    }
                }
            }
            let gx = needs[0].then(|| {
                let mut gx = Tensor::zeros(&shape);
                for n in 0..b {
                    for ch in 0..c {
                        let k = vg.data()[ch] * inv_std[ch] / nt;
                        let r = (n * c + ch) * plane..(n * c + ch + 1) * plane;
                        for ((dst, &gv), &xv) in gx.data_mut()[r.clone()].iter_mut().zip(&gd[r.clone()]).zip(&xh[r]) {
                            *dst = k * (nt * gv - sum_g[ch] - xv * sum_gx[ch]);
                        }
                    }
                }
                gx
            });
            let gg = needs[1].then(|| Tensor::from_vec(&[c], sum_gx.clone()).expect("shape"));
            let gb = needs[2].then(|| Tensor::from_vec(&[c], sum_g.clone()).expect("shape"));
            vec![gx, gg, gb]
        }),
    );
    Ok((var, stats))
}

/// Normalizes each channel with fixed running statistics.
pub fn batch_norm_eval<'t, T: Scalar>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: T,
) -> Result<Var<'t, T>> {
    let (vx, vg, vb) = (x.value(), gamma.value(), beta.value());
    let (b, c, plane) = check(&vx, &vg, &vb)?;
    let scale: Vec<T> = (0..c)
        .map(|ch| vg.data()[ch] / (running_var.data()[ch] + eps).sqrt())
        .collect();
    let shift: Vec<T> = (0..c)
        .map(|ch| vb.data()[ch] - running_mean.data()[ch] * scale[ch])
        .collect();
    let mut out = vx.as_ref().clone();
    for n in 0..b {
        for ch in 0..c {
            for v in &mut out.data_mut()[(n * c + ch) * plane..(n * c + ch + 1) * plane] {
                *v = *v * scale[ch] + shift[ch];
            }
        }
    }
    let rm = running_mean.clone();
    let inv: Vec<T> = (0..c).map(|ch| T::one() / (running_var.data()[ch] + eps).sqrt()).collect();
    let shape = vx.shape().to_vec();
    Ok(x.tape().op(
        out,
        &[x, gamma, beta],
        Box::new(move |g, needs| {
            let gd = g.data();
            let gx = needs[0].then(|| {
                let mut gx = Tensor::zeros(&shape);
                for n in 0..b {
                    for ch in 0..c {
                        let r = (n * c + ch) * plane..(n * c + ch + 1) * plane;
                        for (dst, &gv) in gx.data_mut()[r.clone()].iter_mut().zip(&gd[r]) {
                            *dst = gv * scale[ch];
                        }
                    }
                }
                gx
            });
            let mut gg = vec![T::zero(); c];
            let mut gb = vec![T::zero(); c];
            for n in 0..b {
                for ch in 0..c {
                    let r = (n * c + ch) * plane..(n * c + ch + 1) * plane;
                    for (&gv, &xv) in gd[r.clone()].iter().zip(&vx.data()[r]) {
                        gg[ch] = gg[ch] + gv * (xv - rm.data()[ch]) * inv[ch];
                        gb[ch] = gb[ch] + gv;
                    }
                }
            }
            vec![
                gx,
                needs[1].then(|| Tensor::from_vec(&[c], gg).expect("shape")),
                needs[2].then(|| Tensor::from_vec(&[c], gb).expect("shape")),
            ]
        }),
    ))
}
