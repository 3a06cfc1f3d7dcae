//! 2-D convolution via im2col + GEMM.
//!
//! Kernel taps that can never touch an in-bounds input position are dropped
//! before the GEMM, so a `3x3` kernel over `W = 1` signals costs the same as a
//! width-3 1-D convolution.

use super::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Stride and zero padding of a convolution, per spatial axis `(H, W)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2dGeometry {
    /// Unit stride, "same" padding for an odd kernel.
    pub fn same(kernel: (usize, usize)) -> Self {
        Self {
            stride: (1, 1),
            padding: (kernel.0 / 2, kernel.1 / 2),
        }
    }

    pub fn with_stride(mut self, stride: (usize, usize)) -> Self {
        self.stride = stride;
        self
    }
}

struct Plan {
    b: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    geom: Conv2dGeometry,
    taps: Vec<(usize, usize)>,
}

fn out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (input + 2 * pad).checked_sub(kernel).map(|v| v / stride + 1)
}

/// True when some output position reads an in-bounds input through tap `k`.
fn tap_reaches(k: usize, out: usize, stride: usize, pad: usize, input: usize) -> bool {
    (0..out).any(|o| {
        let pos = (o * stride + k) as isize - pad as isize;
        pos >= 0 && (pos as usize) < input
    })
}

impl Plan {
    fn new(x: &[usize], w: &[usize], geom: Conv2dGeometry) -> Result<Self> {
        if x.len() != 4 || w.len() != 4 || x[1] != w[1] {
            return Err(Error::Shape(format!("conv2d of input {x:?} with kernel {w:?}")));
        }
        if geom.stride.0 == 0 || geom.stride.1 == 0 {
            return Err(Error::InvalidArgument("zero convolution stride".into()));
        }
        let (b, ci, h, wd) = (x[0], x[1], x[2], x[3]);
        let (co, kh, kw) = (w[0], w[2], w[3]);
        let ho = out_len(h, kh, geom.stride.0, geom.padding.0);
        let wo = out_len(wd, kw, geom.stride.1, geom.padding.1);
        let (Some(ho), Some(wo)) = (ho, wo) else {
            return Err(Error::Shape(format!("kernel {w:?} larger than padded input {x:?}")));
        };
        let mut taps = Vec::new();
        for i in 0..kh {
            if !tap_reaches(i, ho, geom.stride.0, geom.padding.0, h) {
                continue;
            }
            for j in 0..kw {
                if tap_reaches(j, wo, geom.stride.1, geom.padding.1, wd) {
                    taps.push((i, j));
                }
            }
        }
        Ok(Self {
            b,
            ci,
            h,
            w: wd,
            co,
            kh,
            kw,
            ho,
            wo,
            geom,
            taps,
        })
    }

    fn rows(&self) -> usize {
        self.ci * self.taps.len()
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1
            && self.kw == 1
            && self.geom.stride == (1, 1)
            && self.geom.padding == (0, 0)
    }

    /// Compact `[Co, Ci * taps]` weight matrix.
    fn pack_weight<T: Scalar>(&self, w: &[T]) -> Vec<T> {
        let nt = self.taps.len();
        let mut out = Vec::with_capacity(self.co * self.rows());
        for o in 0..self.co {
            for c in 0..self.ci {
                for &(i, j) in &self.taps {
                    out.push(w[((o * self.ci + c) * self.kh + i) * self.kw + j]);
                }
            }
        }
        debug_assert_eq!(out.len(), self.co * self.ci * nt);
        out
    }

    fn unpack_weight_grad<T: Scalar>(&self, packed: &[T]) -> Tensor<T> {
        let mut gw = Tensor::zeros(&[self.co, self.ci, self.kh, self.kw]);
        let nt = self.taps.len();
        let dst = gw.data_mut();
        for o in 0..self.co {
            for c in 0..self.ci {
                for (t, &(i, j)) in self.taps.iter().enumerate() {
                    dst[((o * self.ci + c) * self.kh + i) * self.kw + j] = packed[(o * self.ci + c) * nt + t];
                }
            }
        }
        gw
    }

    /// Output positions `[lo, hi)` along one axis whose input index
    /// `o * stride + k - pad` lies inside `0..input`.
    fn valid_range(out: usize, k: usize, stride: usize, pad: usize, input: usize) -> (usize, usize) {
        let lo = pad.saturating_sub(k).div_ceil(stride).min(out);
        let hi = if input + pad > k { ((input + pad - k - 1) / stride + 1).min(out) } else { 0 };
        (lo, hi.max(lo))
    }

    /// Single-column inputs (`W = Wo = 1`) are convolved tap by tap with
    /// strided GEMMs directly on the input, without a column matrix.
    fn is_column(&self) -> bool {
        self.w == 1 && self.wo == 1
    }

    /// `(weight offset, out lo, out hi, input start)` of every useful tap.
    fn column_taps(&self) -> Vec<(usize, usize, usize, usize)> {
        let (sh, ph) = (self.geom.stride.0, self.geom.padding.0);
        self.taps
            .iter()
            .filter_map(|&(i, j)| {
                let (lo, hi) = Self::valid_range(self.ho, i, sh, ph, self.h);
                (lo < hi).then(|| (i * self.kw + j, lo, hi, lo * sh + i - ph))
            })
            .collect()
    }

    fn column_forward<T: Scalar>(&self, w: &[T], xs: &[T], out: &mut [T]) {
        let (kk, sh) = ((self.kh * self.kw) as isize, self.geom.stride.0 as isize);
        for (off, lo, hi, start) in self.column_taps() {
            T::gemm(
                self.co,
                self.ci,
                hi - lo,
                T::one(),
                &w[off..],
                self.ci as isize * kk,
                kk,
                &xs[start..],
                self.h as isize,
                sh,
                T::one(),
                &mut out[lo..],
                self.ho as isize,
                1,
            );
        }
    }

    fn column_backward<T: Scalar>(&self, w: &[T], xs: &[T], gs: &[T], gw: Option<&mut [T]>, gx: Option<&mut [T]>) {
        let (kk, sh) = ((self.kh * self.kw) as isize, self.geom.stride.0 as isize);
        let taps = self.column_taps();
        if let Some(gw) = gw {
            for &(off, lo, hi, start) in &taps {
                T::gemm(
                    self.co,
                    hi - lo,
                    self.ci,
                    T::one(),
                    &gs[lo..],
                    self.ho as isize,
                    1,
                    &xs[start..],
                    sh,
                    self.h as isize,
                    T::one(),
                    &mut gw[off..],
                    self.ci as isize * kk,
                    kk,
                );
            }
        }
        if let Some(gx) = gx {
            for &(off, lo, hi, start) in &taps {
                T::gemm(
                    self.ci,
                    self.co,
                    hi - lo,
                    T::one(),
                    &w[off..],
                    kk,
                    self.ci as isize * kk,
                    &gs[lo..],
                    self.ho as isize,
                    1,
                    T::one(),
                    &mut gx[start..],
                    self.h as isize,
                    sh,
                );
            }
        }
    }

    /// Column matrix `[Ci * taps, Ho * Wo]` for one sample.
    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let (sh, sw) = self.geom.stride;
        let (ph, pw) = self.geom.padding;
        let n = self.ho * self.wo;
        let mut row = 0;
        for c in 0..self.ci {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for &(i, j) in &self.taps {
                let dst = &mut cols[row * n..(row + 1) * n];
                let (hlo, hhi) = Self::valid_range(self.ho, i, sh, ph, self.h);
                let (wlo, whi) = Self::valid_range(self.wo, j, sw, pw, self.w);
                if self.wo == 1 && self.w == 1 {
                    dst[..hlo].fill(T::zero());
                    dst[hhi..].fill(T::zero());
                    if wlo < whi {
                        for (oh, v) in dst.iter_mut().enumerate().take(hhi).skip(hlo) {
                            *v = plane[oh * sh + i - ph];
                        }
                    } else {
                        dst[hlo..hhi].fill(T::zero());
                    }
                    row += 1;
                    continue;
                }
                for oh in 0..self.ho {
                    let out_row = &mut dst[oh * self.wo..(oh + 1) * self.wo];
                    if oh < hlo || oh >= hhi {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[(oh * sh + i - ph) * self.w..(oh * sh + i - ph + 1) * self.w];
                    out_row[..wlo].fill(T::zero());
                    out_row[whi..].fill(T::zero());
                    for (ow, v) in out_row.iter_mut().enumerate().take(whi).skip(wlo) {
                        *v = src[ow * sw + j - pw];
                    }
                }
                row += 1;
            }
        }
    }

    /// Scatter-add of a column-matrix gradient back onto one sample.
    fn col2im<T: Scalar>(&self, cols: &[T], gx: &mut [T]) {
        let (sh, sw) = self.geom.stride;
        let (ph, pw) = self.geom.padding;
        let n = self.ho * self.wo;
        let mut row = 0;
        for c in 0..self.ci {
            let plane = &mut gx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for &(i, j) in &self.taps {
                let src = &cols[row * n..(row + 1) * n];
                let (hlo, hhi) = Self::valid_range(self.ho, i, sh, ph, self.h);
                let (wlo, whi) = Self::valid_range(self.wo, j, sw, pw, self.w);
                for oh in hlo..hhi {
                    let base = (oh * sh + i - ph) * self.w;
                    for ow in wlo..whi {
                        let d = base + ow * sw + j - pw;
                        plane[d] = plane[d] + src[oh * self.wo + ow];
                    }
                }
                row += 1;
            }
        }
    }
}

/// `[B, Ci, H, W] * [Co, Ci, KH, KW] (+ bias [Co]) -> [B, Co, Ho, Wo]`.
pub fn conv2d<'t, T: Scalar>(
    x: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Option<Var<'t, T>>,
    geom: Conv2dGeometry,
) -> Result<Var<'t, T>> {
    let (vx, vw) = (x.value(), weight.value());
    let plan = Plan::new(vx.shape(), vw.shape(), geom)?;
    let vb = bias.map(|b| b.value());
    if let Some(vb) = &vb {
        if vb.len() != plan.co {
            return Err(Error::Shape(format!(
                "bias {:?} for {} output channels",
                vb.shape(),
                plan.co
            )));
        }
    }
    let rows = plan.rows();
    let n = plan.ho * plan.wo;
    let in_stride = plan.ci * plan.h * plan.w;
    let out_stride = plan.co * n;
    let wp = plan.pack_weight(vw.data());
    let mut out = Tensor::zeros(&[plan.b, plan.co, plan.ho, plan.wo]);
    {
        let od = out.data_mut();
        if let Some(vb) = &vb {
            for (k, chunk) in od.chunks_exact_mut(n).enumerate() {
                chunk.fill(vb.data()[k % plan.co]);
            }
        }
        let direct = plan.is_pointwise() || plan.is_column();
        let mut cols = vec![T::zero(); if direct { 0 } else { rows * n }];
        for s in 0..plan.b {
            let xs = &vx.data()[s * in_stride..(s + 1) * in_stride];
            if plan.is_column() && !plan.is_pointwise() {
                plan.column_forward(vw.data(), xs, &mut od[s * out_stride..(s + 1) * out_stride]);
                continue;
            }
            let src: &[T] = if plan.is_pointwise() {
                xs
            } else {
                plan.im2col(xs, &mut cols);
                &cols
            };
            T::gemm(
                plan.co,
                rows,
                n,
                T::one(),
                &wp,
                rows as isize,
                1,
                src,
                n as isize,
                1,
                T::one(),
                &mut od[s * out_stride..(s + 1) * out_stride],
                n as isize,
                1,
            );
        }
    }

    let mut parents = vec![x, weight];
    parents.extend(bias);
    let has_bias = bias.is_some();
    Ok(x.tape().op(
        out,
        &parents,
        Box::new(move |g, needs| {
            let gd = g.data();
            if plan.is_column() && !plan.is_pointwise() {
                let mut gw = needs[1].then(|| Tensor::zeros(vw.shape()));
                let mut gx = needs[0].then(|| Tensor::zeros(vx.shape()));
                for s in 0..plan.b {
                    plan.column_backward(
                        vw.data(),
                        &vx.data()[s * in_stride..(s + 1) * in_stride],
                        &gd[s * out_stride..(s + 1) * out_stride],
                        gw.as_mut().map(|t| t.data_mut()),
                        gx.as_mut().map(|t| &mut t.data_mut()[s * in_stride..(s + 1) * in_stride]),
                    );
                }
                let mut grads = vec![gx, gw];
                if has_bias {
                    grads.push(needs[2].then(|| bias_grad(gd, plan.co, n)));
                }
                return grads;
            }
            let mut cols = vec![T::zero(); if plan.is_pointwise() { 0 } else { rows * n }];
            let mut gcols = vec![T::zero(); rows * n];
            let mut gwp = vec![T::zero(); plan.co * rows];
            let mut gx = needs[0].then(|| Tensor::zeros(&[plan.b, plan.ci, plan.h, plan.w]));
            for s in 0..plan.b {
                let gs = &gd[s * out_stride..(s + 1) * out_stride];
                if needs[1] {
                    let xs = &vx.data()[s * in_stride..(s + 1) * in_stride];
                    let src: &[T] = if plan.is_pointwise() {
                        xs
                    } else {
                        plan.im2col(xs, &mut cols);
                        &cols
                    };
                    // gW += g_s [Co, n] x cols^T [n, rows]
                    T::gemm(
                        plan.co,
                        n,
                        rows,
                        T::one(),
                        gs,
                        n as isize,
                        1,
                        src,
                        1,
                        n as isize,
                        T::one(),
                        &mut gwp,
                        rows as isize,
                        1,
                    );
                }
                if let Some(gx) = gx.as_mut() {
                    let gxs = &mut gx.data_mut()[s * in_stride..(s + 1) * in_stride];
                    if plan.is_pointwise() {
                        T::gemm(plan.ci, plan.co, n, T::one(), &wp, 1, rows as isize, gs, n as isize, 1, T::zero(), gxs, n as isize, 1);
                    } else {
                        T::gemm(
                            rows,
                            plan.co,
                            n,
                            T::one(),
                            &wp,
                            1,
                            rows as isize,
                            gs,
                            n as isize,
                            1,
                            T::zero(),
                            &mut gcols,
                            n as isize,
                            1,
                        );
                        plan.col2im(&gcols, gxs);
                    }
                }
            }
            let gw = needs[1].then(|| plan.unpack_weight_grad(&gwp));
            let mut grads = vec![gx, gw];
            if has_bias {
                grads.push(needs[2].then(|| bias_grad(gd, plan.co, n)));
            }
            grads
        }),
    ))
}

fn bias_grad<T: Scalar>(gd: &[T], co: usize, n: usize) -> Tensor<T> {
    let mut gb = Tensor::zeros(&[co]);
    for (k, chunk) in gd.chunks_exact(n).enumerate() {
        let acc = &mut gb.data_mut()[k % co];
        *acc = *acc + chunk.iter().copied().sum::<T>();
    }
    gb
}
