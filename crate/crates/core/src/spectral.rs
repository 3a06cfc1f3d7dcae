//! Discrete Fourier analysis over the trailing `H x W` plane of a tensor.
//!
//! The forward transform is unnormalized,
//! `X(c,u,v) = sum_h sum_w x(c,h,w) exp(-j 2 pi (h u / H + w v / W))`,
//! and the inverse carries the `1 / (H W)` factor. Every leading axis
//! (channel, batch) is treated as an independent plane.

use num_traits::Zero;
use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Rectangular spectrum: real and imaginary parts with the signal's shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum<T> {
    pub re: Tensor<T>,
    pub im: Tensor<T>,
}

/// Polar spectrum: amplitude `>= 0` and phase in `(-pi, pi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarSpectrum<T> {
    pub amplitude: Tensor<T>,
    pub phase: Tensor<T>,
}

/// `(planes, H, W)` for a tensor whose last two axes are `H x W`.
pub(crate) fn plane_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::Shape(format!(
            "spectral operations need at least two axes, got {shape:?}"
        )));
    }
    let h = shape[shape.len() - 2];
    let w = shape[shape.len() - 1];
    if h == 0 || w == 0 {
        return Err(Error::Shape(format!("empty plane in {shape:?}")));
    }
    let planes = shape[..shape.len() - 2].iter().product();
    Ok((planes, h, w))
}

/// In-place unnormalized 2-D transform of every `h x w` plane in `buf`.
pub(crate) fn fft2_in_place<T: Scalar>(buf: &mut [Complex<T>], h: usize, w: usize, inverse: bool) {
    if buf.is_empty() {
        return;
    }
    let plane = h * w;
    debug_assert_eq!(buf.len() % plane, 0);
    if h > 1 {
        let fft = T::fft_plan(h, inverse);
        if w == 1 {
            fft.process(buf);
        } else {
            let mut column = vec![Complex::zero(); h];
            for p in buf.chunks_exact_mut(plane) {
                for col in 0..w {
                    for row in 0..h {
                        column[row] = p[row * w + col];
                    }
                    fft.process(&mut column);
                    for row in 0..h {
                        p[row * w + col] = column[row];
                    }
                }
            }
        }
    }
    if w > 1 {
        T::fft_plan(w, inverse).process(buf);
    }
}

/// Unnormalized forward transform of real data laid out as `h x w` planes.
pub(crate) fn forward_real<T: Scalar>(x: &[T], h: usize, w: usize) -> Vec<Complex<T>> {
    let mut buf: Vec<Complex<T>> = x.iter().map(|&v| Complex::new(v, T::zero())).collect();
    fft2_in_place(&mut buf, h, w, false);
    // Self-conjugate bins of a real signal are real.
    let rows: &[usize] = if h % 2 == 0 { &[0, h / 2] } else { &[0] };
    let cols: &[usize] = if w % 2 == 0 { &[0, w / 2] } else { &[0] };
    for plane in buf.chunks_mut(h * w) {
        for &u in rows {
            for &v in cols {
                plane[u * w + v].im = T::zero();
            }
        }
    }
    buf
}

/// `Re(F^-1 Z)` with the `1/(HW)` factor, plus the largest discarded imaginary magnitude.
pub(crate) fn inverse_real<T: Scalar>(mut z: Vec<Complex<T>>, h: usize, w: usize) -> (Vec<T>, T) {
    fft2_in_place(&mut z, h, w, true);
    let norm = T::one() / T::of((h * w) as f64);
    let mut residue = T::zero();
    let out = z
        .iter()
        .map(|c| {
            residue = residue.max((c.im * norm).abs());
            c.re * norm
        })
        .collect();
    (out, residue)
}

/// Full-quadrant phase in `(-pi, pi]`; zero for the degenerate bin.
#[inline]
pub(crate) fn phase_of<T: Scalar>(re: T, im: T) -> T {
    if re.is_zero() && im.is_zero() {
        return T::zero();
    }
    let p = im.atan2(re);
    if p <= -T::PI() {
        T::PI()
    } else {
        p
    }
}

/// Forward 2-D DFT of a real tensor (per plane over the last two axes).
pub fn dft2<T: Scalar>(x: &Tensor<T>) -> Result<Spectrum<T>> {
    let (_, h, w) = plane_dims(x.shape())?;
    let buf = forward_real(x.data(), h, w);
    let re = buf.iter().map(|c| c.re).collect();
    let im = buf.iter().map(|c| c.im).collect();
    Ok(Spectrum {
        re: Tensor::from_vec(x.shape(), re)?,
        im: Tensor::from_vec(x.shape(), im)?,
    })
}

/// Amplitude and full-quadrant phase of a spectrum.
pub fn polar<T: Scalar>(spectrum: &Spectrum<T>) -> PolarSpectrum<T> {
    let amplitude = spectrum.re.zip_map(&spectrum.im, |r, i| r.hypot(i));
    let phase = spectrum.re.zip_map(&spectrum.im, phase_of);
    PolarSpectrum { amplitude, phase }
}

/// Inverse transform of `(A cos P, A sin P)`, keeping only the real part.
///
/// Returns the signal together with the largest imaginary magnitude that was
/// discarded. No validity check is applied.
pub fn recompose_real_part<T: Scalar>(polar: &PolarSpectrum<T>) -> Result<(Tensor<T>, T)> {
    if polar.amplitude.shape() != polar.phase.shape() {
        return Err(Error::Shape(format!(
            "amplitude {:?} vs phase {:?}",
            polar.amplitude.shape(),
            polar.phase.shape()
        )));
    }
    let (_, h, w) = plane_dims(polar.amplitude.shape())?;
    let z = polar
        .amplitude
        .data()
        .iter()
        .zip(polar.phase.data())
        .map(|(&a, &p)| Complex::new(a * p.cos(), a * p.sin()))
        .collect();
    let (out, residue) = inverse_real(z, h, w);
    Ok((Tensor::from_vec(polar.amplitude.shape(), out)?, residue))
}

/// Inverse transform of a polar spectrum back to a real signal.
///
/// Fails when the spectrum is not the transform of a real signal, detected as
/// an imaginary residue above `1e-4 * max(1, max|A|)`.
pub fn recompose<T: Scalar>(polar: &PolarSpectrum<T>) -> Result<Tensor<T>> {
    if polar.amplitude.data().iter().any(|&a| a < T::zero()) {
        return Err(Error::InvalidArgument("negative amplitude".into()));
    }
    let (signal, residue) = recompose_real_part(polar)?;
    let limit = 1e-4 * polar.amplitude.max_abs().to_f64_lossy().max(1.0);
    let residue = residue.to_f64_lossy();
    if residue >= limit {
        return Err(Error::ImaginaryResidue { residue, limit });
    }
    Ok(signal)
}

/// Signal carrying the amplitude spectrum of `x_b` and the phase of `x_a`.
pub fn amplitude_swap<T: Scalar>(x_a: &Tensor<T>, x_b: &Tensor<T>) -> Result<Tensor<T>> {
    if x_a.shape() != x_b.shape() {
        return Err(Error::Shape(format!(
            "amplitude swap of {:?} and {:?}",
            x_a.shape(),
            x_b.shape()
        )));
    }
    let pa = polar(&dft2(x_a)?);
    let pb = polar(&dft2(x_b)?);
    recompose(&PolarSpectrum {
        amplitude: pb.amplitude,
        phase: pa.phase,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, v).unwrap()
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let x = t(&[1, 4, 1], vec![1.0, 0.0, 0.0, 0.0]);
        let p = polar(&dft2(&x).unwrap());
        for (&a, &ph) in p.amplitude.data().iter().zip(p.phase.data()) {
            assert!((a - 1.0).abs() < 1e-12);
            assert!(ph.abs() < 1e-12);
        }
    }

    #[test]
    fn constant_is_dc_only() {
        let c = 2.5;
        let x = t(&[1, 4, 1], vec![c; 4]);
        let p = polar(&dft2(&x).unwrap());
        assert!((p.amplitude.data()[0] - 4.0 * c).abs() < 1e-12);
        for &a in &p.amplitude.data()[1..] {
            assert!(a.abs() < 1e-12);
        }
    }

    #[test]
    fn polar_quadrants() {
        let s = Spectrum {
            re: t(&[1, 4], vec![1.0, 0.0, -1.0, 0.0]),
            im: t(&[1, 4], vec![0.0, 2.0, 0.0, 0.0]),
        };
        let p = polar(&s);
        assert_eq!(p.amplitude.data(), &[1.0, 2.0, 1.0, 0.0]);
        assert_eq!(p.phase.data()[0], 0.0);
        assert!((p.phase.data()[1] - PI / 2.0).abs() < 1e-15);
        assert_eq!(p.phase.data()[2], PI);
        assert_eq!(p.phase.data()[3], 0.0);
    }

    #[test]
    fn negative_zero_imaginary_maps_to_plus_pi() {
        assert_eq!(phase_of(-1.0f64, -0.0), PI);
    }

    #[test]
    fn zero_amplitude_recomposes_to_zero() {
        let p = PolarSpectrum {
            amplitude: Tensor::<f64>::zeros(&[2, 8, 2]),
            phase: Tensor::from_fn(&[2, 8, 2], |i| i as f64 * 0.3 - 1.0),
        };
        let x = recompose(&p).unwrap();
        assert!(x.max_abs() == 0.0);
    }

    #[test]
    fn non_hermitian_spectrum_is_rejected() {
        let mut phase = Tensor::<f64>::zeros(&[1, 8, 1]);
        phase.data_mut()[1] = 1.0;
        let p = PolarSpectrum {
            amplitude: Tensor::ones(&[1, 8, 1]),
            phase,
        };
        assert!(matches!(recompose(&p), Err(Error::ImaginaryResidue { .. })));
    }

    #[test]
    fn swap_with_zero_amplitude_gives_zero() {
        let a = Tensor::<f64>::from_fn(&[1, 16, 1], |i| (i as f64 * 0.7).sin());
        let z = Tensor::<f64>::zeros(&[1, 16, 1]);
        assert_eq!(amplitude_swap(&a, &z).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn swap_rejects_shape_mismatch() {
        let a = Tensor::<f64>::zeros(&[1, 16, 1]);
        let b = Tensor::<f64>::zeros(&[1, 8, 1]);
        assert!(amplitude_swap(&a, &b).is_err());
    }
}
