//! Differentiable amplitude / phase extraction and polar recomposition.
//!
//! For a real input `x` with spectrum `X = F x` and a real upstream gradient
//! `G = dL/dRe X + i dL/dIm X`, the input gradient is `Re(F^H G)`, i.e. the
//! unnormalized inverse transform of `G`.

use std::rc::Rc;

use rustfft::num_complex::Complex;

use super::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::{fft2_in_place, forward_real, inverse_real, phase_of, plane_dims};
use crate::tensor::Tensor;

fn real_part_of_adjoint<T: Scalar>(mut g: Vec<Complex<T>>, shape: &[usize], h: usize, w: usize) -> Tensor<T> {
    fft2_in_place(&mut g, h, w, true);
    Tensor::from_vec(shape, g.iter().map(|c| c.re).collect()).expect("adjoint shape")
}

/// Amplitude and phase of the DFT of `x`, sharing one forward transform.
pub fn dft_polar<'t, T: Scalar>(x: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let vx = x.value();
    let shape = vx.shape().to_vec();
    let (_, h, w) = plane_dims(&shape)?;
    let spec = Rc::new(forward_real(vx.data(), h, w));
    let amp: Vec<T> = spec.iter().map(|c| c.re.hypot(c.im)).collect();
    let phase: Vec<T> = spec.iter().map(|c| phase_of(c.re, c.im)).collect();
    let amp = Tensor::from_vec(&shape, amp)?;
    let phase = Tensor::from_vec(&shape, phase)?;

    let (s1, sh1) = (Rc::clone(&spec), shape.clone());
    let amp_amp = Rc::new(amp.clone());
    let a1 = Rc::clone(&amp_amp);
    let a_var = x.tape().op(
        amp,
        &[x],
        Box::new(move |g, _| {
            let gs = s1
                .iter()
                .zip(a1.data())
                .zip(g.data())
                .map(|((c, &a), &gv)| if a > T::zero() { *c * (gv / a) } else { Complex::new(T::zero(), T::zero()) })
                .collect();
            vec![Some(real_part_of_adjoint(gs, &sh1, h, w))]
        }),
    );
    let (s2, sh2) = (spec, shape);
    let p_var = x.tape().op(
        phase,
        &[x],
        Box::new(move |g, _| {
            let gs = s2
                .iter()
                .zip(amp_amp.data())
                .zip(g.data())
                .map(|((c, &a), &gv)| {
                    let a2 = a * a;
                    if a2 > T::min_positive_value() {
                        // i X / |X|^2
                        Complex::new(-c.im, c.re) * (gv / a2)
                    } else {
                        Complex::new(T::zero(), T::zero())
                    }
                })
                .collect();
            vec![Some(real_part_of_adjoint(gs, &sh2, h, w))]
        }),
    );
    Ok((a_var, p_var))
}

/// Amplitude spectrum of `x`.
pub fn dft_amplitude<'t, T: Scalar>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    dft_polar(x).map(|(a, _)| a)
}

/// Full-quadrant phase spectrum of `x`.
pub fn dft_phase<'t, T: Scalar>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    dft_polar(x).map(|(_, p)| p)
}

/// `Re(F^-1 (A e^{iP}))` with `1/(HW)` normalization.
///
/// The imaginary part is discarded, which is equivalent to projecting the
/// spectrum onto its conjugate-symmetric part before inverting.
pub fn polar_inverse_real<'t, T: Scalar>(amplitude: Var<'t, T>, phase: Var<'t, T>) -> Result<Var<'t, T>> {
    let (va, vp) = (amplitude.value(), phase.value());
    if va.shape() != vp.shape() {
        return Err(Error::Shape(format!(
            "amplitude {:?} vs phase {:?}",
            va.shape(),
            vp.shape()
        )));
    }
    let shape = va.shape().to_vec();
    let (_, h, w) = plane_dims(&shape)?;
    let z = va
        .data()
        .iter()
        .zip(vp.data())
        .map(|(&a, &p)| Complex::new(a * p.cos(), a * p.sin()))
        .collect();
    let (out, _) = inverse_real(z, h, w);
    let out = Tensor::from_vec(&shape, out)?;
    let norm = T::one() / T::of((h * w) as f64);
    Ok(amplitude.tape().op(
        out,
        &[amplitude, phase],
        Box::new(move |g, needs| {
            let gz = forward_real(g.data(), h, w);
            let ga = needs[0].then(|| {
                let data = gz
                    .iter()
                    .zip(vp.data())
                    .map(|(c, &p)| (c.re * p.cos() + c.im * p.sin()) * norm)
                    .collect();
                Tensor::from_vec(&shape, data).expect("shape")
            });
            let gp = needs[1].then(|| {
                let data = gz
                    .iter()
                    .zip(vp.data())
                    .zip(va.data())
                    .map(|((c, &p), &a)| a * (c.im * p.cos() - c.re * p.sin()) * norm)
                    .collect();
                Tensor::from_vec(&shape, data).expect("shape")
            });
            vec![ga, gp]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::super::check::gradient_error;
    use super::super::{weighted_sum, Tape};
    use super::*;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut s = seed.wrapping_add(0x2545F4914F6CDD1D);
        Tensor::from_fn(shape, |_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    fn weights(shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| 0.3 + (i as f64 * 0.77).sin())
    }

    #[test]
    fn amplitude_gradient() {
        for shape in [[2, 1, 8, 1], [1, 2, 4, 3]] {
            let x = rand_tensor(&shape, 3);
            let err = gradient_error(&[x], |_, v| weighted_sum(dft_amplitude(v[0]).unwrap(), &weights(&shape)), 1e-6);
            assert!(err < 1e-6, "{shape:?}: {err}");
        }
    }

    #[test]
    fn phase_gradient() {
        for shape in [[1, 1, 8, 1], [1, 1, 4, 3]] {
            let x = rand_tensor(&shape, 4);
            let err = gradient_error(&[x], |_, v| weighted_sum(dft_phase(v[0]).unwrap(), &weights(&shape)), 1e-7);
            assert!(err < 1e-5, "{shape:?}: {err}");
        }
    }

    #[test]
    fn inverse_gradient() {
        // An arbitrary (non-Hermitian) polar spectrum; only the real part survives.
        let shape = [1, 2, 6, 2];
        let a = rand_tensor(&shape, 5).map(|v| v.abs() + 0.1);
        let p = rand_tensor(&shape, 6).scale(3.0);
        let err = gradient_error(
            &[a, p],
            |_, v| weighted_sum(polar_inverse_real(v[0], v[1]).unwrap(), &weights(&shape)),
            1e-6,
        );
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn polar_round_trip_is_identity() {
        let x = rand_tensor(&[2, 1, 16, 2], 7);
        let tape = Tape::new();
        let v = tape.constant(x.clone());
        let (a, p) = dft_polar(v).unwrap();
        let y = polar_inverse_real(a, p).unwrap().value();
        for (u, w) in x.data().iter().zip(y.data()) {
            assert!((u - w).abs() < 1e-12);
        }
    }
}
