mod common;

use std::f64::consts::{PI, TAU};

use common::{amplitude, angle_diff, max_rel_diff, phase, random_tensor, rng};
use farnet::spectral::{amplitude_swap, dft2, polar, recompose, PolarSpectrum};
use farnet::Tensor;
use proptest::prelude::*;
use rand::Rng;

/// Direct double sum over every plane.
fn naive_dft(x: &Tensor<f64>) -> (Vec<f64>, Vec<f64>) {
    let s = x.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let planes = x.len() / (h * w);
    let mut re = vec![0.0; x.len()];
    let mut im = vec![0.0; x.len()];
    for p in 0..planes {
        let xs = &x.data()[p * h * w..(p + 1) * h * w];
        for u in 0..h {
            for v in 0..w {
                let (mut a, mut b) = (0.0, 0.0);
                for r in 0..h {
                    for c in 0..w {
                        let t = -TAU * ((r * u) as f64 / h as f64 + (c * v) as f64 / w as f64);
                        a += xs[r * w + c] * t.cos();
                        b += xs[r * w + c] * t.sin();
                    }
                }
                re[p * h * w + u * w + v] = a;
                im[p * h * w + u * w + v] = b;
            }
        }
    }
    (re, im)
}

fn rel_to_peak(got: &[f64], want: &[f64]) -> f64 {
    let peak = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / peak
}

#[test]
fn impulse_and_constant() {
    let mut x = Tensor::<f64>::zeros(&[1, 4, 1]);
    x.data_mut()[0] = 1.0;
    let p = polar(&dft2(&x).unwrap());
    assert!(p.amplitude.data().iter().all(|&a| (a - 1.0).abs() < 1e-15));
    assert!(p.phase.data().iter().all(|&a| a == 0.0));

    let c = 2.5;
    let p = polar(&dft2(&Tensor::<f64>::full(&[1, 4, 1], c)).unwrap());
    assert!((p.amplitude.data()[0] - 4.0 * c).abs() < 1e-12);
    assert!(p.amplitude.data()[1..].iter().all(|&a| a < 1e-12));
}

#[test]
fn matches_direct_summation() {
    let mut g = rng(1);
    for shape in [[2, 8, 4], [2, 16, 4], [1, 9, 2], [3, 5, 3], [2, 16, 1]] {
        let x = random_tensor(&shape, &mut g);
        let s = dft2(&x).unwrap();
        let (re, im) = naive_dft(&x);
        let mut both = re.clone();
        both.extend(&im);
        let mut got = s.re.data().to_vec();
        got.extend(s.im.data());
        assert!(rel_to_peak(&got, &both) < 1e-6, "shape {shape:?}");
    }
}

#[test]
fn single_column_is_a_transform_along_h() {
    let mut g = rng(2);
    let x = random_tensor(&[2, 3, 24, 1], &mut g);
    let s = dft2(&x).unwrap();
    for plane in 0..6 {
        let xs = &x.data()[plane * 24..(plane + 1) * 24];
        for u in 0..24 {
            let (mut a, mut b) = (0.0, 0.0);
            for (r, &v) in xs.iter().enumerate() {
                let t = -TAU * (r * u) as f64 / 24.0;
                a += v * t.cos();
                b += v * t.sin();
            }
            assert!((s.re.data()[plane * 24 + u] - a).abs() < 1e-10);
            assert!((s.im.data()[plane * 24 + u] - b).abs() < 1e-10);
        }
    }
}

#[test]
fn polar_conventions() {
    let cases: [(f64, f64, f64, f64); 4] = [(1.0, 0.0, 1.0, 0.0), (0.0, 2.0, 2.0, PI / 2.0), (-1.0, 0.0, 1.0, PI), (0.0, 0.0, 0.0, 0.0)];
    for (re, im, a, p) in cases {
        let s = farnet::spectral::Spectrum {
            re: Tensor::from_vec(&[1, 1], vec![re]).unwrap(),
            im: Tensor::from_vec(&[1, 1], vec![im]).unwrap(),
        };
        let out = polar(&s);
        assert!((out.amplitude.data()[0] - a).abs() < 1e-15);
        assert!((out.phase.data()[0] - p).abs() < 1e-15, "({re}, {im})");
    }
}

#[test]
fn round_trip_over_many_shapes() {
    let mut g = rng(3);
    for _ in 0..100 {
        let h = g.random_range(8..=256);
        let w = [1, 2, 4][g.random_range(0..3)];
        let c = g.random_range(1..=2);
        let x = random_tensor(&[c, h, w], &mut g);
        let y = recompose(&polar(&dft2(&x).unwrap())).unwrap();
        assert!(max_rel_diff(y.data(), x.data()) < 1e-5, "shape {:?}", x.shape());
    }
}

#[test]
fn zero_amplitude_recomposes_to_zero() {
    let mut g = rng(4);
    let p = PolarSpectrum {
        amplitude: Tensor::zeros(&[1, 16, 2]),
        phase: random_tensor(&[1, 16, 2], &mut g),
    };
    assert_eq!(recompose(&p).unwrap().max_abs(), 0.0);
}

#[test]
fn mixed_polar_keeps_phase_of_the_phase_donor() {
    let mut g = rng(5);
    for shape in [[1, 32, 1], [2, 16, 4], [1, 64, 2]] {
        let xa = random_tensor(&shape, &mut g);
        let xb = random_tensor(&shape, &mut g);
        let mixed = recompose(&PolarSpectrum {
            amplitude: amplitude(&xb),
            phase: phase(&xa),
        })
        .unwrap();
        let (pm, pa, ab) = (phase(&mixed), phase(&xa), amplitude(&xb));
        for i in 0..pm.len() {
            if ab.data()[i] > 1e-6 {
                assert!(angle_diff(pm.data()[i], pa.data()[i]) < 1e-4, "bin {i}");
            }
        }
        assert!(max_rel_diff(amplitude(&mixed).data(), ab.data()) < 1e-9);
    }
}

#[test]
fn swap_identities() {
    let mut g = rng(6);
    let xa = random_tensor(&[1, 48, 2], &mut g);
    let xb = random_tensor(&[1, 48, 2], &mut g);
    assert!(max_rel_diff(amplitude_swap(&xa, &xa).unwrap().data(), xa.data()) < 1e-5);
    assert_eq!(amplitude_swap(&xa, &Tensor::zeros(&[1, 48, 2])).unwrap().max_abs(), 0.0);
    assert!(amplitude_swap(&xa, &Tensor::zeros(&[1, 24, 2])).is_err());

    // Swapping back onto x_a again should keep x_a's phase and equal the direct recomposition.
    let there = amplitude_swap(&xa, &xb).unwrap();
    let back = amplitude_swap(&there, &xa).unwrap();
    let direct = recompose(&PolarSpectrum {
        amplitude: amplitude(&xa),
        phase: phase(&xa),
    })
    .unwrap();
    let (ab, aa) = (amplitude(&xb), amplitude(&xa));
    let (pb, pa) = (phase(&back), phase(&xa));
    for i in 0..pb.len() {
        if ab.data()[i] > 1e-6 && aa.data()[i] > 1e-6 {
            assert!(angle_diff(pb.data()[i], pa.data()[i]) < 1e-4);
        }
    }
    assert!(max_rel_diff(back.data(), direct.data()) < 1e-5);
}

fn signal() -> impl Strategy<Value = Tensor<f64>> {
    (1usize..=2, 1usize..=24, prop::sample::select(vec![1usize, 2, 3, 4])).prop_flat_map(|(c, h, w)| {
        prop::collection::vec(-10.0f64..10.0, c * h * w).prop_map(move |v| Tensor::from_vec(&[c, h, w], v).unwrap())
    })
}

proptest! {
    #[test]
    fn parseval(x in signal()) {
        let s = x.shape();
        let hw = (s[1] * s[2]) as f64;
        let energy: f64 = x.data().iter().map(|v| v * v).sum();
        let spectral: f64 = amplitude(&x).data().iter().map(|a| a * a).sum::<f64>() / hw;
        prop_assert!((energy - spectral).abs() <= 1e-4 * energy.max(1e-12));
    }

    #[test]
    fn real_input_is_conjugate_symmetric(x in signal()) {
        let s = x.shape().to_vec();
        let (h, w) = (s[1], s[2]);
        let sp = dft2(&x).unwrap();
        let peak = sp.re.max_abs().max(sp.im.max_abs()).max(1.0);
        for c in 0..s[0] {
            for u in 0..h {
                for v in 0..w {
                    let i = c * h * w + u * w + v;
                    let j = c * h * w + ((h - u) % h) * w + (w - v) % w;
                    prop_assert!((sp.re.data()[i] - sp.re.data()[j]).abs() <= 1e-9 * peak);
                    prop_assert!((sp.im.data()[i] + sp.im.data()[j]).abs() <= 1e-9 * peak);
                }
            }
        }
    }

    #[test]
    fn polar_is_in_range(x in signal()) {
        let p = polar(&dft2(&x).unwrap());
        prop_assert!(p.amplitude.data().iter().all(|&a| a >= 0.0));
        prop_assert!(p.phase.data().iter().all(|&v| v > -PI && v <= PI));
    }
}
