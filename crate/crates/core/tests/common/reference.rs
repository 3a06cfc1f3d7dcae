//! Naive re-implementations of the network compositions.

use farnet::augnet::AugmentationModel;
use farnet::fsim::{Fsim, FsimVariant, Resample};
use farnet::nn::{Conv2d, ParamStore};
use farnet::spectral::{dft2, polar, recompose_real_part, PolarSpectrum};
use farnet::Tensor;

pub fn conv(store: &ParamStore<f64>, c: &Conv2d, x: &Tensor<f64>) -> Tensor<f64> {
    let (b, ci, h, w) = x.dims4();
    let wt = store.get(c.weight);
    let (co, _, kh, kw) = wt.dims4();
    let (sh, sw) = c.geometry.stride;
    let (ph, pw) = c.geometry.padding;
    let ho = (h + 2 * ph - kh) / sh + 1;
    let wo = (w + 2 * pw - kw) / sw + 1;
    let mut out = Tensor::zeros(&[b, co, ho, wo]);
    for n in 0..b {
        for o in 0..co {
            let bias = c.bias.map_or(0.0, |id| store.get(id).data()[o]);
            for y in 0..ho {
                for xx in 0..wo {
                    let mut acc = bias;
                    for i in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let (iy, ix) = ((y * sh + ky) as isize - ph as isize, (xx * sw + kx) as isize - pw as isize);
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += wt.data()[((o * ci + i) * kh + ky) * kw + kx]
                                    * x.data()[((n * ci + i) * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out.data_mut()[((n * co + o) * ho + y) * wo + xx] = acc;
                }
            }
        }
    }
    out
}

pub fn lrelu(x: &Tensor<f64>) -> Tensor<f64> {
    x.map(|v| if v > 0.0 { v } else { 0.1 * v })
}

pub fn add(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    a.zip_map(b, |x, y| x + y)
}

pub fn upsample(x: &Tensor<f64>) -> Tensor<f64> {
    let (b, c, h, w) = x.dims4();
    Tensor::from_fn(&[b, c, 2 * h, w], |i| {
        let (plane, rest) = (i / (2 * h * w), i % (2 * h * w));
        x.data()[plane * h * w + (rest / w / 2) * w + rest % w]
    })
}

pub fn avg_pool(x: &Tensor<f64>) -> Tensor<f64> {
    let (b, c, h, w) = x.dims4();
    Tensor::from_fn(&[b, c, h / 2, w], |i| {
        let (plane, rest) = (i / (h / 2 * w), i % (h / 2 * w));
        let (r, col) = (rest / w, rest % w);
        0.5 * (x.data()[plane * h * w + 2 * r * w + col] + x.data()[plane * h * w + (2 * r + 1) * w + col])
    })
}

pub fn concat_channels(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (n, ca, h, w) = a.dims4();
    let cb = b.shape()[1];
    let mut data = Vec::new();
    for s in 0..n {
        data.extend_from_slice(&a.data()[s * ca * h * w..(s + 1) * ca * h * w]);
        data.extend_from_slice(&b.data()[s * cb * h * w..(s + 1) * cb * h * w]);
    }
    Tensor::from_vec(&[n, ca + cb, h, w], data).unwrap()
}

/// Frequency flow of one stage, assembled from the spectral primitives.
pub fn frequency_path(store: &ParamStore<f64>, m: &Fsim, stage: usize, f: &Tensor<f64>) -> Tensor<f64> {
    let st = &m.stages[stage];
    let p = polar(&dft2(f).unwrap());
    let learn = |c: &Tensor<f64>| conv(store, &st.freq[1], &lrelu(&conv(store, &st.freq[0], c)));
    let mixed = match m.config.variant {
        FsimVariant::Amplitude => PolarSpectrum {
            amplitude: learn(&p.amplitude).map(f64::abs),
            phase: p.phase,
        },
        FsimVariant::Phase => PolarSpectrum {
            phase: learn(&p.phase),
            amplitude: p.amplitude,
        },
    };
    recompose_real_part(&mixed).unwrap().0
}

pub fn spatial_path(store: &ParamStore<f64>, m: &Fsim, stage: usize, f: &Tensor<f64>) -> Tensor<f64> {
    let st = &m.stages[stage];
    lrelu(&conv(store, &st.spatial[1], &lrelu(&conv(store, &st.spatial[0], f))))
}

pub fn reference_fsim(store: &ParamStore<f64>, m: &Fsim, x: &Tensor<f64>) -> Tensor<f64> {
    let x = if m.config.resample == Resample::Up2 { upsample(x) } else { x.clone() };
    let freq_in = if m.config.resample == Resample::Down2 { avg_pool(&x) } else { x.clone() };
    let mut ff = conv(store, &m.entry, &freq_in);
    let mut fs = x;
    for (i, st) in m.stages.iter().enumerate() {
        let f = frequency_path(store, m, i, &ff);
        let s = spatial_path(store, m, i, &fs);
        ff = add(&f, &conv(store, &st.spatial_to_freq, &s));
        fs = add(&s, &conv(store, &st.freq_to_spatial, &f));
    }
    conv(store, &m.exit, &add(&ff, &fs))
}

pub fn reference_phase_subnet(model: &AugmentationModel<f64>, x: &Tensor<f64>, residual: &Tensor<f64>) -> Tensor<f64> {
    let mut h = x.clone();
    for (i, f) in model.phase_subnet.iter().enumerate() {
        h = reference_fsim(&model.store, f, &h);
        if let Some(fusion) = model.residual_fusion.get(i) {
            h = add(&h, &conv(&model.store, fusion, &concat_channels(&h, residual)));
        }
    }
    h
}
