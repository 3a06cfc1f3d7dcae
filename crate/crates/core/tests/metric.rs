mod common;

use common::{random_tensor, rng};
use farnet::metric::{
    batch_threshold, manifold_distance, manifold_triplet_loss, mine_hardest, pairwise_distances, EmbeddingBatch,
    ManifoldParams,
};
use farnet::{Error, Tensor};
use rand::Rng;

fn batch_1d(points: &[f64], labels: &[usize]) -> EmbeddingBatch<f64> {
    EmbeddingBatch::new(Tensor::from_vec(&[points.len(), 1], points.to_vec()).unwrap(), labels.to_vec()).unwrap()
}

fn euclid(v: &Tensor<f64>, i: usize, j: usize) -> f64 {
    let d = v.shape()[1];
    (0..d).map(|c| (v.data()[i * d + c] - v.data()[j * d + c]).powi(2)).sum::<f64>().sqrt()
}

/// Exhaustive loss over every (anchor, positive, negative) triple.
fn brute_force_loss(b: &EmbeddingBatch<f64>, k: f64, gamma: f64) -> Option<f64> {
    let n = b.len();
    let mut r = 0.0;
    let mut pairs = 0;
    for i in 0..n {
        for j in i + 1..n {
            r += euclid(&b.vectors, i, j);
            pairs += 1;
        }
    }
    r /= pairs as f64;
    if r <= 0.0 {
        r = 1e-6;
    }
    let act = |x: f64| if x > r { k * x } else { x / k };
    let mut total = 0.0;
    let mut anchors = 0;
    for a in 0..n {
        let mut best: Option<f64> = None;
        for p in 0..n {
            if p == a || b.labels[p] != b.labels[a] {
                continue;
            }
            for q in 0..n {
                if b.labels[q] == b.labels[a] {
                    continue;
                }
                let l = (act(euclid(&b.vectors, a, p)) - act(euclid(&b.vectors, a, q)) + gamma).max(0.0);
                best = Some(best.map_or(l, |m: f64| m.max(l)));
            }
        }
        if let Some(l) = best {
            total += l;
            anchors += 1;
        }
    }
    (anchors > 0).then(|| total / anchors as f64)
}

#[test]
fn activation_branches() {
    assert_eq!(manifold_distance(2.0f64, 3.0, 1.0).unwrap(), 6.0);
    assert!((manifold_distance(0.9f64, 3.0, 1.0).unwrap() - 0.3).abs() < 1e-15);
    assert!((manifold_distance(1.0f64, 3.0, 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert!(manifold_distance(-0.1f64, 3.0, 1.0).is_err());
    assert!(manifold_distance(1.0f64, 0.5, 1.0).is_err());
    assert!(ManifoldParams::new(0.99, 0.3).is_err());
}

#[test]
fn activated_distance_breaks_the_triangle_inequality() {
    let d = |x| manifold_distance(x, 3.0f64, 1.0).unwrap();
    let (a, b, c) = (d(0.6), d(0.6), d(1.2));
    assert!((a - 0.2).abs() < 1e-12 && (b - 0.2).abs() < 1e-12 && (c - 3.6).abs() < 1e-12);
    assert!(a + b < c);
}

#[test]
fn threshold_fixtures() {
    assert_eq!(batch_threshold(&batch_1d(&[0.0, 1.0, 3.0], &[0, 0, 1])).unwrap(), 2.0);
    assert_eq!(batch_threshold(&batch_1d(&[4.0, 4.0, 4.0], &[0, 1, 1])).unwrap(), 0.0);
    let mut g = rng(7);
    for _ in 0..20 {
        let n = g.random_range(2..12);
        let v = random_tensor(&[n, 5], &mut g);
        let b = EmbeddingBatch::new(v.clone(), vec![0; n]).unwrap();
        let mut want = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                want += euclid(&v, i, j);
            }
        }
        want /= (n * (n - 1) / 2) as f64;
        assert!((batch_threshold(&b).unwrap() - want).abs() < 1e-6);
    }
    assert!(EmbeddingBatch::new(Tensor::<f64>::zeros(&[1, 3]), vec![0]).is_err());
}

#[test]
fn loss_fixtures() {
    let p = ManifoldParams::new(3.0, 0.3).unwrap();
    let separated = batch_1d(&[0.0, 0.2, 10.0, 10.2], &[0, 0, 1, 1]);
    assert_eq!(manifold_triplet_loss(&separated, p).unwrap(), 0.0);

    let interleaved = batch_1d(&[0.0, 1.0, 0.5, 1.5], &[0, 0, 1, 1]);
    assert!((batch_threshold(&interleaved).unwrap() - 5.0 / 6.0).abs() < 1e-12);
    let want: f64 = 3.0 - 1.0 / 6.0 + 0.3;
    assert!((want - 3.133_333_333_333_333).abs() < 1e-12);
    assert!((manifold_triplet_loss(&interleaved, p).unwrap() - want).abs() < 1e-12);
    assert!((brute_force_loss(&interleaved, 3.0, 0.3).unwrap() - want).abs() < 1e-12);

    let singletons = batch_1d(&[0.0, 1.0, 2.0], &[0, 1, 2]);
    let p0 = ManifoldParams::new(3.0, 0.0).unwrap();
    assert!(matches!(manifold_triplet_loss(&singletons, p0), Err(Error::NoValidAnchor)));
}

#[test]
fn mining_is_invariant_to_the_activation() {
    let mut g = rng(8);
    for _ in 0..1000 {
        let n = g.random_range(3..20);
        let d = g.random_range(1..6);
        let v = random_tensor(&[n, d], &mut g);
        let labels: Vec<usize> = (0..n).map(|_| g.random_range(0..3)).collect();
        let dist = pairwise_distances(&v);
        let k = g.random_range(1.0..5.0);
        let b = EmbeddingBatch::new(v, labels.clone()).unwrap();
        let r = batch_threshold(&b).unwrap();
        assert_eq!(mine_hardest(&dist, &labels, None), mine_hardest(&dist, &labels, Some((k, r))));
    }
}

#[test]
fn matches_exhaustive_oracle() {
    let mut g = rng(9);
    let mut checked = 0;
    for _ in 0..500 {
        let n = g.random_range(2..=16);
        let d = g.random_range(1..5);
        let v = random_tensor(&[n, d], &mut g);
        let labels: Vec<usize> = (0..n).map(|_| g.random_range(0..4)).collect();
        let k = g.random_range(1.0..4.0);
        let gamma = g.random_range(0.0..1.0);
        let b = EmbeddingBatch::new(v, labels).unwrap();
        let got = manifold_triplet_loss(&b, ManifoldParams::new(k, gamma).unwrap());
        match brute_force_loss(&b, k, gamma) {
            Some(want) => {
                assert!((got.unwrap() - want).abs() < 1e-9);
                checked += 1;
            }
            None => assert!(got.is_err()),
        }
    }
    assert!(checked > 400);
}

#[test]
fn satisfied_margins_give_zero_loss() {
    let mut g = rng(10);
    for _ in 0..50 {
        let per = g.random_range(2..6);
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for c in 0..3 {
            for _ in 0..per {
                pts.push(100.0 * c as f64 + g.random_range(0.0..0.5));
                labels.push(c);
            }
        }
        let b = batch_1d(&pts, &labels);
        assert_eq!(manifold_triplet_loss(&b, ManifoldParams::default()).unwrap(), 0.0);
    }
}
