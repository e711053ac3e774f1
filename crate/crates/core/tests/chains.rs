//! Cross-module checks: the single-channel map against explicit matrix
//! chains, and decoupled multi-channel chains against their 1D parts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scatchain::linalg::CMat;
use scatchain::multi_channel::decoupled;
use scatchain::single_channel::discriminant;
use scatchain::{classify, ChainState1D, HaarSampler, ScatteringMatrix, SingleChannelParams, TransportClass};
use std::f64::consts::TAU;

fn random_params(rng: &mut ChaCha8Rng) -> SingleChannelParams {
    SingleChannelParams::new(rng.random_range(0.0..0.95), rng.random_range(0.0..TAU), rng.random_range(0.0..TAU), rng.random_range(0.0..TAU))
        .unwrap()
}

#[test]
fn amplitude_map_tracks_composed_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let gens: Vec<_> = (0..40).map(|_| random_params(&mut rng)).collect();
        let mut state = ChainState1D::from_params(&gens[0]);
        let mut s = gens[0].to_smatrix();
        for g in &gens[1..] {
            state = state.step(g);
            s = s.compose(&g.to_smatrix()).unwrap();
            let t = s.transmission();
            assert!((state.b * state.b - t).abs() <= 1e-9 * t.max(1e-300) + 1e-14, "B^2 {} vs T {}", state.b * state.b, t);
            assert!((state.log_b - 0.5 * t.ln()).abs() < 1e-8);
        }
        // The full matrix, phases included, is recovered from the map state.
        let diff = (state.to_smatrix().matrix() - s.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-9, "{diff:e}");
    }
}

#[test]
fn chain_transfer_matrix_is_the_reversed_product() {
    let mut haar = HaarSampler::new(2, 5);
    let gens: Vec<ScatteringMatrix> = (0..30).map(|_| haar.sample()).collect();
    let mut s = gens[0].clone();
    let mut t = gens[0].to_transfer().unwrap();
    for g in &gens[1..] {
        s = s.compose(g).unwrap();
        t = g.to_transfer().unwrap().then_after(&t).unwrap();
    }
    let from_s = s.to_transfer().unwrap();
    let scale = t.matrix().iter().map(|z| z.norm()).fold(1.0, f64::max);
    let diff = (from_s.matrix() - t.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    assert!(diff / scale < 1e-9, "relative deviation {:e}", diff / scale);
}

#[test]
fn decoupled_channels_classify_like_their_parts() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut seen = [false; 3];
    for _ in 0..60 {
        let parts: Vec<SingleChannelParams> = (0..3).map(|_| random_params(&mut rng)).collect();
        let ds: Vec<f64> = parts.iter().map(discriminant).collect();
        if ds.iter().any(|d| d.abs() < 1e-3) {
            continue;
        }
        let localising = ds.iter().filter(|&&d| d > 0.0).count();
        let mats: Vec<ScatteringMatrix> = parts.iter().map(|p| p.to_smatrix()).collect();
        let c = classify(&decoupled(&mats).unwrap(), 1e-9).unwrap();
        assert_eq!(c.d_u, localising, "{ds:?}");
        let expected = match localising {
            0 => TransportClass::Ballistic,
            3 => TransportClass::TotallyLocalised,
            _ => TransportClass::PartiallyLocalised,
        };
        assert_eq!(c.label, expected);
        seen[match expected {
            TransportClass::Ballistic => 0,
            TransportClass::PartiallyLocalised => 1,
            TransportClass::TotallyLocalised => 2,
        }] = true;
        // The largest decay rate is the fastest 1D rate.
        let fastest = parts
            .iter()
            .map(|p| ChainState1D::from_params(p).to_smatrix().to_transfer().unwrap())
            .map(|t| t.eigenvalues().iter().map(|k| k.norm().ln()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        assert!((c.decay_rate - fastest).abs() < 1e-9);
    }
    assert!(seen[1] && seen[2], "sample should reach both localised classes");
}

#[test]
fn identity_generator_leaves_chains_unchanged() {
    let s = HaarSampler::new(3, 9).sample();
    let id = ScatteringMatrix::perfect_transmitter(3);
    let diff: CMat = s.compose(&id).unwrap().matrix() - s.matrix();
    assert!(diff.iter().all(|z| z.norm() < 1e-14));
    let diff: CMat = id.compose(&s).unwrap().matrix() - s.matrix();
    assert!(diff.iter().all(|z| z.norm() < 1e-14));
}
