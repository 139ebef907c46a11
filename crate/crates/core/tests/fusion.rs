mod common;

use std::collections::BTreeMap;

use burst_parallax::fusion::{align_stack, disparity_to_dsm, super_resolve, temporal_std};
use burst_parallax::synth::{generate_burst, scene_preset, SceneKind};
use burst_parallax::{AffineTransform, Burst, FlowField, Image};
use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dsm_is_linear_in_d(k in -3.0..3.0f64, angle in 0.0..std::f64::consts::TAU, amp in 0.1..2.0f64) {
        let d = bump_disparity(24, 20, amp);
        let dir = Some((angle.cos(), angle.sin()));
        let one = disparity_to_dsm(&d, dir, None).unwrap();
        let many = disparity_to_dsm(&d.scaled(k), dir, None).unwrap();
        for (a, b) in one.heights.data().iter().zip(many.heights.data()) {
            prop_assert!((k * *a as f64 - *b as f64).abs() < 1e-5 * (1.0 + b.abs() as f64));
        }
    }

    #[test]
    fn sr_of_constant_burst_is_constant(c in 0.0..255.0f32, zoom in 2usize..4, tx in -1.0..1.0f64) {
        let burst = Burst::from_images((-1..=1).map(|i| (i, Image::filled(20, 16, c)))).unwrap();
        let affinities: BTreeMap<i32, AffineTransform> =
            (-1..=1).map(|i| (i, AffineTransform::translation(tx * i as f64, 0.3 * i as f64))).collect();
        let d = bump_disparity(20, 16, 0.4);
        let sr = super_resolve(&burst, &affinities, &d, zoom, 0.5).unwrap();
        for &v in sr.image.data() {
            prop_assert!((v - c).abs() <= 1e-6 * c.max(1.0));
        }
    }
}

#[test]
fn parallax_alignment_beats_rigid_on_bump() {
    let mut spec = scene_preset(SceneKind::Bump, 64, 64, 8);
    spec.n_frames = 5;
    spec.affine_jitter = 0.002;
    spec.noise_sigma = 1.0;
    let syn = generate_burst(&spec).unwrap();
    let t = &syn.truth;
    let rigid = temporal_std(&align_stack(&syn.burst, &t.affinities, &FlowField::zeros(64, 64), 1).unwrap()).unwrap();
    let parallax = temporal_std(&align_stack(&syn.burst, &t.affinities, &t.disparity, 1).unwrap()).unwrap();
    assert!(parallax.mean < 0.8 * rigid.mean, "{} vs {}", parallax.mean, rigid.mean);
    // with exact geometry only noise remains: population std of 5 samples of sigma 1
    assert!(parallax.mean < 1.2, "{}", parallax.mean);
}

#[test]
fn flat_scene_has_nothing_to_gain() {
    let mut spec = scene_preset(SceneKind::Flat, 48, 48, 2);
    spec.n_frames = 5;
    spec.affine_jitter = 0.002;
    spec.noise_sigma = 1.0;
    let syn = generate_burst(&spec).unwrap();
    let t = &syn.truth;
    assert!(t.disparity.max_norm() < 1e-12);
    let rigid = temporal_std(&align_stack(&syn.burst, &t.affinities, &FlowField::zeros(48, 48), 1).unwrap()).unwrap();
    let parallax = temporal_std(&align_stack(&syn.burst, &t.affinities, &t.disparity, 1).unwrap()).unwrap();
    assert!((rigid.mean - parallax.mean).abs() <= 0.05 * rigid.mean);
}
