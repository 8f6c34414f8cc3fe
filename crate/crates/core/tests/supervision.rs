mod common;

use proptest::prelude::*;
use tsonet::supervision::{build_weight_map, derive_footprint_mask, erode_footprint, SupervisionPack};
use tsonet::Error;
use tsonet_tensor::Tensor;

fn map_strategy() -> impl Strategy<Value = (usize, usize, Vec<f32>)> {
    (1usize..14, 1usize..14, any::<u64>()).prop_map(|(h, w, seed)| {
        let mut rng = common::rng(seed);
        (h, w, common::random_heights(&mut rng, h, w))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn pack_matches_loop_oracle((h, w, heights) in map_strategy(), tau in 0.0f32..5.0, alpha in 0.01f32..1.0) {
        let t = Tensor::from_vec([h, w], heights.clone());
        let pack = SupervisionPack::derive(&t, tau, alpha).unwrap();
        let fp = common::footprint(&heights, tau);
        let interior = common::erode(&fp, h, w);
        prop_assert_eq!(pack.footprint.data(), &fp[..]);
        prop_assert_eq!(pack.interior.data(), &interior[..]);
        prop_assert_eq!(pack.weights.data(), &common::weights(&interior, alpha)[..]);
    }

    #[test]
    fn interior_inside_footprint_and_weights_two_valued((h, w, heights) in map_strategy(), alpha in 0.01f32..1.0) {
        let pack = SupervisionPack::derive(&Tensor::from_vec([h, w], heights), 2.0, alpha).unwrap();
        for i in 0..h * w {
            prop_assert!(pack.interior.data()[i] <= pack.footprint.data()[i]);
            let wv = pack.weights.data()[i];
            prop_assert!(wv == 1.0 || wv == alpha);
        }
    }

    #[test]
    fn higher_threshold_never_adds_pixels((h, w, heights) in map_strategy(), lo in 0.0f32..10.0, extra in 0.0f32..10.0) {
        let t = Tensor::from_vec([h, w], heights);
        let a = SupervisionPack::derive(&t, lo, 0.1).unwrap();
        let b = SupervisionPack::derive(&t, lo + extra, 0.1).unwrap();
        for i in 0..h * w {
            prop_assert!(b.footprint.data()[i] <= a.footprint.data()[i]);
            prop_assert!(b.interior.data()[i] <= a.interior.data()[i]);
        }
    }

    #[test]
    fn double_erosion_matches_oracle_and_shrinks((h, w, heights) in map_strategy()) {
        let fp = derive_footprint_mask(&Tensor::from_vec([h, w], heights), 2.0);
        let once = erode_footprint(&fp);
        let twice = erode_footprint(&once);
        let oracle = common::erode(&common::erode(fp.data(), h, w), h, w);
        prop_assert_eq!(twice.data(), &oracle[..]);
        for i in 0..h * w {
            prop_assert!(twice.data()[i] <= once.data()[i]);
        }
    }
}

#[test]
fn three_by_three_block_keeps_only_its_centre() {
    let mut heights = Tensor::full([7, 7], 0.0f32);
    for y in 2..5 {
        for x in 2..5 {
            heights.set(&[y, x], 10.0);
        }
    }
    let pack = SupervisionPack::derive(&heights, 2.0, 0.1).unwrap();
    assert_eq!(pack.footprint.data().iter().filter(|&&v| v == 1).count(), 9);
    let interior: Vec<usize> = (0..49).filter(|&i| pack.interior.data()[i] == 1).collect();
    assert_eq!(interior, vec![3 * 7 + 3]);
    assert_eq!(pack.weights.data()[3 * 7 + 3], 1.0);
    assert_eq!(pack.weights.data()[2 * 7 + 2], 0.1);
    assert_eq!(pack.weights.data()[0], 0.1);
}

#[test]
fn full_frame_building_is_all_interior() {
    let heights = Tensor::full([5, 6], 30.0f32);
    let pack = SupervisionPack::derive(&heights, 2.0, 0.25).unwrap();
    assert!(pack.interior.data().iter().all(|&v| v == 1));
    assert!(pack.weights.data().iter().all(|&v| v == 1.0));
}

#[test]
fn threshold_value_itself_is_background() {
    let heights = Tensor::from_vec([1, 4], vec![2.0f32, 2.0001, 1.9, 0.0]);
    assert_eq!(derive_footprint_mask(&heights, 2.0).data(), &[0, 1, 0, 0]);
}

#[test]
fn alpha_outside_unit_interval_is_rejected() {
    let interior = Tensor::full([2, 2], 1u8);
    for alpha in [0.0, -0.1, 1.5, f32::NAN] {
        assert!(matches!(build_weight_map(&interior, alpha), Err(Error::Config(_))));
    }
    assert!(build_weight_map(&interior, 1.0).is_ok());
}

#[test]
fn random_maps_agree_with_oracle_at_patch_scale() {
    let mut rng = common::rng(2024);
    for _ in 0..20 {
        let heights = common::random_heights(&mut rng, 64, 64);
        let pack = SupervisionPack::derive(&Tensor::from_vec([64, 64], heights.clone()), 2.0, 0.1).unwrap();
        let interior = common::erode(&common::footprint(&heights, 2.0), 64, 64);
        assert_eq!(pack.interior.data(), &interior[..]);
    }
}
