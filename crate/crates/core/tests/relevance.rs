use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use relmap::relevance::{
    aggregate_relevance, encode_pgm, layer_relevance, relevance_map, upsample_map,
};
use relmap::tensor::{Tape, Tensor};
use relmap::vit::{ViTConfig, ViTModel};

fn image(seed: u64) -> Tensor {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(&[32, 32, 3], (0..32 * 32 * 3).map(|_| rng.random_range(0.0f32..1.0)).collect()).unwrap()
}

#[test]
fn single_layer_composition() {
    // with one layer R = I + Abar
    let tape = Tape::new();
    let a = tape.constant(Tensor::new(&[2, 2, 2], vec![0.5, 0.5, 0.1, 0.9, 0.2, 0.8, 0.6, 0.4]).unwrap());
    let g = Tensor::new(&[2, 2, 2], vec![1.0, -2.0, 3.0, 1.0, 2.0, 1.0, -1.0, 0.0]).unwrap();
    let abar = layer_relevance(a, &g).unwrap();
    // head mean of clamp(g*a): [(0.5+0.4)/2, (0+0.8)/2, (0.3+0)/2, (0.9+0)/2]
    let expect = [0.45f32, 0.4, 0.15, 0.45];
    for (x, y) in abar.value().data().iter().zip(expect) {
        assert!((x - y).abs() < 1e-6);
    }
    let r = aggregate_relevance(&tape, &[abar], 2).unwrap();
    let expect_r = [1.45f32, 0.4, 0.15, 1.45];
    for (x, y) in r.value().data().iter().zip(expect_r) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn no_layers_is_identity() {
    let tape = Tape::new();
    let r = aggregate_relevance(&tape, &[], 3).unwrap();
    assert_eq!(r.value().data(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
}

#[test]
fn out_of_range_target_is_rejected() {
    let m = ViTModel::init(ViTConfig::default(), 0).unwrap();
    assert!(relevance_map(&m, &image(0), 8).is_err());
}

#[test]
fn pgm_header_and_size() {
    let bytes = encode_pgm(&[0.0, 0.5, 1.0, 0.25], 2, 2).unwrap();
    assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
    assert_eq!(bytes.len(), b"P5\n2 2\n255\n".len() + 4);
    assert!(encode_pgm(&[0.0; 3], 2, 2).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn maps_lie_in_unit_interval(seed in 0u64..10_000, class in 0usize..8) {
        let m = ViTModel::init(ViTConfig::default(), seed % 5).unwrap();
        let map = relevance_map(&m, &image(seed), class).unwrap();
        prop_assert_eq!(map.values.len(), 16);
        prop_assert!(map.values.iter().all(|v| (0.0..=1.0).contains(v)));
        let max = map.values.iter().cloned().fold(0.0f32, f32::max);
        prop_assert!(max == 0.0 || (max - 1.0).abs() < 1e-6);
        let px = upsample_map(&map, 32, 32).unwrap();
        prop_assert!(px.data().iter().all(|v| (-1e-6..=1.0 + 1e-6).contains(v)));
    }
}
