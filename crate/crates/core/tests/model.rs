mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsonet::model::{Ablation, Csem, CsemMode, ModelConfig, Tsonet};
use tsonet::nn::{Conv2d, Init};
use tsonet::tensor::{Bound, Graph, ParamStore, Tensor};
use tsonet::Error;

fn tiny() -> ModelConfig {
    ModelConfig {
        encoder_base: 4,
        stream_channels: 8,
        norm_groups: 4,
        num_bins: 8,
        attn_heads: 2,
        ..ModelConfig::default()
    }
}

fn image(seed: u64, b: usize, hw: usize) -> Tensor<f64> {
    let mut rng = common::rng(seed);
    Tensor::from_fn([b, 7, hw, hw], |_| rng.gen_range(0.0..0.5))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn encoder_halves_resolution_and_doubles_width() {
    let (model, store) = Tsonet::new(&tiny(), Ablation::FULL, 0).unwrap();
    let store = store.cast::<f64>();
    let g = Graph::new();
    let p = Bound::new(&g, &store, false);
    let levels = model.encoder.forward(&p, g.constant(image(1, 2, 32)));
    let shapes: Vec<Vec<usize>> = levels.iter().map(|v| v.shape().to_vec()).collect();
    assert_eq!(
        shapes,
        vec![vec![2, 4, 32, 32], vec![2, 8, 16, 16], vec![2, 16, 8, 8], vec![2, 32, 4, 4], vec![2, 64, 2, 2]]
    );
}

#[test]
fn output_shapes_follow_the_input() {
    let (model, store) = Tsonet::new(&tiny(), Ablation::FULL, 0).unwrap();
    let store = store.cast::<f64>();
    let g = Graph::new();
    let p = Bound::new(&g, &store, false);
    let out = model.forward(&p, g.constant(image(2, 3, 48))).unwrap();
    assert_eq!(out.height.shape(), [3, 1, 48, 48]);
    assert_eq!(out.footprint_logits.unwrap().shape(), [3, 1, 48, 48]);
    let bins = out.bins.unwrap();
    assert_eq!(bins.probs.shape(), [3, 8, 48, 48]);
    assert_eq!(bins.values.shape(), [3, 8]);
    // streams sit at half resolution with the default stride
    assert_eq!(out.streams.h_post.shape(), [3, 8, 24, 24]);
}

#[test]
fn bad_input_shapes_are_rejected() {
    let (model, store) = Tsonet::new(&tiny(), Ablation::FULL, 0).unwrap();
    let store = store.cast::<f64>();
    let g = Graph::new();
    let p = Bound::new(&g, &store, false);
    let wrong_bands = g.constant(Tensor::zeros([1, 3, 32, 32]));
    assert!(matches!(model.forward(&p, wrong_bands), Err(Error::Shape(_))));
    let odd = g.constant(Tensor::zeros([1, 7, 30, 30]));
    assert!(matches!(model.forward(&p, odd), Err(Error::Shape(_))));
}

#[test]
fn batch_members_do_not_interact() {
    let (model, store) = Tsonet::new(&tiny(), Ablation::FULL, 3).unwrap();
    let store = store.cast::<f64>();
    let batch = image(4, 2, 32);
    let run = |x: Tensor<f64>| {
        let g = Graph::new();
        let p = Bound::new(&g, &store, false);
        model.forward(&p, g.constant(x)).unwrap().height.value().data().to_vec()
    };
    let joint = run(batch.clone());
    let plane = 32 * 32;
    for i in 0..2 {
        let single = Tensor::from_vec([1, 7, 32, 32], batch.data()[i * 7 * plane..(i + 1) * 7 * plane].to_vec());
        let alone = run(single);
        assert!(max_diff(&alone, &joint[i * plane..(i + 1) * plane]) < 1e-6);
    }
}

#[test]
fn same_seed_same_network() {
    let (_, a) = Tsonet::new(&tiny(), Ablation::FULL, 9).unwrap();
    let (_, b) = Tsonet::new(&tiny(), Ablation::FULL, 9).unwrap();
    let (_, c) = Tsonet::new(&tiny(), Ablation::FULL, 10).unwrap();
    let flat = |s: &ParamStore<f32>| s.iter().flat_map(|(_, t)| t.data().to_vec()).collect::<Vec<_>>();
    assert_eq!(flat(&a), flat(&b));
    assert_ne!(flat(&a), flat(&c));
}

#[test]
fn blank_image_gives_finite_output() {
    for ablation in [Ablation::FULL, Ablation::HEIGHT_ONLY] {
        let (model, store) = Tsonet::new(&tiny(), ablation, 1).unwrap();
        let g = Graph::new();
        let p = Bound::new(&g, &store, false);
        let out = model.forward(&p, g.constant(Tensor::<f32>::zeros([1, 7, 32, 32]))).unwrap();
        assert!(out.height.value().is_finite());
    }
}

#[test]
fn coarsest_level_reaches_the_finest_decoder_output() {
    let (model, store) = Tsonet::new(&tiny(), Ablation::FULL, 2).unwrap();
    let store = store.cast::<f64>();
    let g = Graph::new();
    let p = Bound::new(&g, &store, false);
    let mut encoded = model.encoder.forward(&p, g.constant(image(5, 1, 32)));
    let before = model.height_decoder.forward(&p, &encoded)[0].value();
    let last = encoded.len() - 1;
    encoded[last] = encoded[last].add_scalar(0.5);
    let after = model.height_decoder.forward(&p, &encoded)[0].value();
    assert_eq!(before.shape(), after.shape());
    assert!(max_diff(before.data(), after.data()) > 1e-6);
}

fn csem_with_store(seed: u64, c: usize) -> (Csem, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let csem = Csem::new(&mut Init::new(&mut store, &mut rng), c, 4, 2, 4, CsemMode::Residual);
    (csem, store.cast())
}

fn randomised(store: &ParamStore<f64>, seed: u64) -> ParamStore<f64> {
    let mut rng = common::rng(seed);
    let mut out = store.clone();
    for t in out.values_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `y[o, i] = b[o] + sum_c w[o, c] x[c, i]` on a single `[C, HW]` map.
fn pointwise(store: &ParamStore<f64>, conv: &Conv2d, x: &[f64], c_in: usize, hw: usize) -> Vec<f64> {
    let w = store.get(conv.weight).data();
    let c_out = w.len() / c_in;
    let mut y = vec![0.0; c_out * hw];
    for o in 0..c_out {
        let b = conv.bias.map_or(0.0, |id| store.get(id).data()[o]);
        for i in 0..hw {
            y[o * hw + i] = b + (0..c_in).map(|c| w[o * c_in + c] * x[c * hw + i]).sum::<f64>();
        }
    }
    y
}

#[test]
fn exchange_matches_a_loop_composition() {
    let c = 8;
    let (csem, store) = csem_with_store(11, c);
    let store = randomised(&store, 12);
    let mut rng = common::rng(13);
    let f_fp = Tensor::from_fn([1, c, 5, 5], |_| rng.gen_range(-1.0..1.0));
    let f_h = Tensor::from_fn([1, c, 5, 5], |_| rng.gen_range(-1.0..1.0));
    let g = Graph::new();
    let p = Bound::new(&g, &store, false);
    let (fp, h) = (g.constant(f_fp.clone()), g.constant(f_h.clone()));
    let out = csem.forward(&p, fp, h);

    // trunk, confidence and the height projection come from the library;
    // the gate, footprint projection and the mixing are recomputed here
    let z = csem.trunk.forward(&p, g.concat(&[fp, h], 1)).value();
    let conf = csem.confidence.forward(&p, fp).value();
    let h_ex = csem.h_proj.forward(&p, g.constant((*z).clone())).value();
    let hw = 25;
    let gate: Vec<f64> = pointwise(&store, &csem.gate, z.data(), c, hw).into_iter().map(sigmoid).collect();
    let fp_ex = pointwise(&store, &csem.fp_proj, z.data(), c, hw);
    let mut want_fp = vec![0.0; c * hw];
    let mut want_h = vec![0.0; c * hw];
    for ch in 0..c {
        for i in 0..hw {
            let j = ch * hw + i;
            want_fp[j] = f_fp.data()[j] + fp_ex[j] * gate[j];
            want_h[j] = f_h.data()[j] + h_ex.data()[j] * gate[j] * sigmoid(conf.data()[i]);
        }
    }
    assert!(max_diff(out.fp.value().data(), &want_fp) < 1e-5);
    assert!(max_diff(out.h.value().data(), &want_h) < 1e-5);
}

#[test]
fn fresh_exchange_is_the_identity() {
    let (csem, store) = csem_with_store(3, 8);
    let mut rng = common::rng(4);
    let f_fp = Tensor::from_fn([2, 8, 4, 4], |_| rng.gen_range(-1.0..1.0));
    let f_h = Tensor::from_fn([2, 8, 4, 4], |_| rng.gen_range(-1.0..1.0));
    let g = Graph::new();
    let p = Bound::new(&g, &store, false);
    let out = csem.forward(&p, g.constant(f_fp.clone()), g.constant(f_h.clone()));
    assert_eq!(out.fp.value().data(), f_fp.data());
    assert_eq!(out.h.value().data(), f_h.data());
}

#[test]
fn zero_confidence_blocks_the_height_exchange() {
    let (csem, store) = csem_with_store(5, 8);
    let mut store = randomised(&store, 6);
    store.get_mut(csem.confidence.pw.weight).data_mut().fill(0.0);
    store.get_mut(csem.confidence.pw.bias.unwrap()).data_mut().fill(-60.0);
    let mut rng = common::rng(7);
    let f_fp = Tensor::from_fn([1, 8, 4, 4], |_| rng.gen_range(-1.0..1.0));
    let f_h = Tensor::from_fn([1, 8, 4, 4], |_| rng.gen_range(-1.0..1.0));
    let g = Graph::new();
    let p = Bound::new(&g, &store, false);
    let out = csem.forward(&p, g.constant(f_fp.clone()), g.constant(f_h.clone()));
    assert!(max_diff(out.h.value().data(), f_h.data()) < 1e-12);
    // the footprint side still receives its exchange term
    assert!(max_diff(out.fp.value().data(), f_fp.data()) > 1e-3);
}

#[test]
fn disabled_exchange_passes_streams_through() {
    let ablation = Ablation {
        use_csem: false,
        ..Ablation::FULL
    };
    let (model, store) = Tsonet::new(&tiny(), ablation, 0).unwrap();
    assert!(model.csem.is_none());
    let store = store.cast::<f64>();
    let g = Graph::new();
    let p = Bound::new(&g, &store, false);
    let out = model.forward(&p, g.constant(image(8, 1, 32))).unwrap();
    let s = &out.streams;
    assert_eq!(s.h_pre.value().data(), s.h_post.value().data());
    assert_eq!(s.fp_pre.unwrap().value().data(), s.fp_post.unwrap().value().data());
}

#[test]
fn exchange_without_footprint_stream_is_a_config_error() {
    let ablation = Ablation {
        use_csem: true,
        use_febr: true,
        use_footprint_stream: false,
    };
    assert!(matches!(Tsonet::new(&tiny(), ablation, 0), Err(Error::Config(_))));
}

#[test]
fn grouped_trunk_convs_keep_groups_apart() {
    let (csem, store) = csem_with_store(21, 16);
    let pw = &csem.trunk.blocks[0].pw;
    let groups = pw.spec.groups;
    assert!(groups > 1);
    let c = store.get(pw.weight).shape()[0];
    let per = c / groups;
    assert_eq!(store.get(pw.weight).shape(), [c, per, 1, 1]);
    let g = Graph::new();
    let p = Bound::new(&g, &store, false);
    let base = Tensor::from_fn([1, c, 3, 3], |i| (i % 7) as f64 * 0.1);
    let mut bumped = base.clone();
    for v in &mut bumped.data_mut()[0..9] {
        *v += 1.0;
    }
    let a = pw.forward(&p, g.constant(base)).value();
    let b = pw.forward(&p, g.constant(bumped)).value();
    for ch in 0..c {
        let d = max_diff(&a.data()[ch * 9..(ch + 1) * 9], &b.data()[ch * 9..(ch + 1) * 9]);
        if ch < per {
            assert!(d > 0.0, "channel {ch} in the bumped group did not move");
        } else {
            assert_eq!(d, 0.0, "channel {ch} outside the bumped group moved");
        }
    }
}

#[test]
fn height_only_model_has_no_footprint_parts() {
    let (model, store) = Tsonet::new(&tiny(), Ablation::HEIGHT_ONLY, 0).unwrap();
    assert!(model.footprint_decoder.is_none() && model.footprint_head.is_none());
    assert!(store.iter().all(|(name, _)| !name.starts_with("footprint") && !name.starts_with("csem")));
    let g = Graph::new();
    let p = Bound::new(&g, &store, false);
    let out = model.forward(&p, g.constant(Tensor::<f32>::zeros([1, 7, 32, 32]))).unwrap();
    assert!(out.footprint_logits.is_none() && out.bins.is_none());
    assert_eq!(out.height.shape(), [1, 1, 32, 32]);
}
