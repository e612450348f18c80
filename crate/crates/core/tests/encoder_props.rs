use numgraph::{Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uniskel::encoder::{
    embed_and_fuse, forward, init_params, pool_and_project, Batch, EncoderConfig, EncoderInput, EncoderSettings, FusionMode, Modality,
};
use uniskel::loss::{total_loss, LossWeights};
use uniskel::skeleton::{build_unified_space, derive_modalities, unify, PaddingStrategy, RawSequence, SkeletonFormat, UnifiedSpace};

fn space() -> UnifiedSpace {
    let f = SkeletonFormat::from_pairs(
        "star",
        &[("pelvis", "pelvis"), ("neck", "pelvis"), ("head", "neck"), ("l_hand", "neck"), ("r_foot", "pelvis")],
        3,
        1,
    )
    .unwrap();
    build_unified_space(&[f]).unwrap()
}

fn settings(layers: usize, t_max: usize) -> EncoderSettings {
    EncoderSettings {
        d_h: 8,
        layers,
        heads: 2,
        ffn_mult: 2,
        t_max,
        n_seg: 2,
        ..Default::default()
    }
}

fn raw(frames: usize, seed: u64) -> RawSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RawSequence {
        sample_id: None,
        format_id: "star".into(),
        members: 1,
        label_ids: vec![0],
        frames: (0..frames)
            .map(|_| vec![(0..5).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()])
            .collect(),
    }
}

fn input(sp: &UnifiedSpace, cfg: &EncoderConfig, r: &RawSequence) -> EncoderInput {
    EncoderInput::new(&derive_modalities(&unify(r, sp, &PaddingStrategy::Zero).unwrap(), sp).unwrap(), cfg).unwrap()
}

fn permuted(r: &RawSequence, perm: &[usize]) -> RawSequence {
    RawSequence {
        frames: perm.iter().map(|&p| r.frames[p].clone()).collect(),
        ..r.clone()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn feature_shapes_follow_the_config(t in 2usize..7, n in 1usize..4, seed in any::<u64>()) {
        let sp = space();
        let cfg = EncoderConfig::for_space(&sp, &settings(1, 6), 5, false);
        let store = init_params(&cfg, seed).unwrap();
        let inputs: Vec<EncoderInput> = (0..n).map(|i| input(&sp, &cfg, &raw(t, seed ^ i as u64))).collect();
        let refs: Vec<&EncoderInput> = inputs.iter().collect();
        let mut g = Graph::new();
        let f = forward(&mut g, &store, &cfg, &Batch::new(&refs).unwrap()).unwrap();
        prop_assert_eq!(g.shape(f.vt_seq), &[n, t, 8]);
        prop_assert_eq!(g.shape(f.vs_seq), &[n, 5, 8]);
        prop_assert_eq!(g.shape(f.vg), &[n, 16]);
        prop_assert_eq!(g.shape(f.v), &[n, 5]);
        prop_assert_eq!(g.shape(f.v_t_local), &[n, 2, 5]);
        prop_assert_eq!(g.shape(f.v_s_local), &[n, cfg.n_part, 5]);
        for v in [f.vt_seq, f.vs_seq, f.v, f.v_t, f.v_s, f.v_t_local, f.v_s_local] {
            prop_assert!(g.value(v).is_finite());
        }
    }

    #[test]
    fn max_pool_without_positions_ignores_frame_order(t in 2usize..7, seed in any::<u64>(), shuffle in any::<u64>()) {
        let sp = space();
        let mut s = settings(0, 6);
        // motion depends on frame order by construction
        s.modalities = vec![Modality::Joint, Modality::Bone];
        let cfg = EncoderConfig::for_space(&sp, &s, 5, false);
        let store = init_params(&cfg, seed).unwrap();
        let r = raw(t, seed);
        let mut perm: Vec<usize> = (0..t).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(shuffle));
        let pooled = |r: &RawSequence| {
            let x = input(&sp, &cfg, r);
            let mut g = Graph::new();
            let b = Batch::new(&[&x]).unwrap();
            let (hmmt, hmms) = embed_and_fuse(&mut g, &store, &cfg, &b).unwrap();
            let f = pool_and_project(&mut g, &store, &cfg, hmmt, hmms).unwrap();
            g.value(f.vg_t).clone()
        };
        let (a, b) = (pooled(&r), pooled(&permuted(&r, &perm)));
        prop_assert!(a.max_abs_diff(&b) <= 1e-12);
    }

    #[test]
    fn positions_make_the_temporal_stream_order_sensitive(t in 3usize..7, seed in any::<u64>()) {
        let sp = space();
        let cfg = EncoderConfig::for_space(&sp, &settings(1, 6), 5, false);
        let store = init_params(&cfg, seed).unwrap();
        let r = raw(t, seed);
        let perm: Vec<usize> = (0..t).rev().collect();
        let seq = |r: &RawSequence| {
            let x = input(&sp, &cfg, r);
            let mut g = Graph::new();
            let f = forward(&mut g, &store, &cfg, &Batch::new(&[&x]).unwrap()).unwrap();
            g.value(f.vt_seq).clone()
        };
        let (a, b) = (seq(&r), seq(&permuted(&r, &perm)));
        // compare frame p of the original with its new position
        let d = 8;
        let mut diff = 0.0f64;
        for (new, &old) in perm.iter().enumerate() {
            for c in 0..d {
                diff = diff.max((a.data()[old * d + c] - b.data()[new * d + c]).abs());
            }
        }
        prop_assert!(diff > 1e-6);
    }
}

#[test]
fn zero_padding_runs_are_bit_identical() {
    let sp = build_unified_space(&[SkeletonFormat::preset("kinect-v2").unwrap(), SkeletonFormat::preset("pose-2d").unwrap()]).unwrap();
    let cfg = EncoderConfig::for_space(&sp, &settings(1, 4), 6, false);
    let store = init_params(&cfg, 3).unwrap();
    let f = SkeletonFormat::preset("pose-2d").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let r = RawSequence {
        sample_id: None,
        format_id: "pose-2d".into(),
        members: 1,
        label_ids: vec![0],
        frames: (0..4).map(|_| vec![(0..f.num_joints()).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect()]).collect(),
    };
    let run = || {
        let x = input(&sp, &cfg, &r);
        let mut g = Graph::new();
        let out = forward(&mut g, &store, &cfg, &Batch::new(&[&x]).unwrap()).unwrap();
        (g.value(out.v).clone(), g.value(out.vs_seq).clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn every_parameter_receives_gradient() {
    let sp = space();
    let mut s = settings(2, 5);
    s.fusion_mode = FusionMode::LearnableSoftmax;
    let cfg = EncoderConfig::for_space(&sp, &s, 6, false);
    let mut store = init_params(&cfg, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (_, t) in store.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
    }
    let inputs: Vec<EncoderInput> = (0..4).map(|i| input(&sp, &cfg, &raw(5, 40 + i))).collect();
    let refs: Vec<&EncoderInput> = inputs.iter().collect();
    let mut g = Graph::new();
    let f = forward(&mut g, &store, &cfg, &Batch::new(&refs).unwrap()).unwrap();
    let a = g.constant(Tensor::from_fn(&[4, 6], |_| rng.random_range(-1.0..1.0)));
    let l = total_loss(&mut g, &f, a, &LossWeights::default(), None).unwrap();
    g.backward(l.total).unwrap();
    for (name, p) in store.iter() {
        let grad = g.param_grad(name).unwrap_or_else(|| panic!("{name} has no gradient"));
        assert_eq!(grad.shape(), p.shape());
        if name == "spatial.embed" {
            for (k, row) in grad.data().chunks(8).enumerate() {
                assert!(row.iter().any(|v| *v != 0.0), "slot {k} embedding is dead");
            }
        } else {
            assert!(grad.data().iter().any(|v| *v != 0.0), "{name} is dead");
        }
    }
}
