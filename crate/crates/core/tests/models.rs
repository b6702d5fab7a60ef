use pag_core::autodiff::{check_gradients, GradCheckConfig, Tape};
use pag_core::geometry::PointCloud;
use pag_core::harness::synth::{classification_set, segmentation_set, ShapeKind};
use pag_core::layers::EpMode;
use pag_core::losses::{deeply_supervised_loss, joint_loss, mmd_against, LossWeights};
use pag_core::models::{
    parse_hierarchies, ForwardOptions, LayerSpec, Network, NetworkConfig, Optimizer, Task, TrainState,
    CANONICAL_DECODER, CANONICAL_ENCODER,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::new((0..3 * n).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect(), None, None).unwrap()
}

fn permuted(cloud: &PointCloud, perm: &[usize]) -> PointCloud {
    cloud.subset(perm).unwrap()
}

fn shapes(net: &Network) -> Vec<(String, Vec<usize>)> {
    net.layout().specs().iter().map(|s| (s.name.clone(), s.shape.clone())).collect()
}

#[test]
fn bracket_strings_round_trip() {
    for s in [CANONICAL_ENCODER, CANONICAL_DECODER] {
        let (name, h) = parse_hierarchies(s).unwrap();
        assert_eq!(pag_core::models::format_hierarchies(&name, &h), s);
    }
    let (_, h) = parse_hierarchies(CANONICAL_ENCODER).unwrap();
    assert_eq!(h[1], vec![LayerSpec::new(128, 1), LayerSpec::new(128, 2)]);
    for bad in ["Encoder([64, 1]", "Encoder([64])", "Encoder([64, x])", "Encoder(; [1, 1])"] {
        assert!(parse_hierarchies(bad).is_err(), "{bad}");
    }
}

#[test]
fn canonical_classifier_size() {
    let cfg = NetworkConfig::canonical_classifier(40);
    assert_eq!(cfg.encoder_string(), CANONICAL_ENCODER);
    let a = Network::build_classifier(&cfg).unwrap();
    let b = Network::build_classifier(&cfg).unwrap();
    assert_eq!(a.num_params(), b.num_params());
    assert_eq!(a.init_params::<f32>(3), b.init_params::<f32>(3));
    let n = a.num_params() as f64;
    assert!((n - 1.8e6).abs() <= 0.2 * 1.8e6, "{n}");
}

#[test]
fn canonical_point_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cloud = random_cloud(&mut rng, 1024);
    let cls = Network::build(&NetworkConfig::canonical_classifier(40)).unwrap();
    let params = cls.init_params::<f32>(0);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape).unwrap();
    let out = cls.classify_forward(&mut tape, &bound, &cloud, &ForwardOptions::default()).unwrap();
    assert_eq!(out.trace.encoder_points, vec![1024, 256, 64]);
    assert_eq!(out.trace.pooled_points, 16);
    assert_eq!(tape.shape(out.logits), &[1, 40]);

    let seg = Network::build(&NetworkConfig::canonical_segmenter(50)).unwrap();
    let params = seg.init_params::<f32>(0);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape).unwrap();
    let out = seg.segment_forward(&mut tape, &bound, &cloud, &ForwardOptions::default()).unwrap();
    assert_eq!(out.trace.decoder_points, vec![64, 256, 1024]);
    assert_eq!(out.trace.ds_points, Some(64));
    assert_eq!(tape.shape(out.logits), &[1024, 50]);
    assert_eq!(tape.shape(out.embedding), &[1, 1024]);
}

#[test]
fn rejects_small_clouds_and_bad_configs() {
    let cfg = NetworkConfig::desk_classifier(4);
    let net = Network::build(&cfg).unwrap();
    let params = net.init_params::<f32>(0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let small = random_cloud(&mut rng, cfg.min_points() - 1);
    assert!(net.class_logits(&params, &small, &ForwardOptions::default()).is_err());
    let ok = random_cloud(&mut rng, cfg.min_points());
    assert!(net.class_logits(&params, &ok, &ForwardOptions::default()).is_ok());

    let mut bad = NetworkConfig::canonical_segmenter(4);
    bad.decoder.as_mut().unwrap().pop();
    assert!(Network::build(&bad).is_err());
    let mut bad = NetworkConfig::canonical_classifier(4);
    bad.k = 0;
    assert!(Network::build(&bad).is_err());
    assert!(Network::build_segmenter(&NetworkConfig::canonical_classifier(4)).is_err());
}

fn diff(a: &[(String, Vec<usize>)], b: &[(String, Vec<usize>)]) -> Vec<String> {
    let mut out = Vec::new();
    for (n, s) in a {
        match b.iter().find(|(m, _)| m == n) {
            None => out.push(format!("-{n}")),
            Some((_, t)) if t != s => out.push(format!("~{n} {s:?}->{t:?}")),
            _ => {}
        }
    }
    for (n, _) in b {
        if !a.iter().any(|(m, _)| m == n) {
            out.push(format!("+{n}"));
        }
    }
    out
}

#[test]
fn ablation_flags_change_only_their_widths() {
    let base = NetworkConfig::desk_segmenter(2);
    let full = shapes(&Network::build(&base).unwrap());
    let embed = *base.fc_sizes.last().unwrap();

    let no_global = shapes(&Network::build(&NetworkConfig { use_global_feature: false, ..base.clone() }).unwrap());
    let d = diff(&full, &no_global);
    assert_eq!(d.len(), 2, "{d:?}");
    let dec = full.iter().find(|(n, _)| n == "dec0.0.weight").unwrap().1.clone();
    let dec2 = no_global.iter().find(|(n, _)| n == "dec0.0.weight").unwrap().1.clone();
    assert_eq!(dec[0] - dec2[0], 2 * embed);
    let csu = full.iter().find(|(n, _)| n == "csu0.weight").unwrap().1[0];
    let csu2 = no_global.iter().find(|(n, _)| n == "csu0.weight").unwrap().1[0];
    assert_eq!(csu - csu2, embed);

    let no_aux = shapes(&Network::build(&NetworkConfig { use_aux_losses: false, ..base.clone() }).unwrap());
    assert_eq!(diff(&full, &no_aux), vec!["-ds_head.weight", "-ds_head.bias"]);

    let no_csu = shapes(&Network::build(&NetworkConfig { use_csu: false, ..base.clone() }).unwrap());
    let d = diff(&full, &no_csu);
    assert!(d.iter().all(|e| e.starts_with("-csu") || e.starts_with("~seg_head.0.weight")), "{d:?}");

    let cls = NetworkConfig::desk_classifier(4);
    let cfull = shapes(&Network::build(&cls).unwrap());
    let no_css = shapes(&Network::build(&NetworkConfig { use_css: false, ..cls.clone() }).unwrap());
    let d = diff(&cfull, &no_css);
    assert!(d.iter().all(|e| e.starts_with("-css") || e.starts_with("~fc.0.weight")), "{d:?}");

    let centroid = shapes(&Network::build(&NetworkConfig { ep_mode: EpMode::Centroid, ..cls.clone() }).unwrap());
    let d = diff(&cfull, &centroid);
    assert!(d.iter().all(|e| e.starts_with("~enc1.0.weight") || e.starts_with("~enc2.0.weight") || e.starts_with("~proj.weight")), "{d:?}");

    let mlp = Network::build(&NetworkConfig { use_pac: false, ..cls.clone() }).unwrap();
    let w = mlp.layout().specs().iter().find(|s| s.name == "enc0.0.weight").unwrap();
    assert_eq!(w.shape, vec![3, 16]);
    let w = cfull.iter().find(|(n, _)| n == "enc0.0.weight").unwrap();
    assert_eq!(w.1, vec![6, 16]);
}

fn small_classifier() -> NetworkConfig {
    NetworkConfig {
        encoder: parse_hierarchies("E([8, 1], [8, 2]; [16, 1], [16, 2])").unwrap().1,
        k: 4,
        projection: 16,
        fc_sizes: vec![16],
        ..NetworkConfig::desk_classifier(3)
    }
}

fn small_segmenter() -> NetworkConfig {
    NetworkConfig {
        encoder: parse_hierarchies("E([8, 1], [8, 2]; [16, 1], [16, 2])").unwrap().1,
        decoder: Some(parse_hierarchies("D([16, 2], [16, 1]; [8, 2], [8, 1])").unwrap().1),
        k: 4,
        projection: 16,
        fc_sizes: vec![16, 8],
        seg_head: vec![8],
        ..NetworkConfig::desk_segmenter(3)
    }
}

#[test]
fn classifier_is_permutation_invariant() {
    let net = Network::build(&small_classifier()).unwrap();
    let params = net.init_params::<f32>(5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let opts = ForwardOptions::default();
    for _ in 0..5 {
        let cloud = random_cloud(&mut rng, 64);
        let base = net.class_logits(&params, &cloud, &opts).unwrap();
        assert_eq!(base, net.class_logits(&params, &cloud, &opts).unwrap());
        for _ in 0..10 {
            let mut perm: Vec<usize> = (0..64).collect();
            perm.shuffle(&mut rng);
            let out = net.class_logits(&params, &permuted(&cloud, &perm), &opts).unwrap();
            for (a, b) in base.iter().zip(&out) {
                assert!((a - b).abs() < 1e-5, "{a} {b}");
            }
        }
    }
}

#[test]
fn segmenter_is_permutation_equivariant() {
    let cfg = small_segmenter();
    let net = Network::build(&cfg).unwrap();
    let params = net.init_params::<f32>(5);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let opts = ForwardOptions::default();
    let c = cfg.num_classes;
    for _ in 0..3 {
        let cloud = random_cloud(&mut rng, 128);
        let base = net.point_logits(&params, &cloud, &opts).unwrap();
        assert_eq!(base.len(), 128 * c);
        for _ in 0..20 {
            let mut perm: Vec<usize> = (0..128).collect();
            perm.shuffle(&mut rng);
            let out = net.point_logits(&params, &permuted(&cloud, &perm), &opts).unwrap();
            for (i, &p) in perm.iter().enumerate() {
                for j in 0..c {
                    assert!((out[i * c + j] - base[p * c + j]).abs() < 1e-5);
                }
            }
        }
    }
}

#[test]
fn micro_network_gradients_match_finite_differences() {
    let cfg = NetworkConfig {
        encoder: parse_hierarchies("E([8, 1], [8, 2]; [8, 1], [8, 2])").unwrap().1,
        decoder: Some(parse_hierarchies("D([8, 2], [8, 1]; [8, 2], [8, 1])").unwrap().1),
        k: 3,
        subsample_rate: 2,
        projection: 8,
        fc_sizes: vec![8, 8],
        seg_head: vec![8],
        num_classes: 3,
        ..NetworkConfig::desk_segmenter(3)
    };
    let net = Network::build(&cfg).unwrap();
    let params = net.init_params::<f64>(11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let labels: Vec<usize> = (0..16).map(|_| rng.random_range(0..3)).collect();
    let cloud = PointCloud::new(
        (0..48).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect(),
        None,
        Some(labels.clone()),
    )
    .unwrap();
    let prior: Vec<f64> = (0..16).map(|_| rng.random::<f64>() - 0.5).collect();
    let report = check_gradients(
        |t: &mut Tape<f64>, b| {
            let out = net.segment_forward(t, b, &cloud, &ForwardOptions::default())?;
            let master = t.softmax_cross_entropy(out.logits, &labels)?;
            let (ds_logits, ids) = out.ds.clone().expect("aux head");
            let ds = deeply_supervised_loss(t, ds_logits, &ids, &labels)?;
            let p = t.constant(vec![2, 8], prior.clone())?;
            let mmd = mmd_against(t, out.embedding, p, 1.0)?;
            joint_loss(t, master, Some(mmd), Some(ds), &LossWeights::default())
        },
        &params,
        &GradCheckConfig {
            tol: 1e-4,
            ..GradCheckConfig::default()
        },
    )
    .unwrap();
    assert!(report.passed(), "{:#?}", report.params.iter().filter(|p| p.max_rel_error >= 1e-4).collect::<Vec<_>>());
}

#[test]
fn zero_weights_leave_master_loss() {
    let cfg = NetworkConfig {
        loss_weights: LossWeights::zero(),
        ..small_segmenter()
    };
    let mut state = TrainState::new(&cfg, 1, Optimizer::default()).unwrap();
    let batch = segmentation_set(2, 64, 0.0, 3).unwrap();
    let r = state.train_step(&batch).unwrap();
    assert_eq!(r.all, r.master);
    assert!(r.mmd > 0.0 && r.ds > 0.0);
}

#[test]
fn loss_decreases_on_fixed_batch() {
    let cfg = small_classifier();
    let mut state = TrainState::new(&cfg, 2, Optimizer::adam(3e-3)).unwrap();
    let batch = classification_set(&ShapeKind::CLASSES[..3], 3, 64, 0.01, 4).unwrap();
    let batch = &batch[..8];
    let losses: Vec<f64> = (0..50).map(|_| state.train_step(batch).unwrap().all).collect();
    let smooth = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let windows: Vec<f64> = losses.chunks(10).map(smooth).collect();
    assert!(windows.windows(2).all(|w| w[1] < w[0]), "{windows:?}");
}

#[test]
fn checkpoint_reload_reproduces_step() {
    let cfg = small_segmenter();
    let mut state = TrainState::new(&cfg, 9, Optimizer::default()).unwrap();
    let batch = segmentation_set(2, 64, 0.01, 5).unwrap();
    state.train_step(&batch).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ckpt");
    state.save(&path).unwrap();
    let mut reloaded = TrainState::load(&path).unwrap();
    assert_eq!(reloaded, state);
    let a = state.train_step(&batch).unwrap();
    let b = reloaded.train_step(&batch).unwrap();
    assert_eq!(a.all.to_bits(), b.all.to_bits());
    assert_eq!(state.to_checkpoint().unwrap(), reloaded.to_checkpoint().unwrap());
}

#[test]
fn momentum_optimizer_trains() {
    let cfg = NetworkConfig {
        task: Task::Classification,
        ..small_classifier()
    };
    let mut state = TrainState::new(&cfg, 2, Optimizer::momentum(1e-2)).unwrap();
    let batch = classification_set(&ShapeKind::CLASSES[..3], 2, 64, 0.01, 4).unwrap();
    let first = state.train_step(&batch).unwrap().all;
    for _ in 0..20 {
        state.train_step(&batch).unwrap();
    }
    assert!(state.evaluate_losses(&batch).unwrap().all < first);
}
