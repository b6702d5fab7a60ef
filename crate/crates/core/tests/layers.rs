use pag_core::autodiff::{check_gradients, GradCheckConfig, Init, ParamLayout, ParamStore, Tape};
use pag_core::geometry::{FpsSeed, RowView, Space};
use pag_core::layers::{
    css_apply, css_forward, csu_forward, ep_apply, ep_forward, eu_forward, global_max_pool, interp_plan, pac_edges,
    pac_forward, pac_neighbors, subsample_plan, EpLayer, EpMode, EuLayer, PacLayer,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<f64> {
    (0..n * d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

fn pac_with_weights(c_in: usize, c_out: usize, k: usize, rate: usize, space: Space) -> (PacLayer, ParamLayout) {
    let mut layout = ParamLayout::new();
    let layer = PacLayer::new(&mut layout, "pac", c_in, c_out, k, rate, space);
    (layer, layout)
}

#[test]
fn pac_single_neighbor_identity_kernel() {
    let (layer, layout) = pac_with_weights(1, 2, 1, 1, Space::Feature);
    let mut params = ParamStore::<f64>::init(&layout, 0);
    params.value_mut(layer.linear.weight.index()).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape).unwrap();
    let x = tape.constant(vec![2, 1], vec![1.0, 3.0]).unwrap();
    let edges = pac_edges(&mut tape, x, &[], &layer, &bound).unwrap();
    assert_eq!(tape.shape(edges), &[2, 1, 2]);
    assert_eq!(&tape.value(edges)[..2], &[1.0, -2.0]);
}

#[test]
fn pac_rate_two_uses_even_neighbors() {
    // Feature values 0, 1, 2, ..., 10: the sorted neighbours of point 0 are 1..10.
    let features: Vec<f64> = (0..11).map(f64::from).collect();
    let (layer, _) = pac_with_weights(1, 1, 5, 2, Space::Feature);
    let graph = pac_neighbors(&features, 1, &[], &layer).unwrap();
    assert_eq!(graph.row(0), &[2, 4, 6, 8, 10]);
}

#[test]
fn pac_rejects_single_point() {
    let (layer, layout) = pac_with_weights(2, 3, 1, 1, Space::Feature);
    let params = ParamStore::<f64>::init(&layout, 0);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape).unwrap();
    let x = tape.constant(vec![1, 2], vec![0.0, 1.0]).unwrap();
    assert!(pac_forward(&mut tape, x, &[], &layer, &bound).is_err());
}

/// Straight-line edge convolution: brute-force sort, explicit edge vector,
/// explicit dot products, ReLU, max.
fn reference_edge_conv(x: &[f64], n: usize, c: usize, k: usize, w: &[f64], b: &[f64], c_out: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * c_out];
    for p in 0..n {
        let xp = &x[p * c..(p + 1) * c];
        let mut order: Vec<(f64, usize)> = (0..n)
            .filter(|&q| q != p)
            .map(|q| {
                let d: f64 = (0..c).map(|i| (xp[i] - x[q * c + i]).powi(2)).sum();
                (d, q)
            })
            .collect();
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for o in 0..c_out {
            let mut best = f64::NEG_INFINITY;
            for &(_, q) in order.iter().take(k) {
                let mut edge = xp.to_vec();
                edge.extend((0..c).map(|i| xp[i] - x[q * c + i]));
                let mut v = b[o];
                for (i, e) in edge.iter().enumerate() {
                    v += e * w[i * c_out + o];
                }
                best = best.max(v.max(0.0));
            }
            out[p * c_out + o] = best;
        }
    }
    out
}

#[test]
fn pac_rate_one_matches_reference_edge_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let n = rng.random_range(3..40);
        let c = rng.random_range(1..6);
        let c_out = rng.random_range(1..6);
        let k = rng.random_range(1..n);
        let (layer, layout) = pac_with_weights(c, c_out, k, 1, Space::Feature);
        let mut params = ParamStore::<f64>::init(&layout, trial);
        for b in params.value_mut(layer.linear.bias.index()) {
            *b = rng.random::<f64>() - 0.5;
        }
        let x = random_rows(&mut rng, n, c);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape).unwrap();
        let xv = tape.constant(vec![n, c], x.clone()).unwrap();
        let y = pac_forward(&mut tape, xv, &[], &layer, &bound).unwrap();
        let want = reference_edge_conv(
            &x,
            n,
            c,
            k,
            params.value(layer.linear.weight.index()),
            params.value(layer.linear.bias.index()),
            c_out,
        );
        for (a, b) in tape.value(y).iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "trial {trial}: {a} vs {b}");
        }
    }
}

#[test]
fn pac_metric_space_uses_positions() {
    let positions = vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 5.0, 0.0, 0.0];
    let features = vec![0.0, 10.0, 0.5];
    let (layer, _) = pac_with_weights(1, 1, 1, 1, Space::Metric);
    let graph = pac_neighbors(&features, 1, &positions, &layer).unwrap();
    assert_eq!(graph.row(0), &[1]);
    let (layer, _) = pac_with_weights(1, 1, 1, 1, Space::Feature);
    let graph = pac_neighbors(&features, 1, &positions, &layer).unwrap();
    assert_eq!(graph.row(0), &[2]);
}

/// Centroid 0 at the origin with neighbours 1 and 2 nearby, point 3 far away.
fn ep_fixture() -> (Vec<f64>, Vec<f64>) {
    let positions = vec![0.0, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0, 0.2, 0.0, 9.0, 9.0, 9.0];
    let features = vec![1.0, 2.0, 0.0, 5.0, 3.0, 1.0, -7.0, -7.0];
    (positions, features)
}

fn ep_plan_for_centroid_zero(positions: &[f64]) -> pag_core::layers::SubsamplePlan<f64> {
    let pos = RowView::new(positions, 3).unwrap();
    subsample_plan(positions, pos, 1, 2, FpsSeed::Index(0), None).unwrap()
}

#[test]
fn ep_modes_follow_definition() {
    let (positions, features) = ep_fixture();
    let plan = ep_plan_for_centroid_zero(&positions);
    assert_eq!(plan.centroid_ids(), &[0]);
    assert_eq!(plan.graph.row(0), &[1, 2]);
    let expect = [
        (EpMode::Both, vec![1.0, 2.0, 3.0, 5.0]),
        (EpMode::Centroid, vec![1.0, 2.0]),
        (EpMode::Neighbors, vec![3.0, 5.0]),
    ];
    for (mode, want) in expect {
        let mut tape = Tape::new();
        let x = tape.constant(vec![4, 2], features.clone()).unwrap();
        let y = ep_apply(&mut tape, x, &plan, mode).unwrap();
        assert_eq!(tape.value(y), want.as_slice(), "{mode:?}");
        let layer = EpLayer {
            mode,
            k: 2,
            subsample_rate: 1,
        };
        assert_eq!(layer.out_width(2), want.len());
    }
}

#[test]
fn ep_keeps_n_over_rate_centroids() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let positions: Vec<f32> = (0..1024 * 3).map(|_| rng.random::<f32>()).collect();
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(vec![1024, 3], positions.clone()).unwrap();
    let layer = EpLayer {
        mode: EpMode::Both,
        k: 10,
        subsample_rate: 4,
    };
    let (y, plan) = ep_forward(&mut tape, x, &positions, &layer, FpsSeed::Index(0)).unwrap();
    assert_eq!(plan.len(), 256);
    assert_eq!(tape.shape(y), &[256, 6]);
    // The first C columns carry the centroid's own feature verbatim.
    for (m, &c) in plan.centroid_ids().iter().enumerate() {
        assert_eq!(&tape.value(y)[m * 6..m * 6 + 3], &positions[c * 3..c * 3 + 3]);
    }
}

#[test]
fn ep_rejects_empty_subsample() {
    let positions = vec![0.0f64; 9];
    let mut tape = Tape::new();
    let x = tape.constant(vec![3, 1], vec![0.0; 3]).unwrap();
    let layer = EpLayer {
        mode: EpMode::Both,
        k: 1,
        subsample_rate: 4,
    };
    assert!(ep_forward(&mut tape, x, &positions, &layer, FpsSeed::Index(0)).is_err());
}

#[test]
fn css_equals_neighbors_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let positions = random_rows(&mut rng, 30, 3);
    let features = random_rows(&mut rng, 30, 4);
    let pos = RowView::new(&positions, 3).unwrap();
    let plan = subsample_plan(&positions, pos, 7, 4, FpsSeed::MaxNorm, None).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(vec![30, 4], features).unwrap();
    let a = ep_apply(&mut tape, x, &plan, EpMode::Neighbors).unwrap();
    let b = css_forward(&mut tape, x, &positions, plan.centroid_ids(), 4).unwrap();
    let c = css_apply(&mut tape, x, &plan).unwrap();
    assert_eq!(tape.value(a), tape.value(b));
    assert_eq!(tape.value(a), tape.value(c));
}

#[test]
fn css_constant_features_and_single_neighbor() {
    let (positions, features) = ep_fixture();
    let mut tape = Tape::new();
    let x = tape.constant(vec![4, 2], vec![0.5; 8]).unwrap();
    let y = css_forward(&mut tape, x, &positions, &[0, 3], 2).unwrap();
    assert!(tape.value(y).iter().all(|&v| v == 0.5));
    let x = tape.constant(vec![4, 2], features).unwrap();
    let y = css_forward(&mut tape, x, &positions, &[0], 1).unwrap();
    assert_eq!(tape.value(y), &[0.0, 5.0]);
}

#[test]
fn css_rejects_bad_centroid_sets() {
    let (positions, features) = ep_fixture();
    let mut tape = Tape::new();
    let x = tape.constant(vec![4, 2], features).unwrap();
    assert!(css_forward(&mut tape, x, &positions, &[0, 0], 1).is_err());
    assert!(css_forward(&mut tape, x, &positions, &[4], 1).is_err());
    assert!(css_forward(&mut tape, x, &positions, &[], 1).is_err());
}

#[test]
fn eu_equidistant_and_coincident_targets() {
    let prev_pos = vec![-1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    let mut tape = Tape::new();
    let prev = tape.constant(vec![2, 1], vec![0.0, 2.0]).unwrap();
    let skip = tape.constant(vec![2, 1], vec![7.0, 8.0]).unwrap();
    let target = vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    let y = eu_forward(&mut tape, prev, &prev_pos, &target, skip, &EuLayer { k_interp: 2 }).unwrap();
    assert_eq!(tape.value(y), &[7.0, 1.0, 8.0, 2.0]);
}

#[test]
fn csu_is_the_interpolated_half_of_eu() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (m, n, c_prev, c_skip) = (6, 20, 3, 5);
    let prev_pos = random_rows(&mut rng, m, 3);
    let target = random_rows(&mut rng, n, 3);
    let mut tape = Tape::new();
    let prev = tape.constant(vec![m, c_prev], random_rows(&mut rng, m, c_prev)).unwrap();
    let skip = tape.constant(vec![n, c_skip], random_rows(&mut rng, n, c_skip)).unwrap();
    let eu = eu_forward(&mut tape, prev, &prev_pos, &target, skip, &EuLayer { k_interp: 3 }).unwrap();
    assert_eq!(tape.shape(eu), &[n, c_skip + c_prev]);
    let tail = tape.slice_cols(eu, c_skip..c_skip + c_prev).unwrap();
    let csu = csu_forward(&mut tape, prev, &prev_pos, &target, 3).unwrap();
    assert_eq!(tape.value(tail), tape.value(csu));
}

#[test]
fn csu_single_source_broadcasts() {
    let mut tape = Tape::new();
    let prev = tape.constant(vec![1, 2], vec![4.0, -1.0]).unwrap();
    let target = vec![0.3, 0.1, 0.0, 5.0, 5.0, 5.0, -1.0, 0.0, 2.0];
    let y = csu_forward(&mut tape, prev, &[0.0; 3], &target, 3).unwrap();
    assert_eq!(tape.value(y), &[4.0, -1.0, 4.0, -1.0, 4.0, -1.0]);
}

#[test]
fn eu_rejects_misaligned_skip() {
    let mut tape = Tape::new();
    let prev = tape.constant(vec![1, 1], vec![0.0]).unwrap();
    let skip = tape.constant(vec![3, 1], vec![0.0; 3]).unwrap();
    let target = vec![0.0; 6];
    assert!(eu_forward(&mut tape, prev, &[0.0; 3], &target, skip, &EuLayer { k_interp: 1 }).is_err());
}

#[test]
fn global_pool_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(vec![2, 2], vec![1.0, 5.0, 3.0, 2.0]).unwrap();
    let y = global_max_pool(&mut tape, x).unwrap();
    assert_eq!(tape.shape(y), &[1, 2]);
    assert_eq!(tape.value(y), &[3.0, 5.0]);
    let x = tape.constant(vec![1, 3], vec![1.0, -2.0, 0.5]).unwrap();
    let y = global_max_pool(&mut tape, x).unwrap();
    assert_eq!(tape.value(y), &[1.0, -2.0, 0.5]);
}

fn gradcheck_cfg() -> GradCheckConfig {
    GradCheckConfig::default()
}

#[test]
fn pac_gradients_match_finite_differences() {
    for (rate, space) in [(1, Space::Feature), (2, Space::Feature), (2, Space::Metric)] {
        let mut layout = ParamLayout::new();
        let layer = PacLayer::new(&mut layout, "pac", 4, 5, 3, rate, space);
        let x = layout.add("x", vec![8, 4], Init::Glorot { fan_in: 1, fan_out: 1 });
        let mut rng = ChaCha8Rng::seed_from_u64(rate as u64);
        let positions = random_rows(&mut rng, 8, 3);
        let mut params = ParamStore::init(&layout, 4);
        for b in params.value_mut(layer.linear.bias.index()) {
            *b = 0.3;
        }
        let report = check_gradients(
            |t: &mut Tape<f64>, b| {
                let y = pac_forward(t, b[x], &positions, &layer, b)?;
                t.sum(y)
            },
            &params,
            &gradcheck_cfg(),
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }
}

#[test]
fn pooling_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let positions = random_rows(&mut rng, 16, 3);
    let mut layout = ParamLayout::new();
    let x = layout.add("x", vec![16, 6], Init::Glorot { fan_in: 1, fan_out: 1 });
    let mix = layout.add("mix", vec![12, 1], Init::Glorot { fan_in: 1, fan_out: 1 });
    let params = ParamStore::init(&layout, 9);
    let pos = RowView::new(&positions, 3).unwrap();
    let plan = subsample_plan(&positions, pos, 4, 3, FpsSeed::MaxNorm, None).unwrap();
    for mode in [EpMode::Both, EpMode::Centroid, EpMode::Neighbors] {
        let report = check_gradients(
            |t: &mut Tape<f64>, b| {
                let y = ep_apply(t, b[x], &plan, mode)?;
                let g = global_max_pool(t, y)?;
                let w = t.slice_rows(b[mix], 0..t.shape(g)[1])?;
                let s = t.linear(g, w, None)?;
                let s = t.sum(s)?;
                let css = css_apply(t, b[x], &plan)?;
                let c = t.sum(css)?;
                t.add(s, c)
            },
            &params,
            &gradcheck_cfg(),
        )
        .unwrap();
        assert!(report.passed(), "{mode:?}: {report:?}");
    }
}

#[test]
fn unpooling_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let prev_pos = random_rows(&mut rng, 5, 3);
    let target = random_rows(&mut rng, 16, 3);
    let mut layout = ParamLayout::new();
    let prev = layout.add("prev", vec![5, 4], Init::Glorot { fan_in: 1, fan_out: 1 });
    let skip = layout.add("skip", vec![16, 3], Init::Glorot { fan_in: 1, fan_out: 1 });
    let head = layout.add("head", vec![7, 1], Init::Glorot { fan_in: 1, fan_out: 1 });
    let params = ParamStore::init(&layout, 10);
    let report = check_gradients(
        |t: &mut Tape<f64>, b| {
            let y = eu_forward(t, b[prev], &prev_pos, &target, b[skip], &EuLayer { k_interp: 3 })?;
            let y = t.linear(y, b[head], None)?;
            let y = t.mul(y, y)?;
            let u = csu_forward(t, b[prev], &prev_pos, &target, 2)?;
            let u = t.mul(u, u)?;
            let a = t.sum(y)?;
            let c = t.sum(u)?;
            t.add(a, c)
        },
        &params,
        &gradcheck_cfg(),
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

fn permute_rows<T: Copy>(data: &[T], dim: usize, perm: &[usize]) -> Vec<T> {
    perm.iter().flat_map(|&p| data[p * dim..(p + 1) * dim].iter().copied()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn interpolation_is_convex(seed in 0u64..1000, m in 1usize..8, n in 1usize..20, k in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prev_pos = random_rows(&mut rng, m, 3);
        let target = random_rows(&mut rng, n, 3);
        let feats = random_rows(&mut rng, m, 2);
        let plan = interp_plan(&prev_pos, &target, k).unwrap();
        let mut tape = Tape::new();
        let prev = tape.constant(vec![m, 2], feats.clone()).unwrap();
        let y = pag_core::layers::csu_apply(&mut tape, prev, &plan).unwrap();
        for t in 0..n {
            let ids = &plan.idx[t * plan.k..(t + 1) * plan.k];
            for ch in 0..2 {
                let lo = ids.iter().map(|&i| feats[i * 2 + ch]).fold(f64::INFINITY, f64::min);
                let hi = ids.iter().map(|&i| feats[i * 2 + ch]).fold(f64::NEG_INFINITY, f64::max);
                let v = tape.value(y)[t * 2 + ch];
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn global_pool_is_bitwise_permutation_invariant(seed in 0u64..1000, n in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_rows(&mut rng, n, 3);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut tape = Tape::new();
        let a = tape.constant(vec![n, 3], x.clone()).unwrap();
        let b = tape.constant(vec![n, 3], permute_rows(&x, 3, &perm)).unwrap();
        let ya = global_max_pool(&mut tape, a).unwrap();
        let yb = global_max_pool(&mut tape, b).unwrap();
        prop_assert_eq!(tape.value(ya), tape.value(yb));
    }

    #[test]
    fn pac_is_permutation_equivariant(seed in 0u64..1000, n in 4usize..24) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (layer, layout) = pac_with_weights(3, 4, 2, 2, Space::Feature);
        let params = ParamStore::<f32>::init(&layout, seed);
        let x: Vec<f32> = (0..n * 3).map(|_| rng.random::<f32>()).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape).unwrap();
        let a = tape.constant(vec![n, 3], x.clone()).unwrap();
        let b = tape.constant(vec![n, 3], permute_rows(&x, 3, &perm)).unwrap();
        let ya = pac_forward(&mut tape, a, &[], &layer, &bound).unwrap();
        let yb = pac_forward(&mut tape, b, &[], &layer, &bound).unwrap();
        let want = permute_rows(tape.value(ya), 4, &perm);
        for (u, v) in want.iter().zip(tape.value(yb)) {
            prop_assert!((u - v).abs() < 1e-5);
        }
    }
}
