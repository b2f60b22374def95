use std::time::{Duration, Instant};

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sbmc::attention::{cgnl_attention, gsc, ooc, ppc, CgnlWeights};
use sbmc::config::PipelineConfig;
use sbmc::eval::{average_precision, iou_aabb, map_at, Detection};
use sbmc::geom::{canonical_sort, AABox, FeatureMatrix, Point3, PointCloud};
use sbmc::grouping::{
    apply_votes, ball_query, ball_query_positions, cluster_votes, interpolation_weights, pool_members,
    set_abstraction, ClusterSet, SeedSet, VoteSet,
};
use sbmc::io::{decode_scene_binary, encode_scene_binary, format_boxes_text, format_cloud_text, parse_boxes_text, parse_cloud_text};
use sbmc::losses::{
    box_loss, overall_loss, scale_reg_loss, sem_cls_loss, vote_reg_loss, LossComponents, LossWeights, VoteNorm,
};
use sbmc::nn::{channel_max_pool, cross_entropy, Activation, Dense, MlpWeights};
use sbmc::pipeline::{ablate, run_pipeline, WeightBundle};
use sbmc::rays::{
    anchor_features, bin_anchors, fuse_levels, fuse_point_features, fuse_ray_features, generate_rays,
    generate_rays_with, predict_scale, ray_distribution, ray_group_cluster, surface_mask_oracle, MaskSource,
    RayParams, LEVEL_FEATURE_WIDTH, RAY_FEATURE_WIDTH,
};
use sbmc::sampling::{fbs, fps, fps_positions, split_by_score, ForegroundScores};
use sbmc::synth::{gen_scene_with, SceneSpec};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> FeatureMatrix {
    FeatureMatrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn rand_point(r: &mut ChaCha8Rng, s: f64) -> Point3 {
    Point3::new(r.gen_range(-s..s), r.gen_range(-s..s), r.gen_range(-s..s))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Independent dense forward pass written out element by element.
fn forward_oracle(mlp: &MlpWeights, x: &[f64]) -> Vec<f64> {
    let mut cur = x.to_vec();
    for layer in mlp.layers() {
        let mut next = vec![0.0; layer.out_width()];
        for (o, v) in next.iter_mut().enumerate() {
            let mut s = layer.bias[o];
            for (i, xi) in cur.iter().enumerate() {
                s += layer.weight[(o, i)] * xi;
            }
            *v = match layer.activation {
                Activation::Identity => s,
                Activation::Relu => s.max(0.0),
                Activation::Sigmoid => 1.0 / (1.0 + (-s).exp()),
                Activation::Softplus => (1.0 + s.exp()).ln(),
            };
        }
        cur = next;
    }
    cur
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

// Geometry and scene files.

#[test]
fn canonical_sort_is_permutation_invariant_on_five_points() {
    let mut r = rng(1);
    let pts: Vec<Point3> = (0..5).map(|_| rand_point(&mut r, 2.0)).collect();
    let feats = rand_matrix(&mut r, 5, 2);
    let reference = canonical_sort(&PointCloud::new(pts.clone(), feats.clone()).unwrap());
    for p in permutations(5) {
        let cloud = PointCloud::new(p.iter().map(|&i| pts[i]).collect(), feats.select_rows(&p)).unwrap();
        assert_eq!(canonical_sort(&cloud), reference);
    }
    assert_eq!(canonical_sort(&reference), reference);
}

#[test]
fn text_scene_round_trip_is_bit_exact() {
    let mut r = rng(2);
    let pts: Vec<Point3> = (0..100)
        .map(|_| Point3::new(r.gen_range(-1e3..1e3), r.gen::<f64>() * 1e-7, r.gen_range(-5.0..5.0)))
        .collect();
    let cloud = PointCloud::new(pts, rand_matrix(&mut r, 100, 3)).unwrap();
    let boxes = vec![
        AABox::new(Point3::new(0.1, 0.2, 0.3), [0.7, 1.0 / 3.0, 2.5], 4).unwrap(),
        AABox::new(Point3::new(-1.0, 1e-9, 5.0), [1e-3, 9.75, 0.1], 17).unwrap(),
    ];
    let path = std::path::Path::new("mem");
    let back = parse_cloud_text(path, &format_cloud_text(&cloud)).unwrap();
    assert_eq!(back, cloud);
    assert_eq!(parse_boxes_text(path, &format_boxes_text(&boxes)).unwrap(), boxes);
}

#[test]
fn binary_scene_round_trip_for_single_precision_values() {
    let mut r = rng(3);
    let pts: Vec<Point3> = (0..100)
        .map(|_| Point3::new(r.gen::<f32>() as f64, r.gen::<f32>() as f64 * 4.0, -(r.gen::<f32>() as f64)))
        .collect();
    let feats = FeatureMatrix::from_vec(100, 1, (0..100).map(|i| i as f64 * 0.5).collect()).unwrap();
    let cloud = PointCloud::new(pts, feats).unwrap();
    let boxes = vec![AABox::new(Point3::new(0.5, 0.25, 1.0), [0.5, 0.75, 2.0], 3).unwrap()];
    let bytes = encode_scene_binary(&cloud, &boxes);
    assert_eq!(&bytes[..4], b"SBMC");
    let (c2, b2) = decode_scene_binary(std::path::Path::new("mem"), &bytes).unwrap();
    assert_eq!(c2, cloud);
    assert_eq!(b2, boxes);
}

proptest! {
    #[test]
    fn sort_idempotent_and_order_free(coords in prop::collection::vec((-50i32..50, -50i32..50, -50i32..50), 1..40), seed in any::<u64>()) {
        let mut seen = std::collections::BTreeSet::new();
        let pts: Vec<Point3> = coords
            .into_iter()
            .filter(|c| seen.insert(*c))
            .map(|(x, y, z)| Point3::new(x as f64 * 0.1, y as f64 * 0.1, z as f64 * 0.1))
            .collect();
        let cloud = PointCloud::from_positions(pts.clone()).unwrap();
        let mut shuffled = pts;
        shuffled.shuffle(&mut rng(seed));
        let a = canonical_sort(&cloud);
        prop_assert_eq!(&canonical_sort(&PointCloud::from_positions(shuffled).unwrap()), &a);
        prop_assert_eq!(&canonical_sort(&a), &a);
    }
}

// Sampling.

#[test]
fn fbs_eight_point_split() {
    let pts: Vec<Point3> = (0..8).map(|i| Point3::new(i as f64, (i % 3) as f64, 0.0)).collect();
    let cloud = PointCloud::from_positions(pts.clone()).unwrap();
    let scores = ForegroundScores::new(vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
    let got = fbs(&cloud, &scores, 4, 4, 2).unwrap();
    let fg = [0usize, 3, 4, 6];
    let bg = [1usize, 2, 5, 7];
    let sub = |set: &[usize], m: usize| -> Vec<usize> {
        let p: Vec<Point3> = set.iter().map(|&i| pts[i]).collect();
        fps_positions(&p, m).unwrap().into_iter().map(|j| set[j]).collect()
    };
    let mut want = sub(&fg, 2);
    want.extend(sub(&bg, 2));
    assert_eq!(got, want);
    assert!(got[..2].iter().all(|i| fg.contains(i)));
    assert!(got[2..].iter().all(|i| bg.contains(i)));
}

fn min_pairwise(pts: &[Point3], idx: &[usize]) -> f64 {
    let mut best = f64::INFINITY;
    for a in 0..idx.len() {
        for b in a + 1..idx.len() {
            best = best.min(pts[idx[a]].dist(pts[idx[b]]));
        }
    }
    best
}

#[test]
fn fps_dispersion_within_half_of_optimum() {
    let mut r = rng(4);
    for _ in 0..60 {
        let n = r.gen_range(3..=10);
        let m = r.gen_range(2..=n);
        let pts: Vec<Point3> = (0..n).map(|_| rand_point(&mut r, 1.0)).collect();
        let got = min_pairwise(&pts, &fps_positions(&pts, m).unwrap());
        let mut opt: f64 = 0.0;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize == m {
                let idx: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
                opt = opt.max(min_pairwise(&pts, &idx));
            }
        }
        assert!(got >= opt / 2.0 - 1e-12, "fps {got} vs optimum {opt}");
    }
}

proptest! {
    #[test]
    fn fps_distinct_and_seeded_at_zero(n in 1usize..30, frac in 0.0f64..1.0, seed in any::<u64>()) {
        let mut r = rng(seed);
        let pts: Vec<Point3> = (0..n).map(|_| Point3::new(r.gen_range(0..4) as f64, r.gen_range(0..4) as f64, 0.0)).collect();
        let m = 1 + ((n - 1) as f64 * frac) as usize;
        let idx = fps_positions(&pts, m).unwrap();
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), m);
        prop_assert_eq!(idx[0], 0);
    }

    #[test]
    fn fbs_draws_exactly_m_fore_from_top_kappa(n in 4usize..60, seed in any::<u64>(), kf in 0.0f64..1.0, mf in 0.0f64..1.0) {
        let mut r = rng(seed);
        let cloud = PointCloud::from_positions((0..n).map(|_| rand_point(&mut r, 3.0)).collect()).unwrap();
        let scores = ForegroundScores::new((0..n).map(|_| r.gen_range(0..3) as f64 / 2.0).collect()).unwrap();
        let kappa = ((n as f64) * kf) as usize;
        let m = n / 2;
        let lo = m.saturating_sub(n - kappa);
        let hi = m.min(kappa);
        prop_assume!(lo <= hi);
        let m_fore = lo + ((hi - lo) as f64 * mf) as usize;
        let idx = fbs(&cloud, &scores, m, kappa, m_fore).unwrap();
        let split = split_by_score(&scores, kappa).unwrap();
        prop_assert_eq!(idx.len(), m);
        prop_assert_eq!(idx.iter().filter(|i| split.foreground_indices.contains(i)).count(), m_fore);
        prop_assert!(idx[..m_fore].iter().all(|i| split.foreground_indices.contains(i)));
    }
}

// Grouping.

#[test]
fn pooling_ignores_member_order() {
    let mut r = rng(5);
    let rows = rand_matrix(&mut r, 3, 4);
    let mlp = MlpWeights::init(&[4, 6, 5], Activation::Relu, Activation::Identity, 3, 0);
    let want = pool_members(&rows, &mlp).unwrap();
    for p in permutations(3) {
        assert_eq!(pool_members(&rows.select_rows(&p), &mlp).unwrap(), want);
        assert_eq!(channel_max_pool(&rows.select_rows(&p)).unwrap(), channel_max_pool(&rows).unwrap());
    }
}

#[test]
fn set_abstraction_ignores_cloud_order() {
    let mut r = rng(6);
    let pts: Vec<Point3> = (0..3).map(|_| rand_point(&mut r, 0.3)).collect();
    let feats = rand_matrix(&mut r, 3, 2);
    let mlp = MlpWeights::init(&[5, 8], Activation::Relu, Activation::Relu, 9, 0);
    let center = Point3::ORIGIN;
    let want = {
        let c = PointCloud::new(pts.clone(), feats.clone()).unwrap();
        sbmc::grouping::abstract_at(&c, &[center], 1.0, 8, &mlp).unwrap()
    };
    for p in permutations(3) {
        let c = PointCloud::new(p.iter().map(|&i| pts[i]).collect(), feats.select_rows(&p)).unwrap();
        assert_eq!(sbmc::grouping::abstract_at(&c, &[center], 1.0, 8, &mlp).unwrap(), want);
    }
}

#[test]
fn two_blobs_get_one_center_each() {
    let mut pos = Vec::new();
    for i in 0..4 {
        pos.push(Point3::new(0.05 * i as f64, 0.0, 0.0));
    }
    for i in 0..4 {
        pos.push(Point3::new(5.0, 0.05 * i as f64, 0.0));
    }
    let votes = VoteSet {
        positions: pos,
        features: FeatureMatrix::from_vec(8, 1, (0..8).map(f64::from).collect()).unwrap(),
        source_seed: (0..8).collect(),
    };
    let c = cluster_votes(&votes, 2, 0.5, None).unwrap();
    let blob = |v: usize| v / 4;
    assert_ne!(blob(c.center_votes[0]), blob(c.center_votes[1]));
    for (k, members) in c.member_votes.iter().enumerate() {
        let mut m = members.clone();
        m.sort_unstable();
        let b = blob(c.center_votes[k]);
        assert_eq!(m, (4 * b..4 * b + 4).collect::<Vec<_>>());
        assert_eq!(c.features.row(k), &[(4 * b + 3) as f64]);
    }
}

#[test]
fn vote_offsets_round_trip() {
    let mut r = rng(7);
    let seeds = SeedSet::new((0..20).map(|_| rand_point(&mut r, 2.0)).collect(), rand_matrix(&mut r, 20, 3)).unwrap();
    let dx = rand_matrix(&mut r, 20, 3);
    let df = rand_matrix(&mut r, 20, 3);
    let mut ndx = dx.clone();
    ndx.scale(-1.0);
    let mut ndf = df.clone();
    ndf.scale(-1.0);
    let votes = apply_votes(&seeds, &dx, &df).unwrap();
    let back = apply_votes(&SeedSet::new(votes.positions, votes.features).unwrap(), &ndx, &ndf).unwrap();
    for (a, b) in back.positions.iter().zip(&seeds.positions) {
        assert!(a.dist(*b) < 1e-12);
    }
    assert!(close(back.features.as_slice(), seeds.features.as_slice(), 1e-12));
    let zero = apply_votes(&seeds, &FeatureMatrix::zeros(20, 3), &FeatureMatrix::zeros(20, 3)).unwrap();
    assert_eq!(zero.positions, seeds.positions);
}

proptest! {
    #[test]
    fn propagation_weights_form_a_partition_of_unity(seed in any::<u64>(), n in 1usize..20, k in 1usize..5) {
        let mut r = rng(seed);
        let coarse: Vec<Point3> = (0..n).map(|_| rand_point(&mut r, 2.0)).collect();
        let target = rand_point(&mut r, 2.5);
        let w = interpolation_weights(&coarse, target, k);
        prop_assert_eq!(w.len(), k.min(n));
        prop_assert!(w.iter().all(|(_, v)| *v >= 0.0));
        prop_assert!((w.iter().map(|(_, v)| v).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ball_query_sorted_bounded_and_complete(seed in any::<u64>(), n in 1usize..60, radius in 0.05f64..1.5, max_group in 1usize..12) {
        let mut r = rng(seed);
        let pts: Vec<Point3> = (0..n).map(|_| Point3::new(r.gen_range(0..8) as f64 * 0.25, r.gen_range(0..8) as f64 * 0.25, 0.0)).collect();
        let centers: Vec<Point3> = (0..5).map(|_| rand_point(&mut r, 2.0)).collect();
        let groups = ball_query_positions(&pts, &centers, radius, max_group).unwrap();
        for (c, g) in centers.iter().zip(&groups) {
            let mut all: Vec<(f64, usize)> = (0..n).map(|i| (pts[i].dist2(*c), i)).filter(|(d, _)| *d <= radius * radius).collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            all.truncate(max_group);
            prop_assert_eq!(g, &all.into_iter().map(|(_, i)| i).collect::<Vec<_>>());
        }
    }

    #[test]
    fn cluster_centers_are_votes_and_members_in_radius(seed in any::<u64>(), m in 2usize..40, kf in 0.0f64..1.0) {
        let mut r = rng(seed);
        let positions: Vec<Point3> = (0..m).map(|_| rand_point(&mut r, 1.0)).collect();
        let votes = VoteSet { features: rand_matrix(&mut r, m, 2), positions, source_seed: (0..m).collect() };
        let k = 1 + ((m - 1) as f64 * kf) as usize;
        let c = cluster_votes(&votes, k, 0.4, None).unwrap();
        prop_assert_eq!(c.len(), k);
        for (i, center) in c.centers.iter().enumerate() {
            prop_assert_eq!(*center, votes.positions[c.center_votes[i]]);
            prop_assert!(!c.member_votes[i].is_empty());
            prop_assert!(c.member_votes[i].iter().all(|&v| votes.positions[v].dist2(*center) <= 0.16));
        }
    }
}

// Rays.

#[test]
fn ring_sizes_are_palindromic() {
    for p in 2..=12 {
        let a = ray_distribution(p).unwrap();
        let mut rev = a.clone();
        rev.reverse();
        assert_eq!(a, rev, "P = {p}");
        let fan = generate_rays(p).unwrap();
        let mut z: Vec<f64> = fan.directions.iter().map(|d| d.z).collect();
        let mut neg: Vec<f64> = z.iter().map(|v| -v).collect();
        z.sort_by(f64::total_cmp);
        neg.sort_by(f64::total_cmp);
        for (x, y) in z.iter().zip(&neg) {
            assert!((x - y).abs() < 1e-15);
        }
        for ring in 0..p {
            let az: Vec<f64> = (0..fan.len()).filter(|&n| fan.polar_index[n] == ring).map(|n| fan.azimuth_angles[n]).collect();
            for w in az.windows(2) {
                assert!((w[1] - w[0] - std::f64::consts::TAU / az.len() as f64).abs() < 1e-12);
            }
        }
    }
    assert_eq!(generate_rays_with(5, 4).unwrap().len(), 18);
}

#[test]
fn anchors_scale_with_length_and_stay_on_rays() {
    let fan = generate_rays(5).unwrap();
    let a1 = bin_anchors(Point3::ORIGIN, &fan, 0.7, 6).unwrap();
    let a2 = bin_anchors(Point3::ORIGIN, &fan, 1.4, 6).unwrap();
    for (p, q) in a1.iter().zip(&a2) {
        assert_eq!(*q, *p * 2.0);
    }
    let c = Point3::new(1.0, -2.0, 0.5);
    let a = bin_anchors(c, &fan, 0.7, 6).unwrap();
    for (i, p) in a.iter().enumerate() {
        let d = fan.directions[i / 6];
        let off = *p - c;
        let t = off.dot(d);
        assert!(t > 0.0 && t <= 0.7 + 1e-12);
        assert!((off - d * t).norm() < 1e-12);
    }
}

#[test]
fn anchor_features_match_hand_oracle() {
    let mut r = rng(8);
    let pts: Vec<Point3> = (0..30).map(|_| rand_point(&mut r, 1.0)).collect();
    let feats = rand_matrix(&mut r, 30, 2);
    let cloud = PointCloud::new(pts.clone(), feats.clone()).unwrap();
    let anchors = [Point3::new(0.2, 0.1, 0.0), Point3::new(-0.5, 0.4, 0.3)];
    let mlp = MlpWeights::init(&[5, 7, 4], Activation::Relu, Activation::Relu, 4, 2);
    let got = anchor_features(&cloud, &anchors, 0.6, 5, &mlp).unwrap();
    for (a, anchor) in anchors.iter().enumerate() {
        let mut near: Vec<(f64, usize)> = (0..30).map(|i| (pts[i].dist2(*anchor), i)).filter(|(d, _)| *d <= 0.36).collect();
        near.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        near.truncate(5);
        let mut want = vec![f64::NEG_INFINITY; 4];
        for (_, i) in &near {
            let rel = pts[*i] - *anchor;
            let mut x = vec![rel.x, rel.y, rel.z];
            x.extend_from_slice(feats.row(*i));
            for (w, v) in want.iter_mut().zip(forward_oracle(&mlp, &x)) {
                *w = w.max(v);
            }
        }
        if near.is_empty() {
            want = vec![0.0; 4];
        }
        assert!(close(got.row(a), &want, 1e-12));
    }
}

proptest! {
    #[test]
    fn oracle_mask_equals_all_pairs_scan(seed in any::<u64>(), na in 1usize..30, ns in 0usize..30, prox in 0.01f64..1.0) {
        let mut r = rng(seed);
        let anchors: Vec<Point3> = (0..na).map(|_| rand_point(&mut r, 1.0)).collect();
        let surface: Vec<Point3> = (0..ns).map(|_| rand_point(&mut r, 1.0)).collect();
        let got = surface_mask_oracle(&anchors, &surface, prox).unwrap();
        let want: Vec<bool> = anchors.iter().map(|a| surface.iter().any(|s| a.dist(*s) <= prox)).collect();
        prop_assert_eq!(got, want);
    }
}

#[test]
fn point_fusion_matches_concat_oracle() {
    let mut r = rng(9);
    for _ in 0..20 {
        let k = r.gen_range(1..6);
        let f = r.gen_range(1..5);
        let feats = rand_matrix(&mut r, k, f);
        let mask: Vec<bool> = (0..k).map(|_| r.gen_bool(0.6)).collect();
        let proj = MlpWeights::init(&[k * f, RAY_FEATURE_WIDTH], Activation::Relu, Activation::Relu, r.gen(), 0);
        let mut concat = Vec::new();
        for (i, &m) in mask.iter().enumerate() {
            for c in 0..f {
                concat.push(if m { feats[(i, c)] } else { 0.0 });
            }
        }
        assert!(close(&fuse_point_features(&feats, &mask, &proj).unwrap(), &forward_oracle(&proj, &concat), 1e-13));
    }
    let mut ident = MlpWeights::identity(RAY_FEATURE_WIDTH);
    ident.layers_mut()[0].activation = Activation::Identity;
    let row = rand_matrix(&mut r, 1, RAY_FEATURE_WIDTH);
    assert_eq!(fuse_point_features(&row, &[true], &ident).unwrap(), row.row(0));
}

#[test]
fn ray_fusion_bias_propagation_and_order_sensitivity() {
    let n = 18;
    let mut mlp = MlpWeights::init(&[n * RAY_FEATURE_WIDTH, 16, 16, LEVEL_FEATURE_WIDTH], Activation::Relu, Activation::Identity, 2, 5);
    for (i, layer) in mlp.layers_mut().iter_mut().enumerate() {
        for (j, b) in layer.bias.iter_mut().enumerate() {
            *b = ((i + 1) as f64 * 0.1) * if j % 2 == 0 { 1.0 } else { -1.0 };
        }
    }
    let zero = FeatureMatrix::zeros(n, RAY_FEATURE_WIDTH);
    let want = forward_oracle(&mlp, zero.as_slice());
    assert!(close(&fuse_ray_features(&zero, &mlp).unwrap(), &want, 1e-13));

    let mut r = rng(10);
    let feats = rand_matrix(&mut r, n, RAY_FEATURE_WIDTH);
    let mut swapped = feats.clone();
    swapped.row_mut(0).copy_from_slice(feats.row(5));
    swapped.row_mut(5).copy_from_slice(feats.row(0));
    assert_ne!(fuse_ray_features(&feats, &mlp).unwrap(), fuse_ray_features(&swapped, &mlp).unwrap());
}

#[test]
fn level_fusion_slices_and_scale_head() {
    let mut r = rng(11);
    let mu_c: Vec<f64> = (0..LEVEL_FEATURE_WIDTH).map(|_| r.gen_range(-1.0..1.0)).collect();
    let mu_f: Vec<f64> = (0..LEVEL_FEATURE_WIDTH).map(|_| r.gen_range(-1.0..1.0)).collect();
    let mut w = FeatureMatrix::zeros(LEVEL_FEATURE_WIDTH, 2 * LEVEL_FEATURE_WIDTH);
    for i in 0..LEVEL_FEATURE_WIDTH {
        w.row_mut(i)[i] = 1.0;
    }
    let pick_first = MlpWeights::new(vec![Dense::new(w, vec![0.0; LEVEL_FEATURE_WIDTH], Activation::Identity).unwrap()]).unwrap();
    assert_eq!(fuse_levels(&mu_c, &mu_f, &pick_first).unwrap(), mu_c);

    let head = MlpWeights::init(&[6, 8, 1], Activation::Relu, Activation::Identity, 3, 3);
    let x: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();
    let logit = forward_oracle(&head, &x)[0];
    let want = (1.0 + logit.exp()).ln();
    assert!((predict_scale(&x, &head).unwrap() - want).abs() < 1e-14);
}

#[test]
fn ray_stage_anchor_layout() {
    let cfg = PipelineConfig::default();
    let w = WeightBundle::init(&cfg, 1, 1).unwrap();
    let mut r = rng(12);
    let cloud = PointCloud::new((0..200).map(|_| rand_point(&mut r, 1.0)).collect(), rand_matrix(&mut r, 200, cfg.seed_width)).unwrap();
    let fan = generate_rays(5).unwrap();
    let feat: Vec<f64> = (0..cfg.cluster_width).map(|_| r.gen_range(-1.0..1.0)).collect();
    let out = ray_group_cluster(&cloud, Point3::ORIGIN, &feat, &fan, &RayParams::default(), &w.rays, MaskSource::Predicted).unwrap();
    assert_eq!(out.coarse.positions.len(), 18 * 6);
    assert_eq!(out.fine.positions.len(), 18 * 12);
    assert_eq!(out.combined.len(), cfg.cluster_width);
    assert!(out.scale > 0.0);
    for p in out.coarse.positions.iter().chain(&out.fine.positions) {
        assert!(p.norm() > 0.0 && p.norm() <= out.scale + 1e-12);
    }
}

// Attention.

#[test]
fn ppc_is_row_equivariant() {
    let mut r = rng(13);
    let seeds = SeedSet::new((0..12).map(|_| rand_point(&mut r, 1.0)).collect(), rand_matrix(&mut r, 12, 6)).unwrap();
    let w = CgnlWeights::init(6, 4, 3, 3);
    let out = ppc(&seeds, &w).unwrap();
    let mut perm: Vec<usize> = (0..12).collect();
    perm.shuffle(&mut r);
    let permuted = SeedSet::new(perm.iter().map(|&i| seeds.positions[i]).collect(), seeds.features.select_rows(&perm)).unwrap();
    let pout = ppc(&permuted, &w).unwrap();
    assert_eq!(pout.features.rows(), 12);
    assert!(close(pout.features.as_slice(), out.features.select_rows(&perm).as_slice(), 1e-12));
}

#[test]
fn ooc_pool_ignores_member_order() {
    let mut r = rng(14);
    let votes = VoteSet {
        positions: vec![Point3::ORIGIN; 3],
        features: rand_matrix(&mut r, 3, 4),
        source_seed: vec![0, 1, 2],
    };
    let mlp = MlpWeights::init(&[4, 5], Activation::Relu, Activation::Relu, 1, 1);
    let w = CgnlWeights::init(5, 3, 2, 2);
    let cluster = |members: Vec<usize>| ClusterSet {
        centers: vec![Point3::ORIGIN],
        center_votes: vec![members[0]],
        features: FeatureMatrix::zeros(1, 5),
        member_votes: vec![members],
    };
    let want = ooc(&votes, &cluster(vec![0, 1, 2]), &mlp, &w).unwrap();
    for p in permutations(3) {
        assert_eq!(ooc(&votes, &cluster(p), &mlp, &w).unwrap(), want);
    }
}

#[test]
fn gsc_matches_per_row_addition() {
    let mut r = rng(15);
    let patches = rand_matrix(&mut r, 4, 2);
    let clusters = rand_matrix(&mut r, 2, 3);
    let ooc_out = rand_matrix(&mut r, 2, 3);
    let agg = MlpWeights::init(&[5, 3], Activation::Relu, Activation::Identity, 4, 4);
    let mut x = channel_max_pool(&clusters).unwrap();
    x.extend(channel_max_pool(&patches).unwrap());
    let add = forward_oracle(&agg, &x);
    let got = gsc(&patches, &clusters, &agg, &ooc_out).unwrap();
    for row in 0..2 {
        for c in 0..3 {
            assert!((got[(row, c)] - (ooc_out[(row, c)] + add[c])).abs() < 1e-14);
        }
    }
}

#[test]
fn attention_cost_is_linear_in_rows() {
    let mut r = rng(16);
    let w = CgnlWeights::init(32, 16, 1, 1);
    let a2 = rand_matrix(&mut r, 2048, 32);
    let a4 = rand_matrix(&mut r, 4096, 32);
    let time = |a: &FeatureMatrix| {
        let mut t: Vec<Duration> = (0..7)
            .map(|_| {
                let s = Instant::now();
                std::hint::black_box(cgnl_attention(a, &w).unwrap());
                s.elapsed()
            })
            .collect();
        t.sort();
        t[3]
    };
    let (t2, t4) = (time(&a2), time(&a4));
    assert!(t4 < t2 * 3, "R=4096 took {t4:?}, R=2048 took {t2:?}");
}

// Neural blocks and losses.

#[test]
fn forward_is_row_wise() {
    let mut r = rng(17);
    let mlp = MlpWeights::init(&[4, 6, 3], Activation::Relu, Activation::Sigmoid, 8, 0);
    let x = rand_matrix(&mut r, 5, 4);
    let y = mlp.forward(&x).unwrap();
    let perm = [3, 0, 4, 1, 2];
    assert_eq!(mlp.forward(&x.select_rows(&perm)).unwrap(), y.select_rows(&perm));
    for i in 0..5 {
        assert!(close(y.row(i), &forward_oracle(&mlp, x.row(i)), 1e-14));
    }
}

proptest! {
    #[test]
    fn losses_nonnegative_zero_at_truth_and_order_free(seed in any::<u64>(), n in 1usize..20) {
        let mut r = rng(seed);
        let mask: Vec<bool> = (0..n).map(|_| r.gen_bool(0.6)).collect();
        let pred = rand_matrix(&mut r, n, 3);
        let gt = rand_matrix(&mut r, n, 3);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let pm: Vec<bool> = perm.iter().map(|&i| mask[i]).collect();

        let v = vote_reg_loss(&pred, &gt, &mask, VoteNorm::Euclidean).unwrap().value;
        prop_assert!(v >= 0.0);
        prop_assert_eq!(vote_reg_loss(&gt, &gt, &mask, VoteNorm::Euclidean).unwrap().value, 0.0);
        let vp = vote_reg_loss(&pred.select_rows(&perm), &gt.select_rows(&perm), &pm, VoteNorm::Euclidean).unwrap().value;
        prop_assert!((v - vp).abs() <= 1e-12 * (1.0 + v));

        let sp: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..2.0)).collect();
        let sg: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..2.0)).collect();
        let s = scale_reg_loss(&sp, &sg, &mask, 1.0).unwrap().value;
        prop_assert!(s >= 0.0);
        prop_assert_eq!(scale_reg_loss(&sg, &sg, &mask, 1.0).unwrap().value, 0.0);
        let spp: Vec<f64> = perm.iter().map(|&i| sp[i]).collect();
        let sgp: Vec<f64> = perm.iter().map(|&i| sg[i]).collect();
        prop_assert!((s - scale_reg_loss(&spp, &sgp, &pm, 1.0).unwrap().value).abs() <= 1e-12 * (1.0 + s));

        let probs: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..=1.0)).collect();
        let labels: Vec<bool> = (0..n).map(|_| r.gen_bool(0.5)).collect();
        let ce = cross_entropy(&probs, &labels).unwrap();
        prop_assert!(ce >= 0.0);
        let perfect: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
        prop_assert!(cross_entropy(&perfect, &labels).unwrap() < 1e-6);

        let b = box_loss(&gt, &gt, &pred, &pred, &mask, 1.0).unwrap().value;
        prop_assert_eq!(b, 0.0);
        let logits = rand_matrix(&mut r, n, 18);
        let cls: Vec<usize> = (0..n).map(|_| r.gen_range(0..18)).collect();
        prop_assert!(sem_cls_loss(&logits, &cls, &mask).unwrap().value >= 0.0);
    }

    #[test]
    fn masked_entries_have_zero_sensitivity(seed in any::<u64>(), n in 2usize..12) {
        let mut r = rng(seed);
        let mut mask: Vec<bool> = (0..n).map(|_| r.gen_bool(0.5)).collect();
        mask[0] = false;
        let pred = rand_matrix(&mut r, n, 3);
        let gt = rand_matrix(&mut r, n, 3);
        let base = vote_reg_loss(&pred, &gt, &mask, VoteNorm::Euclidean).unwrap().value;
        let mut bumped = pred.clone();
        bumped.row_mut(0)[1] += 1e-5;
        let d = (vote_reg_loss(&bumped, &gt, &mask, VoteNorm::Euclidean).unwrap().value - base) / 1e-5;
        prop_assert!(d.abs() < 1e-10);

        let sp: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..2.0)).collect();
        let sg: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..2.0)).collect();
        let mut sb = sp.clone();
        sb[0] += 1e-5;
        let d = (scale_reg_loss(&sb, &sg, &mask, 1.0).unwrap().value - scale_reg_loss(&sp, &sg, &mask, 1.0).unwrap().value) / 1e-5;
        prop_assert!(d.abs() < 1e-10);
    }

    #[test]
    fn overall_loss_is_linear_in_weights(c in 0.0f64..10.0, vals in prop::array::uniform6(0.0f64..5.0)) {
        let comp = LossComponents { vote_reg: vals[0], fbs: vals[1], rbfg: vals[2], obj_cls: vals[3], box_reg: vals[4], sem_cls: vals[5] };
        let w = LossWeights::default();
        let base = overall_loss(&comp, &w).unwrap();
        prop_assert!((overall_loss(&comp, &w.scaled(c)).unwrap() - c * base).abs() <= 1e-12 * (1.0 + c * base));
    }
}

#[test]
fn overall_loss_known_components() {
    let comp = LossComponents {
        vote_reg: 0.1,
        fbs: 0.2,
        rbfg: 0.3,
        obj_cls: 0.05,
        box_reg: 0.15,
        sem_cls: 0.2,
    };
    assert!((overall_loss(&comp, &LossWeights::default()).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(overall_loss(&comp, &LossWeights::uniform(0.0)).unwrap(), 0.0);
}

// Evaluation.

fn rand_box(r: &mut ChaCha8Rng, class: usize) -> AABox {
    AABox::new(
        rand_point(r, 1.0),
        [r.gen_range(0.2..1.5), r.gen_range(0.2..1.5), r.gen_range(0.2..1.5)],
        class,
    )
    .unwrap()
}

proptest! {
    #[test]
    fn iou_symmetric_bounded_translation_invariant(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (a, b) = (rand_box(&mut r, 0), rand_box(&mut r, 0));
        let i = iou_aabb(&a, &b);
        prop_assert_eq!(i, iou_aabb(&b, &a));
        prop_assert!((0.0..=1.0).contains(&i));
        let t = Point3::new(r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0));
        let shift = |x: &AABox| AABox::new(x.center + t, x.size, x.class_id).unwrap();
        prop_assert!((iou_aabb(&shift(&a), &shift(&b)) - i).abs() < 1e-9);
        prop_assert!((iou_aabb(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ap_never_drops_when_a_false_positive_is_removed(flags in prop::collection::vec(any::<bool>(), 1..20), extra in 0usize..4) {
        let num_gt = flags.iter().filter(|&&f| f).count() + extra;
        let ap = average_precision(&flags, num_gt);
        for i in (0..flags.len()).filter(|&i| !flags[i]) {
            let mut shorter = flags.clone();
            shorter.remove(i);
            prop_assert!(average_precision(&shorter, num_gt) >= ap - 1e-15);
        }
    }

    #[test]
    fn map_ignores_detection_order(seed in any::<u64>(), nd in 0usize..12, ng in 0usize..6) {
        let mut r = rng(seed);
        let gts: Vec<AABox> = (0..ng).map(|_| { let c = r.gen_range(0..3); rand_box(&mut r, c) }).collect();
        let mut dets: Vec<Detection> = (0..nd)
            .map(|_| { let c = r.gen_range(0..3); Detection::new(rand_box(&mut r, c), r.gen_range(0..4) as f64 * 0.25).unwrap() })
            .collect();
        let a = map_at(&dets, &gts, 0.25);
        dets.shuffle(&mut r);
        prop_assert_eq!(a, map_at(&dets, &gts, 0.25));
    }
}

// Pipeline.

fn small_cfg() -> PipelineConfig {
    PipelineConfig {
        n_seeds: 128,
        upsampled_seeds: 256,
        clusters: 24,
        ..PipelineConfig::default()
    }
}

fn small_scene(seed: u64) -> sbmc::synth::SyntheticScene {
    gen_scene_with(
        seed,
        &SceneSpec {
            n_points: 600,
            n_objects: 3,
            extent: 4.0,
            ..SceneSpec::default()
        },
    )
    .unwrap()
}

#[test]
fn baseline_path_and_ablation_rows() {
    let cfg = small_cfg();
    let s = small_scene(21);
    let w = WeightBundle::init(&cfg, 1, 2).unwrap();
    let off = PipelineConfig {
        ppc: false,
        ooc: false,
        gsc: false,
        ..cfg.clone()
    };
    let (base, diag) = run_pipeline(&s.cloud, &s.boxes, &off, &w).unwrap();
    assert_eq!(base.len(), 24);
    assert_eq!(diag.rays_per_cluster, 18);
    assert!(diag.stages.iter().all(|st| !["ppc", "ooc", "gsc"].contains(&st.name)));
    let rows = ablate(&s.cloud, &s.boxes, &cfg, &w).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0].detections, base);
}

#[test]
fn disabled_module_equals_zero_weight_module() {
    let cfg = small_cfg();
    let s = small_scene(22);
    let live = WeightBundle::init(&cfg, 1, 4).unwrap();
    let mut zero = live.clone();
    zero.zero_attention();
    for module in ["ppc", "ooc", "gsc"] {
        let mut off = cfg.clone();
        let mut w = live.clone();
        match module {
            "ppc" => {
                off.ppc = false;
                w.ppc = zero.ppc.clone();
            }
            "ooc" => {
                off.ooc = false;
                w.ooc = zero.ooc.clone();
            }
            _ => {
                off.gsc = false;
                w.gsc = zero.gsc.clone();
            }
        }
        let (a, _) = run_pipeline(&s.cloud, &s.boxes, &off, &live).unwrap();
        let (b, _) = run_pipeline(&s.cloud, &s.boxes, &cfg, &w).unwrap();
        assert_eq!(a, b, "module {module}");
    }
}

#[test]
fn stage_shapes_follow_config() {
    let cfg = small_cfg();
    let s = small_scene(23);
    let w = WeightBundle::init(&cfg, 1, 5).unwrap();
    let (_, diag) = run_pipeline(&s.cloud, &s.boxes, &cfg, &w).unwrap();
    let shape = |n: &str| diag.stages.iter().find(|s| s.name == n).unwrap().shape.clone();
    assert_eq!(shape("sort"), vec![600, 4]);
    assert_eq!(shape("sample"), vec![256]);
    assert_eq!(shape("sa1"), vec![256, cfg.sa1_width]);
    assert_eq!(shape("sa2"), vec![128, cfg.seed_width]);
    assert_eq!(shape("ppc"), vec![128, cfg.seed_width]);
    assert_eq!(shape("cluster"), vec![24, cfg.cluster_width]);
    assert_eq!(shape("upsample"), vec![256, cfg.seed_width]);
    assert_eq!(shape("rays"), vec![24, 18]);
    assert_eq!(shape("head"), vec![24, 25]);
    assert_eq!(diag.scales.len(), 24);
    assert!(diag.scales.iter().all(|&l| l > 0.0));
}

#[test]
fn input_order_does_not_change_detections() {
    let cfg = small_cfg();
    let s = small_scene(24);
    let w = WeightBundle::init(&cfg, 1, 6).unwrap();
    let (a, _) = run_pipeline(&s.cloud, &s.boxes, &cfg, &w).unwrap();
    let mut perm: Vec<usize> = (0..s.cloud.len()).collect();
    perm.shuffle(&mut rng(3));
    let (b, _) = run_pipeline(&s.cloud.select(&perm), &s.boxes, &cfg, &w).unwrap();
    assert_eq!(a, b);
}

#[test]
fn oracle_masks_and_background_scene_run() {
    let cfg = PipelineConfig {
        mask_mode: sbmc::config::MaskMode::Oracle,
        ..small_cfg()
    };
    let s = small_scene(25);
    let w = WeightBundle::init(&cfg, 1, 7).unwrap();
    let (d, _) = run_pipeline(&s.cloud, &s.boxes, &cfg, &w).unwrap();
    assert_eq!(d.len(), 24);
    let empty = gen_scene_with(
        3,
        &SceneSpec {
            n_points: 400,
            n_objects: 0,
            ..SceneSpec::default()
        },
    )
    .unwrap();
    let (d, diag) = run_pipeline(&empty.cloud, &empty.boxes, &small_cfg(), &w).unwrap();
    assert_eq!(d.len(), 24);
    assert_eq!(diag.positives, 0);
    assert!(diag.empty_terms.contains(&"box_reg"));
}

#[test]
fn ball_query_on_cloud_matches_positions() {
    let mut r = rng(30);
    let pts: Vec<Point3> = (0..50).map(|_| rand_point(&mut r, 1.0)).collect();
    let cloud = PointCloud::from_positions(pts.clone()).unwrap();
    let centers = [Point3::ORIGIN, Point3::new(0.5, 0.5, 0.5)];
    assert_eq!(
        ball_query(&cloud, &centers, 0.4, 10).unwrap(),
        ball_query_positions(&pts, &centers, 0.4, 10).unwrap()
    );
    let seeds = set_abstraction(&cloud, &fps(&cloud, 10).unwrap(), 0.4, 10, &MlpWeights::init(&[3, 4], Activation::Relu, Activation::Relu, 1, 1)).unwrap();
    assert_eq!(seeds.len(), 10);
}
