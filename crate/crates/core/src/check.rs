//! Quick self-checks run by `sbmc check`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{cgnl, cgnl_attention, CgnlWeights};
use crate::config::PipelineConfig;
use crate::eval::average_precision;
use crate::geom::{FeatureMatrix, Point3};
use crate::losses::{scale_reg_grad, scale_reg_loss};
use crate::nn::{grad_check, Activation, MlpWeights};
use crate::pipeline::{run_pipeline, WeightBundle};
use crate::rays::{fuse_point_features, generate_rays, RAY_FEATURE_WIDTH};
use crate::sampling::fps_positions;
use crate::synth::{gen_scene_with, SceneSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &'static str, passed: bool, detail: impl Into<String>) -> CheckResult {
    CheckResult {
        name,
        passed,
        detail: detail.into(),
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> FeatureMatrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FeatureMatrix::from_vec(rows, cols, data).expect("sized")
}

fn check_rays() -> CheckResult {
    let Ok(fan) = generate_rays(5) else {
        return result("ray fan", false, "generation failed");
    };
    let worst = fan.directions.iter().map(|d| (d.norm() - 1.0).abs()).fold(0.0, f64::max);
    let ok = fan.len() == 18
        && worst <= 1e-12
        && fan.directions[0] == Point3::new(0.0, 0.0, 1.0)
        && fan.directions[17] == Point3::new(0.0, 0.0, -1.0);
    result("ray fan", ok, format!("{} rays, max norm error {worst:.1e}", fan.len()))
}

fn check_attention(rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst = 0.0f64;
    for t in 0..20u64 {
        let (r, c, ct) = (rng.gen_range(1..24), rng.gen_range(1..12), rng.gen_range(1..8));
        let a = random_matrix(rng, r, c);
        let w = CgnlWeights::init(c, ct, t, 0);
        let Ok(fast) = cgnl_attention(&a, &w) else {
            return result("attention association", false, "evaluation failed");
        };
        let th = a.matmul(&w.theta).expect("shape");
        let ph = a.matmul(&w.phi).expect("shape");
        let g = a.matmul(&w.g).expect("shape");
        let affinity = th.matmul(&ph.transpose()).expect("shape");
        let mut slow = affinity.matmul(&g).expect("shape");
        slow.scale(w.scale);
        for (x, y) in fast.as_slice().iter().zip(slow.as_slice()) {
            worst = worst.max((x - y).abs() / y.abs().max(1e-12));
        }
    }
    let a = random_matrix(rng, 7, 5);
    let identity = cgnl(&a, &CgnlWeights::zeros(5, 3)).map(|o| o == a).unwrap_or(false);
    result(
        "attention association",
        worst <= 1e-9 && identity,
        format!("max relative error {worst:.1e}, zero-weight identity {identity}"),
    )
}

fn check_fps(rng: &mut ChaCha8Rng) -> CheckResult {
    for _ in 0..50 {
        let n = rng.gen_range(1..12);
        let pts: Vec<Point3> = (0..n)
            .map(|_| Point3::new(rng.gen_range(0..4) as f64, rng.gen_range(0..4) as f64, 0.0))
            .collect();
        let m = rng.gen_range(1..=n);
        let got = fps_positions(&pts, m).unwrap_or_default();
        let mut want = vec![0usize];
        while want.len() < m {
            let next = (0..n)
                .filter(|i| !want.contains(i))
                .map(|i| (i, want.iter().map(|&s| pts[i].dist2(pts[s])).fold(f64::INFINITY, f64::min)))
                .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                })
                .map(|(i, _)| i)
                .expect("candidates remain");
            want.push(next);
        }
        if got != want {
            return result("farthest-point sampling", false, format!("{got:?} != {want:?}"));
        }
    }
    result("farthest-point sampling", true, "50 random sets match the greedy scan")
}

fn check_masked_fusion(rng: &mut ChaCha8Rng) -> CheckResult {
    let (k, f) = (6, 4);
    let proj = MlpWeights::init(&[k * f, RAY_FEATURE_WIDTH], Activation::Relu, Activation::Identity, 1, 2);
    for _ in 0..20 {
        let mask: Vec<bool> = (0..k).map(|_| rng.gen_bool(0.5)).collect();
        let a = random_matrix(rng, k, f);
        let mut b = a.clone();
        for (i, &keep) in mask.iter().enumerate() {
            if !keep {
                b.row_mut(i).iter_mut().for_each(|v| *v = rng.gen_range(-5.0..5.0));
            }
        }
        if fuse_point_features(&a, &mask, &proj).ok() != fuse_point_features(&b, &mask, &proj).ok() {
            return result("masked fusion", false, "masked anchors leaked into the ray feature");
        }
    }
    result("masked fusion", true, "masked anchors never change the ray feature")
}

fn check_ap() -> CheckResult {
    let ap = average_precision(&[true, false, true], 2);
    let want = 0.5 + 0.5 * (2.0 / 3.0);
    result("average precision", (ap - want).abs() < 1e-15, format!("{ap} vs {want}"))
}

fn check_gradients(rng: &mut ChaCha8Rng) -> CheckResult {
    let n = 8;
    let pred: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..3.0)).collect();
    let gt: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..3.0)).collect();
    let pos: Vec<bool> = (0..n).map(|i| i % 3 != 0).collect();
    let analytic = scale_reg_grad(&pred, &gt, &pos, 1.0).unwrap_or_default();
    let err = grad_check(
        |p| scale_reg_loss(p, &gt, &pos, 1.0).map(|l| l.value).unwrap_or(f64::NAN),
        &pred,
        &analytic,
        1e-5,
    )
    .unwrap_or(f64::INFINITY);
    result("scale loss gradient", err < 1e-4, format!("max relative error {err:.1e}"))
}

fn check_pipeline() -> CheckResult {
    let cfg = PipelineConfig {
        n_seeds: 64,
        upsampled_seeds: 128,
        clusters: 8,
        ..PipelineConfig::default()
    };
    let spec = SceneSpec {
        n_points: 256,
        n_objects: 2,
        extent: 3.0,
        ..SceneSpec::default()
    };
    let run = || -> crate::Result<_> {
        let s = gen_scene_with(1, &spec)?;
        let w = WeightBundle::init(&cfg, s.cloud.channels(), 1)?;
        run_pipeline(&s.cloud, &s.boxes, &cfg, &w).map(|(d, _)| d)
    };
    match (run(), run()) {
        (Ok(a), Ok(b)) => result("pipeline determinism", a == b && a.len() == 8, format!("{} detections", a.len())),
        (Err(e), _) | (_, Err(e)) => result("pipeline determinism", false, e.to_string()),
    }
}

/// Runs every check; the suite passes when all entries pass.
pub fn run_checks() -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    vec![
        check_rays(),
        check_attention(&mut rng),
        check_fps(&mut rng),
        check_masked_fusion(&mut rng),
        check_ap(),
        check_gradients(&mut rng),
        check_pipeline(),
    ]
}
