//! Runs the full detector on a synthetic scene and prints per-stage timings.

use sbmc::synth::gen_scene;
use sbmc::{map_at, run_pipeline, PipelineConfig, WeightBundle};

fn main() -> sbmc::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let scene = gen_scene(seed, 6, 6.0)?;
    let cfg = PipelineConfig::default();
    let weights = WeightBundle::init(&cfg, scene.cloud.channels(), cfg.seed)?;

    let (dets, diag) = run_pipeline(&scene.cloud, &scene.boxes, &cfg, &weights)?;
    print!("{}", diag.summary());

    let mut top = dets.clone();
    top.sort_by(|a, b| b.score.total_cmp(&a.score));
    for d in top.iter().take(5) {
        let c = d.bbox.center;
        println!("class {:2} score {:.3} at ({:.2}, {:.2}, {:.2})", d.class_id(), d.score, c.x, c.y, c.z);
    }
    // Weights are untrained, so this only exercises the evaluator.
    print!("{}", map_at(&dets, &scene.boxes, cfg.iou_threshold).to_table());
    Ok(())
}
