//! Toggles the three context modules on one scene.

use sbmc::pipeline::ablation_table;
use sbmc::synth::gen_scene;
use sbmc::{ablate, PipelineConfig, WeightBundle};

fn main() -> sbmc::Result<()> {
    let scene = gen_scene(2, 6, 6.0)?;
    let cfg = PipelineConfig::default();
    let mut w = WeightBundle::init(&cfg, scene.cloud.channels(), 1)?;

    println!("live weights");
    print!("{}", ablation_table(&ablate(&scene.cloud, &scene.boxes, &cfg, &w)?));

    w.zero_attention();
    let rows = ablate(&scene.cloud, &scene.boxes, &cfg, &w)?;
    println!("zeroed attention");
    print!("{}", ablation_table(&rows));
    println!("identical detections: {}", rows.iter().all(|r| r.detections == rows[0].detections));
    Ok(())
}
