//! Writes a synthetic scene as text and binary, then reads both back.

use sbmc::io::{load_scene, save_scene, save_scene_binary};
use sbmc::synth::gen_scene;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("sbmc_scene_io");
    std::fs::create_dir_all(&dir)?;
    let scene = gen_scene(11, 4, 5.0)?;

    let text = dir.join("scene.txt");
    save_scene(&text, &scene.cloud, &scene.boxes)?;
    let (cloud, boxes) = load_scene(&text)?;
    println!("text: {} points, {} boxes, exact {}", cloud.len(), boxes.len(), cloud == scene.cloud);

    let bin = dir.join("scene.bin");
    save_scene_binary(&bin, &scene.cloud, &scene.boxes)?;
    let (cloud, _) = load_scene(&bin)?;
    let err = cloud
        .positions()
        .iter()
        .zip(scene.cloud.positions())
        .map(|(a, b)| a.dist(*b))
        .fold(0.0, f64::max);
    let size = |p: &std::path::Path| std::fs::metadata(p).map(|m| m.len()).unwrap_or(0);
    println!("binary: {} bytes vs {} text, max position error {err:.1e}", size(&bin), size(&text));
    Ok(())
}
