//! Farthest-point vs foreground-biased sampling on a scene where most points are background.

use sbmc::geom::canonical_sort;
use sbmc::sampling::{fbs, fps, ForegroundScores};
use sbmc::synth::{gen_scene_with, SceneSpec};

fn main() -> sbmc::Result<()> {
    let spec = SceneSpec {
        foreground_fraction: 0.1,
        ..SceneSpec::default()
    };
    let scene = gen_scene_with(7, &spec)?;
    let cloud = canonical_sort(&scene.cloud);

    // Foreground score 1 for points on a box surface.
    let scores: Vec<f64> = cloud
        .positions()
        .iter()
        .map(|p| if scene.boxes.iter().any(|b| b.face_distance(*p).abs() <= 0.05) { 1.0 } else { 0.0 })
        .collect();
    let fg = scores.iter().filter(|&&s| s > 0.0).count();
    let scores = ForegroundScores::new(scores)?;

    let m = 256;
    let share = |idx: &[usize]| idx.iter().filter(|&&i| scores.as_slice()[i] > 0.0).count() as f64 / idx.len() as f64;
    let a = fps(&cloud, m)?;
    let b = fbs(&cloud, &scores, m, fg, m / 2)?;
    println!("{} points, {fg} on objects", cloud.len());
    println!("fps foreground share {:.3}", share(&a));
    println!("fbs foreground share {:.3}", share(&b));
    Ok(())
}
