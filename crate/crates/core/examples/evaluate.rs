//! mAP at IoU 0.25 and 0.5 for perturbed copies of the ground-truth boxes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbmc::eval::iou_aabb;
use sbmc::synth::gen_scene;
use sbmc::{map_at, AABox, Detection, Point3};

fn main() -> sbmc::Result<()> {
    let scene = gen_scene(3, 8, 8.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut dets = Vec::new();
    for b in &scene.boxes {
        let jitter = Point3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), 0.0);
        let guess = AABox::new(b.center + jitter, b.size, b.class_id)?;
        println!("class {:2} IoU {:.3}", b.class_id, iou_aabb(&guess, b));
        dets.push(Detection::new(guess, rng.gen_range(0.5..1.0))?);
        // A duplicate with a lower score becomes a false positive.
        dets.push(Detection::new(guess, 0.1)?);
    }
    for t in [0.25, 0.5] {
        print!("{}", map_at(&dets, &scene.boxes, t).to_table());
    }
    Ok(())
}
