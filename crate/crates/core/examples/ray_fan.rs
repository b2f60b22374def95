//! Prints the ray fan used around each vote cluster and the anchors along one ray.

use sbmc::rays::{bin_anchors, generate_rays, ray_distribution};
use sbmc::Point3;

fn main() -> sbmc::Result<()> {
    for p in [3, 5, 7] {
        let rings = ray_distribution(p)?;
        println!("{p} rings -> {:?} ({} rays)", rings, rings.iter().sum::<usize>());
    }

    let fan = generate_rays(5)?;
    print!("{}", fan.to_table());

    let center = Point3::new(1.0, 2.0, 0.5);
    let anchors = bin_anchors(center, &fan, 0.8, 4)?;
    println!("coarse anchors on ray 1:");
    for a in &anchors[4..8] {
        println!("  {:.3} {:.3} {:.3}", a.x, a.y, a.z);
    }
    Ok(())
}
