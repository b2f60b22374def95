//! Patch-level attention: the linear-cost form agrees with the explicit affinity matrix.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbmc::attention::{cgnl, cgnl_attention, CgnlWeights};
use sbmc::FeatureMatrix;

fn main() -> sbmc::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (rows, width) = (512, 32);
    let a = FeatureMatrix::from_vec(rows, width, (0..rows * width).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let w = CgnlWeights::init(width, 16, 2, 0);

    let fast = cgnl_attention(&a, &w)?;
    let affinity = a.matmul(&w.theta)?.matmul(&a.matmul(&w.phi)?.transpose())?;
    let mut slow = affinity.matmul(&a.matmul(&w.g)?)?;
    slow.scale(w.scale);
    let err = fast.as_slice().iter().zip(slow.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    println!("{rows}x{rows} affinity never formed; max abs difference {err:.2e}");

    let out = cgnl(&a, &w)?;
    println!("block output {}x{}", out.rows(), out.cols());
    let still = cgnl(&a, &CgnlWeights::zeros(width, 16))? == a;
    println!("zero weights leave the input unchanged: {still}");
    Ok(())
}
