//! Hoyer sparseness of a few vectors and their projections onto a target
//! sparseness with the L2 norm kept.
//!
//!     cargo run --example hoyer_projection

use morphdict::sparsity::{hoyer_sigma, project_sparseness};
use morphdict::{Result, SparsityTarget};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn main() -> Result<()> {
    println!("one-hot  {}", hoyer_sigma(&[0.0, 0.0, 2.0, 0.0])?);
    println!("constant {}", hoyer_sigma(&[0.5; 8])?);
    println!("ramp     {:.4}", hoyer_sigma(&[1.0, 2.0, 3.0, 4.0, 5.0])?);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let v: Vec<f64> = (0..100).map(|_| rng.gen_range(-0.2..1.0)).collect();
    println!("\nrandom vector of length {}: sigma {:.4}, L2 {:.4}", v.len(), hoyer_sigma(&v)?, l2(&v));
    for t in [0.1, 0.3, 0.6, 0.9] {
        let p = project_sparseness(&v, SparsityTarget::new(t)?)?;
        let nonzero = p.iter().filter(|&&x| x > 0.0).count();
        println!(
            "target {t:.1}: sigma {:.6}, L2 {:.6}, {nonzero} non-zero entries",
            hoyer_sigma(&p)?,
            l2(&p)
        );
    }
    Ok(())
}
