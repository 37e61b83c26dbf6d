//! Finite-difference check of every differentiable op and the tiny network.
//!
//! `cargo run --example gradcheck -- [SEED]`

use polyseg::gradcheck::{render_table, run_gradcheck};

fn main() -> polyseg::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let results = run_gradcheck(seed, None)?;
    print!("{}", render_table(&results));
    if results.iter().any(|r| !r.passed) {
        std::process::exit(1);
    }
    Ok(())
}
