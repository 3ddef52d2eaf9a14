//! A Gaussian random walk pinned at a few exactly observed points.
//!
//! Run with `cargo run --example random_walk`.

use std::collections::BTreeMap;

use exactcond::cli::{random_walk_term, walk_posterior};
use exactcond::denot::denote;
use exactcond::lang::Ctx;
use exactcond::numlin::DEFAULT_TOL;

fn main() -> exactcond::Result<()> {
    let obs: BTreeMap<usize, f64> = [(20, 2.5), (40, -1.0), (60, 4.0), (80, 0.5)].into_iter().collect();
    let rows = walk_posterior(100, &obs, false, DEFAULT_TOL)?;
    println!("{:>4} {:>10} {:>10}", "i", "mean", "variance");
    for r in rows.iter().step_by(10).chain(rows.last()) {
        println!("{:>4} {:>10.4} {:>10.4}", r.i, r.mean, r.variance);
    }

    // Conditioning at the end or right after each observed point gives the
    // same program up to equivalence.
    let small: BTreeMap<usize, f64> = obs.range(..30).map(|(i, v)| (*i, *v)).collect();
    let batch = denote(&Ctx::new(), &random_walk_term(30, &small, false)?)?.channel;
    let interleaved = denote(&Ctx::new(), &random_walk_term(30, &small, true)?)?.channel;
    println!("\nbatch ≡ interleaved (n = 30): {}", batch.equiv(&interleaved)?);
    Ok(())
}
