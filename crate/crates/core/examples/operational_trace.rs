//! Step-by-step reduction of a small program, with the latent state.
//!
//! Run with `cargo run --example operational_trace`.

use exactcond::lang::parse;
use exactcond::opsem::{run_with, RunOptions};

fn main() -> exactcond::Result<()> {
    let program = parse("let (x, y) = (normal(), normal()) in x =:= y; x + y")?;
    let r = run_with(&program, &RunOptions { trace: true, ..RunOptions::default() })?;
    for s in &r.trace {
        println!("[{}] {}", s.step, s.term);
        println!("     mean {:?}  cov {:?}", s.mean, s.cov);
    }
    println!("\n{} steps (bound {})", r.steps, r.bound);
    if let Some(obs) = r.observable()? {
        println!("observable outcome: {obs}");
    }
    Ok(())
}
