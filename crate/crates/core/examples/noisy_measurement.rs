//! A noisy measurement of a Gaussian quantity, solved three ways.
//!
//! Run with `cargo run --example noisy_measurement`.

use exactcond::cond::StateResult;
use exactcond::denot::denote;
use exactcond::lang::{parse, Ctx};
use exactcond::opsem::run;

fn main() -> exactcond::Result<()> {
    // Prior x ~ N(50, 100); the instrument adds N(0, 25); it reads 40.
    let src = "x = normal(50, 100)\ny = normal(x, 25)\ny =:= 40\nx";
    let program = parse(src)?;
    println!("program:\n{src}\n");

    let r = run(&program)?;
    let by_steps = r.observable()?.expect("the condition is satisfiable");
    println!("operational: {by_steps}   ({} steps, bound {})", r.steps, r.bound);

    match denote(&Ctx::new(), &program)?.channel.eval_state()? {
        StateResult::Posterior(p) => println!("denotational: {p}"),
        StateResult::Bottom => println!("denotational: failure"),
    }

    // Closed form: posterior mean 50 + 100/125·(40 − 50), variance 100·25/125.
    println!("closed form: mean {}, variance {}", 50.0 + 100.0 / 125.0 * (40.0 - 50.0), 100.0 * 25.0 / 125.0);
    Ok(())
}
