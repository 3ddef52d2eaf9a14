//! Program equations that hold, and fail, under exact conditioning.
//!
//! Run with `cargo run --example conditioning_laws`.

use exactcond::denot::denote;
use exactcond::lang::parse_with_inputs;

fn check(name: &str, lhs: &str, rhs: &str) -> exactcond::Result<()> {
    let (ctx, a) = parse_with_inputs(lhs)?;
    let (_, b) = parse_with_inputs(rhs)?;
    let same = denote(&ctx, &a)?.channel.equiv(&denote(&ctx, &b)?.channel)?;
    println!("{:<28} {}", name, if same { "holds" } else { "fails" });
    Ok(())
}

fn main() -> exactcond::Result<()> {
    check("enforcing", "input x\ninput y\nx =:= y; (x, y)", "input x\ninput y\nx =:= y; (x, x)")?;
    check("initialization", "x = normal()\nx =:= 3\nx", "3")?;
    check("idempotence", "input x\nx =:= 1; x =:= 1; x", "input x\nx =:= 1; x")?;
    check("recombining conditions", "input x\ninput y\nx =:= 1; y =:= 2; ()", "input x\ninput y\nx + y =:= 3; x - y =:= -1; ()")?;
    check("commutativity", "input x\ninput y\nx =:= 1; y =:= 2; ()", "input x\ninput y\ny =:= 2; x =:= 1; ()")?;
    check("rescaling a condition", "input x\nx =:= 0; ()", "input x\n2 * x =:= 0; ()")?;
    check("distinct points", "input x\nx =:= 0; ()", "input x\nx =:= 1; ()")?;
    check("discarding a condition", "input x\nx =:= 0; ()", "()")?;
    Ok(())
}
