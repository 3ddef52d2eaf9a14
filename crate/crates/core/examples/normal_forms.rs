//! Hoisting a program into the algebraic presentation and normalizing it.
//!
//! Run with `cargo run --example normal_forms`.

use exactcond::eqnf::{alg_equiv, normalize_closed, normalize_effect, to_alg};
use exactcond::lang::{parse, parse_with_inputs, Ctx};

fn main() -> exactcond::Result<()> {
    let closed = parse("let (x, y) = (normal(), normal()) in x + 2 * y =:= 1; (x, y)")?;
    let alg = to_alg(&Ctx::new(), &closed)?;
    println!("hoisted:\n{alg}\n");
    println!("closed normal form:\n{}\n", normalize_closed(&alg)?);

    let contradiction = parse("x = normal()\nx =:= 0\nx =:= 1\nx")?;
    println!("contradiction: {}\n", normalize_closed(&to_alg(&Ctx::new(), &contradiction)?)?);

    let (ctx, open) = parse_with_inputs("input a\ninput b\nu = normal()\na + u =:= b; ()")?;
    println!("effect normal form:\n{}\n", normalize_effect(&to_alg(&ctx, &open)?)?);

    let (ctx, lhs) = parse_with_inputs("input a\nu = normal()\nv = normal()\na + 3 * u + 4 * v")?;
    let (_, rhs) = parse_with_inputs("input a\nw = normal()\na + 5 * w")?;
    println!("3u + 4v ≡ 5w: {}", alg_equiv(&ctx, &lhs, &rhs)?);
    Ok(())
}
