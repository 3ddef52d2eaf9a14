//! Exact finite inference: unnormalized posteriors and model evidence.
//!
//! Run with `cargo run --example finite_evidence`.

use exactcond::finprob::{model_evidence, normalize_dist, parse_program, proportional, Mode};

fn main() -> exactcond::Result<()> {
    let coins = parse_program("x = bernoulli(2/5)\ny = bernoulli(2/5)\nx =:= y\nx")?;
    let k = coins.eval(Mode::P)?;
    let d = k.column(0);
    println!("two coins forced to agree: {d}");
    println!("normalized: {}", normalize_dist(&d));
    println!("evidence: {}\n", model_evidence(&coins.decls, &coins.body)?);

    let paint = parse_program(
        "type color = {red, green, blue}\n\
         kernel paint : bool -> color = { true => {red: 1/2, green: 1/2}, false => {blue: 1} }\n\
         c = bernoulli(1/3)\npaint(c) =:= red\nc",
    )?;
    println!("paint posterior: {}\n", normalize_dist(&paint.eval(Mode::P)?.column(0)));

    // A condition that does not depend on the input only rescales the kernel.
    let open = parse_program("input x : bool\ny = bernoulli(0.4)\nx =:= y\nx")?;
    let prefixed = parse_program("input x : bool\nz = bernoulli(0.2)\nz =:= false\ny = bernoulli(0.4)\nx =:= y\nx")?;
    let (a, b) = (open.eval(Mode::Psl)?, prefixed.eval(Mode::Psl)?);
    println!("open:\n{a}\nprefixed:\n{b}");
    println!("proportional: {}   equal: {}", proportional(&a, &b)?, a == b);
    Ok(())
}
