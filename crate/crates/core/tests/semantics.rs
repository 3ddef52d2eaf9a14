//! Denotational semantics against operational runs, and the algebraic
//! normal forms against both.

mod common;

use common::*;
use exactcond::cond::{probe_priors, StateResult};
use exactcond::denot::denote;
use exactcond::eqnf::{alg_equiv, normalize_closed, normalize_effect, to_alg, AlgTerm, Axiom, ClosedNF, EffectNF, Ret};
use exactcond::lang::{Ctx, Term, Ty};
use exactcond::numlin::{concat, vstack, Matrix, Vector};
use exactcond::opsem::run;
use proptest::prelude::*;
use rand::Rng;

fn reals(n: usize) -> (Ctx, Vec<String>) {
    let xs: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    (Ctx(xs.iter().map(|x| (x.clone(), Ty::R)).collect()), xs)
}

/// Runs `let x⃗ = ψ in (e, x⃗)` for every probe prior ψ and compares the
/// observable outcomes.
fn contexts_agree(xs: &[String], e1: &Term, e2: &Term, seed: u64) -> bool {
    let inputs = Term::tuple(xs.iter().map(|x| Term::var(x)).collect());
    probe_priors(xs.len(), seed).iter().all(|psi| {
        let wrap = |e: &Term| close_with(psi, xs, Term::pair(e.clone(), inputs.clone()));
        let o1 = run(&wrap(e1)).unwrap().observable().unwrap();
        let o2 = run(&wrap(e2)).unwrap().observable().unwrap();
        match (o1, o2) {
            (None, None) => true,
            (Some(a), Some(b)) => a.approx_eq(&b, 1e-8),
            _ => false,
        }
    })
}

/// A variant of `t`: either an equivalent rearrangement or a perturbation.
fn variant<R: Rng>(rng: &mut R, g_seed: u64, xs: &[String], t: &Term) -> Term {
    match rng.gen_range(0..4) {
        0 => Term::let_("k_id", t.clone(), Term::var("k_id")),
        1 => Term::add(t.clone(), Term::Const(rng.gen_range(1..=3) as f64)),
        2 => Term::let_("k_u", Term::Normal, Term::add(t.clone(), Term::scale(1e-3 + rng.gen_range(0.0..1.0), Term::var("k_u")))),
        _ => {
            let mut r2 = common::rng(g_seed);
            GaussGen::new(&mut r2, 3, 2).term(xs, 3, None)
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn denotation_is_fully_abstract(seed in any::<u64>(), n in 1usize..3) {
        let mut rng = rng(seed);
        let (ctx, xs) = reals(n);
        let e1 = GaussGen::new(&mut rng, 3, 2).term(&xs, 3, None);
        let e2 = variant(&mut rng, seed ^ 0x5eed, &xs, &e1);
        let semantic = denote(&ctx, &e1).unwrap().channel.equiv(&denote(&ctx, &e2).unwrap().channel).unwrap();
        let contextual = contexts_agree(&xs, &e1, &e2, seed);
        prop_assert_eq!(semantic, contextual, "{} vs {}", e1, e2);
    }

    #[test]
    fn normal_forms_agree_with_posteriors(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let t = GaussGen::new(&mut rng, 6, 3).closed_program(4);
        let nf = normalize_closed(&to_alg(&Ctx::new(), &t).unwrap()).unwrap();
        let post = denote(&Ctx::new(), &t).unwrap().channel.eval_state().unwrap();
        match (&nf, &post) {
            (ClosedNF::Bottom, StateResult::Bottom) => {}
            (ClosedNF::Form { c, m }, StateResult::Posterior(p)) => {
                prop_assert!(p.approx_eq(&exactcond::gauss::GaussState::new(c.clone(), m.clone()).unwrap(), 1e-8));
            }
            _ => prop_assert!(false, "{}: {} vs {:?}", t, nf, post),
        }
    }

    #[test]
    fn rewrites_are_sound(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let closed = rng.gen_bool(0.5);
        let free = if closed { 0 } else { rng.gen_range(1..=2) };
        let outs = rng.gen_range(0..=2);
        let a = random_alg_with_shapes(&mut rng, free, outs);
        let k = a.conditions();
        let p = a.latents;
        let axiom = match rng.gen_range(0..9) {
            0 => Axiom::Orth(random_orthogonal(&mut rng, p)),
            1 if k >= 2 => Axiom::C1(rng.gen_range(0..k), rng.gen_range(0..k)),
            2 => Axiom::C2,
            3 if k >= 1 => Axiom::Subs(rng.gen_range(0..k), Vector::from_fn(outs, |_, _| rng.gen_range(-2.0..2.0))),
            4 => Axiom::Cong(random_invertible(&mut rng, k)),
            5 => {
                let a2 = with_row(&a, Vector::zeros(a.width()), 0.0);
                return check_sound(&a2, &Axiom::Taut(k), outs);
            }
            6 => {
                let a2 = with_row(&a, Vector::zeros(a.width()), 1.0);
                return check_sound(&a2, &Axiom::Fail(k), outs);
            }
            7 => {
                let j = rng.gen_range(0..p);
                let mut row = Vector::zeros(a.width());
                row[free + j] = [-2.0, 0.5, 3.0][rng.gen_range(0..3)];
                let a2 = with_row(&a, row, rng.gen_range(-2.0..2.0));
                return check_sound(&a2, &Axiom::Init(k, j), outs);
            }
            _ => {
                let a2 = with_unused_latent(&a);
                return check_sound(&a2, &Axiom::Disc(p), outs);
            }
        };
        check_sound(&a, &axiom, outs)?;
        if k >= 1 {
            let failing = AlgTerm { ret: Ret::Fail, ..a.clone() };
            check_sound(&failing, &Axiom::C3(rng.gen_range(0..k)), outs)?;
        }
    }

    #[test]
    fn equivalent_systems_share_a_normal_form(seed in any::<u64>(), m in 1usize..4) {
        let mut rng = rng(seed);
        let p = rng.gen_range(0..=2);
        let k = rng.gen_range(1..=3);
        let small = |rng: &mut rand_chacha::ChaCha8Rng| rng.gen_range(-2..=2) as f64;
        let rows = Matrix::from_fn(k, m + p, |_, _| small(&mut rng));
        let rhs = Vector::from_fn(k, |_, _| small(&mut rng));
        let empty = Ret::Return { lin: Matrix::zeros(0, m + p), offset: Vector::zeros(0) };
        let a = AlgTerm::new(m, p, rows.clone(), rhs.clone(), empty.clone()).unwrap();
        // Another presentation: an invertible recombination plus a redundant row.
        let s = random_invertible(&mut rng, k);
        let w = Vector::from_fn(k, |_, _| small(&mut rng));
        let rows2 = vstack(&(&s * &rows), &Matrix::from_rows(&[w.transpose() * &rows]));
        let rhs2 = concat(&(&s * &rhs), &Vector::from_element(1, w.dot(&rhs)));
        let b = AlgTerm::new(m, p, rows2.clone(), rhs2.clone(), empty.clone()).unwrap();
        let (na, nb) = (normalize_effect(&a).unwrap(), normalize_effect(&b).unwrap());
        prop_assert!(na.approx_eq(&nb, 1e-8), "{} vs {}", na, nb);
        // A closed inconsistency added to both: both fail.
        let bad_row = Matrix::zeros(1, m + p);
        let fail_a = AlgTerm::new(m, p, vstack(&rows, &bad_row), concat(&rhs, &Vector::from_element(1, 1.0)), empty.clone()).unwrap();
        let fail_b = AlgTerm::new(m, p, vstack(&rows2, &(2.0 * &bad_row)), concat(&rhs2, &Vector::from_element(1, -3.0)), empty).unwrap();
        prop_assert_eq!(normalize_effect(&fail_a).unwrap(), EffectNF::Bottom);
        prop_assert_eq!(normalize_effect(&fail_b).unwrap(), EffectNF::Bottom);
    }

    #[test]
    fn algebraic_equivalence_is_complete_without_conditions(seed in any::<u64>(), n in 0usize..3) {
        let mut rng = rng(seed);
        let (ctx, xs) = reals(n);
        // a·u + b·v + f(x) against √(a²+b²)·w + f(x), sometimes perturbed.
        let (a, b) = (rng.gen_range(-2.0..2.0f64), rng.gen_range(-2.0..2.0f64));
        let mut g = GaussGen::new(&mut rng, 0, 0);
        let rest = g.affine(&xs);
        let lhs = Term::let_("u", Term::Normal, Term::let_("v", Term::Normal,
            Term::add(Term::add(Term::scale(a, Term::var("u")), Term::scale(b, Term::var("v"))), rest.clone())));
        let perturb = rng.gen_range(0..3);
        let c = (a * a + b * b).sqrt() * if perturb == 1 { 1.5 } else { 1.0 };
        let shift = if perturb == 2 { Term::Const(0.25) } else { Term::Const(0.0) };
        let rhs = Term::let_("w", Term::Normal, Term::add(Term::add(Term::scale(c, Term::var("w")), rest), shift));
        let maps_equal = denote(&ctx, &lhs).unwrap().channel.map().approx_eq(denote(&ctx, &rhs).unwrap().channel.map(), 1e-8);
        prop_assert_eq!(alg_equiv(&ctx, &lhs, &rhs).unwrap(), maps_equal);
        prop_assert_eq!(maps_equal, perturb == 0);
    }
}

fn random_alg_with_shapes<R: Rng>(rng: &mut R, free: usize, outs: usize) -> AlgTerm {
    let p = rng.gen_range(1..=3);
    let w = free + p;
    let k = rng.gen_range(0..=3);
    let small = |rng: &mut R| rng.gen_range(-2..=2) as f64;
    let rows = Matrix::from_fn(k, w, |_, _| small(rng));
    let rhs = if rng.gen_bool(0.8) { &rows * Vector::from_fn(w, |_, _| small(rng)) } else { Vector::from_fn(k, |_, _| small(rng)) };
    let lin = Matrix::from_fn(outs, w, |_, _| small(rng));
    let offset = Vector::from_fn(outs, |_, _| small(rng));
    AlgTerm::new(free, p, rows, rhs, Ret::Return { lin, offset }).unwrap()
}

fn with_row(a: &AlgTerm, row: Vector, c: f64) -> AlgTerm {
    AlgTerm::new(a.free_vars, a.latents, vstack(&a.rows, &Matrix::from_rows(&[row.transpose()])), concat(&a.rhs, &Vector::from_element(1, c)), a.ret.clone()).unwrap()
}

fn with_unused_latent(a: &AlgTerm) -> AlgTerm {
    let pad = |m: &Matrix| m.clone().insert_column(m.ncols(), 0.0);
    let ret = match &a.ret {
        Ret::Return { lin, offset } => Ret::Return { lin: pad(lin), offset: offset.clone() },
        Ret::Fail => Ret::Fail,
    };
    AlgTerm::new(a.free_vars, a.latents + 1, pad(&a.rows), a.rhs.clone(), ret).unwrap()
}

fn check_sound(a: &AlgTerm, axiom: &Axiom, outs: usize) -> Result<(), TestCaseError> {
    let b = a.rewrite(axiom).map_err(|e| TestCaseError::fail(format!("{axiom:?} on {a}: {e}")))?;
    let (ca, cb) = (a.to_channel(outs), b.to_channel(outs));
    prop_assert!(ca.equiv(&cb).unwrap(), "{:?}: {} became {}", axiom, a, b);
    if a.free_vars > 0 {
        prop_assert!(ca.probe_equiv(&cb, &probe_priors(a.free_vars, 7)).unwrap());
    }
    Ok(())
}
