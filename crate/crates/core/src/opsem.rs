//! Small-step operational semantics.
//!
//! A running configuration pairs a term over latent variables `z1..zr` with
//! a Gaussian over those latents. `normal()` allocates a latent, `v =:= w`
//! conditions the Gaussian, and lets substitute values.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauss::{GaussMap, GaussState};
use crate::lang::{typecheck, Ctx, Term, DISCARD};
use crate::numlin::{condition_gaussian_tol, Matrix, Vector, DEFAULT_TOL};

#[derive(Clone, Debug, PartialEq)]
pub enum Config {
    Running { term: Term, psi: GaussState },
    Bottom,
}

/// Name of the `i`-th latent variable, counting from 1.
pub fn latent_name(i: usize) -> String {
    format!("z{i}")
}

/// Index (from 0) of a latent variable name.
pub fn latent_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('z')?;
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let i: usize = digits.parse().ok()?;
    i.checked_sub(1)
}

/// A value as a list of affine forms `u·z + b`, one per flattened coordinate.
pub fn affine_components(v: &Term, r: usize) -> Result<Vec<(Vector, f64)>> {
    match v {
        Term::Var(x) => {
            let i = latent_index(x)
                .filter(|&i| i < r)
                .ok_or_else(|| Error::Invalid(format!("`{x}` is not a latent variable")))?;
            let mut u = Vector::zeros(r);
            u[i] = 1.0;
            Ok(vec![(u, 0.0)])
        }
        Term::Const(c) => Ok(vec![(Vector::zeros(r), *c)]),
        Term::UnitVal => Ok(vec![]),
        Term::Pair(a, b) => {
            let mut out = affine_components(a, r)?;
            out.extend(affine_components(b, r)?);
            Ok(out)
        }
        Term::Add(a, b) => {
            let (ua, ba) = single(affine_components(a, r)?)?;
            let (ub, bb) = single(affine_components(b, r)?)?;
            Ok(vec![(ua + ub, ba + bb)])
        }
        Term::Scale(al, a) => {
            let (u, b) = single(affine_components(a, r)?)?;
            Ok(vec![(u * *al, b * al)])
        }
        other => Err(Error::Invalid(format!("`{other}` is not a value"))),
    }
}

fn single(mut v: Vec<(Vector, f64)>) -> Result<(Vector, f64)> {
    if v.len() != 1 {
        return Err(Error::Type(format!("expected a real value, got {} coordinates", v.len())));
    }
    Ok(v.pop().unwrap())
}

/// The pushforward `v_* ψ`.
pub fn observable(v: &Term, psi: &GaussState) -> Result<GaussState> {
    let r = psi.dim();
    let comps = affine_components(v, r)?;
    let a = Matrix::from_fn(comps.len(), r, |i, j| comps[i].0[j]);
    let b = Vector::from_iterator(comps.len(), comps.iter().map(|c| c.1));
    GaussMap::deterministic(a, b)?.apply(psi)
}

impl Config {
    pub fn initial(term: Term) -> Config {
        Config::Running { term, psi: GaussState::empty() }
    }

    pub fn is_final(&self) -> bool {
        match self {
            Config::Running { term, .. } => term.is_value(),
            Config::Bottom => true,
        }
    }

    pub fn step(&self) -> Result<Config> {
        self.step_tol(DEFAULT_TOL)
    }

    /// One reduction step. Calling this on a value or on `Bottom` is an error.
    pub fn step_tol(&self, tol: f64) -> Result<Config> {
        match self {
            Config::Bottom => Err(Error::Invalid("cannot step the failure configuration".into())),
            Config::Running { term, psi } => {
                if term.is_value() {
                    return Err(Error::Invalid(format!("`{term}` is already a value")));
                }
                Ok(match reduce(term, psi, tol)? {
                    Some((term, psi)) => Config::Running { term, psi },
                    None => Config::Bottom,
                })
            }
        }
    }
}

type Reduced = Option<(Term, GaussState)>;

/// Finds the unique redex in evaluation position and contracts it.
fn reduce(t: &Term, psi: &GaussState, tol: f64) -> Result<Reduced> {
    let under = |inner: &Term, rebuild: &dyn Fn(Term) -> Term| -> Result<Reduced> {
        Ok(reduce(inner, psi, tol)?.map(|(e, p)| (rebuild(e), p)))
    };
    match t {
        Term::Normal => {
            let r = psi.dim();
            Ok(Some((Term::Var(latent_name(r + 1)), psi.tensor(&GaussState::standard(1)))))
        }
        Term::Add(a, b) if !a.is_value() => under(a, &|e| Term::add(e, (**b).clone())),
        Term::Add(a, b) => under(b, &|e| Term::add((**a).clone(), e)),
        Term::Pair(a, b) if !a.is_value() => under(a, &|e| Term::pair(e, (**b).clone())),
        Term::Pair(a, b) => under(b, &|e| Term::pair((**a).clone(), e)),
        Term::Scale(al, a) => under(a, &|e| Term::scale(*al, e)),
        Term::Cond(a, b) if !a.is_value() => under(a, &|e| Term::cond(e, (**b).clone())),
        Term::Cond(a, b) if !b.is_value() => under(b, &|e| Term::cond((**a).clone(), e)),
        Term::Cond(a, b) => condition(a, b, psi, tol),
        Term::Let(x, e, body) if !e.is_value() => {
            under(e, &|e| Term::Let(x.clone(), Box::new(e), body.clone()))
        }
        Term::Let(x, e, body) => {
            let next = if x == DISCARD { (**body).clone() } else { body.subst(x, e) };
            Ok(Some((next, psi.clone())))
        }
        Term::LetPair(x, y, e, body) if !e.is_value() => {
            under(e, &|e| Term::LetPair(x.clone(), y.clone(), Box::new(e), body.clone()))
        }
        Term::LetPair(x, y, e, body) => match &**e {
            Term::Pair(v, w) => {
                let mut next = (**body).clone();
                if x != DISCARD {
                    next = next.subst(x, v);
                }
                if y != DISCARD {
                    next = next.subst(y, w);
                }
                Ok(Some((next, psi.clone())))
            }
            other => Err(Error::Type(format!("`{other}` is not a pair value"))),
        },
        value => Err(Error::Invalid(format!("`{value}` has no redex"))),
    }
}

/// `(v =:= w, ψ)`: with `v − w = u·z + b`, condition `ψ` on `u Z = −b`.
fn condition(v: &Term, w: &Term, psi: &GaussState, tol: f64) -> Result<Reduced> {
    let r = psi.dim();
    let (uv, bv) = single(affine_components(v, r)?)?;
    let (uw, bw) = single(affine_components(w, r)?)?;
    let u = uv - uw;
    let b = bv - bw;
    let lift = Matrix::from_fn(r + 1, r, |i, j| if i < r { (i == j) as u8 as f64 } else { u[j] });
    let joint = GaussMap::linear(lift).apply(psi)?;
    let post = condition_gaussian_tol(joint.mean(), joint.cov(), r, &Vector::from_element(1, -b), tol)?;
    Ok(post.map(|(mean, cov)| {
        (Term::UnitVal, GaussState::new(mean, cov).expect("posterior shape"))
    }))
}

/// One line of the step log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceStep {
    pub step: usize,
    pub term: String,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl TraceStep {
    fn of(step: usize, c: &Config) -> TraceStep {
        match c {
            Config::Running { term, psi } => TraceStep {
                step,
                term: term.to_string(),
                mean: psi.mean().iter().cloned().collect(),
                cov: psi
                    .cov()
                    .as_matrix()
                    .row_iter()
                    .map(|r| r.iter().cloned().collect())
                    .collect(),
            },
            Config::Bottom => TraceStep { step, term: "⊥".into(), mean: vec![], cov: vec![] },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Value { value: Term, state: GaussState },
    Bottom,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Run {
    pub outcome: Outcome,
    pub steps: usize,
    /// Number of `normal`, `=:=` and `let` symbols in the program.
    pub bound: usize,
    pub trace: Vec<TraceStep>,
}

impl Run {
    /// The observable outcome: `Some(v_* ψ)`, or `None` on failure.
    pub fn observable(&self) -> Result<Option<GaussState>> {
        match &self.outcome {
            Outcome::Value { value, state } => observable(value, state).map(Some),
            Outcome::Bottom => Ok(None),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub tol: f64,
    pub trace: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { tol: DEFAULT_TOL, trace: false }
    }
}

pub fn run(t: &Term) -> Result<Run> {
    run_with(t, &RunOptions::default())
}

/// Evaluates a closed, well-typed program to a value configuration or
/// failure. Source binders that look like latent names are renamed first.
pub fn run_with(t: &Term, opts: &RunOptions) -> Result<Run> {
    typecheck(&Ctx::new(), t)?;
    let t = t.rename_binders(&|x| latent_index(x).is_some() || x == "z0");
    let bound = t.redex_symbols();
    let mut config = Config::initial(t);
    let mut steps = 0;
    let mut trace = Vec::new();
    if opts.trace {
        trace.push(TraceStep::of(0, &config));
    }
    while !config.is_final() {
        config = config.step_tol(opts.tol)?;
        steps += 1;
        if opts.trace {
            trace.push(TraceStep::of(steps, &config));
        }
        if steps > bound {
            return Err(Error::Invalid(format!("evaluation exceeded {bound} steps")));
        }
    }
    let outcome = match config {
        Config::Running { term, psi } => Outcome::Value { value: term, state: psi },
        Config::Bottom => Outcome::Bottom,
    };
    Ok(Run { outcome, steps, bound, trace })
}
