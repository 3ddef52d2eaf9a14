//! Random generators shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use exactcond::finprob::{self, bool_space, rat, Decls, FinTy, KernelDecl, PTerm, Rat, SubDist, SubKernel, Value};
use exactcond::gauss::GaussState;
use exactcond::lang::Term;
use exactcond::numlin::{Matrix, PsdMatrix, Vector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

const COEFFS: &[f64] = &[-2.0, -1.0, -0.5, 0.5, 1.0, 1.5, 2.0, 3.0];

fn coeff<R: Rng>(rng: &mut R) -> f64 {
    *COEFFS.choose(rng).unwrap()
}

fn constant<R: Rng>(rng: &mut R) -> f64 {
    rng.gen_range(-3..=3) as f64
}

// ---------------------------------------------------------------------------
// Gaussian programs

/// Budgeted generator of Gaussian-language terms over real variables.
pub struct GaussGen<'a, R: Rng> {
    pub rng: &'a mut R,
    pub normals: usize,
    pub conds: usize,
    pub max_normals: usize,
    pub max_conds: usize,
    fresh: usize,
}

impl<'a, R: Rng> GaussGen<'a, R> {
    pub fn new(rng: &'a mut R, max_normals: usize, max_conds: usize) -> Self {
        GaussGen { rng, normals: 0, conds: 0, max_normals, max_conds, fresh: 0 }
    }

    pub fn fresh(&mut self, base: &str) -> String {
        self.fresh += 1;
        format!("{base}{}", self.fresh)
    }

    fn normal(&mut self) -> Option<Term> {
        if self.normals < self.max_normals {
            self.normals += 1;
            Some(Term::Normal)
        } else {
            None
        }
    }

    /// `Σ cᵢ vᵢ + c`, occasionally with a fresh `normal()`.
    pub fn affine(&mut self, vars: &[String]) -> Term {
        let k = if vars.is_empty() { 0 } else { self.rng.gen_range(1..=vars.len().min(3)) };
        let mut chosen: Vec<&String> = vars.choose_multiple(self.rng, k).collect();
        chosen.sort();
        let mut terms: Vec<Term> = chosen
            .into_iter()
            .map(|v| {
                let c = coeff(self.rng);
                if c == 1.0 {
                    Term::var(v)
                } else {
                    Term::scale(c, Term::var(v))
                }
            })
            .collect();
        if self.rng.gen_bool(0.25) {
            if let Some(n) = self.normal() {
                terms.push(Term::scale(coeff(self.rng), n));
            }
        }
        if terms.is_empty() || self.rng.gen_bool(0.4) {
            terms.push(Term::Const(constant(self.rng)));
        }
        terms.into_iter().reduce(Term::add).unwrap()
    }

    /// A closed program: a chain of bindings and conditions, then a tuple of
    /// `0..=max_dim` affine results.
    pub fn closed_program(&mut self, max_dim: usize) -> Term {
        let mut vars: Vec<String> = Vec::new();
        let mut stmts: Vec<Box<dyn FnOnce(Term) -> Term>> = Vec::new();
        let mut past_conds: Vec<(Term, f64)> = Vec::new();
        let n_stmts = self.rng.gen_range(1..=8);
        for _ in 0..n_stmts {
            match self.rng.gen_range(0..10) {
                0..=3 => {
                    if let Some(n) = self.normal() {
                        let x = self.fresh("v");
                        let mut e = Term::scale(coeff(self.rng), n);
                        if !vars.is_empty() && self.rng.gen_bool(0.5) {
                            e = Term::add(self.affine(&vars), e);
                        }
                        vars.push(x.clone());
                        stmts.push(Box::new(move |b| Term::let_(&x, e, b)));
                    }
                }
                4..=5 => {
                    let x = self.fresh("v");
                    let e = self.affine(&vars);
                    vars.push(x.clone());
                    stmts.push(Box::new(move |b| Term::let_(&x, e, b)));
                }
                6 if vars.len() >= 1 => {
                    let (x, y) = (self.fresh("p"), self.fresh("q"));
                    let (e1, e2) = (self.affine(&vars), self.affine(&vars));
                    vars.push(x.clone());
                    vars.push(y.clone());
                    stmts.push(Box::new(move |b| Term::let_pair(&x, &y, Term::pair(e1, e2), b)));
                }
                _ => {
                    if self.conds < self.max_conds {
                        self.conds += 1;
                        let lhs = self.affine(&vars);
                        let (lhs, c) = match (past_conds.choose(self.rng).cloned(), self.rng.gen_range(0..4)) {
                            // Repeat an earlier condition with a (possibly) different value.
                            (Some((l, c)), 0) => (l, c + self.rng.gen_range(0..=1) as f64),
                            _ => (lhs, constant(self.rng)),
                        };
                        past_conds.push((lhs.clone(), c));
                        let rhs = if self.rng.gen_bool(0.5) { Term::Const(c) } else { Term::add(Term::Const(c), Term::Const(0.0)) };
                        stmts.push(Box::new(move |b| Term::seq(Term::cond(lhs, rhs), b)));
                    }
                }
            }
        }
        let dim = self.rng.gen_range(0..=max_dim);
        let results: Vec<Term> = (0..dim).map(|_| self.affine(&vars)).collect();
        let mut t = Term::tuple(results);
        for s in stmts.into_iter().rev() {
            t = s(t);
        }
        t
    }

    /// A random term of type R over `vars`. With `hole`, the variable `hole`
    /// occurs free exactly once (and is not in `vars`).
    pub fn term(&mut self, vars: &[String], depth: usize, hole: Option<&str>) -> Term {
        if depth == 0 {
            return self.leaf(vars, hole);
        }
        match self.rng.gen_range(0..7) {
            0 => {
                let (h1, h2) = self.split(hole);
                Term::add(self.term(vars, depth - 1, h1), self.term(vars, depth - 1, h2))
            }
            1 => Term::scale(coeff(self.rng), self.term(vars, depth - 1, hole)),
            2 | 3 => {
                let x = self.fresh("w");
                let (h1, h2) = self.split(hole);
                let e = self.term(vars, depth - 1, h1);
                let mut inner = vars.to_vec();
                inner.push(x.clone());
                Term::let_(&x, e, self.term(&inner, depth - 1, h2))
            }
            4 if self.conds < self.max_conds => {
                self.conds += 1;
                let (h1, h2) = self.split(hole);
                let (h1, h3) = self.split(h1);
                let c = Term::cond(self.term(vars, depth - 1, h1), self.term(vars, depth - 1, h3));
                Term::seq(c, self.term(vars, depth - 1, h2))
            }
            5 => {
                let (x, y) = (self.fresh("a"), self.fresh("b"));
                let (h1, h2) = self.split(hole);
                let (h1, h3) = self.split(h1);
                let e = Term::pair(self.term(vars, depth - 1, h1), self.term(vars, depth - 1, h3));
                let mut inner = vars.to_vec();
                inner.push(x.clone());
                inner.push(y.clone());
                Term::let_pair(&x, &y, e, self.term(&inner, depth - 1, h2))
            }
            _ => self.leaf(vars, hole),
        }
    }

    fn split<'h>(&mut self, hole: Option<&'h str>) -> (Option<&'h str>, Option<&'h str>) {
        match hole {
            None => (None, None),
            Some(h) if self.rng.gen_bool(0.5) => (Some(h), None),
            Some(h) => (None, Some(h)),
        }
    }

    fn leaf(&mut self, vars: &[String], hole: Option<&str>) -> Term {
        if let Some(h) = hole {
            return Term::var(h);
        }
        match self.rng.gen_range(0..4) {
            0 | 1 if !vars.is_empty() => Term::var(vars.choose(self.rng).unwrap()),
            2 => self.normal().unwrap_or_else(|| Term::Const(constant(self.rng))),
            _ => self.affine(vars),
        }
    }

    /// Value expressions of type R: variables under (pair) lets.
    pub fn value(&mut self, vars: &[String], depth: usize) -> Term {
        if depth == 0 || self.rng.gen_bool(0.4) {
            return Term::var(vars.choose(self.rng).unwrap());
        }
        if self.rng.gen_bool(0.5) {
            let x = self.fresh("u");
            let bound = self.value(vars, depth - 1);
            let mut inner = vars.to_vec();
            inner.push(x.clone());
            Term::let_(&x, bound, self.value(&inner, depth - 1))
        } else {
            let (x, y) = (self.fresh("a"), self.fresh("b"));
            let bound = Term::pair(self.value(vars, depth - 1), self.value(vars, depth - 1));
            let mut inner = vars.to_vec();
            inner.push(x.clone());
            inner.push(y.clone());
            Term::let_pair(&x, &y, bound, self.value(&inner, depth - 1))
        }
    }
}

/// `μ + L (normal(), …)` as a term of type Rⁿ.
pub fn state_term(psi: &GaussState) -> Term {
    let l = psi.cov().factor();
    let n = psi.dim();
    let zs: Vec<String> = (0..l.ncols()).map(|j| format!("s{j}")).collect();
    let comps: Vec<Term> = (0..n)
        .map(|i| {
            let mut t = Term::Const(psi.mean()[i]);
            for (j, z) in zs.iter().enumerate() {
                if l[(i, j)] != 0.0 {
                    t = Term::add(t, Term::scale(l[(i, j)], Term::var(z)));
                }
            }
            t
        })
        .collect();
    let mut t = Term::tuple(comps);
    for z in zs.iter().rev() {
        t = Term::let_(z, Term::Normal, t);
    }
    t
}

/// Binds the names `xs` to the components of `psi` around `body`.
pub fn close_with(psi: &GaussState, xs: &[String], body: Term) -> Term {
    let tmp = "__prior";
    let mut t = body;
    // Unpack a right-nested tuple.
    match xs.len() {
        0 => return Term::seq(state_term(psi), t),
        1 => return Term::let_(&xs[0], state_term(psi), t),
        _ => {}
    }
    let mut names: Vec<String> = xs.to_vec();
    let mut rests: Vec<String> = (0..xs.len() - 2).map(|i| format!("{tmp}{i}")).collect();
    let last_y = names.pop().unwrap();
    let last_x = names.pop().unwrap();
    let mut src = if rests.is_empty() { tmp.to_string() } else { rests.last().unwrap().clone() };
    t = Term::let_pair(&last_x, &last_y, Term::var(&src), t);
    while let Some(x) = names.pop() {
        let rest = src.clone();
        rests.pop();
        src = if rests.is_empty() { tmp.to_string() } else { rests.last().unwrap().clone() };
        t = Term::let_pair(&x, &rest, Term::var(&src), t);
    }
    Term::let_(tmp, state_term(psi), t)
}

pub fn random_orthogonal<R: Rng>(rng: &mut R, n: usize) -> Matrix {
    let m = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    m.qr().q()
}

/// A well-conditioned random invertible matrix.
pub fn random_invertible<R: Rng>(rng: &mut R, n: usize) -> Matrix {
    let d = Matrix::from_diagonal(&Vector::from_fn(n, |_, _| {
        let s: f64 = rng.gen_range(0.5..2.0);
        if rng.gen_bool(0.5) { s } else { -s }
    }));
    random_orthogonal(rng, n) * d * random_orthogonal(rng, n)
}

// ---------------------------------------------------------------------------
// Finite programs

pub fn random_rat<R: Rng>(rng: &mut R) -> Rat {
    let d = rng.gen_range(1..=6);
    rat(rng.gen_range(0..=d), d)
}

/// Declarations with one substochastic kernel `flip : bool -> bool`.
pub fn fin_decls() -> Decls {
    let mut d = Decls::default();
    let kernel = SubKernel::new(
        bool_space(),
        bool_space(),
        vec![vec![rat(2, 3), rat(1, 2)], vec![Rat::from_integer(0.into()), rat(1, 4)]],
    )
    .unwrap();
    d.kernels.insert("flip".into(), KernelDecl { dom: FinTy::Bool, cod: FinTy::Bool, kernel });
    d
}

pub struct FinGen<'a, R: Rng> {
    pub rng: &'a mut R,
    pub choices: usize,
    pub max_choices: usize,
    fresh: usize,
}

impl<'a, R: Rng> FinGen<'a, R> {
    pub fn new(rng: &'a mut R, max_choices: usize) -> Self {
        FinGen { rng, choices: 0, max_choices, fresh: 0 }
    }

    pub fn fresh(&mut self, base: &str) -> String {
        self.fresh += 1;
        format!("{base}{}", self.fresh)
    }

    fn choice(&mut self) -> Option<PTerm> {
        if self.choices >= self.max_choices {
            return None;
        }
        self.choices += 1;
        Some(if self.rng.gen_bool(0.8) { PTerm::Bernoulli(random_rat(self.rng)) } else { PTerm::Uniform(FinTy::Bool) })
    }

    fn split<'h>(&mut self, hole: Option<&'h str>) -> (Option<&'h str>, Option<&'h str>) {
        match hole {
            None => (None, None),
            Some(h) if self.rng.gen_bool(0.5) => (Some(h), None),
            Some(h) => (None, Some(h)),
        }
    }

    fn leaf(&mut self, vars: &[String], hole: Option<&str>) -> PTerm {
        if let Some(h) = hole {
            return PTerm::var(h);
        }
        match self.rng.gen_range(0..3) {
            0 if !vars.is_empty() => PTerm::var(vars.choose(self.rng).unwrap()),
            1 => self.choice().unwrap_or_else(|| PTerm::bool(self.rng.gen_bool(0.5))),
            _ => PTerm::bool(self.rng.gen_bool(0.5)),
        }
    }

    /// A random boolean term over `vars`; `hole` occurs exactly once if given.
    pub fn term(&mut self, vars: &[String], depth: usize, hole: Option<&str>) -> PTerm {
        if depth == 0 {
            return self.leaf(vars, hole);
        }
        match self.rng.gen_range(0..8) {
            0 => {
                let (h1, h2) = self.split(hole);
                PTerm::eq(self.term(vars, depth - 1, h1), self.term(vars, depth - 1, h2))
            }
            1 if self.choices < self.max_choices => {
                self.choices += 1;
                PTerm::app("flip", self.term(vars, depth - 1, hole))
            }
            2 | 3 => {
                let x = self.fresh("w");
                let (h1, h2) = self.split(hole);
                let e = self.term(vars, depth - 1, h1);
                let mut inner = vars.to_vec();
                inner.push(x.clone());
                PTerm::let_(&x, e, self.term(&inner, depth - 1, h2))
            }
            4 => {
                let (h1, h2) = self.split(hole);
                let (h1, h3) = self.split(h1);
                let c = PTerm::cond(self.term(vars, depth - 1, h1), self.term(vars, depth - 1, h3));
                PTerm::seq(c, self.term(vars, depth - 1, h2))
            }
            5 => PTerm::seq(PTerm::Score(random_rat(self.rng)), self.term(vars, depth - 1, hole)),
            6 => {
                let (x, y) = (self.fresh("a"), self.fresh("b"));
                let (h1, h2) = self.split(hole);
                let (h1, h3) = self.split(h1);
                let e = PTerm::pair(self.term(vars, depth - 1, h1), self.term(vars, depth - 1, h3));
                let mut inner = vars.to_vec();
                inner.push(x.clone());
                inner.push(y.clone());
                PTerm::let_pair(&x, &y, e, self.term(&inner, depth - 1, h2))
            }
            _ => self.leaf(vars, hole),
        }
    }

    pub fn value(&mut self, vars: &[String], depth: usize) -> PTerm {
        if depth == 0 || self.rng.gen_bool(0.4) {
            return PTerm::var(vars.choose(self.rng).unwrap());
        }
        let x = self.fresh("u");
        let bound = self.value(vars, depth - 1);
        let mut inner = vars.to_vec();
        inner.push(x.clone());
        PTerm::let_(&x, bound, self.value(&inner, depth - 1))
    }
}

/// Capture-free substitution; generated binders are always fresh.
pub fn fin_subst(t: &PTerm, x: &str, v: &PTerm) -> PTerm {
    let s = |u: &PTerm| fin_subst(u, x, v);
    match t {
        PTerm::Var(y) if y == x => v.clone(),
        PTerm::Var(_) | PTerm::Lit(_) | PTerm::Bernoulli(_) | PTerm::Uniform(_) | PTerm::Score(_) => t.clone(),
        PTerm::Pair(a, b) => PTerm::pair(s(a), s(b)),
        PTerm::Cond(a, b) => PTerm::cond(s(a), s(b)),
        PTerm::Eq(a, b) => PTerm::eq(s(a), s(b)),
        PTerm::App(k, a) => PTerm::app(k, s(a)),
        PTerm::If(c, a, b) => PTerm::ite(s(c), s(a), s(b)),
        PTerm::Let(y, e, b) if y == x => PTerm::let_(y, s(e), (**b).clone()),
        PTerm::Let(y, e, b) => PTerm::let_(y, s(e), s(b)),
        PTerm::LetPair(a, b2, e, body) if a == x || b2 == x => PTerm::let_pair(a, b2, s(e), (**body).clone()),
        PTerm::LetPair(a, b2, e, body) => PTerm::let_pair(a, b2, s(e), s(body)),
    }
}

/// A random subprobability kernel between the given spaces; columns are
/// either full, deficient or empty.
pub fn random_subkernel<R: Rng>(rng: &mut R, dom: &[Value], cod: &[Value]) -> SubKernel {
    SubKernel::from_fn(dom.to_vec(), cod.to_vec(), |_| Ok(random_subdist(rng, cod))).unwrap()
}

pub fn random_subdist<R: Rng>(rng: &mut R, space: &[Value]) -> SubDist {
    let weights: Vec<i64> = space.iter().map(|_| if rng.gen_bool(0.3) { 0 } else { rng.gen_range(1..=5) }).collect();
    let total: i64 = weights.iter().sum();
    let denom = total + rng.gen_range(0..=3);
    if denom == 0 {
        return SubDist::zero(space.to_vec());
    }
    SubDist::new(space.to_vec(), weights.iter().map(|w| rat(*w, denom)).collect()).unwrap()
}

pub fn named_space(prefix: &str, n: usize) -> Vec<Value> {
    (0..n).map(|i| Value::Elem(format!("{prefix}{i}"))).collect()
}

pub fn fin_eval(d: &Decls, ctx: &finprob::FinCtx, t: &PTerm) -> SubKernel {
    d.eval_term(ctx, t, finprob::Mode::Psl).unwrap_or_else(|e| panic!("{t}: {e}"))
}

/// `rank` orthonormal columns in `R^n` scaled by factors in [0.5, 2]: a
/// covariance factor whose nonzero spectrum stays far from the rank cutoff.
fn spread_factor<R: Rng>(rng: &mut R, n: usize, rank: usize) -> Matrix {
    let q = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
    let d = Matrix::from_diagonal(&Vector::from_fn(rank, |_, _| rng.gen_range(0.5..2.0)));
    q.columns(0, rank) * d
}

/// Random state of random rank, well conditioned on its support.
pub fn any_state<R: Rng>(rng: &mut R, n: usize) -> GaussState {
    let rank = rng.gen_range(0..=n);
    let mean = Vector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
    GaussState::new(mean, PsdMatrix::gram(&spread_factor(rng, n, rank))).unwrap()
}

/// Random map with noise of random rank, well conditioned on its support.
pub fn any_map<R: Rng>(rng: &mut R, dom: usize, cod: usize) -> exactcond::gauss::GaussMap {
    let rank = rng.gen_range(0..=cod);
    let a = Matrix::from_fn(cod, dom, |_, _| rng.gen_range(-2.0..2.0));
    let b = Vector::from_fn(cod, |_, _| rng.gen_range(-2.0..2.0));
    exactcond::gauss::GaussMap::new(a, b, PsdMatrix::gram(&spread_factor(rng, cod, rank))).unwrap()
}

/// Condition number over the singular values that are not roundoff. A value
/// close to the pseudoinverse cutoff makes this huge, which is the regime
/// where fixed float tolerances and rank decisions stop being meaningful.
pub fn retained_condition(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.clone().singular_values();
    let top = sv.iter().fold(0.0f64, |a, x| a.max(*x));
    let low = sv.iter().filter(|x| **x > 1e-12 * top.max(1.0)).fold(f64::INFINITY, |a, x| a.min(*x));
    if low.is_finite() { top / low } else { 1.0 }
}
