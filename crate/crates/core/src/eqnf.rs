//! Algebraic form of programs and normal forms for the equational theory.
//!
//! An [`AlgTerm`] over free variables `x` is `ν z. (L (x, z) = c) r[R (x, z) + d]`
//! or `⊥`: latent binders hoisted to the front, conditions collected into a
//! row system and an affine return. Rewrites implement the axioms one step at
//! a time; the normalizers drive them.

use std::fmt;

use crate::cond::Channel;
use crate::denot::denote;
use crate::error::{Error, Result};
use crate::gauss::{fmt_num, write_mat, write_vec, GaussMap};
use crate::lang::{typecheck, Ctx, Term, Ty, DISCARD};
use crate::numlin::{
    mat_approx_eq, pivot_columns, rank_split, rref_transform, select, select_vec,
    vec_approx_eq, Matrix, PsdMatrix, Vector, CUTOFF, DEFAULT_TOL,
};

#[derive(Clone, Debug, PartialEq)]
pub enum Ret {
    /// `r[R (x, z) + d]`.
    Return { lin: Matrix, offset: Vector },
    Fail,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlgTerm {
    pub free_vars: usize,
    pub latents: usize,
    /// One condition per row: `rows (x, z) = rhs`.
    pub rows: Matrix,
    pub rhs: Vector,
    pub ret: Ret,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Axiom {
    /// Drop the unused latent `j`.
    Disc(usize),
    /// Change latent coordinates by an orthogonal matrix: `z ↦ U z`.
    Orth(Matrix),
    /// Swap conditions `i` and `j`.
    C1(usize, usize),
    /// Conditions commute past `ν`; already the case in hoisted form.
    C2,
    /// Under a failing return, drop condition `i`.
    C3(usize),
    /// Drop the trivial condition `0 = 0` at row `i`.
    Taut(usize),
    /// A condition `0 = c` with `c ≠ 0` at row `i` fails.
    Fail(usize),
    /// Add `k · (c_i − ℓ_i·w)`, which is zero under condition `i`, to the return.
    Subs(usize, Vector),
    /// Condition `i` reads `α z_j = c`: substitute `z_j = c/α` and drop both.
    Init(usize, usize),
    /// Replace the condition system `(L, c)` by `(S L, S c)` for invertible `S`.
    Cong(Matrix),
}

/// `ν z. r[A z + c]` determined by `c` and `A Aᵀ`, or failure.
#[derive(Clone, Debug, PartialEq)]
pub enum ClosedNF {
    Bottom,
    Form { c: Vector, m: PsdMatrix },
}

/// `ν z. A x =:= B z + c` with `A` in reduced echelon form, determined by
/// `A`, `c` and `B Bᵀ`, or failure.
#[derive(Clone, Debug, PartialEq)]
pub enum EffectNF {
    Bottom,
    Form { a: Matrix, c: Vector, m: PsdMatrix },
}

impl ClosedNF {
    pub fn approx_eq(&self, other: &ClosedNF, tol: f64) -> bool {
        match (self, other) {
            (ClosedNF::Bottom, ClosedNF::Bottom) => true,
            (ClosedNF::Form { c, m }, ClosedNF::Form { c: c2, m: m2 }) => {
                vec_approx_eq(c, c2, tol) && mat_approx_eq(m.as_matrix(), m2.as_matrix(), tol)
            }
            _ => false,
        }
    }
}

impl EffectNF {
    pub fn approx_eq(&self, other: &EffectNF, tol: f64) -> bool {
        match (self, other) {
            (EffectNF::Bottom, EffectNF::Bottom) => true,
            (EffectNF::Form { a, c, m }, EffectNF::Form { a: a2, c: c2, m: m2 }) => {
                mat_approx_eq(a, a2, tol)
                    && vec_approx_eq(c, c2, tol)
                    && mat_approx_eq(m.as_matrix(), m2.as_matrix(), tol)
            }
            _ => false,
        }
    }
}

impl AlgTerm {
    pub fn new(free_vars: usize, latents: usize, rows: Matrix, rhs: Vector, ret: Ret) -> Result<Self> {
        let w = free_vars + latents;
        if rows.ncols() != w || rows.nrows() != rhs.len() {
            return Err(Error::Dimension(format!(
                "condition system {}x{} with {} right-hand sides over {} variables",
                rows.nrows(),
                rows.ncols(),
                rhs.len(),
                w
            )));
        }
        if let Ret::Return { lin, offset } = &ret {
            if lin.ncols() != w || lin.nrows() != offset.len() {
                return Err(Error::Dimension("return does not match the variables".into()));
            }
        }
        Ok(AlgTerm { free_vars, latents, rows, rhs, ret })
    }

    pub fn width(&self) -> usize {
        self.free_vars + self.latents
    }

    pub fn conditions(&self) -> usize {
        self.rows.nrows()
    }

    pub fn outputs(&self) -> Option<usize> {
        match &self.ret {
            Ret::Return { offset, .. } => Some(offset.len()),
            Ret::Fail => None,
        }
    }

    /// The channel `x ⊢ ν z. (L (x, z) = c) r[R (x, z) + d]`, with `z`
    /// standard normal.
    pub fn to_channel(&self, outputs: usize) -> Channel {
        let (m, p, k) = (self.free_vars, self.latents, self.conditions());
        match &self.ret {
            Ret::Fail => {
                // 0 =:= 1 followed by any output.
                let f = GaussMap::deterministic(Matrix::zeros(outputs + 1, m), Vector::zeros(outputs + 1))
                    .expect("shapes agree");
                Channel::new(outputs, f, Vector::from_element(1, 1.0)).expect("shapes agree")
            }
            Ret::Return { lin, offset } => {
                let n = offset.len();
                let xs: Vec<usize> = (0..m).collect();
                let zs: Vec<usize> = (m..m + p).collect();
                let ret_rows: Vec<usize> = (0..n).collect();
                let cond_rows: Vec<usize> = (0..k).collect();
                let mut a = Matrix::zeros(n + k, m);
                a.view_mut((0, 0), (n, m)).copy_from(&select(lin, &ret_rows, &xs));
                a.view_mut((n, 0), (k, m)).copy_from(&select(&self.rows, &cond_rows, &xs));
                let mut b = Matrix::zeros(n + k, p);
                b.view_mut((0, 0), (n, p)).copy_from(&select(lin, &ret_rows, &zs));
                b.view_mut((n, 0), (k, p)).copy_from(&select(&self.rows, &cond_rows, &zs));
                let mut off = Vector::zeros(n + k);
                off.rows_mut(0, n).copy_from(offset);
                let f = GaussMap::new(a, off, PsdMatrix::gram(&b)).expect("shapes agree");
                Channel::new(n, f, self.rhs.clone()).expect("shapes agree")
            }
        }
    }

    fn latent_col(&self, j: usize) -> usize {
        self.free_vars + j
    }

    fn drop_row(&mut self, i: usize) {
        let keep: Vec<usize> = (0..self.conditions()).filter(|&r| r != i).collect();
        let cols: Vec<usize> = (0..self.width()).collect();
        self.rows = select(&self.rows, &keep, &cols);
        self.rhs = select_vec(&self.rhs, &keep);
    }

    fn drop_latent(&mut self, j: usize) {
        let col = self.latent_col(j);
        self.rows = self.rows.clone().remove_column(col);
        if let Ret::Return { lin, .. } = &mut self.ret {
            *lin = lin.clone().remove_column(col);
        }
        self.latents -= 1;
    }

    fn row_is_zero(&self, i: usize) -> bool {
        let scale = self.rows.row(i).iter().fold(0.0f64, |a, x| a.max(x.abs()));
        scale <= CUTOFF
    }

    fn check_row(&self, i: usize) -> Result<()> {
        if i >= self.conditions() {
            return Err(Error::IndexOutOfRange { index: i, dim: self.conditions() });
        }
        Ok(())
    }

    /// Applies one axiom left to right.
    pub fn rewrite(&self, axiom: &Axiom) -> Result<AlgTerm> {
        self.rewrite_tol(axiom, DEFAULT_TOL)
    }

    pub fn rewrite_tol(&self, axiom: &Axiom, tol: f64) -> Result<AlgTerm> {
        let mut t = self.clone();
        match axiom {
            Axiom::Disc(j) => {
                if *j >= self.latents {
                    return Err(Error::IndexOutOfRange { index: *j, dim: self.latents });
                }
                let col = self.latent_col(*j);
                let used_in_rows = self.rows.column(col).iter().any(|&v| v != 0.0);
                let used_in_ret = match &self.ret {
                    Ret::Return { lin, .. } => lin.column(col).iter().any(|&v| v != 0.0),
                    Ret::Fail => false,
                };
                if used_in_rows || used_in_ret {
                    return Err(Error::NotApplicable(format!("latent {j} is used")));
                }
                t.drop_latent(*j);
            }
            Axiom::Orth(u) => {
                let p = self.latents;
                if u.shape() != (p, p) {
                    return Err(Error::Dimension(format!("ORTH needs a {p}x{p} matrix")));
                }
                let gram = u * u.transpose();
                if !mat_approx_eq(&gram, &Matrix::identity(p, p), 1e-9) {
                    return Err(Error::NotApplicable("matrix is not orthogonal".into()));
                }
                let m = self.free_vars;
                let apply = |mat: &mut Matrix| {
                    let block = mat.columns(m, p) * u;
                    mat.columns_mut(m, p).copy_from(&block);
                };
                apply(&mut t.rows);
                if let Ret::Return { lin, .. } = &mut t.ret {
                    apply(lin);
                }
            }
            Axiom::C1(i, j) => {
                self.check_row(*i)?;
                self.check_row(*j)?;
                t.rows.swap_rows(*i, *j);
                t.rhs.swap_rows(*i, *j);
            }
            Axiom::C2 => {}
            Axiom::C3(i) => {
                self.check_row(*i)?;
                if self.ret != Ret::Fail {
                    return Err(Error::NotApplicable("return is not failure".into()));
                }
                t.drop_row(*i);
            }
            Axiom::Taut(i) | Axiom::Fail(i) => {
                self.check_row(*i)?;
                if !self.row_is_zero(*i) {
                    return Err(Error::NotApplicable(format!("condition {i} mentions variables")));
                }
                let trivial = self.rhs[*i].abs() <= tol;
                match (axiom, trivial) {
                    (Axiom::Taut(_), true) => t.drop_row(*i),
                    (Axiom::Fail(_), false) => {
                        t.drop_row(*i);
                        t.ret = Ret::Fail;
                    }
                    (Axiom::Taut(_), false) => {
                        return Err(Error::NotApplicable(format!("condition {i} is inconsistent")))
                    }
                    _ => return Err(Error::NotApplicable(format!("condition {i} is trivial"))),
                }
            }
            Axiom::Subs(i, k) => {
                self.check_row(*i)?;
                match &mut t.ret {
                    Ret::Fail => return Err(Error::NotApplicable("return is failure".into())),
                    Ret::Return { lin, offset } => {
                        if k.len() != offset.len() {
                            return Err(Error::Dimension("SUBS weights must match outputs".into()));
                        }
                        let row = self.rows.row(*i).clone_owned();
                        *lin -= k * row;
                        *offset += k * self.rhs[*i];
                    }
                }
            }
            Axiom::Init(i, j) => {
                self.check_row(*i)?;
                if *j >= self.latents {
                    return Err(Error::IndexOutOfRange { index: *j, dim: self.latents });
                }
                let col = self.latent_col(*j);
                let row = self.rows.row(*i);
                let alpha = row[col];
                let others = row.iter().enumerate().any(|(c, &v)| c != col && v != 0.0);
                if alpha == 0.0 || others {
                    return Err(Error::NotApplicable(format!(
                        "condition {i} is not of the form α·z{} = c",
                        j + 1
                    )));
                }
                let value = self.rhs[*i] / alpha;
                t.drop_row(*i);
                // Substitute z_j = value in the remaining rows and the return.
                let col_vals = t.rows.column(col).clone_owned();
                t.rhs -= col_vals * value;
                if let Ret::Return { lin, offset } = &mut t.ret {
                    let c = lin.column(col).clone_owned();
                    *offset += c * value;
                }
                t.rows.column_mut(col).fill(0.0);
                if let Ret::Return { lin, .. } = &mut t.ret {
                    lin.column_mut(col).fill(0.0);
                }
                t.drop_latent(*j);
            }
            Axiom::Cong(s) => {
                let k = self.conditions();
                if s.shape() != (k, k) {
                    return Err(Error::Dimension(format!("CONG needs a {k}x{k} matrix")));
                }
                let (_, _, rank) = rank_split(s);
                if rank < k {
                    return Err(Error::NotApplicable("matrix is not invertible".into()));
                }
                t.rows = s * &self.rows;
                t.rhs = s * &self.rhs;
            }
        }
        Ok(t)
    }

    /// Sets entries within roundoff of zero to exactly zero (affine algebra on
    /// values; no axiom involved).
    fn snap(&mut self) {
        let clean = |m: &mut Matrix| {
            for v in m.iter_mut() {
                if v.abs() <= CUTOFF {
                    *v = 0.0;
                }
            }
        };
        clean(&mut self.rows);
        if let Ret::Return { lin, .. } = &mut self.ret {
            clean(lin);
        }
    }

    /// Drops every unused latent with DISC.
    fn discard_unused(mut self) -> Result<AlgTerm> {
        let mut j = self.latents;
        while j > 0 {
            j -= 1;
            if let Ok(t) = self.rewrite(&Axiom::Disc(j)) {
                self = t;
            }
        }
        Ok(self)
    }

    /// Brings the latent-only conditions `rows_idx` into identity form with
    /// ORTH and CONG, eliminates them with INIT, then clears the rest with
    /// TAUT or FAIL. Returns `None` on failure.
    fn eliminate_latent_block(mut self, first: usize, tol: f64) -> Result<Option<AlgTerm>> {
        let k = self.conditions();
        let p = self.latents;
        let m = self.free_vars;
        let block_rows: Vec<usize> = (first..k).collect();
        let zs: Vec<usize> = (m..m + p).collect();
        let block = select(&self.rows, &block_rows, &zs);
        let (s, t_orth, r) = rank_split(&block);
        // w = T z, so z = Tᵀ w.
        self = self.rewrite(&Axiom::Orth(t_orth.transpose()))?;
        let mut full = Matrix::identity(k, k);
        full.view_mut((first, first), (k - first, k - first)).copy_from(&s);
        self = self.rewrite(&Axiom::Cong(full))?;
        self.snap();
        for i in (0..r).rev() {
            self = self.rewrite(&Axiom::Init(first + i, i))?;
            self.snap();
        }
        // Remaining block rows are zero on the latents and, being in the
        // block, on the free variables as well.
        while self.conditions() > first {
            let i = self.conditions() - 1;
            if self.rhs[i].abs() <= tol {
                self = self.rewrite_tol(&Axiom::Taut(i), tol)?;
            } else {
                return Ok(None);
            }
        }
        Ok(Some(self))
    }
}

pub fn normalize_closed(a: &AlgTerm) -> Result<ClosedNF> {
    normalize_closed_tol(a, DEFAULT_TOL)
}

pub fn normalize_closed_tol(a: &AlgTerm, tol: f64) -> Result<ClosedNF> {
    if a.free_vars != 0 {
        return Err(Error::Invalid("closed normal form needs a term without free variables".into()));
    }
    if a.ret == Ret::Fail {
        return Ok(ClosedNF::Bottom);
    }
    let Some(t) = a.clone().eliminate_latent_block(0, tol)? else {
        return Ok(ClosedNF::Bottom);
    };
    let t = t.discard_unused()?;
    match t.ret {
        Ret::Return { lin, offset } => Ok(ClosedNF::Form { c: offset, m: PsdMatrix::gram(&lin) }),
        Ret::Fail => Ok(ClosedNF::Bottom),
    }
}

pub fn normalize_effect(a: &AlgTerm) -> Result<EffectNF> {
    normalize_effect_tol(a, DEFAULT_TOL)
}

pub fn normalize_effect_tol(a: &AlgTerm, tol: f64) -> Result<EffectNF> {
    if a.outputs().is_some_and(|n| n != 0) {
        return Err(Error::Invalid("effect normal form needs a term without outputs".into()));
    }
    if a.ret == Ret::Fail {
        return Ok(EffectNF::Bottom);
    }
    let m = a.free_vars;
    let k = a.conditions();
    let xs: Vec<usize> = (0..m).collect();
    let all: Vec<usize> = (0..k).collect();
    let (r, s) = rref_transform(&select(&a.rows, &all, &xs));
    let rank = pivot_columns(&r).len();
    let mut t = a.rewrite(&Axiom::Cong(s))?;
    // Use the exact echelon form for the free-variable block.
    t.rows.view_mut((0, 0), (k, m)).copy_from(&r);
    t.snap();
    let Some(t) = t.eliminate_latent_block(rank, tol)? else {
        return Ok(EffectNF::Bottom);
    };
    let t = t.discard_unused()?;
    let top: Vec<usize> = (0..rank).collect();
    let zs: Vec<usize> = (m..m + t.latents).collect();
    let a_nf = select(&t.rows, &top, &xs);
    let b = select(&t.rows, &top, &zs);
    Ok(EffectNF::Form { a: a_nf, c: t.rhs.clone(), m: PsdMatrix::gram(&b) })
}

// ---------------------------------------------------------------------------
// Translation from terms

/// An affine form over free variables and (a growing list of) latents.
#[derive(Clone, Debug)]
struct Aff {
    x: Vector,
    z: Vec<f64>,
    c: f64,
}

impl Aff {
    fn constant(m: usize, c: f64) -> Aff {
        Aff { x: Vector::zeros(m), z: vec![], c }
    }

    fn zi(&self, j: usize) -> f64 {
        self.z.get(j).copied().unwrap_or(0.0)
    }

    fn add(&self, o: &Aff) -> Aff {
        let p = self.z.len().max(o.z.len());
        Aff { x: &self.x + &o.x, z: (0..p).map(|j| self.zi(j) + o.zi(j)).collect(), c: self.c + o.c }
    }

    fn scale(&self, a: f64) -> Aff {
        Aff { x: &self.x * a, z: self.z.iter().map(|v| v * a).collect(), c: self.c * a }
    }

    fn row(&self, p: usize) -> Vec<f64> {
        self.x.iter().cloned().chain((0..p).map(|j| self.zi(j))).collect()
    }
}

struct Hoist {
    m: usize,
    latents: usize,
    conds: Vec<Aff>,
    env: Vec<(String, Vec<Aff>, Ty)>,
}

impl Hoist {
    fn eval(&mut self, t: &Term) -> Result<(Vec<Aff>, Ty)> {
        let m = self.m;
        match t {
            Term::Var(x) => self
                .env
                .iter()
                .rev()
                .find(|(y, ..)| y == x)
                .map(|(_, v, ty)| (v.clone(), ty.clone()))
                .ok_or_else(|| Error::Type(format!("unbound variable `{x}`"))),
            Term::Const(c) => Ok((vec![Aff::constant(m, *c)], Ty::R)),
            Term::UnitVal => Ok((vec![], Ty::Unit)),
            Term::Normal => {
                let mut a = Aff::constant(m, 0.0);
                a.z = vec![0.0; self.latents + 1];
                a.z[self.latents] = 1.0;
                self.latents += 1;
                Ok((vec![a], Ty::R))
            }
            Term::Add(a, b) => {
                let (va, _) = self.eval(a)?;
                let (vb, _) = self.eval(b)?;
                Ok((vec![va[0].add(&vb[0])], Ty::R))
            }
            Term::Scale(al, a) => {
                let (va, _) = self.eval(a)?;
                Ok((vec![va[0].scale(*al)], Ty::R))
            }
            Term::Pair(a, b) => {
                let (mut va, ta) = self.eval(a)?;
                let (vb, tb) = self.eval(b)?;
                va.extend(vb);
                Ok((va, Ty::pair(ta, tb)))
            }
            Term::Cond(a, b) => {
                let (va, _) = self.eval(a)?;
                let (vb, _) = self.eval(b)?;
                self.conds.push(va[0].add(&vb[0].scale(-1.0)));
                Ok((vec![], Ty::Unit))
            }
            Term::Let(x, e, body) => {
                let (ve, te) = self.eval(e)?;
                if x == DISCARD {
                    return self.eval(body);
                }
                self.env.push((x.clone(), ve, te));
                let r = self.eval(body);
                self.env.pop();
                r
            }
            Term::LetPair(x, y, e, body) => {
                let (ve, te) = self.eval(e)?;
                let Ty::Pair(tx, ty) = te else {
                    return Err(Error::Type(format!("`{e}` is not a pair")));
                };
                let split = tx.dim();
                self.env.push((x.clone(), ve[..split].to_vec(), *tx));
                self.env.push((y.clone(), ve[split..].to_vec(), *ty));
                let r = self.eval(body);
                self.env.pop();
                self.env.pop();
                r
            }
        }
    }
}

/// Hoists binders and conditions, following the evaluation order of the
/// operational semantics so latents are numbered identically.
pub fn to_alg(ctx: &Ctx, t: &Term) -> Result<AlgTerm> {
    typecheck(ctx, t)?;
    let m = ctx.dim();
    let mut env = Vec::new();
    for ((name, range), (_, ty)) in ctx.layout().into_iter().zip(&ctx.0) {
        let comps = range
            .map(|i| {
                let mut a = Aff::constant(m, 0.0);
                a.x[i] = 1.0;
                a
            })
            .collect();
        env.push((name, comps, ty.clone()));
    }
    let mut h = Hoist { m, latents: 0, conds: vec![], env };
    let (ret, _) = h.eval(t)?;
    let p = h.latents;
    let w = m + p;
    let rows = Matrix::from_fn(h.conds.len(), w, |i, j| h.conds[i].row(p)[j]);
    // a = 0 with a = ℓ·w + k becomes ℓ·w = −k.
    let rhs = Vector::from_iterator(h.conds.len(), h.conds.iter().map(|a| -a.c));
    let lin = Matrix::from_fn(ret.len(), w, |i, j| ret[i].row(p)[j]);
    let offset = Vector::from_iterator(ret.len(), ret.iter().map(|a| a.c));
    AlgTerm::new(m, p, rows, rhs, Ret::Return { lin, offset })
}

/// Decides equivalence of two terms in the same context: closed terms by
/// their closed normal form, effects by their effect normal form, anything
/// else by canonical forms of the denoted channels.
pub fn alg_equiv(ctx: &Ctx, t1: &Term, t2: &Term) -> Result<bool> {
    alg_equiv_tol(ctx, t1, t2, DEFAULT_TOL)
}

pub fn alg_equiv_tol(ctx: &Ctx, t1: &Term, t2: &Term, tol: f64) -> Result<bool> {
    let ty1 = typecheck(ctx, t1)?;
    let ty2 = typecheck(ctx, t2)?;
    if ty1 != ty2 {
        return Err(Error::Type(format!("terms have types {ty1} and {ty2}")));
    }
    let a1 = to_alg(ctx, t1)?;
    let a2 = to_alg(ctx, t2)?;
    if ctx.dim() == 0 {
        return Ok(normalize_closed_tol(&a1, tol)?.approx_eq(&normalize_closed_tol(&a2, tol)?, tol));
    }
    if ty1.dim() == 0 {
        return Ok(normalize_effect_tol(&a1, tol)?.approx_eq(&normalize_effect_tol(&a2, tol)?, tol));
    }
    denote(ctx, t1)?.channel.equiv_tol(&denote(ctx, t2)?.channel, tol)
}

// ---------------------------------------------------------------------------
// Printing

fn var_name(m: usize, i: usize) -> String {
    if i < m {
        format!("x{}", i + 1)
    } else {
        format!("z{}", i - m + 1)
    }
}

fn affine(row: &[f64], c: f64, m: usize) -> String {
    let mut parts: Vec<String> = Vec::new();
    for (i, &v) in row.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let name = var_name(m, i);
        let term = if v == 1.0 {
            name
        } else if v == -1.0 {
            format!("-{name}")
        } else {
            format!("{}*{name}", fmt_num(v))
        };
        parts.push(term);
    }
    if c != 0.0 || parts.is_empty() {
        parts.push(fmt_num(c));
    }
    parts.join(" + ").replace("+ -", "- ")
}

impl fmt::Display for AlgTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.free_vars;
        if self.latents > 0 {
            let zs: Vec<String> = (0..self.latents).map(|j| var_name(m, m + j)).collect();
            write!(f, "ν {}. ", zs.join(" "))?;
        }
        for i in 0..self.conditions() {
            let row: Vec<f64> = self.rows.row(i).iter().cloned().collect();
            write!(f, "({} =:= {}) ", affine(&row, 0.0, m), fmt_num(self.rhs[i]))?;
        }
        match &self.ret {
            Ret::Fail => write!(f, "⊥"),
            Ret::Return { lin, offset } => {
                let outs: Vec<String> = (0..offset.len())
                    .map(|i| {
                        let row: Vec<f64> = lin.row(i).iter().cloned().collect();
                        affine(&row, offset[i], m)
                    })
                    .collect();
                write!(f, "r[{}]", outs.join(", "))
            }
        }
    }
}

impl fmt::Display for ClosedNF {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClosedNF::Bottom => write!(f, "closed ⊥"),
            ClosedNF::Form { c, m } => {
                write!(f, "closed ν z. r[A z + c]\n  c = ")?;
                write_vec(f, c)?;
                write!(f, "\n  A Aᵀ = ")?;
                write_mat(f, m.as_matrix())
            }
        }
    }
}

impl fmt::Display for EffectNF {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EffectNF::Bottom => write!(f, "effect ⊥"),
            EffectNF::Form { a, c, m } => {
                write!(f, "effect ν z. A x =:= B z + c\n  A = ")?;
                write_mat(f, a)?;
                write!(f, "\n  c = ")?;
                write_vec(f, c)?;
                write!(f, "\n  B Bᵀ = ")?;
                write_mat(f, m.as_matrix())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse;
    use nalgebra::{dmatrix, dvector};

    fn alg(ctx: &Ctx, s: &str) -> AlgTerm {
        to_alg(ctx, &parse(s).unwrap()).unwrap()
    }

    #[test]
    fn hoisting() {
        let a = alg(&Ctx::new(), "let x = normal() in x");
        assert_eq!(a.latents, 1);
        assert_eq!(a.conditions(), 0);
        assert_eq!(a.ret, Ret::Return { lin: dmatrix![1.0], offset: dvector![0.0] });

        let a = alg(&Ctx::new(), "let (x, y) = (normal(), normal()) in x =:= y; (x, y)");
        assert_eq!(a.latents, 2);
        assert_eq!(a.rows, dmatrix![1.0, -1.0]);
        assert_eq!(a.rhs, dvector![0.0]);

        let nested = alg(&Ctx::new(), "let b = (let a = normal() in a + 1) in b");
        let flat = alg(&Ctx::new(), "let a = normal() in let b = a + 1 in b");
        assert_eq!(nested, flat);
    }

    #[test]
    fn axiom_examples() {
        // INIT: ν x. (x =:= c) r[x] → r[c]
        let a = AlgTerm::new(0, 1, dmatrix![1.0], dvector![3.0], Ret::Return { lin: dmatrix![1.0], offset: dvector![0.0] }).unwrap();
        let b = a.rewrite(&Axiom::Init(0, 0)).unwrap();
        assert_eq!(b.latents, 0);
        assert_eq!(b.ret, Ret::Return { lin: Matrix::zeros(1, 0), offset: dvector![3.0] });
        // TAUT
        let a = alg(&Ctx::reals(&["x"]), "x =:= x");
        let b = a.rewrite(&Axiom::Taut(0)).unwrap();
        assert_eq!(b.conditions(), 0);
        // FAIL
        let a = alg(&Ctx::new(), "0 =:= 1");
        assert_eq!(a.rewrite(&Axiom::Fail(0)).unwrap().ret, Ret::Fail);
        assert!(a.rewrite(&Axiom::Taut(0)).is_err());
        // ORTH rejects non-orthogonal matrices
        let a = alg(&Ctx::new(), "normal()");
        assert!(matches!(a.rewrite(&Axiom::Orth(dmatrix![2.0])), Err(Error::NotApplicable(_))));
        assert!(matches!(a.rewrite(&Axiom::Disc(0)), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn closed_forms() {
        let a = alg(&Ctx::new(), "let x = normal() in let y = normal() in x + y");
        match normalize_closed(&a).unwrap() {
            ClosedNF::Form { c, m } => {
                assert!(vec_approx_eq(&c, &dvector![0.0], 1e-12));
                assert!(mat_approx_eq(m.as_matrix(), &dmatrix![2.0], 1e-12));
            }
            ClosedNF::Bottom => panic!("feasible"),
        }
        let a = alg(&Ctx::new(), "0 =:= 1; ()");
        assert_eq!(normalize_closed(&a).unwrap(), ClosedNF::Bottom);
        let a = alg(&Ctx::new(), "let (x, y) = (normal(), normal()) in x =:= y; (x, y)");
        match normalize_closed(&a).unwrap() {
            ClosedNF::Form { c, m } => {
                assert!(vec_approx_eq(&c, &dvector![0.0, 0.0], 1e-12));
                assert!(mat_approx_eq(m.as_matrix(), &dmatrix![0.5, 0.5; 0.5, 0.5], 1e-12));
            }
            ClosedNF::Bottom => panic!("feasible"),
        }
    }

    #[test]
    fn effect_forms() {
        let x = Ctx::reals(&["x"]);
        match normalize_effect(&alg(&x, "let z = normal() in x =:= z")).unwrap() {
            EffectNF::Form { a, c, m } => {
                assert_eq!(a, dmatrix![1.0]);
                assert!(vec_approx_eq(&c, &dvector![0.0], 1e-12));
                assert!(mat_approx_eq(m.as_matrix(), &dmatrix![1.0], 1e-12));
            }
            EffectNF::Bottom => panic!("feasible"),
        }
        match normalize_effect(&alg(&x, "x =:= x")).unwrap() {
            EffectNF::Form { a, .. } => assert_eq!(a.nrows(), 0),
            EffectNF::Bottom => panic!("feasible"),
        }
        let xy = Ctx::reals(&["x", "y"]);
        match normalize_effect(&alg(&xy, "x =:= y; y =:= x")).unwrap() {
            EffectNF::Form { a, c, m } => {
                assert_eq!(a, dmatrix![1.0, -1.0]);
                assert!(vec_approx_eq(&c, &dvector![0.0], 1e-12));
                assert!(m.as_matrix().iter().all(|v| v.abs() < 1e-12));
            }
            EffectNF::Bottom => panic!("feasible"),
        }
        assert_eq!(normalize_effect(&alg(&x, "x =:= 0; x =:= 1")).unwrap(), EffectNF::Bottom);
    }

    #[test]
    fn equivalence() {
        let e = Ctx::new();
        let s = 1.0 / 2f64.sqrt();
        let lhs = parse("let x = normal() in let y = normal() in x =:= y; (x, y)").unwrap();
        let rhs = parse(&format!("let x = normal() in ({s:?} * x, {s:?} * x)")).unwrap();
        assert!(alg_equiv(&e, &lhs, &rhs).unwrap());
        let sum = parse("let x = normal() in let y = normal() in x + y").unwrap();
        let scaled = parse(&format!("let y = normal() in {:?} * y", 2f64.sqrt())).unwrap();
        assert!(alg_equiv(&e, &sum, &scaled).unwrap());
        let x = Ctx::reals(&["x"]);
        assert!(!alg_equiv(&x, &parse("x =:= 0").unwrap(), &parse("x =:= 1").unwrap()).unwrap());
        assert!(alg_equiv(&x, &parse("x =:= 0").unwrap(), &parse("2 * x =:= 0").unwrap()).unwrap());
        assert!(alg_equiv(&x, &parse("x + normal()").unwrap(), &parse("x + normal()").unwrap()).unwrap());
        assert!(alg_equiv(&x, &parse("x").unwrap(), &parse("()").unwrap()).is_err());
    }

    #[test]
    fn printing() {
        let a = alg(&Ctx::reals(&["x"]), "let z = normal() in x =:= z; x + 1");
        assert_eq!(a.to_string(), "ν z1. (x1 - z1 =:= 0) r[x1 + 1]");
    }
}
