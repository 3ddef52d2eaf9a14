//! Exact finite probability: subdistributions and subprobability kernels over
//! explicit finite sets, a small first-order language over them, and the
//! projective (up to scalar) view of kernels.
//!
//! Everything is exact rational arithmetic.

use std::collections::BTreeMap;
use std::fmt;

use num::{BigInt, BigRational, One, Signed, Zero};

use crate::error::{Error, ParseError, Result};
use crate::lang::{Cursor, Tok};

pub type Rat = BigRational;

pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

/// Parses `3`, `0.25` or `2/5` exactly.
pub fn parse_rat(s: &str) -> Option<Rat> {
    if let Some((n, d)) = s.split_once('/') {
        let n = parse_rat(n.trim())?;
        let d = parse_rat(d.trim())?;
        return if d.is_zero() { None } else { Some(n / d) };
    }
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits: BigInt = format!("{int}{frac}").parse().ok()?;
    Some(Rat::new(digits, BigInt::from(10).pow(frac.len() as u32)))
}

// ---------------------------------------------------------------------------
// Values and types

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Unit,
    Bool(bool),
    Elem(String),
    Pair(Box<Value>, Box<Value>),
}

impl Value {
    pub fn pair(a: Value, b: Value) -> Value {
        Value::Pair(Box::new(a), Box::new(b))
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Unit => write!(f, "()"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Elem(e) => write!(f, "{e}"),
            Value::Pair(a, b) => write!(f, "({a}, {b})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FinTy {
    Unit,
    Bool,
    Named(String),
    Pair(Box<FinTy>, Box<FinTy>),
}

impl FinTy {
    pub fn pair(a: FinTy, b: FinTy) -> FinTy {
        FinTy::Pair(Box::new(a), Box::new(b))
    }
}

impl fmt::Display for FinTy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FinTy::Unit => write!(f, "unit"),
            FinTy::Bool => write!(f, "bool"),
            FinTy::Named(n) => write!(f, "{n}"),
            FinTy::Pair(a, b) => write!(f, "({a}, {b})"),
        }
    }
}

pub fn bool_space() -> Vec<Value> {
    vec![Value::Bool(false), Value::Bool(true)]
}

pub fn product_space(a: &[Value], b: &[Value]) -> Vec<Value> {
    a.iter().flat_map(|x| b.iter().map(move |y| Value::pair(x.clone(), y.clone()))).collect()
}

fn index_of(space: &[Value], v: &Value) -> Result<usize> {
    space
        .iter()
        .position(|w| w == v)
        .ok_or_else(|| Error::Invalid(format!("`{v}` is not in the outcome space")))
}

// ---------------------------------------------------------------------------
// Subdistributions

/// A finitely supported subdistribution over an ordered outcome space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubDist {
    space: Vec<Value>,
    mass: Vec<Rat>,
}

impl SubDist {
    pub fn new(space: Vec<Value>, mass: Vec<Rat>) -> Result<SubDist> {
        if space.len() != mass.len() {
            return Err(Error::Dimension(format!("{} outcomes, {} masses", space.len(), mass.len())));
        }
        if mass.iter().any(|m| m.is_negative()) {
            return Err(Error::Invalid("negative mass".into()));
        }
        if mass.iter().sum::<Rat>() > Rat::one() {
            return Err(Error::Invalid("total mass exceeds one".into()));
        }
        Ok(SubDist { space, mass })
    }

    pub fn zero(space: Vec<Value>) -> SubDist {
        let mass = vec![Rat::zero(); space.len()];
        SubDist { space, mass }
    }

    pub fn point(space: Vec<Value>, v: &Value) -> Result<SubDist> {
        let i = index_of(&space, v)?;
        let mut d = SubDist::zero(space);
        d.mass[i] = Rat::one();
        Ok(d)
    }

    pub fn uniform(space: Vec<Value>) -> SubDist {
        let n = space.len() as i64;
        let mass = vec![rat(1, n.max(1)); space.len()];
        SubDist { space, mass }
    }

    pub fn bernoulli(p: &Rat) -> Result<SubDist> {
        if p.is_negative() || *p > Rat::one() {
            return Err(Error::Invalid(format!("bernoulli parameter {p} is not in [0, 1]")));
        }
        Ok(SubDist { space: bool_space(), mass: vec![Rat::one() - p, p.clone()] })
    }

    pub fn space(&self) -> &[Value] {
        &self.space
    }

    pub fn masses(&self) -> &[Rat] {
        &self.mass
    }

    pub fn mass(&self, v: &Value) -> Rat {
        self.space.iter().position(|w| w == v).map(|i| self.mass[i].clone()).unwrap_or_else(Rat::zero)
    }

    pub fn total(&self) -> Rat {
        self.mass.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.mass.iter().all(Zero::is_zero)
    }

    pub fn scale(&self, s: &Rat) -> SubDist {
        SubDist { space: self.space.clone(), mass: self.mass.iter().map(|m| m * s).collect() }
    }

    /// Outcomes and masses with nonzero mass.
    pub fn support(&self) -> impl Iterator<Item = (&Value, &Rat)> {
        self.space.iter().zip(&self.mass).filter(|(_, m)| !m.is_zero())
    }
}

impl fmt::Display for SubDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.space.iter().zip(&self.mass).map(|(v, m)| format!("{v}: {m}")).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

/// Divides by the total mass; the zero subdistribution is returned unchanged.
pub fn normalize_dist(phi: &SubDist) -> SubDist {
    let z = phi.total();
    if z.is_zero() {
        phi.clone()
    } else {
        phi.scale(&(Rat::one() / z))
    }
}

/// Pointwise product of mass functions.
pub fn conditioning_product(p: &SubDist, q: &SubDist) -> Result<SubDist> {
    if p.space != q.space {
        return Err(Error::Dimension("subdistributions live on different spaces".into()));
    }
    Ok(SubDist { space: p.space.clone(), mass: p.mass.iter().zip(&q.mass).map(|(a, b)| a * b).collect() })
}

// ---------------------------------------------------------------------------
// Kernels

/// A subprobability kernel `p(y|x)`, stored as `p[y][x]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubKernel {
    dom: Vec<Value>,
    cod: Vec<Value>,
    p: Vec<Vec<Rat>>,
}

impl SubKernel {
    pub fn new(dom: Vec<Value>, cod: Vec<Value>, p: Vec<Vec<Rat>>) -> Result<SubKernel> {
        if p.len() != cod.len() || p.iter().any(|row| row.len() != dom.len()) {
            return Err(Error::Dimension(format!("kernel table is not {}x{}", cod.len(), dom.len())));
        }
        if p.iter().flatten().any(|v| v.is_negative()) {
            return Err(Error::Invalid("negative kernel entry".into()));
        }
        let k = SubKernel { dom, cod, p };
        if k.column_sums().iter().any(|s| *s > Rat::one()) {
            return Err(Error::Invalid("a kernel column sums to more than one".into()));
        }
        Ok(k)
    }

    /// Builds a kernel column by column from a function of the input.
    pub fn from_fn(dom: Vec<Value>, cod: Vec<Value>, mut f: impl FnMut(&Value) -> Result<SubDist>) -> Result<SubKernel> {
        let mut p = vec![vec![Rat::zero(); dom.len()]; cod.len()];
        for (j, x) in dom.iter().enumerate() {
            let d = f(x)?;
            if d.space != cod {
                return Err(Error::Dimension(format!("column for `{x}` has the wrong outcome space")));
            }
            for (i, m) in d.mass.into_iter().enumerate() {
                p[i][j] = m;
            }
        }
        SubKernel::new(dom, cod, p)
    }

    pub fn identity(space: Vec<Value>) -> SubKernel {
        let n = space.len();
        let p = (0..n).map(|i| (0..n).map(|j| if i == j { Rat::one() } else { Rat::zero() }).collect()).collect();
        SubKernel { dom: space.clone(), cod: space, p }
    }

    /// The kernel from the one-point space with the given column.
    pub fn state(d: &SubDist) -> SubKernel {
        SubKernel { dom: vec![Value::Unit], cod: d.space.clone(), p: d.mass.iter().map(|m| vec![m.clone()]).collect() }
    }

    /// Deletion `x ↦ δ_()`.
    pub fn discard(dom: Vec<Value>) -> SubKernel {
        let n = dom.len();
        SubKernel { dom, cod: vec![Value::Unit], p: vec![vec![Rat::one(); n]] }
    }

    pub fn dom(&self) -> &[Value] {
        &self.dom
    }

    pub fn cod(&self) -> &[Value] {
        &self.cod
    }

    pub fn entry(&self, y: usize, x: usize) -> &Rat {
        &self.p[y][x]
    }

    pub fn column(&self, x: usize) -> SubDist {
        SubDist { space: self.cod.clone(), mass: self.p.iter().map(|row| row[x].clone()).collect() }
    }

    pub fn column_sums(&self) -> Vec<Rat> {
        (0..self.dom.len()).map(|j| self.p.iter().map(|row| &row[j]).sum()).collect()
    }

    pub fn is_stochastic(&self) -> bool {
        self.column_sums().iter().all(One::is_one)
    }

    pub fn scale(&self, s: &Rat) -> SubKernel {
        SubKernel {
            dom: self.dom.clone(),
            cod: self.cod.clone(),
            p: self.p.iter().map(|row| row.iter().map(|v| v * s).collect()).collect(),
        }
    }

    /// `self ∘ f`: `Σ_y self(z|y) f(y|x)`.
    pub fn compose(&self, f: &SubKernel) -> Result<SubKernel> {
        if f.cod != self.dom {
            return Err(Error::Dimension("kernels do not compose".into()));
        }
        let p = self
            .p
            .iter()
            .map(|grow| {
                (0..f.dom.len())
                    .map(|x| grow.iter().zip(&f.p).map(|(g, frow)| g * &frow[x]).sum())
                    .collect()
            })
            .collect();
        Ok(SubKernel { dom: f.dom.clone(), cod: self.cod.clone(), p })
    }

    pub fn tensor(&self, g: &SubKernel) -> SubKernel {
        let dom = product_space(&self.dom, &g.dom);
        let cod = product_space(&self.cod, &g.cod);
        let (n1, n2) = (g.dom.len(), g.cod.len());
        let p = (0..cod.len())
            .map(|y| {
                (0..dom.len())
                    .map(|x| &self.p[y / n2][x / n1] * &g.p[y % n2][x % n1])
                    .collect()
            })
            .collect();
        SubKernel { dom, cod, p }
    }

    pub fn apply(&self, d: &SubDist) -> Result<SubDist> {
        let k = self.compose(&SubKernel::state(d))?;
        Ok(k.column(0))
    }
}

impl fmt::Display for SubKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (j, x) in self.dom.iter().enumerate() {
            if j > 0 {
                writeln!(f)?;
            }
            write!(f, "{x} => {}", self.column(j))?;
        }
        Ok(())
    }
}

/// Whether `p = λ q` for some rational `λ > 0`.
pub fn proportional(p: &SubKernel, q: &SubKernel) -> Result<bool> {
    if p.dom != q.dom || p.cod != q.cod {
        return Err(Error::Dimension("kernels have different shapes".into()));
    }
    let mut lambda: Option<Rat> = None;
    for (a, b) in p.p.iter().flatten().zip(q.p.iter().flatten()) {
        match (a.is_zero(), b.is_zero()) {
            (true, true) => {}
            (false, false) => {
                let r = a / b;
                match &lambda {
                    None => lambda = Some(r),
                    Some(l) if *l == r => {}
                    Some(_) => return Ok(false),
                }
            }
            _ => return Ok(false),
        }
    }
    Ok(true)
}

/// Discardability in the projective sense: `del ∘ p ∝ del`.
pub fn is_discardable(p: &SubKernel) -> bool {
    let del = SubKernel::discard(p.cod.clone());
    let lhs = del.compose(p).expect("shapes agree");
    proportional(&lhs, &SubKernel::discard(p.dom.clone())).expect("shapes agree")
}

// ---------------------------------------------------------------------------
// Channels with an observation

/// A stochastic kernel `q(y, k | x)` together with an observed `k₀`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FinChannel {
    pub dom: Vec<Value>,
    pub cod: Vec<Value>,
    pub obs_space: Vec<Value>,
    /// Over `cod × obs_space`, `y`-major.
    pub q: SubKernel,
    pub k0: usize,
}

impl FinChannel {
    pub fn new(dom: Vec<Value>, cod: Vec<Value>, obs_space: Vec<Value>, q: SubKernel, k0: usize) -> Result<FinChannel> {
        if q.dom != dom || q.cod != product_space(&cod, &obs_space) {
            return Err(Error::Dimension("channel kernel does not match its spaces".into()));
        }
        if !q.is_stochastic() {
            return Err(Error::Invalid("channel kernel is not stochastic".into()));
        }
        if k0 >= obs_space.len() {
            return Err(Error::IndexOutOfRange { index: k0, dim: obs_space.len() });
        }
        Ok(FinChannel { dom, cod, obs_space, q, k0 })
    }

    /// Posterior over `x, y` under `prior`, given `k = k₀`; `None` when the
    /// observation has probability zero.
    pub fn posterior(&self, prior: &SubDist) -> Result<Option<SubDist>> {
        if prior.space != self.dom {
            return Err(Error::Dimension("prior lives on the wrong space".into()));
        }
        let rho = subkernel_of_channel(self);
        Ok(joint_posterior(prior, &rho))
    }
}

/// Normalized `p(x) ρ(y|x)` over `x × y`, or `None` if it has no mass.
pub fn joint_posterior(prior: &SubDist, rho: &SubKernel) -> Option<SubDist> {
    let space = product_space(&rho.dom, &rho.cod);
    let mass = (0..rho.dom.len())
        .flat_map(|x| (0..rho.cod.len()).map(move |y| (x, y)))
        .map(|(x, y)| &prior.mass[x] * &rho.p[y][x])
        .collect();
    let joint = SubDist { space, mass };
    if joint.is_zero() {
        None
    } else {
        Some(normalize_dist(&joint))
    }
}

/// The likelihood `ρ(y|x) = q(y, k₀|x)`.
pub fn subkernel_of_channel(c: &FinChannel) -> SubKernel {
    let nk = c.obs_space.len();
    let p = (0..c.cod.len()).map(|y| c.q.p[y * nk + c.k0].clone()).collect();
    SubKernel { dom: c.dom.clone(), cod: c.cod.clone(), p }
}

/// Boolean observation `b = true` with `q(y, true|x) = ρ(y|x)`; the missing
/// mass of each column goes to `(first y, false)`.
pub fn channel_of_subkernel(rho: &SubKernel) -> Result<FinChannel> {
    if rho.cod.is_empty() {
        return Err(Error::Invalid("a channel needs a nonempty output space".into()));
    }
    let ks = bool_space();
    let cod = product_space(&rho.cod, &ks);
    let sums = rho.column_sums();
    let p = (0..cod.len())
        .map(|i| {
            let (y, b) = (i / 2, i % 2 == 1);
            (0..rho.dom.len())
                .map(|x| match (y, b) {
                    (_, true) => rho.p[y][x].clone(),
                    (0, false) => Rat::one() - &sums[x],
                    _ => Rat::zero(),
                })
                .collect()
        })
        .collect();
    let q = SubKernel::new(rho.dom.clone(), cod, p)?;
    FinChannel::new(rho.dom.clone(), rho.cod.clone(), ks, q, 1)
}

// ---------------------------------------------------------------------------
// Programs

#[derive(Clone, Debug, PartialEq)]
pub enum PTerm {
    Var(String),
    Lit(Value),
    Pair(Box<PTerm>, Box<PTerm>),
    Let(String, Box<PTerm>, Box<PTerm>),
    LetPair(String, String, Box<PTerm>, Box<PTerm>),
    /// Application of a declared kernel.
    App(String, Box<PTerm>),
    Bernoulli(Rat),
    Uniform(FinTy),
    Score(Rat),
    /// `a =:= b`: keeps mass iff the arguments agree.
    Cond(Box<PTerm>, Box<PTerm>),
    /// `a == b`: boolean test.
    Eq(Box<PTerm>, Box<PTerm>),
    If(Box<PTerm>, Box<PTerm>, Box<PTerm>),
}

pub const DISCARD: &str = "_";

impl PTerm {
    pub fn var(x: &str) -> PTerm {
        PTerm::Var(x.into())
    }
    pub fn pair(a: PTerm, b: PTerm) -> PTerm {
        PTerm::Pair(Box::new(a), Box::new(b))
    }
    pub fn let_(x: &str, e: PTerm, body: PTerm) -> PTerm {
        PTerm::Let(x.into(), Box::new(e), Box::new(body))
    }
    pub fn let_pair(x: &str, y: &str, e: PTerm, body: PTerm) -> PTerm {
        PTerm::LetPair(x.into(), y.into(), Box::new(e), Box::new(body))
    }
    pub fn seq(a: PTerm, b: PTerm) -> PTerm {
        PTerm::let_(DISCARD, a, b)
    }
    pub fn app(f: &str, a: PTerm) -> PTerm {
        PTerm::App(f.into(), Box::new(a))
    }
    pub fn cond(a: PTerm, b: PTerm) -> PTerm {
        PTerm::Cond(Box::new(a), Box::new(b))
    }
    pub fn eq(a: PTerm, b: PTerm) -> PTerm {
        PTerm::Eq(Box::new(a), Box::new(b))
    }
    pub fn ite(c: PTerm, t: PTerm, e: PTerm) -> PTerm {
        PTerm::If(Box::new(c), Box::new(t), Box::new(e))
    }
    pub fn unit() -> PTerm {
        PTerm::Lit(Value::Unit)
    }
    pub fn bool(b: bool) -> PTerm {
        PTerm::Lit(Value::Bool(b))
    }
}

impl fmt::Display for PTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PTerm::Var(x) => write!(f, "{x}"),
            PTerm::Lit(v) => write!(f, "{v}"),
            PTerm::Pair(a, b) => write!(f, "({a}, {b})"),
            PTerm::Let(x, e, b) if x == DISCARD => write!(f, "({e}; {b})"),
            PTerm::Let(x, e, b) => write!(f, "(let {x} = {e} in {b})"),
            PTerm::LetPair(x, y, e, b) => write!(f, "(let ({x}, {y}) = {e} in {b})"),
            PTerm::App(k, a) => write!(f, "{k}({a})"),
            PTerm::Bernoulli(r) => write!(f, "bernoulli({r})"),
            PTerm::Uniform(t) => write!(f, "uniform({t})"),
            PTerm::Score(r) => write!(f, "score({r})"),
            PTerm::Cond(a, b) => write!(f, "({a} =:= {b})"),
            PTerm::Eq(a, b) => write!(f, "({a} == {b})"),
            PTerm::If(c, t, e) => write!(f, "(if {c} then {t} else {e})"),
        }
    }
}

/// Straight-line (`Psl`) or branching (`P`) programs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Psl,
    P,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelDecl {
    pub dom: FinTy,
    pub cod: FinTy,
    pub kernel: SubKernel,
}

/// Declared finite sets and kernels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Decls {
    pub types: Vec<(String, Vec<String>)>,
    pub kernels: BTreeMap<String, KernelDecl>,
}

pub type FinCtx = Vec<(String, FinTy)>;

impl Decls {
    pub fn space(&self, ty: &FinTy) -> Result<Vec<Value>> {
        match ty {
            FinTy::Unit => Ok(vec![Value::Unit]),
            FinTy::Bool => Ok(bool_space()),
            FinTy::Named(n) => self
                .types
                .iter()
                .find(|(m, _)| m == n)
                .map(|(_, els)| els.iter().map(|e| Value::Elem(e.clone())).collect())
                .ok_or_else(|| Error::Type(format!("unknown type `{n}`"))),
            FinTy::Pair(a, b) => Ok(product_space(&self.space(a)?, &self.space(b)?)),
        }
    }

    pub fn ctx_space(&self, ctx: &FinCtx) -> Result<Vec<Value>> {
        let mut space = vec![Value::Unit];
        for (_, ty) in ctx {
            space = product_space(&space, &self.space(ty)?);
        }
        Ok(space)
    }

    fn elem_type(&self, e: &str) -> Option<FinTy> {
        self.types.iter().find(|(_, els)| els.iter().any(|x| x == e)).map(|(n, _)| FinTy::Named(n.clone()))
    }

    pub fn value_type(&self, v: &Value) -> Result<FinTy> {
        match v {
            Value::Unit => Ok(FinTy::Unit),
            Value::Bool(_) => Ok(FinTy::Bool),
            Value::Elem(e) => self.elem_type(e).ok_or_else(|| Error::Type(format!("unknown element `{e}`"))),
            Value::Pair(a, b) => Ok(FinTy::pair(self.value_type(a)?, self.value_type(b)?)),
        }
    }

    pub fn typecheck(&self, ctx: &FinCtx, t: &PTerm) -> Result<FinTy> {
        let mut env = ctx.clone();
        self.type_of(&mut env, t)
    }

    fn type_of(&self, env: &mut FinCtx, t: &PTerm) -> Result<FinTy> {
        let same = |a: &FinTy, b: &FinTy, what: &str| {
            if a == b {
                Ok(())
            } else {
                Err(Error::Type(format!("{what} compares {a} with {b}")))
            }
        };
        match t {
            PTerm::Var(x) => env
                .iter()
                .rev()
                .find(|(y, _)| y == x)
                .map(|(_, ty)| ty.clone())
                .ok_or_else(|| Error::Type(format!("unbound variable `{x}`"))),
            PTerm::Lit(v) => self.value_type(v),
            PTerm::Pair(a, b) => Ok(FinTy::pair(self.type_of(env, a)?, self.type_of(env, b)?)),
            PTerm::Let(x, e, b) => {
                let te = self.type_of(env, e)?;
                env.push((x.clone(), te));
                let r = self.type_of(env, b);
                env.pop();
                r
            }
            PTerm::LetPair(x, y, e, b) => {
                let FinTy::Pair(tx, ty) = self.type_of(env, e)? else {
                    return Err(Error::Type(format!("`{e}` is not a pair")));
                };
                env.push((x.clone(), *tx));
                env.push((y.clone(), *ty));
                let r = self.type_of(env, b);
                env.truncate(env.len() - 2);
                r
            }
            PTerm::App(k, a) => {
                let decl = self.kernels.get(k).ok_or_else(|| Error::Type(format!("unknown kernel `{k}`")))?;
                let ta = self.type_of(env, a)?;
                same(&decl.dom, &ta, &format!("argument of `{k}`"))?;
                Ok(decl.cod.clone())
            }
            PTerm::Bernoulli(r) | PTerm::Score(r) => {
                if r.is_negative() || *r > Rat::one() {
                    return Err(Error::Type(format!("parameter {r} is not in [0, 1]")));
                }
                Ok(if matches!(t, PTerm::Bernoulli(_)) { FinTy::Bool } else { FinTy::Unit })
            }
            PTerm::Uniform(ty) => {
                if self.space(ty)?.is_empty() {
                    return Err(Error::Type(format!("`{ty}` is empty")));
                }
                Ok(ty.clone())
            }
            PTerm::Cond(a, b) | PTerm::Eq(a, b) => {
                let ta = self.type_of(env, a)?;
                let tb = self.type_of(env, b)?;
                same(&ta, &tb, "comparison")?;
                Ok(if matches!(t, PTerm::Cond(..)) { FinTy::Unit } else { FinTy::Bool })
            }
            PTerm::If(c, a, b) => {
                let tc = self.type_of(env, c)?;
                same(&FinTy::Bool, &tc, "branch guard")?;
                let ta = self.type_of(env, a)?;
                let tb = self.type_of(env, b)?;
                same(&ta, &tb, "branches")?;
                Ok(ta)
            }
        }
    }

    /// Whether `t` always has total mass one: no conditions, no scores and
    /// only stochastic kernels.
    pub fn condition_free(&self, t: &PTerm) -> bool {
        match t {
            PTerm::Var(_) | PTerm::Lit(_) | PTerm::Bernoulli(_) | PTerm::Uniform(_) => true,
            PTerm::Score(r) => r.is_one(),
            PTerm::Cond(..) => false,
            PTerm::App(k, a) => {
                self.kernels.get(k).is_some_and(|d| d.kernel.is_stochastic()) && self.condition_free(a)
            }
            PTerm::Pair(a, b) | PTerm::Eq(a, b) | PTerm::Let(_, a, b) | PTerm::LetPair(_, _, a, b) => {
                self.condition_free(a) && self.condition_free(b)
            }
            PTerm::If(c, a, b) => self.condition_free(c) && self.condition_free(a) && self.condition_free(b),
        }
    }

    fn check_mode(&self, t: &PTerm, mode: Mode) -> Result<()> {
        let sub: Vec<&PTerm> = match t {
            PTerm::Var(_) | PTerm::Lit(_) | PTerm::Bernoulli(_) | PTerm::Uniform(_) | PTerm::Score(_) => vec![],
            PTerm::App(_, a) => vec![a],
            PTerm::Pair(a, b) | PTerm::Eq(a, b) | PTerm::Cond(a, b) | PTerm::Let(_, a, b) | PTerm::LetPair(_, _, a, b) => {
                vec![a, b]
            }
            PTerm::If(c, a, b) => {
                if mode == Mode::Psl && !(self.condition_free(a) && self.condition_free(b)) {
                    return Err(Error::Invalid(
                        "branches with conditions or scores need the branching language (mode p)".into(),
                    ));
                }
                vec![c, a, b]
            }
        };
        sub.into_iter().try_for_each(|s| self.check_mode(s, mode))
    }

    /// The denotation of `ctx ⊢ t` as a subprobability kernel from the
    /// context (a left-nested product starting at `()`) to the type of `t`.
    pub fn eval_term(&self, ctx: &FinCtx, t: &PTerm, mode: Mode) -> Result<SubKernel> {
        let ty = self.typecheck(ctx, t)?;
        self.check_mode(t, mode)?;
        let cod = self.space(&ty)?;
        let dom = self.ctx_space(ctx)?;
        SubKernel::from_fn(dom, cod.clone(), |gamma| {
            let mut env = Vec::new();
            unpack_ctx(ctx, gamma, &mut env);
            let d = self.dist(&mut env, t, mode)?;
            let mut out = SubDist::zero(cod.clone());
            for (v, m) in d {
                let i = index_of(&cod, &v)?;
                out.mass[i] += m;
            }
            Ok(out)
        })
    }

    /// Closed programs: the subdistribution they denote.
    pub fn eval_closed(&self, t: &PTerm, mode: Mode) -> Result<SubDist> {
        Ok(self.eval_term(&vec![], t, mode)?.column(0))
    }

    fn dist(&self, env: &mut Vec<(String, Value)>, t: &PTerm, mode: Mode) -> Result<BTreeMap<Value, Rat>> {
        let point = |v: Value| BTreeMap::from([(v, Rat::one())]);
        let mut out: BTreeMap<Value, Rat> = BTreeMap::new();
        let add = |out: &mut BTreeMap<Value, Rat>, v: Value, m: Rat| {
            if !m.is_zero() {
                *out.entry(v).or_insert_with(Rat::zero) += m;
            }
        };
        match t {
            PTerm::Var(x) => {
                let v = env.iter().rev().find(|(y, _)| y == x).map(|(_, v)| v.clone());
                return v.map(point).ok_or_else(|| Error::Type(format!("unbound variable `{x}`")));
            }
            PTerm::Lit(v) => return Ok(point(v.clone())),
            PTerm::Bernoulli(r) => {
                add(&mut out, Value::Bool(false), Rat::one() - r);
                add(&mut out, Value::Bool(true), r.clone());
            }
            PTerm::Uniform(ty) => {
                let space = self.space(ty)?;
                let m = rat(1, space.len() as i64);
                for v in space {
                    add(&mut out, v, m.clone());
                }
            }
            PTerm::Score(r) => add(&mut out, Value::Unit, r.clone()),
            PTerm::App(k, a) => {
                let decl = &self.kernels[k];
                for (v, m) in self.dist(env, a, mode)? {
                    let x = index_of(decl.kernel.dom(), &v)?;
                    for (y, w) in decl.kernel.cod().iter().enumerate() {
                        add(&mut out, w.clone(), &m * decl.kernel.entry(y, x));
                    }
                }
            }
            PTerm::Pair(a, b) | PTerm::Cond(a, b) | PTerm::Eq(a, b) => {
                let da = self.dist(env, a, mode)?;
                let db = self.dist(env, b, mode)?;
                for (va, ma) in &da {
                    for (vb, mb) in &db {
                        let m = ma * mb;
                        match t {
                            PTerm::Pair(..) => add(&mut out, Value::pair(va.clone(), vb.clone()), m),
                            PTerm::Cond(..) if va == vb => add(&mut out, Value::Unit, m),
                            PTerm::Cond(..) => {}
                            _ => add(&mut out, Value::Bool(va == vb), m),
                        }
                    }
                }
            }
            PTerm::Let(x, e, b) => {
                for (v, m) in self.dist(env, e, mode)? {
                    env.push((x.clone(), v));
                    let db = self.dist(env, b, mode);
                    env.pop();
                    for (w, mw) in db? {
                        add(&mut out, w, &m * mw);
                    }
                }
            }
            PTerm::LetPair(x, y, e, b) => {
                for (v, m) in self.dist(env, e, mode)? {
                    let Value::Pair(vx, vy) = v else {
                        return Err(Error::Type(format!("`{e}` is not a pair")));
                    };
                    env.push((x.clone(), *vx));
                    env.push((y.clone(), *vy));
                    let db = self.dist(env, b, mode);
                    env.truncate(env.len() - 2);
                    for (w, mw) in db? {
                        add(&mut out, w, &m * mw);
                    }
                }
            }
            PTerm::If(c, a, b) => {
                let dc = self.dist(env, c, mode)?;
                let da = self.dist(env, a, mode)?;
                let db = self.dist(env, b, mode)?;
                let pt = dc.get(&Value::Bool(true)).cloned().unwrap_or_else(Rat::zero);
                let pf = dc.get(&Value::Bool(false)).cloned().unwrap_or_else(Rat::zero);
                match mode {
                    Mode::P => {
                        for (v, m) in da {
                            add(&mut out, v, m * &pt);
                        }
                        for (v, m) in db {
                            add(&mut out, v, m * &pf);
                        }
                    }
                    Mode::Psl => {
                        // Run all three, then select with the ite kernel.
                        for (vc, mc) in &dc {
                            for (va, ma) in &da {
                                for (vb, mb) in &db {
                                    let pick = if *vc == Value::Bool(true) { va } else { vb };
                                    add(&mut out, pick.clone(), mc * ma * mb);
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn unpack_ctx(ctx: &[(String, FinTy)], gamma: &Value, env: &mut Vec<(String, Value)>) {
    if let Some(((name, _), rest)) = ctx.split_last() {
        let Value::Pair(init, last) = gamma else { unreachable!("context values are nested pairs") };
        unpack_ctx(rest, init, env);
        env.push((name.clone(), (**last).clone()));
    }
}

/// `if bernoulli(1/2) then (t; true) else false`.
pub fn evidence_wrapper(t: &PTerm) -> PTerm {
    PTerm::ite(PTerm::Bernoulli(rat(1, 2)), PTerm::seq(t.clone(), PTerm::bool(true)), PTerm::bool(false))
}

/// Total mass `Z` of a closed program, cross-checked against the value
/// recovered from the normalized wrapper, `p = Z/(Z+1)`.
pub fn model_evidence(decls: &Decls, t: &PTerm) -> Result<Rat> {
    let direct = decls.eval_closed(t, Mode::P)?.total();
    let wrapped = normalize_dist(&decls.eval_closed(&evidence_wrapper(t), Mode::P)?);
    let p = wrapped.mass(&Value::Bool(true));
    let recovered = &p / (Rat::one() - &p);
    if recovered != direct {
        return Err(Error::Invalid(format!("evidence mismatch: direct {direct}, recovered {recovered}")));
    }
    Ok(direct)
}

/// Equivalence of `ctx ⊢ s` and `ctx ⊢ t`: up to a positive scalar for
/// straight-line programs, exact equality for branching ones.
pub fn equiv_fin(decls: &Decls, ctx: &FinCtx, s: &PTerm, t: &PTerm, mode: Mode) -> Result<bool> {
    let ts = decls.typecheck(ctx, s)?;
    let tt = decls.typecheck(ctx, t)?;
    if ts != tt {
        return Err(Error::Type(format!("programs have types {ts} and {tt}")));
    }
    let ks = decls.eval_term(ctx, s, mode)?;
    let kt = decls.eval_term(ctx, t, mode)?;
    match mode {
        Mode::Psl => proportional(&ks, &kt),
        Mode::P => Ok(ks == kt),
    }
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Clone, Debug, PartialEq)]
pub struct FinProgram {
    pub decls: Decls,
    pub inputs: FinCtx,
    pub body: PTerm,
}

impl FinProgram {
    pub fn ty(&self) -> Result<FinTy> {
        self.decls.typecheck(&self.inputs, &self.body)
    }

    pub fn eval(&self, mode: Mode) -> Result<SubKernel> {
        self.decls.eval_term(&self.inputs, &self.body, mode)
    }
}

const FIN_KEYWORDS: &[&str] = &[
    "let", "in", "if", "then", "else", "return", "score", "bernoulli", "uniform", "true", "false", "type",
    "kernel", "input", "unit", "bool",
];

type PResult<T> = std::result::Result<T, ParseError>;

pub fn parse_program(src: &str) -> Result<FinProgram> {
    let mut p = FinParser { cur: Cursor::new(src)?, decls: Decls::default(), inputs: vec![] };
    p.cur.skip_newlines();
    while p.cur.at_ident("type") || p.cur.at_ident("kernel") || p.cur.at_ident("input") {
        p.declaration()?;
        if *p.cur.peek() == Tok::Semi {
            p.cur.next();
        }
        p.cur.skip_newlines();
    }
    let body = p.seq()?;
    p.cur.skip_newlines();
    if *p.cur.peek() != Tok::Eof {
        return Err(p.cur.unexpected(&["`;`", "newline", "end of input"]).into());
    }
    let prog = FinProgram { decls: p.decls, inputs: p.inputs, body };
    prog.ty()?;
    Ok(prog)
}

struct FinParser {
    cur: Cursor,
    decls: Decls,
    inputs: FinCtx,
}

impl FinParser {
    fn ident(&mut self) -> PResult<String> {
        self.cur.ident(FIN_KEYWORDS)
    }

    fn declaration(&mut self) -> Result<()> {
        match self.cur.next() {
            Tok::Ident(w) if w == "type" => {
                let name = self.ident()?;
                self.cur.expect(Tok::Eq)?;
                self.cur.expect(Tok::LBrace)?;
                let mut els = vec![self.ident()?];
                while *self.cur.peek() == Tok::Comma {
                    self.cur.next();
                    els.push(self.ident()?);
                }
                self.cur.expect(Tok::RBrace)?;
                for e in &els {
                    if self.decls.elem_type(e).is_some() || els.iter().filter(|x| *x == e).count() > 1 {
                        return Err(self.cur.error(format!("element `{e}` is declared twice"), &[]).into());
                    }
                }
                if self.decls.types.iter().any(|(n, _)| *n == name) {
                    return Err(self.cur.error(format!("type `{name}` is declared twice"), &[]).into());
                }
                self.decls.types.push((name, els));
            }
            Tok::Ident(w) if w == "input" => {
                let name = self.ident()?;
                self.cur.expect(Tok::Colon)?;
                let ty = self.ty()?;
                self.decls.space(&ty)?;
                self.inputs.push((name, ty));
            }
            Tok::Ident(w) if w == "kernel" => {
                let name = self.ident()?;
                self.cur.expect(Tok::Colon)?;
                let dom = self.ty()?;
                self.cur.expect(Tok::Arrow)?;
                let cod = self.ty()?;
                self.cur.expect(Tok::Eq)?;
                let dspace = self.decls.space(&dom)?;
                let cspace = self.decls.space(&cod)?;
                let mut cols: BTreeMap<Value, SubDist> = BTreeMap::new();
                self.cur.expect(Tok::LBrace)?;
                loop {
                    let x = self.value()?;
                    self.cur.expect(Tok::FatArrow)?;
                    let d = self.dist_literal(&cspace)?;
                    index_of(&dspace, &x).map_err(|_| self.cur.error(format!("`{x}` is not in {dom}"), &[]))?;
                    if cols.insert(x.clone(), d).is_some() {
                        return Err(self.cur.error(format!("row `{x}` is given twice"), &[]).into());
                    }
                    if *self.cur.peek() == Tok::Comma {
                        self.cur.next();
                    } else {
                        break;
                    }
                }
                self.cur.expect(Tok::RBrace)?;
                let kernel = SubKernel::from_fn(dspace, cspace.clone(), |x| {
                    Ok(cols.get(x).cloned().unwrap_or_else(|| SubDist::zero(cspace.clone())))
                })?;
                if self.decls.kernels.insert(name.clone(), KernelDecl { dom, cod, kernel }).is_some() {
                    return Err(self.cur.error(format!("kernel `{name}` is declared twice"), &[]).into());
                }
            }
            _ => unreachable!("called at a declaration keyword"),
        }
        Ok(())
    }

    fn ty(&mut self) -> PResult<FinTy> {
        match self.cur.peek().clone() {
            Tok::Ident(w) if w == "unit" => {
                self.cur.next();
                Ok(FinTy::Unit)
            }
            Tok::Ident(w) if w == "bool" => {
                self.cur.next();
                Ok(FinTy::Bool)
            }
            Tok::LParen => {
                self.cur.next();
                let mut items = vec![self.ty()?];
                while *self.cur.peek() == Tok::Comma {
                    self.cur.next();
                    items.push(self.ty()?);
                }
                self.cur.expect(Tok::RParen)?;
                Ok(nest(items, FinTy::pair, FinTy::Unit))
            }
            _ => Ok(FinTy::Named(self.ident()?)),
        }
    }

    fn value(&mut self) -> PResult<Value> {
        match self.cur.peek().clone() {
            Tok::Ident(w) if w == "true" || w == "false" => {
                self.cur.next();
                Ok(Value::Bool(w == "true"))
            }
            Tok::LParen => {
                self.cur.next();
                if *self.cur.peek() == Tok::RParen {
                    self.cur.next();
                    return Ok(Value::Unit);
                }
                let mut items = vec![self.value()?];
                while *self.cur.peek() == Tok::Comma {
                    self.cur.next();
                    items.push(self.value()?);
                }
                self.cur.expect(Tok::RParen)?;
                Ok(nest(items, Value::pair, Value::Unit))
            }
            _ => Ok(Value::Elem(self.ident()?)),
        }
    }

    fn rational(&mut self) -> PResult<Rat> {
        let text = match self.cur.peek().clone() {
            Tok::Num(s) => s,
            _ => return Err(self.cur.unexpected(&["rational number"])),
        };
        self.cur.next();
        let mut r = parse_rat(&text).ok_or_else(|| self.cur.error(format!("`{text}` is not an exact rational"), &[]))?;
        if *self.cur.peek() == Tok::Slash {
            self.cur.next();
            let den = match self.cur.next() {
                Tok::Num(s) => parse_rat(&s),
                _ => None,
            }
            .filter(|d| !d.is_zero())
            .ok_or_else(|| self.cur.error("expected a nonzero denominator", &["number"]))?;
            r /= den;
        }
        Ok(r)
    }

    fn dist_literal(&mut self, space: &[Value]) -> Result<SubDist> {
        self.cur.expect(Tok::LBrace)?;
        let mut d = SubDist::zero(space.to_vec());
        if *self.cur.peek() != Tok::RBrace {
            loop {
                let v = self.value()?;
                self.cur.expect(Tok::Colon)?;
                let m = self.rational()?;
                let i = index_of(space, &v).map_err(|_| self.cur.error(format!("`{v}` is not an outcome"), &[]))?;
                d.mass[i] += m;
                if *self.cur.peek() == Tok::Comma {
                    self.cur.next();
                } else {
                    break;
                }
            }
        }
        self.cur.expect(Tok::RBrace)?;
        if d.total() > Rat::one() {
            return Err(self.cur.error("row masses sum to more than one", &[]).into());
        }
        Ok(d)
    }

    fn at_separator(&self) -> bool {
        matches!(self.cur.peek(), Tok::Semi | Tok::Newline)
    }

    fn starts_item(&self) -> bool {
        match self.cur.peek() {
            Tok::LParen => true,
            Tok::Ident(w) => !matches!(w.as_str(), "in" | "then" | "else"),
            _ => false,
        }
    }

    fn separator(&mut self) -> bool {
        while self.at_separator() {
            self.cur.next();
        }
        self.starts_item()
    }

    fn seq(&mut self) -> PResult<PTerm> {
        if self.cur.at_ident("let") {
            return self.let_form();
        }
        let save = self.cur.save();
        if let Ok(pat) = self.pattern() {
            if *self.cur.peek() == Tok::Eq {
                self.cur.next();
                self.cur.skip_newlines();
                let bound = self.expr()?;
                if !(self.at_separator() && self.separator()) {
                    return Err(self.cur.error("a binding must be followed by the rest of the block", &["`;`", "newline"]));
                }
                let body = self.seq()?;
                return Ok(bind(pat, bound, body));
            }
        }
        self.cur.restore(save);
        let e = self.expr()?;
        if self.at_separator() && self.separator() {
            return Ok(PTerm::seq(e, self.seq()?));
        }
        Ok(e)
    }

    fn pattern(&mut self) -> PResult<Vec<String>> {
        if *self.cur.peek() == Tok::LParen {
            self.cur.next();
            let x = self.ident()?;
            self.cur.expect(Tok::Comma)?;
            let y = self.ident()?;
            self.cur.expect(Tok::RParen)?;
            Ok(vec![x, y])
        } else {
            Ok(vec![self.ident()?])
        }
    }

    fn let_form(&mut self) -> PResult<PTerm> {
        self.cur.expect_word("let")?;
        let pat = self.pattern()?;
        self.cur.expect(Tok::Eq)?;
        self.cur.skip_newlines();
        let bound = self.seq()?;
        self.cur.skip_newlines();
        self.cur.expect_word("in")?;
        self.cur.skip_newlines();
        let body = self.seq()?;
        Ok(bind(pat, bound, body))
    }

    fn expr(&mut self) -> PResult<PTerm> {
        if self.cur.at_ident("if") {
            self.cur.next();
            let c = self.seq()?;
            self.cur.skip_newlines();
            self.cur.expect_word("then")?;
            self.cur.skip_newlines();
            let a = self.seq()?;
            self.cur.skip_newlines();
            self.cur.expect_word("else")?;
            self.cur.skip_newlines();
            let b = self.expr()?;
            return Ok(PTerm::ite(c, a, b));
        }
        if self.cur.at_ident("return") {
            self.cur.next();
            return self.expr();
        }
        let lhs = self.atom()?;
        match self.cur.peek() {
            Tok::CondEq => {
                self.cur.next();
                Ok(PTerm::cond(lhs, self.atom()?))
            }
            Tok::EqEq => {
                self.cur.next();
                Ok(PTerm::eq(lhs, self.atom()?))
            }
            _ => Ok(lhs),
        }
    }

    fn atom(&mut self) -> PResult<PTerm> {
        match self.cur.peek().clone() {
            Tok::LParen => {
                self.cur.next();
                if *self.cur.peek() == Tok::RParen {
                    self.cur.next();
                    return Ok(PTerm::unit());
                }
                let mut items = vec![self.seq()?];
                while *self.cur.peek() == Tok::Comma {
                    self.cur.next();
                    items.push(self.seq()?);
                }
                self.cur.expect(Tok::RParen)?;
                Ok(nest(items, PTerm::pair, PTerm::unit()))
            }
            Tok::Ident(w) if w == "true" || w == "false" => {
                self.cur.next();
                Ok(PTerm::bool(w == "true"))
            }
            Tok::Ident(w) if w == "bernoulli" || w == "score" => {
                self.cur.next();
                self.cur.expect(Tok::LParen)?;
                let r = self.rational()?;
                self.cur.expect(Tok::RParen)?;
                if r > Rat::one() {
                    return Err(self.cur.error(format!("parameter {r} exceeds one"), &[]));
                }
                Ok(if w == "bernoulli" { PTerm::Bernoulli(r) } else { PTerm::Score(r) })
            }
            Tok::Ident(w) if w == "uniform" => {
                self.cur.next();
                self.cur.expect(Tok::LParen)?;
                let ty = self.ty()?;
                self.cur.expect(Tok::RParen)?;
                Ok(PTerm::Uniform(ty))
            }
            Tok::Ident(w) if w == "let" || w == "if" => self.expr_in_parens_like(),
            Tok::Ident(w) if !FIN_KEYWORDS.contains(&w.as_str()) => {
                self.cur.next();
                if *self.cur.peek() == Tok::LParen && self.decls.kernels.contains_key(&w) {
                    let arg = self.atom()?;
                    return Ok(PTerm::app(&w, arg));
                }
                if self.decls.elem_type(&w).is_some() && !self.bound_later(&w) {
                    return Ok(PTerm::Lit(Value::Elem(w)));
                }
                Ok(PTerm::Var(w))
            }
            _ => Err(self.cur.unexpected(&["identifier", "`(`", "`bernoulli`", "`score`", "`uniform`", "`if`"])),
        }
    }

    fn expr_in_parens_like(&mut self) -> PResult<PTerm> {
        if self.cur.at_ident("let") {
            self.let_form()
        } else {
            self.expr()
        }
    }

    /// Element names are shadowed by inputs of the same name.
    fn bound_later(&self, w: &str) -> bool {
        self.inputs.iter().any(|(x, _)| x == w)
    }
}

fn nest<T>(mut items: Vec<T>, pair: fn(T, T) -> T, unit: T) -> T {
    match items.len() {
        0 => unit,
        1 => items.pop().unwrap(),
        _ => {
            let first = items.remove(0);
            pair(first, nest(items, pair, unit))
        }
    }
}

fn bind(mut pat: Vec<String>, bound: PTerm, body: PTerm) -> PTerm {
    if pat.len() == 2 {
        let y = pat.pop().unwrap();
        let x = pat.pop().unwrap();
        PTerm::LetPair(x, y, Box::new(bound), Box::new(body))
    } else {
        PTerm::Let(pat.pop().unwrap(), Box::new(bound), Box::new(body))
    }
}
