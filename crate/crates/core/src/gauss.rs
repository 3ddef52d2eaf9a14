//! Affine maps with Gaussian noise, `x ↦ A x + b + N(0, Σ)`.
//!
//! These form a Markov category: composition, block-diagonal tensor, the
//! copy/discard/swap structure, conditionals and support tests all live here.

use std::fmt;

use crate::error::{Error, Result};
use crate::numlin::{
    self, block_diag, concat, in_col_space, mat_approx_eq, pinv, select, select_vec,
    vec_approx_eq, Matrix, PsdMatrix, Vector, DEFAULT_TOL,
};

/// An affine-linear stochastic map `dom → cod`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussMap {
    a: Matrix,
    b: Vector,
    sigma: PsdMatrix,
}

/// A Gaussian distribution `N(mean, cov)`, possibly degenerate.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussState {
    mean: Vector,
    cov: PsdMatrix,
}

/// The structural maps of the category.
#[derive(Clone, Debug, PartialEq)]
pub enum Structural {
    Copy(usize),
    Del(usize),
    Swap(usize, usize),
    Const(Vector),
}

impl GaussMap {
    pub fn new(a: Matrix, b: Vector, sigma: PsdMatrix) -> Result<Self> {
        numlin::check_finite(&a)?;
        if a.nrows() != b.len() || sigma.side() != b.len() {
            return Err(Error::Dimension(format!(
                "map with A {}x{}, b {}, covariance {}",
                a.nrows(),
                a.ncols(),
                b.len(),
                sigma.side()
            )));
        }
        if b.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(GaussMap { a, b, sigma })
    }

    /// Noise-free map `x ↦ A x + b`.
    pub fn deterministic(a: Matrix, b: Vector) -> Result<Self> {
        let n = b.len();
        Self::new(a, b, PsdMatrix::zeros(n))
    }

    pub fn linear(a: Matrix) -> Self {
        let n = a.nrows();
        GaussMap { a, b: Vector::zeros(n), sigma: PsdMatrix::zeros(n) }
    }

    pub fn identity(n: usize) -> Self {
        Self::linear(Matrix::identity(n, n))
    }

    /// The map sending coordinate `perm[i]` of the input to coordinate `i`.
    pub fn selection(dom: usize, perm: &[usize]) -> Self {
        let mut a = Matrix::zeros(perm.len(), dom);
        for (i, &j) in perm.iter().enumerate() {
            a[(i, j)] = 1.0;
        }
        Self::linear(a)
    }

    pub fn structural(kind: &Structural) -> Self {
        match kind {
            Structural::Copy(n) => {
                let idx: Vec<usize> = (0..*n).chain(0..*n).collect();
                Self::selection(*n, &idx)
            }
            Structural::Del(n) => Self::linear(Matrix::zeros(0, *n)),
            Structural::Swap(m, n) => {
                let idx: Vec<usize> = (*m..m + n).chain(0..*m).collect();
                Self::selection(m + n, &idx)
            }
            Structural::Const(v) => GaussMap {
                a: Matrix::zeros(v.len(), 0),
                b: v.clone(),
                sigma: PsdMatrix::zeros(v.len()),
            },
        }
    }

    pub fn copy(n: usize) -> Self {
        Self::structural(&Structural::Copy(n))
    }

    pub fn discard(n: usize) -> Self {
        Self::structural(&Structural::Del(n))
    }

    pub fn swap(m: usize, n: usize) -> Self {
        Self::structural(&Structural::Swap(m, n))
    }

    /// The map `dom → dim(v)` that ignores its input and returns `v`.
    pub fn constant(dom: usize, v: &Vector) -> Self {
        GaussMap {
            a: Matrix::zeros(v.len(), dom),
            b: v.clone(),
            sigma: PsdMatrix::zeros(v.len()),
        }
    }

    pub fn dom(&self) -> usize {
        self.a.ncols()
    }

    pub fn cod(&self) -> usize {
        self.a.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    pub fn offset(&self) -> &Vector {
        &self.b
    }

    pub fn noise(&self) -> &PsdMatrix {
        &self.sigma
    }

    /// `self ∘ f`: first `f`, then `self`.
    pub fn compose(&self, f: &GaussMap) -> Result<GaussMap> {
        if self.dom() != f.cod() {
            return Err(Error::Dimension(format!(
                "cannot compose {}→{} after {}→{}",
                self.dom(),
                self.cod(),
                f.dom(),
                f.cod()
            )));
        }
        let a = &self.a * &f.a;
        let b = &self.a * &f.b + &self.b;
        let sigma = &self.a * f.sigma.as_matrix() * self.a.transpose() + self.sigma.as_matrix();
        Ok(GaussMap { a, b, sigma: PsdMatrix::clamp(sigma) })
    }

    pub fn tensor(&self, g: &GaussMap) -> GaussMap {
        GaussMap {
            a: block_diag(&self.a, &g.a),
            b: concat(&self.b, &g.b),
            sigma: self.sigma.block_diag(&g.sigma),
        }
    }

    /// Pushforward of a state along this map.
    pub fn apply(&self, psi: &GaussState) -> Result<GaussState> {
        Ok(self.compose(&psi.to_map())?.as_state())
    }

    /// Reads a map out of `0` as a state.
    pub fn as_state(&self) -> GaussState {
        debug_assert_eq!(self.dom(), 0);
        GaussState { mean: self.b.clone(), cov: self.sigma.clone() }
    }

    pub fn is_deterministic(&self) -> bool {
        self.is_deterministic_tol(DEFAULT_TOL)
    }

    /// `‖Σ‖∞ ≤ tol`.
    pub fn is_deterministic_tol(&self, tol: f64) -> bool {
        numlin::norm_inf(self.sigma.as_matrix()) <= tol
    }

    pub fn approx_eq(&self, other: &GaussMap, tol: f64) -> bool {
        mat_approx_eq(&self.a, &other.a, tol)
            && vec_approx_eq(&self.b, &other.b, tol)
            && mat_approx_eq(self.sigma.as_matrix(), other.sigma.as_matrix(), tol)
    }
}

impl GaussState {
    pub fn new(mean: Vector, cov: PsdMatrix) -> Result<Self> {
        if mean.len() != cov.side() {
            return Err(Error::Dimension(format!(
                "state with mean {} and covariance {}",
                mean.len(),
                cov.side()
            )));
        }
        if mean.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(GaussState { mean, cov })
    }

    /// The zero-dimensional state.
    pub fn empty() -> Self {
        GaussState { mean: Vector::zeros(0), cov: PsdMatrix::zeros(0) }
    }

    pub fn standard(n: usize) -> Self {
        GaussState { mean: Vector::zeros(n), cov: PsdMatrix::identity(n) }
    }

    pub fn point(v: &Vector) -> Self {
        GaussState { mean: v.clone(), cov: PsdMatrix::zeros(v.len()) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn cov(&self) -> &PsdMatrix {
        &self.cov
    }

    pub fn to_map(&self) -> GaussMap {
        GaussMap {
            a: Matrix::zeros(self.dim(), 0),
            b: self.mean.clone(),
            sigma: self.cov.clone(),
        }
    }

    pub fn tensor(&self, other: &GaussState) -> GaussState {
        GaussState {
            mean: concat(&self.mean, &other.mean),
            cov: self.cov.block_diag(&other.cov),
        }
    }

    pub fn marginal(&self, keep: &[usize]) -> Result<GaussState> {
        if let Some(&bad) = keep.iter().find(|&&i| i >= self.dim()) {
            return Err(Error::IndexOutOfRange { index: bad, dim: self.dim() });
        }
        Ok(GaussState { mean: select_vec(&self.mean, keep), cov: self.cov.principal(keep) })
    }

    pub fn is_deterministic(&self) -> bool {
        self.to_map().is_deterministic()
    }

    pub fn approx_eq(&self, other: &GaussState, tol: f64) -> bool {
        vec_approx_eq(&self.mean, &other.mean, tol)
            && mat_approx_eq(self.cov.as_matrix(), other.cov.as_matrix(), tol)
    }

    /// Conditional `K → X` of a state over `X ⊗ K`, with `K` the trailing
    /// `k_dim` coordinates:
    /// `A = Σ_XK Σ_KK⁺`, `b = μ_X − A μ_K`, `Σ = Σ_XX − A Σ_KX`.
    pub fn conditional(&self, k_dim: usize) -> Result<GaussMap> {
        let n = self.dim();
        if k_dim > n {
            return Err(Error::Dimension(format!("conditioning on {k_dim} of {n} coordinates")));
        }
        let xs: Vec<usize> = (0..n - k_dim).collect();
        let ks: Vec<usize> = (n - k_dim..n).collect();
        let s = self.cov.as_matrix();
        let s_xk = select(s, &xs, &ks);
        let s_kk = self.cov.principal(&ks);
        let a = &s_xk * pinv(&s_kk);
        let b = select_vec(&self.mean, &xs) - &a * select_vec(&self.mean, &ks);
        let sigma = select(s, &xs, &xs) - &a * s_xk.transpose();
        Ok(GaussMap { a, b, sigma: PsdMatrix::clamp(sigma) })
    }

    /// `self ≪ other`: the support of `self` is contained in that of `other`.
    pub fn abs_cont(&self, other: &GaussState) -> Result<bool> {
        self.abs_cont_tol(other, DEFAULT_TOL)
    }

    pub fn abs_cont_tol(&self, other: &GaussState, tol: f64) -> Result<bool> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension(format!(
                "support test between dimensions {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        if !in_col_space(&other.cov, &(&self.mean - &other.mean), tol)? {
            return Ok(false);
        }
        for col in self.cov.as_matrix().column_iter() {
            if !in_col_space(&other.cov, &col.clone_owned(), tol)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Whether the point `x` lies in the support of this state.
    pub fn supports(&self, x: &Vector) -> Result<bool> {
        GaussState::point(x).abs_cont(self)
    }
}

/// `f =_μ g`: the joints `⟨id, f⟩μ` and `⟨id, g⟩μ` coincide.
pub fn almost_sure_equal(f: &GaussMap, g: &GaussMap, mu: &GaussState) -> Result<bool> {
    if f.dom() != mu.dim() || g.dom() != mu.dim() || f.cod() != g.cod() {
        return Err(Error::Dimension("almost_sure_equal: shapes differ".into()));
    }
    let n = mu.dim();
    let joint = |h: &GaussMap| -> Result<GaussState> {
        GaussMap::identity(n).tensor(h).compose(&GaussMap::copy(n))?.apply(mu)
    };
    Ok(joint(f)?.approx_eq(&joint(g)?, DEFAULT_TOL))
}

/// A closed inference problem: a model over `X ⊗ K` and an observation of `K`.
#[derive(Clone, Debug, PartialEq)]
pub struct InferenceProblem {
    k_dim: usize,
    model: GaussState,
    obs: Vector,
}

impl InferenceProblem {
    pub fn new(model: GaussState, obs: Vector) -> Result<Self> {
        let k_dim = obs.len();
        if model.dim() < k_dim {
            return Err(Error::Dimension(format!(
                "model of dimension {} cannot carry {} observed coordinates",
                model.dim(),
                k_dim
            )));
        }
        Ok(InferenceProblem { k_dim, model, obs })
    }

    pub fn model(&self) -> &GaussState {
        &self.model
    }

    pub fn observation(&self) -> &Vector {
        &self.obs
    }

    pub fn k_dim(&self) -> usize {
        self.k_dim
    }

    /// Posterior over `X`, or `None` when the observation is outside the
    /// support of the `K`-marginal.
    pub fn solve(&self) -> Option<GaussState> {
        self.solve_tol(DEFAULT_TOL)
    }

    pub fn solve_tol(&self, tol: f64) -> Option<GaussState> {
        let n = self.model.dim();
        let ks: Vec<usize> = (n - self.k_dim..n).collect();
        let marginal = self.model.marginal(&ks).expect("indices in range");
        if !marginal.supports_tol(&self.obs, tol) {
            return None;
        }
        let cond = self.model.conditional(self.k_dim).expect("k_dim checked");
        Some(cond.apply(&GaussState::point(&self.obs)).expect("dimensions agree"))
    }
}

impl GaussState {
    fn supports_tol(&self, x: &Vector, tol: f64) -> bool {
        GaussState::point(x).abs_cont_tol(self, tol).unwrap_or(false)
    }
}

impl fmt::Display for GaussState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N(")?;
        write_vec(f, &self.mean)?;
        write!(f, ", ")?;
        write_mat(f, self.cov.as_matrix())?;
        write!(f, ")")
    }
}

impl fmt::Display for GaussMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(A=")?;
        write_mat(f, &self.a)?;
        write!(f, ", b=")?;
        write_vec(f, &self.b)?;
        write!(f, ", Σ=")?;
        write_mat(f, self.sigma.as_matrix())?;
        write!(f, ")")
    }
}

pub(crate) fn write_vec(f: &mut impl fmt::Write, v: &Vector) -> fmt::Result {
    write!(f, "[")?;
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            write!(f, ", ")?;
        }
        write!(f, "{}", fmt_num(*x))?;
    }
    write!(f, "]")
}

pub(crate) fn write_mat(f: &mut impl fmt::Write, m: &Matrix) -> fmt::Result {
    write!(f, "[")?;
    for i in 0..m.nrows() {
        if i > 0 {
            write!(f, ", ")?;
        }
        write_vec(f, &m.row(i).transpose())?;
    }
    write!(f, "]")
}

/// Prints with 12 significant digits and without negative zero.
pub fn fmt_num(x: f64) -> String {
    let r = if x.abs() < 1e-12 { 0.0 } else { x };
    let s = format!("{:.12}", r);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn state(mean: Vector, cov: Matrix) -> GaussState {
        GaussState::new(mean, PsdMatrix::new(cov).unwrap()).unwrap()
    }

    fn map(a: Matrix, b: Vector, s: Matrix) -> GaussMap {
        GaussMap::new(a, b, PsdMatrix::new(s).unwrap()).unwrap()
    }

    #[test]
    fn compose_examples() {
        let f = map(dmatrix![3.0], dvector![0.0], dmatrix![1.0]);
        let g = map(dmatrix![2.0], dvector![1.0], dmatrix![1.0]);
        let gf = g.compose(&f).unwrap();
        assert!(gf.approx_eq(&map(dmatrix![6.0], dvector![1.0], dmatrix![5.0]), 1e-12));
        assert_eq!(GaussMap::identity(1).compose(&f).unwrap(), f);
        let shift = GaussMap::deterministic(dmatrix![1.0], dvector![3.0]).unwrap();
        let pushed = shift.apply(&GaussState::standard(1)).unwrap();
        assert!(pushed.approx_eq(&state(dvector![3.0], dmatrix![1.0]), 1e-12));
        assert!(g.compose(&GaussMap::identity(2)).is_err());
    }

    #[test]
    fn tensor_and_structure() {
        let f = map(dmatrix![3.0], dvector![1.0], dmatrix![1.0]);
        assert_eq!(f.tensor(&GaussMap::identity(0)), f);
        let both = GaussState::standard(1).tensor(&GaussState::standard(1));
        assert_eq!(both, GaussState::standard(2));
        let copied = GaussMap::copy(1).apply(&GaussState::standard(1)).unwrap();
        assert!(copied.approx_eq(&state(dvector![0.0, 0.0], dmatrix![1.0, 1.0; 1.0, 1.0]), 0.0));
        let del = GaussMap::discard(2).compose(&f.tensor(&f)).unwrap();
        assert_eq!((del.dom(), del.cod()), (2, 0));
        let ss = GaussMap::swap(1, 1).compose(&GaussMap::swap(1, 1)).unwrap();
        assert_eq!(ss, GaussMap::identity(2));
        assert!(GaussMap::copy(1).is_deterministic());
        assert!(!GaussState::standard(1).to_map().is_deterministic());
        assert!(map(dmatrix![1.0], dvector![0.0], dmatrix![1e-15]).is_deterministic());
    }

    #[test]
    fn marginals() {
        let psi = state(dvector![0.0, 0.0], dmatrix![1.0, 1.0; 1.0, 2.0]);
        let m = psi.marginal(&[1]).unwrap();
        assert!(m.approx_eq(&state(dvector![0.0], dmatrix![2.0]), 0.0));
        assert_eq!(psi.marginal(&[0, 1]).unwrap(), psi);
        assert!(matches!(psi.marginal(&[2]), Err(Error::IndexOutOfRange { .. })));
        let phi = state(dvector![1.0], dmatrix![3.0]);
        assert_eq!(phi.tensor(&psi).marginal(&[0]).unwrap(), phi);
    }

    #[test]
    fn conditional_examples() {
        let psi = state(
            Vector::zeros(3),
            dmatrix![1.0, 0.0, 1.0; 0.0, 1.0, -1.0; 1.0, -1.0, 2.0],
        );
        let c = psi.conditional(1).unwrap();
        let expected = map(dmatrix![0.5; -0.5], dvector![0.0, 0.0], dmatrix![0.5, 0.5; 0.5, 0.5]);
        assert!(c.approx_eq(&expected, 1e-12));

        // Independent blocks: the conditional ignores its argument.
        let phi = state(dvector![1.0], dmatrix![2.0]);
        let nu = state(dvector![-1.0], dmatrix![3.0]);
        let c = phi.tensor(&nu).conditional(1).unwrap();
        let expected = phi.to_map().compose(&GaussMap::discard(1)).unwrap();
        assert!(c.approx_eq(&expected, 1e-12));

        // copy∘N(0,1): the conditional is the identity on the support.
        let copied = GaussMap::copy(1).apply(&GaussState::standard(1)).unwrap();
        let c = copied.conditional(1).unwrap();
        assert!(c.approx_eq(&GaussMap::identity(1), 1e-12));
    }

    #[test]
    fn support_examples() {
        let n01 = GaussState::standard(1);
        assert!(n01.abs_cont(&n01).unwrap());
        assert!(GaussState::point(&dvector![0.0]).abs_cont(&n01).unwrap());
        assert!(!GaussState::point(&dvector![0.0])
            .abs_cont(&GaussState::point(&dvector![1.0]))
            .unwrap());
        assert!(n01.abs_cont(&GaussState::standard(2)).is_err());
    }

    #[test]
    fn almost_sure_examples() {
        let id = GaussMap::identity(1);
        let zero = GaussMap::linear(dmatrix![0.0]);
        let neg = GaussMap::linear(dmatrix![-1.0]);
        let n01 = GaussState::standard(1);
        assert!(almost_sure_equal(&id, &id, &n01).unwrap());
        assert!(almost_sure_equal(&id, &zero, &GaussState::point(&dvector![0.0])).unwrap());
        assert!(!almost_sure_equal(&id, &neg, &n01).unwrap());
    }

    #[test]
    fn inference_examples() {
        let psi = state(
            Vector::zeros(3),
            dmatrix![1.0, 0.0, 1.0; 0.0, 1.0, -1.0; 1.0, -1.0, 2.0],
        );
        let post = InferenceProblem::new(psi, dvector![0.0]).unwrap().solve().unwrap();
        assert!(post.approx_eq(&state(dvector![0.0, 0.0], dmatrix![0.5, 0.5; 0.5, 0.5]), 1e-12));

        let phi = state(dvector![1.0, 2.0], dmatrix![2.0, 1.0; 1.0, 1.0]);
        let model = phi.tensor(&GaussState::point(&dvector![5.0]));
        let post = InferenceProblem::new(model, dvector![5.0]).unwrap().solve().unwrap();
        assert!(post.approx_eq(&phi, 1e-12));

        let model = phi.tensor(&GaussState::point(&dvector![0.0]));
        assert!(InferenceProblem::new(model, dvector![1.0]).unwrap().solve().is_none());
        assert!(InferenceProblem::new(GaussState::standard(1), dvector![0.0, 0.0]).is_err());
    }

    #[test]
    fn number_format() {
        assert_eq!(fmt_num(42.0), "42");
        assert_eq!(fmt_num(-1e-15), "0");
        assert_eq!(fmt_num(0.5), "0.5");
    }
}
