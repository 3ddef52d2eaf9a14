//! Conditioning channels `(K, f, o)`: a Gaussian map into outputs and
//! condition wires, together with the value the condition wires are
//! required to take.

use std::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gauss::{write_mat, write_vec, GaussMap, GaussState, InferenceProblem};
use crate::numlin::{
    concat, mat_approx_eq, pivot_columns, rref_transform, select, select_vec, vstack,
    Matrix, PsdMatrix, Vector, DEFAULT_TOL,
};

/// A morphism `dom ⇝ cod` with `k_dim` trailing condition wires.
#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    cod: usize,
    k_dim: usize,
    f: GaussMap,
    o: Vector,
}

/// Outcome of evaluating a closed channel.
#[derive(Clone, Debug, PartialEq)]
pub enum StateResult {
    Posterior(GaussState),
    Bottom,
}

impl StateResult {
    pub fn is_bottom(&self) -> bool {
        matches!(self, StateResult::Bottom)
    }

    pub fn posterior(&self) -> Option<&GaussState> {
        match self {
            StateResult::Posterior(s) => Some(s),
            StateResult::Bottom => None,
        }
    }

    pub fn approx_eq(&self, other: &StateResult, tol: f64) -> bool {
        match (self, other) {
            (StateResult::Bottom, StateResult::Bottom) => true,
            (StateResult::Posterior(a), StateResult::Posterior(b)) => a.approx_eq(b, tol),
            _ => false,
        }
    }
}

/// Canonical representative of a channel up to observational equivalence.
///
/// Read as: on input `x`, draw `(e, g)` from `joint`, condition on
/// `e = A x`, and return `D₀ x + g`.
#[derive(Clone, Debug, PartialEq)]
pub enum CanonicalChannel {
    Bottom,
    Form { a: Matrix, d0: Matrix, joint: GaussState },
}

impl CanonicalChannel {
    pub fn approx_eq(&self, other: &CanonicalChannel, tol: f64) -> bool {
        match (self, other) {
            (CanonicalChannel::Bottom, CanonicalChannel::Bottom) => true,
            (
                CanonicalChannel::Form { a, d0, joint },
                CanonicalChannel::Form { a: a2, d0: d2, joint: j2 },
            ) => mat_approx_eq(a, a2, tol) && mat_approx_eq(d0, d2, tol) && joint.approx_eq(j2, tol),
            _ => false,
        }
    }
}

impl Channel {
    pub fn new(cod: usize, f: GaussMap, o: Vector) -> Result<Self> {
        let k_dim = o.len();
        if f.cod() != cod + k_dim {
            return Err(Error::Dimension(format!(
                "channel map has codomain {}, expected {} outputs and {} conditions",
                f.cod(),
                cod,
                k_dim
            )));
        }
        Ok(Channel { cod, k_dim, f, o })
    }

    /// A channel without conditions.
    pub fn lift(g: GaussMap) -> Self {
        Channel { cod: g.cod(), k_dim: 0, f: g, o: Vector::zeros(0) }
    }

    pub fn state(psi: &GaussState) -> Self {
        Self::lift(psi.to_map())
    }

    /// The effect `dim(o) ⇝ 0` requiring its input to equal `o`.
    pub fn observe(o: &Vector) -> Self {
        Channel { cod: 0, k_dim: o.len(), f: GaussMap::identity(o.len()), o: o.clone() }
    }

    pub fn identity(n: usize) -> Self {
        Self::lift(GaussMap::identity(n))
    }

    pub fn dom(&self) -> usize {
        self.f.dom()
    }

    pub fn cod(&self) -> usize {
        self.cod
    }

    pub fn k_dim(&self) -> usize {
        self.k_dim
    }

    pub fn map(&self) -> &GaussMap {
        &self.f
    }

    pub fn observation(&self) -> &Vector {
        &self.o
    }

    /// `self ∘ f`. Condition wires of the result are `self`'s followed by `f`'s.
    pub fn compose(&self, f: &Channel) -> Result<Channel> {
        if self.dom() != f.cod {
            return Err(Error::Dimension(format!(
                "cannot compose channel {}⇝{} after {}⇝{}",
                self.dom(),
                self.cod,
                f.dom(),
                f.cod
            )));
        }
        let m = self.f.tensor(&GaussMap::identity(f.k_dim)).compose(&f.f)?;
        Ok(Channel {
            cod: self.cod,
            k_dim: self.k_dim + f.k_dim,
            f: m,
            o: concat(&self.o, &f.o),
        })
    }

    pub fn tensor(&self, g: &Channel) -> Channel {
        let (y1, k1, y2, k2) = (self.cod, self.k_dim, g.cod, g.k_dim);
        // f ⊗ g lands in Y1 K1 Y2 K2; move K1 behind Y2.
        let order: Vec<usize> = (0..y1)
            .chain(y1 + k1..y1 + k1 + y2)
            .chain(y1..y1 + k1)
            .chain(y1 + k1 + y2..y1 + k1 + y2 + k2)
            .collect();
        let perm = GaussMap::selection(y1 + k1 + y2 + k2, &order);
        let m = perm.compose(&self.f.tensor(&g.f)).expect("permutation matches");
        Channel { cod: y1 + y2, k_dim: k1 + k2, f: m, o: concat(&self.o, &g.o) }
    }

    /// Evaluates a channel out of `0`.
    pub fn eval_state(&self) -> Result<StateResult> {
        self.eval_state_tol(DEFAULT_TOL)
    }

    pub fn eval_state_tol(&self, tol: f64) -> Result<StateResult> {
        if self.dom() != 0 {
            return Err(Error::Dimension(format!(
                "eval_state needs a closed channel, domain is {}",
                self.dom()
            )));
        }
        let problem = InferenceProblem::new(self.f.as_state(), self.o.clone())?;
        Ok(match problem.solve_tol(tol) {
            Some(post) => StateResult::Posterior(post),
            None => StateResult::Bottom,
        })
    }

    /// `(id ⊗ self) ∘ copy`, keeping the input alongside the output.
    pub fn with_input(&self) -> Channel {
        let n = self.dom();
        Channel::identity(n)
            .tensor(self)
            .compose(&Channel::lift(GaussMap::copy(n)))
            .expect("shapes agree")
    }

    pub fn canonicalize(&self) -> CanonicalChannel {
        self.canonicalize_tol(DEFAULT_TOL)
    }

    /// Normal form: RREF of the input part of the conditions, closed
    /// conditions on the noise solved, and pivot inputs substituted out of
    /// the output.
    pub fn canonicalize_tol(&self, tol: f64) -> CanonicalChannel {
        let (m, ny, k) = (self.dom(), self.cod, self.k_dim);
        let ys: Vec<usize> = (0..ny).collect();
        let ks: Vec<usize> = (ny..ny + k).collect();
        let all_x: Vec<usize> = (0..m).collect();
        let f_full = self.f.matrix();
        let b_full = self.f.offset();
        let l = self.f.noise().factor();
        let p = l.ncols();
        let all_z: Vec<usize> = (0..p).collect();

        let f_y = select(f_full, &ys, &all_x);
        let f_k = select(f_full, &ks, &all_x);
        let l_y = select(&l, &ys, &all_z);
        let l_k = select(&l, &ks, &all_z);
        let rhs = &self.o - select_vec(b_full, &ks);

        // Condition: F_K x + L_K z = o − b_K. Row-reduce on the x part.
        let (r, s) = rref_transform(&f_k);
        let rank = pivot_columns(&r).len();
        let sl = &s * &l_k;
        let sc = &s * rhs;
        let top: Vec<usize> = (0..rank).collect();
        let rest: Vec<usize> = (rank..k).collect();
        let a = select(&r, &top, &all_x);
        let b1 = select(&sl, &top, &all_z);
        let c1 = select_vec(&sc, &top);
        let b2 = select(&sl, &rest, &all_z);
        let c2 = select_vec(&sc, &rest);

        // Rows with zero x-part constrain the noise alone: B₂ z = c₂.
        let z_model = GaussMap::identity(p)
            .tensor(&GaussMap::linear(b2.clone()))
            .compose(&GaussMap::copy(p))
            .expect("shapes agree")
            .apply(&GaussState::standard(p))
            .expect("shapes agree");
        let z_post = match InferenceProblem::new(z_model, c2).expect("shapes agree").solve_tol(tol) {
            Some(post) => post,
            None => return CanonicalChannel::Bottom,
        };

        // Substitute pivot inputs: A x = c₁ − B₁ z, pivots form an identity block.
        let pivots = pivot_columns(&a);
        let d_p = select(&f_y, &ys, &pivots);
        let d0 = {
            let mut d = &f_y - &d_p * &a;
            for &j in &pivots {
                d.column_mut(j).fill(0.0);
            }
            d
        };
        let b_y = select_vec(b_full, &ys);
        let out_const = b_y + &d_p * &c1;
        let out_noise = &l_y - &d_p * &b1;

        // (e, g) = (c₁ − B₁ z, const + (L_Y − D_p B₁) z) with z ~ z_post.
        let lin = vstack(&(-&b1), &out_noise);
        let offset = concat(&c1, &out_const);
        let joint = GaussMap::deterministic(lin, offset)
            .expect("shapes agree")
            .apply(&z_post)
            .expect("shapes agree");
        CanonicalChannel::Form { a, d0, joint }
    }

    pub fn equiv(&self, other: &Channel) -> Result<bool> {
        self.equiv_tol(other, DEFAULT_TOL)
    }

    pub fn equiv_tol(&self, other: &Channel, tol: f64) -> Result<bool> {
        self.check_same_shape(other)?;
        Ok(self.canonicalize_tol(tol).approx_eq(&other.canonicalize_tol(tol), tol))
    }

    /// Semi-decision by evaluation: for each prior `φ`, compare the
    /// posteriors of `(id ⊗ c) ∘ copy ∘ φ`.
    pub fn probe_equiv(&self, other: &Channel, priors: &[GaussState]) -> Result<bool> {
        self.probe_equiv_tol(other, priors, DEFAULT_TOL)
    }

    pub fn probe_equiv_tol(&self, other: &Channel, priors: &[GaussState], tol: f64) -> Result<bool> {
        self.check_same_shape(other)?;
        let (c1, c2) = (self.with_input(), other.with_input());
        for phi in priors {
            let st = Channel::state(phi);
            let r1 = c1.compose(&st)?.eval_state_tol(tol)?;
            let r2 = c2.compose(&st)?.eval_state_tol(tol)?;
            if !r1.approx_eq(&r2, tol) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn check_same_shape(&self, other: &Channel) -> Result<()> {
        if self.dom() != other.dom() || self.cod != other.cod {
            return Err(Error::Dimension(format!(
                "channels {}⇝{} and {}⇝{} differ in shape",
                self.dom(),
                self.cod,
                other.dom(),
                other.cod
            )));
        }
        Ok(())
    }
}

/// Prior family used to cross-check equivalence: the standard normal,
/// 8 random full-rank Gaussians, 8 random rank-deficient ones and 4 point
/// masses, all over `dim` coordinates and all well conditioned.
pub fn probe_priors(dim: usize, seed: u64) -> Vec<GaussState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![GaussState::standard(dim)];
    for rank in std::iter::repeat(dim).take(8).chain((0..8).map(|i| i % dim.max(1))) {
        out.push(probe_state(&mut rng, dim, rank));
    }
    for _ in 0..4 {
        out.push(random_state(&mut rng, dim, 0));
    }
    out
}

/// Rank-`rank` Gaussian with singular values of its factor in `[0.5, 2]`,
/// so that evaluating against it loses little precision.
fn probe_state<R: Rng>(rng: &mut R, dim: usize, rank: usize) -> GaussState {
    let mean = Vector::from_fn(dim, |_, _| rng.gen_range(-3.0..3.0));
    let q = Matrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
    let s = Matrix::from_diagonal(&Vector::from_fn(rank, |_, _| rng.gen_range(0.5..2.0)));
    let l = q.columns(0, rank) * s;
    GaussState::new(mean, PsdMatrix::gram(&l)).expect("shapes agree")
}

/// A Gaussian over `dim` coordinates whose covariance has rank at most `rank`.
pub fn random_state<R: Rng>(rng: &mut R, dim: usize, rank: usize) -> GaussState {
    let mean = Vector::from_fn(dim, |_, _| rng.gen_range(-3.0..3.0));
    let l = Matrix::from_fn(dim, rank, |_, _| rng.gen_range(-2.0..2.0));
    GaussState::new(mean, PsdMatrix::gram(&l)).expect("shapes agree")
}

/// A random Gaussian map `dom → cod` with noise of rank at most `rank`.
pub fn random_map<R: Rng>(rng: &mut R, dom: usize, cod: usize, rank: usize) -> GaussMap {
    let a = Matrix::from_fn(cod, dom, |_, _| rng.gen_range(-2.0..2.0));
    let b = Vector::from_fn(cod, |_, _| rng.gen_range(-2.0..2.0));
    let l = Matrix::from_fn(cod, rank, |_, _| rng.gen_range(-1.5..1.5));
    GaussMap::new(a, b, PsdMatrix::gram(&l)).expect("shapes agree")
}

impl fmt::Display for CanonicalChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CanonicalChannel::Bottom => write!(f, "⊥"),
            CanonicalChannel::Form { a, d0, joint } => {
                write!(f, "condition A x = e\n  A = ")?;
                write_mat(f, a)?;
                write!(f, "\n  output D₀ x + g\n  D₀ = ")?;
                write_mat(f, d0)?;
                write!(f, "\n  (e, g) ~ {joint}")
            }
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ⇝ {} via {} with conditions =:= ", self.dom(), self.cod, self.f)?;
        write_vec(f, &self.o)
    }
}
