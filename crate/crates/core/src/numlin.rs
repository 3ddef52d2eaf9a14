//! Dense real linear algebra used by the Gaussian side of the crate.
//!
//! Matrices are `nalgebra` dense matrices. Covariances go through [`PsdMatrix`],
//! which symmetrizes and clamps small negative eigenvalues on construction.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative tolerance for equality of means, covariances and support tests.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Relative cutoff for eigenvalues, singular values and elimination pivots.
pub const CUTOFF: f64 = 1e-9;

/// `|a - b| <= tol * max(1, |a|, |b|)`.
pub fn approx_eq(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * 1f64.max(a.abs()).max(b.abs())
}

pub fn mat_approx_eq(a: &Matrix, b: &Matrix, tol: f64) -> bool {
    a.shape() == b.shape() && a.iter().zip(b.iter()).all(|(x, y)| approx_eq(*x, *y, tol))
}

pub fn vec_approx_eq(a: &Vector, b: &Vector, tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| approx_eq(*x, *y, tol))
}

/// Maximum absolute row sum.
pub fn norm_inf(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn check_finite(m: &Matrix) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// A symmetric positive semidefinite matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PsdMatrix(Matrix);

impl PsdMatrix {
    /// Validates symmetry and semidefiniteness, then re-symmetrizes and clamps
    /// eigenvalues in `[-tol_psd, 0)` to zero.
    pub fn new(m: Matrix) -> Result<Self> {
        check_finite(&m)?;
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "covariance must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let tol_sym = CUTOFF * 1f64.max(norm_inf(&m));
        for i in 0..m.nrows() {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > tol_sym {
                    return Err(Error::NotSymmetric);
                }
            }
        }
        let sym = symmetrize(&m);
        if sym.nrows() == 0 {
            return Ok(PsdMatrix(sym));
        }
        let eig = SymmetricEigen::new(sym.clone());
        let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let tol_psd = CUTOFF * 1f64.max(top);
        if eig.eigenvalues.iter().any(|&l| l < -tol_psd) {
            return Err(Error::NotPsd);
        }
        if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
            return Ok(PsdMatrix(sym));
        }
        Ok(PsdMatrix(rebuild(&eig, |l| l.max(0.0))))
    }

    /// Symmetrizes and clamps without rejecting: negative eigenvalues of any
    /// size are set to zero. Used on outputs of formulas that are PSD in exact
    /// arithmetic.
    pub fn clamp(m: Matrix) -> Self {
        let sym = symmetrize(&m);
        if sym.nrows() == 0 {
            return PsdMatrix(sym);
        }
        let eig = SymmetricEigen::new(sym.clone());
        if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
            return PsdMatrix(sym);
        }
        PsdMatrix(rebuild(&eig, |l| l.max(0.0)))
    }

    pub fn zeros(n: usize) -> Self {
        PsdMatrix(Matrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        PsdMatrix(Matrix::identity(n, n))
    }

    /// `A Aᵀ`.
    pub fn gram(a: &Matrix) -> Self {
        Self::clamp(a * a.transpose())
    }

    pub fn side(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn block_diag(&self, other: &PsdMatrix) -> PsdMatrix {
        PsdMatrix(block_diag(&self.0, &other.0))
    }

    /// Principal submatrix on `idx`.
    pub fn principal(&self, idx: &[usize]) -> PsdMatrix {
        PsdMatrix(select(&self.0, idx, idx))
    }

    /// `M = L Lᵀ` with `L = Q Λ^{1/2}`, dropping columns of zero eigenvalue.
    pub fn factor(&self) -> Matrix {
        let n = self.side();
        if n == 0 {
            return Matrix::zeros(0, 0);
        }
        let eig = SymmetricEigen::new(self.0.clone());
        let cut = eig_cutoff(&eig.eigenvalues);
        let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > cut).collect();
        let mut l = Matrix::zeros(n, keep.len());
        for (c, &i) in keep.iter().enumerate() {
            let s = eig.eigenvalues[i].sqrt();
            for r in 0..n {
                l[(r, c)] = eig.eigenvectors[(r, i)] * s;
            }
        }
        l
    }

    pub fn eigenvalues(&self) -> Vector {
        if self.side() == 0 {
            return Vector::zeros(0);
        }
        SymmetricEigen::new(self.0.clone()).eigenvalues
    }
}

fn eig_cutoff(eigenvalues: &Vector) -> f64 {
    let top = eigenvalues.iter().map(|l| l.abs()).fold(0.0, f64::max);
    CUTOFF * 1f64.max(top)
}

fn rebuild(eig: &SymmetricEigen<f64, nalgebra::Dyn>, f: impl Fn(f64) -> f64) -> Matrix {
    let q = &eig.eigenvectors;
    let d = Matrix::from_diagonal(&eig.eigenvalues.map(f));
    symmetrize(&(q * d * q.transpose()))
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn block_diag(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), b.shape()).copy_from(b);
    out
}

pub fn vstack(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.ncols(), b.ncols());
    let mut out = Matrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), 0), b.shape()).copy_from(b);
    out
}

pub fn hstack(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.nrows(), b.nrows());
    let mut out = Matrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((0, a.ncols()), b.shape()).copy_from(b);
    out
}

pub fn concat(a: &Vector, b: &Vector) -> Vector {
    Vector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).cloned())
}

pub fn select(m: &Matrix, rows: &[usize], cols: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn select_vec(v: &Vector, idx: &[usize]) -> Vector {
    Vector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Moore-Penrose pseudoinverse of a PSD matrix via its eigendecomposition.
/// Eigenvalues at or below `1e-9 * max(1, λ_max)` are treated as zero.
pub fn pinv(m: &PsdMatrix) -> Matrix {
    let n = m.side();
    if n == 0 {
        return Matrix::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(m.as_matrix().clone());
    let cut = eig_cutoff(&eig.eigenvalues);
    rebuild(&eig, |l| if l > cut { 1.0 / l } else { 0.0 })
}

/// Whether `v` lies in the column space of `sigma`:
/// `‖Σ Σ⁺ v − v‖ ≤ tol · max(1, ‖v‖)`. The projector `Σ Σ⁺` is formed from
/// the retained eigenvectors, so its accuracy does not depend on the spread
/// of the retained eigenvalues.
pub fn in_col_space(sigma: &PsdMatrix, v: &Vector, tol: f64) -> Result<bool> {
    if v.len() != sigma.side() {
        return Err(Error::Dimension(format!(
            "vector of length {} against {}x{} matrix",
            v.len(),
            sigma.side(),
            sigma.side()
        )));
    }
    if v.is_empty() {
        return Ok(true);
    }
    let eig = SymmetricEigen::new(sigma.as_matrix().clone());
    let cut = eig_cutoff(&eig.eigenvalues);
    let mut proj = Vector::zeros(v.len());
    for (i, l) in eig.eigenvalues.iter().enumerate() {
        if *l > cut {
            let q = eig.eigenvectors.column(i);
            proj.axpy(q.dot(v), &q, 1.0);
        }
    }
    Ok((proj - v).norm() <= tol * 1f64.max(v.norm()))
}

/// Reduced row echelon form `R = S·M` with `S` invertible.
///
/// Partial pivoting by absolute value; entries whose magnitude falls below
/// `1e-9 · max(1, max|M|)` are snapped to exactly zero, and pivots are exactly one.
pub fn rref_transform(m: &Matrix) -> (Matrix, Matrix) {
    let (rows, cols) = m.shape();
    let mut r = m.clone();
    let mut s = Matrix::identity(rows, rows);
    let scale = m.iter().map(|x| x.abs()).fold(1.0, f64::max);
    let cut = CUTOFF * scale;
    let snap = |r: &mut Matrix| {
        for x in r.iter_mut() {
            if x.abs() <= cut {
                *x = 0.0;
            }
        }
    };
    snap(&mut r);
    let mut lead = 0;
    for col in 0..cols {
        if lead == rows {
            break;
        }
        let (piv, best) = (lead..rows)
            .map(|i| (i, r[(i, col)].abs()))
            .fold((lead, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best <= cut {
            for i in lead..rows {
                r[(i, col)] = 0.0;
            }
            continue;
        }
        r.swap_rows(lead, piv);
        s.swap_rows(lead, piv);
        let p = r[(lead, col)];
        r.row_mut(lead).scale_mut(1.0 / p);
        s.row_mut(lead).scale_mut(1.0 / p);
        r[(lead, col)] = 1.0;
        for i in 0..rows {
            if i == lead {
                continue;
            }
            let f = r[(i, col)];
            if f != 0.0 {
                let rl = r.row(lead).clone_owned();
                let sl = s.row(lead).clone_owned();
                let ri = r.row(i) - rl * f;
                r.set_row(i, &ri);
                let si = s.row(i) - sl * f;
                s.set_row(i, &si);
                r[(i, col)] = 0.0;
            }
        }
        snap(&mut r);
        lead += 1;
    }
    (r, s)
}

/// Pivot columns of a matrix already in reduced row echelon form, one per
/// nonzero row.
pub fn pivot_columns(r: &Matrix) -> Vec<usize> {
    r.row_iter()
        .filter_map(|row| row.iter().position(|&x| x != 0.0))
        .collect()
}

/// Finds `S` invertible and `T` orthogonal with `S·A·T⁻¹ = [[I_r, 0], [0, 0]]`,
/// where `r` is the numerical rank of `A`. The rows of `T` are the leading
/// right singular vectors completed to a basis. With `B = A·V_rᵀ = QR`, the
/// first `r` rows of `S` are `R⁻¹Qᵀ` and the rest span the cokernel.
pub fn rank_split(a: &Matrix) -> (Matrix, Matrix, usize) {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return (Matrix::identity(m, m), Matrix::identity(n, n), 0);
    }
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.expect("svd v_t");
    let top = svd.singular_values.max();
    let cut = CUTOFF * 1f64.max(top);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > cut).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let rank = order.len();
    let mut v_rows: Vec<Vector> = order.iter().map(|&i| v_t.row(i).transpose()).collect();
    complete_basis(&mut v_rows, n);
    let t = Matrix::from_fn(n, n, |i, j| v_rows[i][j]);
    if rank == 0 {
        return (Matrix::identity(m, m), t, 0);
    }
    let b = a * t.rows(0, rank).transpose();
    let qr = b.qr();
    let q = qr.q();
    let r_inv = qr.r().try_inverse().expect("columns above the cutoff are independent");
    let mut u_cols: Vec<Vector> = (0..rank).map(|i| q.column(i).clone_owned()).collect();
    complete_basis(&mut u_cols, m);
    let mut s = Matrix::from_fn(m, m, |i, j| u_cols[i][j]);
    let head = &r_inv * q.transpose();
    s.rows_mut(0, rank).copy_from(&head);
    (s, t, rank)
}

/// Extends an orthonormal list to an orthonormal basis of `R^n` by
/// Gram-Schmidt against the standard basis.
fn complete_basis(basis: &mut Vec<Vector>, n: usize) {
    for v in basis.iter_mut() {
        let nv = v.norm();
        if nv > 0.0 {
            *v /= nv;
        }
    }
    let mut e = 0;
    while basis.len() < n && e < n {
        let mut w = Vector::zeros(n);
        w[e] = 1.0;
        for _ in 0..2 {
            for b in basis.iter() {
                let d = b.dot(&w);
                w.axpy(-d, b, 1.0);
            }
        }
        let nw = w.norm();
        if nw > 1e-6 {
            basis.push(w / nw);
        }
        e += 1;
    }
}

/// Conditions `N(μ, Σ)` on its trailing coordinates being equal to `a`.
/// Returns the posterior over the first `n_keep` coordinates, or `None` when
/// `a` lies outside the support of the observed block.
pub fn condition_gaussian(
    mu: &Vector,
    sigma: &PsdMatrix,
    n_keep: usize,
    a: &Vector,
) -> Result<Option<(Vector, PsdMatrix)>> {
    condition_gaussian_tol(mu, sigma, n_keep, a, DEFAULT_TOL)
}

/// [`condition_gaussian`] with an explicit support tolerance.
pub fn condition_gaussian_tol(
    mu: &Vector,
    sigma: &PsdMatrix,
    n_keep: usize,
    a: &Vector,
    tol: f64,
) -> Result<Option<(Vector, PsdMatrix)>> {
    let n = mu.len();
    if sigma.side() != n || n_keep > n || a.len() != n - n_keep {
        return Err(Error::Dimension(format!(
            "condition_gaussian: mean {}, covariance {}, keep {}, observation {}",
            n,
            sigma.side(),
            n_keep,
            a.len()
        )));
    }
    let keep: Vec<usize> = (0..n_keep).collect();
    let obs: Vec<usize> = (n_keep..n).collect();
    let s = sigma.as_matrix();
    let s11 = select(s, &keep, &keep);
    let s12 = select(s, &keep, &obs);
    let s22 = sigma.principal(&obs);
    let mu1 = select_vec(mu, &keep);
    let mu2 = select_vec(mu, &obs);
    let resid = a - mu2;
    if !in_col_space(&s22, &resid, tol)? {
        return Ok(None);
    }
    let gain = &s12 * pinv(&s22);
    let mean = mu1 + &gain * resid;
    let cov = s11 - &gain * s12.transpose();
    Ok(Some((mean, PsdMatrix::clamp(cov))))
}
