//! Conditioning a joint Gaussian directly, including degenerate covariances.
//!
//! Run with `cargo run --example gaussian_conditioning`.

use exactcond::gauss::{GaussState, InferenceProblem};
use exactcond::numlin::{condition_gaussian, Matrix, PsdMatrix, Vector};

fn main() -> exactcond::Result<()> {
    // (x, y) independent standard normals, observe x − y = 0: the joint of
    // (x, y, x − y) is singular but conditioning is still exact.
    let a = Matrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, -1.0]);
    let sigma = PsdMatrix::new(&a * a.transpose())?;
    let mu = Vector::zeros(3);
    if let Some((m, s)) = condition_gaussian(&mu, &sigma, 2, &Vector::from_element(1, 0.0))? {
        println!("x − y = 0: {}", GaussState::new(m, s)?);
    }

    // The same joint, observed at a point outside its support.
    let point = GaussState::point(&Vector::from_vec(vec![1.0, 2.0]));
    let p = InferenceProblem::new(point, Vector::from_element(1, 3.0))?;
    println!("observing a constant 2 as 3: {:?}", p.solve().map(|s| s.to_string()));

    let psi = GaussState::new(mu, sigma)?;
    let joint = InferenceProblem::new(psi, Vector::from_element(1, 0.5))?;
    println!("x − y = 0.5: {}", joint.solve().expect("in the support"));
    Ok(())
}
