//! Observed information by central differences of the analytic score.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::model::{score, Dataset, ModelParams};

/// Central-difference step `eps^(1/3) * max(1, |x|)`.
pub fn fd_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(1.0)
}

/// Determinant by LU with partial pivoting.
pub fn determinant(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    m.clone().lu().determinant()
}

fn score_at(data: &Dataset, theta: &DVector<f64>) -> Result<DVector<f64>> {
    score(data, &ModelParams::from_vector(theta)).map_err(|e| match e {
        Error::Domain(msg) => Error::Domain(format!("finite-difference step left the parameter space: {msg}")),
        other => other,
    })
}

/// Negative Hessian of the log likelihood over the coordinates in `coords`
/// (indices into the `theta` vector), symmetrized.
fn information_block(data: &Dataset, params: &ModelParams, coords: &[usize]) -> Result<DMatrix<f64>> {
    let theta = params.to_vector();
    let m = coords.len();
    let mut jac = DMatrix::zeros(m, m);
    for (col, &i) in coords.iter().enumerate() {
        let h = fd_step(theta[i]);
        let mut up = theta.clone();
        up[i] += h;
        let mut dn = theta.clone();
        dn[i] -= h;
        let gu = score_at(data, &up)?;
        let gd = score_at(data, &dn)?;
        let width = up[i] - dn[i];
        for (row, &r) in coords.iter().enumerate() {
            jac[(row, col)] = -(gu[r] - gd[r]) / width;
        }
    }
    let sym = (&jac + jac.transpose()) * 0.5;
    if sym.iter().all(|x| x.is_finite()) {
        Ok(sym)
    } else {
        Err(Error::Domain("non-finite observed information".into()))
    }
}

/// Observed information `j(theta) = -d2 l / dtheta dtheta^T`, `d x d`.
pub fn observed_information(data: &Dataset, params: &ModelParams) -> Result<DMatrix<f64>> {
    let coords: Vec<usize> = (0..data.dim()).collect();
    information_block(data, params, &coords)
}

/// The `(lambda, lambda)` corner of the observed information.
pub fn nuisance_information(data: &Dataset, params: &ModelParams) -> Result<DMatrix<f64>> {
    let coords: Vec<usize> = (1..data.dim()).collect();
    information_block(data, params, &coords)
}

/// Profile information `|j(theta)| / |j_lambda_lambda(theta)|` at the global fit.
pub fn profile_information(data: &Dataset, fit: &FitResult) -> Result<f64> {
    let j = observed_information(data, &fit.params)?;
    profile_information_from(&j)
}

pub(crate) fn profile_information_from(j: &DMatrix<f64>) -> Result<f64> {
    let d = j.nrows();
    let jll = j.view((1, 1), (d - 1, d - 1)).into_owned();
    let det_ll = determinant(&jll);
    if det_ll == 0.0 || !det_ll.is_finite() {
        return Err(Error::Singular("nuisance block of the observed information".into()));
    }
    let jp = determinant(j) / det_ll;
    if !(jp > 0.0 && jp.is_finite()) {
        return Err(Error::Singular(format!("profile information is {jp}")));
    }
    Ok(jp)
}
