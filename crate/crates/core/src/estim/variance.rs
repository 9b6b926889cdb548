//! Dependency-neighborhood sandwich covariance.

use nalgebra::{DMatrix, DVector};

use crate::data::DepNeighborhoods;
use crate::error::{Error, Result};

/// `Ĥ`, `Ω̂` and `Ĥ⁻¹ Ω̂ Ĥ⁻¹ / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sandwich {
    pub hessian: DMatrix<f64>,
    pub meat: DMatrix<f64>,
    pub cov: DMatrix<f64>,
}

/// `Ω̂ = N⁻¹ Σ_i Σ_{j∈Δ(i)} ψ_i ψ_j′` for influence terms `ψ_i = g_i + δ_i`.
pub fn meat(psi: &[Vec<f64>], nbrs: &DepNeighborhoods) -> Result<DMatrix<f64>> {
    let n = psi.len();
    if nbrs.len() != n {
        return Err(Error::DimMismatch { expected: n, got: nbrs.len() });
    }
    let p = psi.first().map_or(0, Vec::len);
    let mut omega = DMatrix::zeros(p, p);
    for i in 0..n {
        // Σ_{j∈Δ(i)} ψ_j, then one outer product per unit
        let mut acc = vec![0.0; p];
        for &j in nbrs.get(i) {
            for k in 0..p {
                acc[k] += psi[j][k];
            }
        }
        let a = DVector::from_column_slice(&psi[i]);
        let b = DVector::from_vec(acc);
        omega += a * b.transpose();
    }
    omega /= n.max(1) as f64;
    Ok((&omega + omega.transpose()) * 0.5)
}

/// Sandwich covariance from the Hessian, scores `g_i` and optional first-stage
/// corrections `δ_i`.
pub fn sandwich_variance(
    hessian: &DMatrix<f64>,
    scores: &[Vec<f64>],
    delta: Option<&[Vec<f64>]>,
    nbrs: &DepNeighborhoods,
) -> Result<Sandwich> {
    let n = scores.len();
    let psi: Vec<Vec<f64>> = match delta {
        Some(d) => {
            if d.len() != n {
                return Err(Error::DimMismatch { expected: n, got: d.len() });
            }
            scores.iter().zip(d).map(|(g, dl)| g.iter().zip(dl).map(|(a, b)| a + b).collect()).collect()
        }
        None => scores.to_vec(),
    };
    let omega = meat(&psi, nbrs)?;
    let h_inv = hessian.clone().try_inverse().ok_or(Error::SingularHessian)?;
    if h_inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularHessian);
    }
    let cov = &h_inv * &omega * &h_inv / n.max(1) as f64;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(Sandwich { hessian: hessian.clone(), meat: omega, cov })
}
