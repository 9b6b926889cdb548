//! Weighted least squares on posterior-mixed CASF values.

use nalgebra::{DMatrix, DVector};

use super::model::{model_gradient, CasfModel, LatentCell};
use crate::error::{Error, Result};
use crate::ident::LatentPosterior;

const GN_MAX_ITER: usize = 200;
const GN_GRAD_TOL: f64 = 1e-8;
const GN_MAX_HALVINGS: usize = 30;

/// Finite mixture over latent cells `(d, s*, z, n*)` sharing `d` and `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub d: u8,
    pub z: Vec<f64>,
    /// `(s*, n*, weight)`.
    pub atoms: Vec<(u32, u32, f64)>,
}

impl Mixture {
    pub fn point(d: u8, s: u32, n: u32, z: &[f64]) -> Self {
        Mixture { d, z: z.to_vec(), atoms: vec![(s, n, 1.0)] }
    }

    pub fn from_posterior(p: &LatentPosterior) -> Self {
        Mixture { d: p.d, z: p.z.clone(), atoms: p.support().map(|((s, n), w)| (s, n, w)).collect() }
    }

    /// Same latent law, different own treatment.
    pub fn with_d(&self, d: u8) -> Self {
        Mixture { d, ..self.clone() }
    }

    /// `Σ_j m*(x*_j; θ) φ_j`.
    pub fn mean(&self, model: &dyn CasfModel, theta: &[f64]) -> f64 {
        self.atoms.iter().map(|&(s, n, w)| w * model.value(&LatentCell::new(self.d, s, &self.z, n), theta)).sum()
    }

    /// `Σ_j ∂m*(x*_j; θ)/∂θ φ_j`; the mixed regressor for linear models.
    pub fn gradient(&self, model: &dyn CasfModel, theta: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut g = vec![0.0; out.len()];
        for &(s, n, w) in &self.atoms {
            model_gradient(model, &LatentCell::new(self.d, s, &self.z, n), theta, &mut g);
            for (o, v) in out.iter_mut().zip(&g) {
                *o += w * v;
            }
        }
    }
}

/// `m(x; θ, φ)`: the observed-cell mean implied by the latent posterior.
pub fn mixed_mean(posterior: &LatentPosterior, theta: &[f64], model: &dyn CasfModel) -> Result<f64> {
    if theta.len() != model.dim() {
        return Err(Error::DimMismatch { expected: model.dim(), got: theta.len() });
    }
    Ok(Mixture::from_posterior(posterior).mean(model, theta))
}

/// Inputs of the second-stage objective `N⁻¹ Σ τ_i [Y_i − m(X_i; θ, φ)]²`.
#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub y: &'a [f64],
    pub tau: &'a [f64],
    pub mix: &'a [&'a Mixture],
    pub model: &'a dyn CasfModel,
}

impl Problem<'_> {
    fn check(&self) -> Result<()> {
        let n = self.y.len();
        if n == 0 {
            return Err(Error::EmptySample);
        }
        if self.tau.len() != n {
            return Err(Error::DimMismatch { expected: n, got: self.tau.len() });
        }
        if self.mix.len() != n {
            return Err(Error::DimMismatch { expected: n, got: self.mix.len() });
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn objective(&self, theta: &[f64]) -> f64 {
        let total: f64 = (0..self.n())
            .filter(|&i| self.tau[i] != 0.0)
            .map(|i| {
                let r = self.y[i] - self.mix[i].mean(self.model, theta);
                self.tau[i] * r * r
            })
            .sum();
        total / self.n() as f64
    }

    /// Analytic `∂L_N/∂θ = −2 N⁻¹ Σ τ_i (Y_i − m_i) ∂m_i/∂θ`.
    pub fn objective_gradient(&self, theta: &[f64]) -> Vec<f64> {
        let p = theta.len();
        let mut out = vec![0.0; p];
        let mut g = vec![0.0; p];
        for i in 0..self.n() {
            if self.tau[i] == 0.0 {
                continue;
            }
            let r = self.y[i] - self.mix[i].mean(self.model, theta);
            self.mix[i].gradient(self.model, theta, &mut g);
            for k in 0..p {
                out[k] -= 2.0 * self.tau[i] * r * g[k];
            }
        }
        let n = self.n() as f64;
        out.iter_mut().for_each(|v| *v /= n);
        out
    }

    /// Scores `g_i = τ_i (Y_i − m_i) ∂m_i/∂θ`.
    pub fn scores(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        let p = theta.len();
        (0..self.n())
            .map(|i| {
                let mut g = vec![0.0; p];
                if self.tau[i] != 0.0 {
                    let r = self.y[i] - self.mix[i].mean(self.model, theta);
                    self.mix[i].gradient(self.model, theta, &mut g);
                    g.iter_mut().for_each(|v| *v *= self.tau[i] * r);
                }
                g
            })
            .collect()
    }

    /// Gauss-Newton Hessian `N⁻¹ Σ τ_i ∂m_i ∂m_i′`, exact for linear models.
    pub fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let p = theta.len();
        let mut h = DMatrix::zeros(p, p);
        let mut g = vec![0.0; p];
        for i in 0..self.n() {
            if self.tau[i] == 0.0 {
                continue;
            }
            self.mix[i].gradient(self.model, theta, &mut g);
            let gv = DVector::from_column_slice(&g);
            h += self.tau[i] * &gv * gv.transpose();
        }
        h / self.n() as f64
    }
}

/// Second-stage estimate with optional sandwich inference.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaFit {
    pub names: Vec<String>,
    pub theta: Vec<f64>,
    pub hessian: DMatrix<f64>,
    pub meat: Option<DMatrix<f64>>,
    /// `Ĥ⁻¹ Ω̂ Ĥ⁻¹ / N`.
    pub cov: Option<DMatrix<f64>>,
    pub objective: f64,
    /// Units with positive trimming weight.
    pub n_used: usize,
    pub iterations: usize,
}

impl ThetaFit {
    pub fn std_errors(&self) -> Option<Vec<f64>> {
        self.cov.as_ref().map(|c| (0..c.nrows()).map(|k| c[(k, k)].max(0.0).sqrt()).collect())
    }
}

/// Weighted least-squares solution through an SVD with a relative rank
/// tolerance.
fn weighted_lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let p = x.ncols();
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * (x.nrows().max(p) as f64);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < p {
        return Err(Error::RankDeficient { rank, dim: p });
    }
    svd.solve(y, tol).map_err(|e| Error::BadArgs(e.to_string()))
}

/// Minimizes the weighted second-stage objective.
///
/// Linear models solve the weighted normal equations directly. Other models
/// run Gauss-Newton with step halving from `start` (zeros when `None`).
pub fn fit_theta(problem: &Problem<'_>, start: Option<&[f64]>) -> Result<ThetaFit> {
    problem.check()?;
    let model = problem.model;
    let p = model.dim();
    let used: Vec<usize> = (0..problem.n()).filter(|&i| problem.tau[i] > 0.0).collect();
    if used.len() < p {
        return Err(Error::RankDeficient { rank: used.len(), dim: p });
    }
    let names = model.param_names();
    let theta0 = start.map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; p]);
    if theta0.len() != p {
        return Err(Error::DimMismatch { expected: p, got: theta0.len() });
    }

    let design = |theta: &[f64]| -> (DMatrix<f64>, DVector<f64>) {
        let mut x = DMatrix::zeros(used.len(), p);
        let mut r = DVector::zeros(used.len());
        let mut g = vec![0.0; p];
        for (row, &i) in used.iter().enumerate() {
            let w = problem.tau[i].sqrt();
            problem.mix[i].gradient(model, theta, &mut g);
            for k in 0..p {
                x[(row, k)] = w * g[k];
            }
            r[row] = w * (problem.y[i] - problem.mix[i].mean(model, theta));
        }
        (x, r)
    };

    if model.is_linear() {
        let zero = vec![0.0; p];
        let (x, y) = design(&zero);
        let theta: Vec<f64> = weighted_lstsq(&x, &y)?.iter().copied().collect();
        return Ok(ThetaFit {
            names,
            hessian: problem.hessian(&theta),
            objective: problem.objective(&theta),
            theta,
            meat: None,
            cov: None,
            n_used: used.len(),
            iterations: 1,
        });
    }

    let mut theta = theta0;
    let mut obj = problem.objective(&theta);
    let grad_norm = |t: &[f64]| problem.objective_gradient(t).iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut iterations = 0;
    while iterations < GN_MAX_ITER {
        if grad_norm(&theta) < GN_GRAD_TOL {
            break;
        }
        iterations += 1;
        let (x, r) = design(&theta);
        let step = weighted_lstsq(&x, &r)?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=GN_MAX_HALVINGS {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + scale * s).collect();
            let c_obj = problem.objective(&cand);
            if c_obj <= obj {
                theta = cand;
                obj = c_obj;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let gn = grad_norm(&theta);
    if gn >= GN_GRAD_TOL {
        return Err(Error::NoConvergence { iterations, grad_norm: gn });
    }
    Ok(ThetaFit {
        names,
        hessian: problem.hessian(&theta),
        objective: obj,
        theta,
        meat: None,
        cov: None,
        n_used: used.len(),
        iterations,
    })
}
