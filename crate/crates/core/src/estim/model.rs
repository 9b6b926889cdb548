//! Parametric conditional average structural functions `m*(d, s*, z, n*; θ)`.

use std::fmt;
use std::sync::Arc;

/// One latent exposure cell `x* = (d, s*, z, n*)`.
#[derive(Debug, Clone, Copy)]
pub struct LatentCell<'a> {
    pub d: u8,
    pub s: u32,
    pub n: u32,
    pub z: &'a [f64],
}

impl<'a> LatentCell<'a> {
    pub fn new(d: u8, s: u32, z: &'a [f64], n: u32) -> Self {
        LatentCell { d, s, n, z }
    }
}

pub type FeatureMap = dyn Fn(&LatentCell<'_>, &mut [f64]) + Send + Sync;
pub type ValueFn = dyn Fn(&LatentCell<'_>, &[f64]) -> f64 + Send + Sync;
pub type GradientFn = dyn Fn(&LatentCell<'_>, &[f64], &mut [f64]) + Send + Sync;

/// A CASF known up to a finite-dimensional parameter.
pub trait CasfModel: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &LatentCell<'_>, theta: &[f64]) -> f64;

    /// Writes `∂m*/∂θ` into `out`. Returns `false` when the model has no
    /// analytic derivative, in which case callers fall back to finite
    /// differences.
    fn gradient(&self, _x: &LatentCell<'_>, _theta: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    /// Regressor vector for models linear in `θ`; `false` otherwise.
    fn linear_features(&self, _x: &LatentCell<'_>, _out: &mut [f64]) -> bool {
        false
    }

    fn is_linear(&self) -> bool;

    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|k| format!("theta{k}")).collect()
    }
}

/// `m*(x*; θ) = features(x*)′θ`.
#[derive(Clone)]
pub struct LinearCasf {
    dim: usize,
    names: Vec<String>,
    map: Arc<FeatureMap>,
}

impl fmt::Debug for LinearCasf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearCasf").field("dim", &self.dim).field("names", &self.names).finish()
    }
}

impl LinearCasf {
    pub fn new(names: Vec<String>, map: Arc<FeatureMap>) -> Self {
        LinearCasf { dim: names.len(), names, map }
    }

    /// `(1, d, d·n·z, s, s², s·z, s·n)` with `z` the first covariate.
    pub fn exposure_design() -> Self {
        let names = ["const", "d", "d_n_z", "s", "s_sq", "s_z", "s_n"].iter().map(|s| s.to_string()).collect();
        LinearCasf::new(
            names,
            Arc::new(|x: &LatentCell<'_>, out: &mut [f64]| {
                let d = x.d as f64;
                let s = x.s as f64;
                let n = x.n as f64;
                let z = x.z.first().copied().unwrap_or(0.0);
                out[0] = 1.0;
                out[1] = d;
                out[2] = d * n * z;
                out[3] = s;
                out[4] = s * s;
                out[5] = s * z;
                out[6] = s * n;
            }),
        )
    }

    pub fn features(&self, x: &LatentCell<'_>, out: &mut [f64]) {
        (self.map)(x, out)
    }
}

impl Default for LinearCasf {
    fn default() -> Self {
        LinearCasf::exposure_design()
    }
}

impl CasfModel for LinearCasf {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &LatentCell<'_>, theta: &[f64]) -> f64 {
        let mut f = vec![0.0; self.dim];
        (self.map)(x, &mut f);
        f.iter().zip(theta).map(|(a, b)| a * b).sum()
    }

    fn gradient(&self, x: &LatentCell<'_>, _theta: &[f64], out: &mut [f64]) -> bool {
        (self.map)(x, out);
        true
    }

    fn linear_features(&self, x: &LatentCell<'_>, out: &mut [f64]) -> bool {
        (self.map)(x, out);
        true
    }

    fn is_linear(&self) -> bool {
        true
    }

    fn param_names(&self) -> Vec<String> {
        self.names.clone()
    }
}

/// Arbitrary smooth CASF given by closures; fitted by Gauss-Newton.
#[derive(Clone)]
pub struct FnCasf {
    dim: usize,
    value: Arc<ValueFn>,
    gradient: Option<Arc<GradientFn>>,
}

impl fmt::Debug for FnCasf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnCasf").field("dim", &self.dim).field("analytic_gradient", &self.gradient.is_some()).finish()
    }
}

impl FnCasf {
    pub fn new(dim: usize, value: Arc<ValueFn>) -> Self {
        FnCasf { dim, value, gradient: None }
    }

    pub fn with_gradient(mut self, gradient: Arc<GradientFn>) -> Self {
        self.gradient = Some(gradient);
        self
    }
}

impl CasfModel for FnCasf {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &LatentCell<'_>, theta: &[f64]) -> f64 {
        (self.value)(x, theta)
    }

    fn gradient(&self, x: &LatentCell<'_>, theta: &[f64], out: &mut [f64]) -> bool {
        match &self.gradient {
            Some(g) => {
                g(x, theta, out);
                true
            }
            None => false,
        }
    }

    fn is_linear(&self) -> bool {
        false
    }
}

/// Central-difference gradient of `m*` in `θ`, step `1e-6·(1+|θ_k|)`.
pub fn numeric_gradient(model: &dyn CasfModel, x: &LatentCell<'_>, theta: &[f64], out: &mut [f64]) {
    let mut t = theta.to_vec();
    for k in 0..theta.len() {
        let h = 1e-6 * (1.0 + theta[k].abs());
        t[k] = theta[k] + h;
        let up = model.value(x, &t);
        t[k] = theta[k] - h;
        let down = model.value(x, &t);
        t[k] = theta[k];
        out[k] = (up - down) / (2.0 * h);
    }
}

/// Analytic gradient when available, finite differences otherwise.
pub fn model_gradient(model: &dyn CasfModel, x: &LatentCell<'_>, theta: &[f64], out: &mut [f64]) {
    if !model.gradient(x, theta, out) {
        numeric_gradient(model, x, theta, out);
    }
}
