//! Treatment and spillover effects as contrasts of the CASF.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::fit::ThetaFit;
use super::model::{model_gradient, CasfModel, LatentCell};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EffectKind {
    /// `τ_d(s,z,n) = m*(1,s,z,n) − m*(0,s,z,n)`.
    Treatment,
    /// `τ_s(s,z,n) = m*(0,s,z,n) − m*(0,0,z,n)`.
    Spillover,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectQuery {
    pub kind: EffectKind,
    pub s: u32,
    pub z: Vec<f64>,
    pub n: u32,
}

impl EffectQuery {
    pub fn treatment(s: u32, z: f64, n: u32) -> Self {
        EffectQuery { kind: EffectKind::Treatment, s, z: vec![z], n }
    }

    pub fn spillover(s: u32, z: f64, n: u32) -> Self {
        EffectQuery { kind: EffectKind::Spillover, s, z: vec![z], n }
    }

    /// Label such as `tau_d(0,1,3)`.
    pub fn label(&self) -> String {
        let tag = match self.kind {
            EffectKind::Treatment => "tau_d",
            EffectKind::Spillover => "tau_s",
        };
        let z: Vec<String> = self.z.iter().map(|v| format!("{v}")).collect();
        format!("{tag}({},{},{})", self.s, z.join(";"), self.n)
    }

    /// Parses the `label` form, e.g. `tau_s(1,0,3)`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::BadArgs(format!("cannot parse effect '{s}' (expected e.g. tau_d(0,1,3))"));
        let s = s.trim();
        let (head, rest) = s.split_once('(').ok_or_else(bad)?;
        let kind = match head.trim() {
            "tau_d" => EffectKind::Treatment,
            "tau_s" => EffectKind::Spillover,
            _ => return Err(bad()),
        };
        let inner = rest.strip_suffix(')').ok_or_else(bad)?;
        let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let s_val = parts[0].parse().map_err(|_| bad())?;
        let z = parts[1].split(';').map(|v| v.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?;
        let n = parts[2].parse().map_err(|_| bad())?;
        Ok(EffectQuery { kind, s: s_val, z, n })
    }

    /// The two latent cells `(d, s)` whose CASF values are differenced.
    pub(crate) fn cells(&self) -> ((u8, u32), (u8, u32)) {
        match self.kind {
            EffectKind::Treatment => ((1, self.s), (0, self.s)),
            EffectKind::Spillover => ((0, self.s), (0, 0)),
        }
    }
}

/// The four headline effects.
pub fn default_queries() -> Vec<EffectQuery> {
    vec![
        EffectQuery::treatment(0, 0.0, 3),
        EffectQuery::treatment(0, 1.0, 3),
        EffectQuery::spillover(1, 0.0, 3),
        EffectQuery::spillover(1, 1.0, 3),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectEstimate {
    pub query: EffectQuery,
    pub value: f64,
    /// `NaN` when the fit carries no covariance.
    pub std_error: f64,
}

impl EffectEstimate {
    /// `|estimate − truth| ≤ 1.96·SE`.
    pub fn covers(&self, truth: f64) -> bool {
        (self.value - truth).abs() <= 1.96 * self.std_error
    }
}

/// Effect value and its gradient in `θ` (the contrast vector for linear models).
pub fn effect_contrast(model: &dyn CasfModel, theta: &[f64], q: &EffectQuery) -> (f64, Vec<f64>) {
    let ((d1, s1), (d0, s0)) = q.cells();
    let hi = LatentCell::new(d1, s1, &q.z, q.n);
    let lo = LatentCell::new(d0, s0, &q.z, q.n);
    let p = theta.len();
    let mut g1 = vec![0.0; p];
    let mut g0 = vec![0.0; p];
    model_gradient(model, &hi, theta, &mut g1);
    model_gradient(model, &lo, theta, &mut g0);
    let value = model.value(&hi, theta) - model.value(&lo, theta);
    (value, g1.iter().zip(&g0).map(|(a, b)| a - b).collect())
}

/// Effect values at `theta` without standard errors.
pub fn effect_values(model: &dyn CasfModel, theta: &[f64], queries: &[EffectQuery]) -> Vec<f64> {
    queries.iter().map(|q| effect_contrast(model, theta, q).0).collect()
}

/// Effects at `θ̂` with delta-method standard errors `√(c′ cov c)`.
pub fn effects(fit: &ThetaFit, model: &dyn CasfModel, queries: &[EffectQuery]) -> Vec<EffectEstimate> {
    queries
        .iter()
        .map(|q| {
            let (value, c) = effect_contrast(model, &fit.theta, q);
            let std_error = match &fit.cov {
                Some(cov) => {
                    let c = DVector::from_vec(c);
                    (c.transpose() * cov * &c)[(0, 0)].max(0.0).sqrt()
                }
                None => f64::NAN,
            };
            EffectEstimate { query: q.clone(), value, std_error }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estim::model::LinearCasf;

    const THETA: [f64; 7] = [0.0, 1.0, 1.0 / 3.0, 1.0, -1.0, -0.5, 1.0];

    #[test]
    fn true_effects() {
        let m = LinearCasf::exposure_design();
        let v = effect_values(&m, &THETA, &default_queries());
        let want = [1.0, 2.0, 3.0, 2.5];
        for (a, b) in v.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn spillover_at_zero_exposure_vanishes() {
        let m = LinearCasf::exposure_design();
        for n in 0..6 {
            assert_eq!(
                effect_values(&m, &[0.3, -1.2, 0.5, 2.0, 0.1, 0.7, -0.4], &[EffectQuery::spillover(0, 1.0, n)])[0],
                0.0
            );
        }
    }

    #[test]
    fn labels_round_trip() {
        for q in default_queries() {
            assert_eq!(EffectQuery::parse(&q.label()).unwrap(), q);
        }
        assert!(EffectQuery::parse("tau_x(0,1,3)").is_err());
    }
}
