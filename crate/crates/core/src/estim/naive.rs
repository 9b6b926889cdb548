//! Baselines that ignore misclassification: OLS on proxy regressors and the
//! single-proxy cell mean.

use super::effects::{EffectEstimate, EffectQuery};
use super::fit::{fit_theta, Mixture, Problem, ThetaFit};
use super::model::CasfModel;
use super::variance::sandwich_variance;
use crate::data::{DepNeighborhoods, ProxyId, Sample};
use crate::error::{Error, Result};
use crate::kde::GammaHat;

/// Point mixtures at the observed exposures of `proxy`.
pub fn proxy_mixtures(sample: &Sample, proxy: ProxyId) -> Vec<Mixture> {
    let (s, deg) = sample.proxy(proxy);
    (0..sample.len()).map(|i| Mixture::point(sample.d[i], s[i], deg[i], &sample.z[i])).collect()
}

/// OLS of `Y` on the CASF regressors built from one proxy, with the
/// dependency-neighborhood sandwich and no first-stage correction.
pub fn naive_ols(sample: &Sample, proxy: ProxyId, model: &dyn CasfModel, nbrs: &DepNeighborhoods) -> Result<ThetaFit> {
    sample.validate()?;
    let units = proxy_mixtures(sample, proxy);
    let mix: Vec<&Mixture> = units.iter().collect();
    let tau = vec![1.0; sample.len()];
    let problem = Problem { y: &sample.y, tau: &tau, mix: &mix, model };
    let mut fit = fit_theta(&problem, None)?;
    let sw = sandwich_variance(&fit.hessian, &problem.scores(&fit.theta), None, nbrs)?;
    fit.meat = Some(sw.meat);
    fit.cov = Some(sw.cov);
    Ok(fit)
}

/// Nadaraya-Watson estimate of the CASF from one proxy:
/// `Σ Y_i K(Z_i,z) 1[D_i=d, S_i=s, |N_i|=n] / Σ K(Z_i,z) 1[…]`.
pub fn single_proxy_casf(sample: &Sample, proxy: ProxyId, d: u8, s: u32, z: &[f64], n: u32, h: f64) -> Result<f64> {
    let g = GammaHat::new(sample, h, proxy)?;
    Ok(weighted_cell(&g, proxy, d, s, z, n)?.0)
}

/// Cell mean and its standard error `√(Σ w_i² (Y_i − m̂)²) / Σ w_i`.
fn weighted_cell(g: &GammaHat<'_>, proxy: ProxyId, d: u8, s: u32, z: &[f64], n: u32) -> Result<(f64, f64)> {
    let sample = g.sample();
    let w = g.z_weights(z);
    let (sv, deg) = sample.proxy(proxy);
    let members: Vec<usize> =
        (0..sample.len()).filter(|&i| w[i] != 0.0 && sample.d[i] == d && sv[i] == s && deg[i] == n).collect();
    let den: f64 = members.iter().map(|&i| w[i]).sum();
    if den < 1e-12 {
        return Err(Error::EmptyCell(format!("no units at (d={d}, s={s}, z={z:?}, n={n})")));
    }
    let mean = members.iter().map(|&i| w[i] * sample.y[i]).sum::<f64>() / den;
    let var = members.iter().map(|&i| (w[i] * (sample.y[i] - mean)).powi(2)).sum::<f64>() / (den * den);
    Ok((mean, var.sqrt()))
}

/// Effects as differences of two single-proxy cell means, treated as independent.
pub fn single_proxy_effects(
    sample: &Sample,
    proxy: ProxyId,
    queries: &[EffectQuery],
    h: f64,
) -> Result<Vec<EffectEstimate>> {
    let g = GammaHat::new(sample, h, proxy)?;
    queries
        .iter()
        .map(|q| {
            let ((d1, s1), (d0, s0)) = q.cells();
            let (m1, se1) = weighted_cell(&g, proxy, d1, s1, &q.z, q.n)?;
            let (m0, se0) = weighted_cell(&g, proxy, d0, s0, &q.z, q.n)?;
            Ok(EffectEstimate { query: q.clone(), value: m1 - m0, std_error: se1.hypot(se0) })
        })
        .collect()
}
