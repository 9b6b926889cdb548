//! Two-proxy semiparametric estimator: kernel first stage, eigen
//! identification of the latent degree law, one-type exposure posterior,
//! posterior-mixed least squares and sandwich inference.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{DepNeighborhoods, ProxyId, Sample};
use crate::error::{Error, Result};
use crate::estim::fit::{fit_theta, Mixture, Problem, ThetaFit};
use crate::estim::model::CasfModel;
use crate::estim::variance::sandwich_variance;
use crate::ident::{
    build_observed_matrices, eigen_recover, latent_posterior, triangularity_diagnostic, IdentComponents,
    ObservedMatrices, OneTypeMode,
};
use crate::kde::{bandwidth, instrument_bin, GammaHat, PooledEdge};

/// The first-stage correction is skipped beyond this many covariate points.
const MAX_DELTA_POINTS: usize = 64;

/// How the degree window `lo..lo+K` is chosen at each covariate point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SupportRule {
    /// `0..=max` over the largest observed degree in either proxy.
    MaxObserved,
    /// A fixed `0..K`.
    Fixed { k: usize },
    /// Widest run of degrees around the primary proxy's mode in which
    /// every degree is observed at least `min_count` times in both proxies.
    Adaptive { min_count: usize },
}

impl Default for SupportRule {
    fn default() -> Self {
        SupportRule::Adaptive { min_count: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeConfig {
    /// The proxy with one type of error; the other proxy is the instrument.
    pub primary: ProxyId,
    pub mode: OneTypeMode,
    /// Fixed trimming threshold on `f̂_{|N|,Z}`.
    pub trim_eps: f64,
    pub support: SupportRule,
    /// Apply the first-stage correction `δ̂` in the sandwich meat.
    pub delta: bool,
    /// Bandwidth `h = N^{-bandwidth_exp}`.
    pub bandwidth_exp: f64,
    /// Smallest support tried when identification fails at larger ones.
    pub min_k: usize,
}

impl Default for SpeConfig {
    fn default() -> Self {
        SpeConfig {
            primary: ProxyId::Second,
            mode: OneTypeMode::NoFalsePositive,
            trim_eps: 1e-3,
            support: SupportRule::default(),
            delta: true,
            bandwidth_exp: 3.0 / 8.0,
            min_k: 3,
        }
    }
}

/// Identification output at one covariate point.
#[derive(Debug, Clone)]
pub struct PointIdent {
    pub z: Vec<f64>,
    /// Smallest degree in the window.
    pub lo: usize,
    /// Window length.
    pub k: usize,
    /// Units whose covariates equal `z`.
    pub members: Vec<usize>,
    pub obs: ObservedMatrices,
    pub comps: IdentComponents,
    /// Conditional mass of the degree tables outside the `K × K` block.
    pub outside: f64,
    /// Upper and lower triangle mass of the primary proxy's matrix.
    pub triangularity: (f64, f64),
    /// Windows `(lo, k)` that failed before this one was accepted, with reasons.
    pub fallbacks: Vec<(usize, usize, String)>,
}

#[derive(Debug, Clone)]
pub struct SpeResult {
    pub fit: ThetaFit,
    pub points: Vec<PointIdent>,
    pub tau: Vec<f64>,
    pub p1: f64,
    pub h: f64,
    pub delta_applied: bool,
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Distinct covariate vectors with the units carrying each.
fn covariate_points(sample: &Sample) -> Vec<(Vec<f64>, Vec<usize>)> {
    let mut idx: Vec<usize> = (0..sample.len()).collect();
    idx.sort_by(|&a, &b| lex_cmp(&sample.z[a], &sample.z[b]).then(a.cmp(&b)));
    let mut out: Vec<(Vec<f64>, Vec<usize>)> = Vec::new();
    for i in idx {
        match out.last_mut() {
            Some((z, m)) if lex_cmp(z, &sample.z[i]).is_eq() => m.push(i),
            _ => out.push((sample.z[i].clone(), vec![i])),
        }
    }
    out
}

/// Per-degree unit counts `(primary, instrument)` among `members`.
fn degree_counts(sample: &Sample, members: &[usize], primary: ProxyId) -> (Vec<usize>, Vec<usize>) {
    let (_, dn) = sample.proxy(primary);
    let (_, dt) = sample.proxy(primary.other());
    let top = members.iter().map(|&i| dn[i].max(dt[i])).max().unwrap_or(0) as usize + 1;
    let mut cn = vec![0usize; top];
    let mut ct = vec![0usize; top];
    for &i in members {
        cn[dn[i] as usize] += 1;
        ct[dt[i] as usize] += 1;
    }
    (cn, ct)
}

/// Degree window `(lo, hi)`, half open.
fn initial_support(rule: SupportRule, sample: &Sample, members: &[usize], primary: ProxyId) -> (usize, usize) {
    match rule {
        SupportRule::MaxObserved => (0, sample.max_degree() as usize + 1),
        SupportRule::Fixed { k } => (0, k),
        SupportRule::Adaptive { min_count } => {
            let (cn, ct) = degree_counts(sample, members, primary);
            let top = cn.len();
            let thick = |k: usize| cn[k] >= min_count && ct[k] >= min_count;
            let mode = (0..top).rev().max_by_key(|&k| cn[k]).unwrap_or(0);
            if !thick(mode) {
                return (mode, mode);
            }
            let mut lo = mode;
            while lo > 0 && thick(lo - 1) {
                lo -= 1;
            }
            let mut hi = mode + 1;
            while hi < top && thick(hi) {
                hi += 1;
            }
            (lo, hi)
        }
    }
}

/// The primary proxy's degree can only err toward the pooled edge, so latent
/// degrees beyond the block leak into that bin alone.
fn pooled_edge(mode: OneTypeMode) -> PooledEdge {
    match mode {
        OneTypeMode::NoFalsePositive => PooledEdge::High,
        OneTypeMode::NoFalseNegative => PooledEdge::Low,
    }
}

fn recoverable(e: &Error) -> bool {
    matches!(
        e,
        Error::SingularInput { .. }
            | Error::ComplexSpectrum { .. }
            | Error::NonIdentified { .. }
            | Error::AmbiguousOrdering(_)
            | Error::EmptyCell(_)
    )
}

/// Runs the identification step at every covariate point.
pub fn identify(sample: &Sample, cfg: &SpeConfig) -> Result<Vec<PointIdent>> {
    sample.validate()?;
    let h = bandwidth(sample.len(), cfg.bandwidth_exp);
    let gamma = GammaHat::new(sample, h, cfg.primary)?;
    covariate_points(sample).into_iter().map(|(z, members)| identify_point(&gamma, cfg, z, members)).collect()
}

/// Tries windows inside the initial one, longest first; among windows of
/// equal length the one holding the most units goes first.
fn identify_point(gamma: &GammaHat<'_>, cfg: &SpeConfig, z: Vec<f64>, members: Vec<usize>) -> Result<PointIdent> {
    let sample = gamma.sample();
    let (lo0, hi0) = initial_support(cfg.support, sample, &members, cfg.primary);
    let k0 = hi0.saturating_sub(lo0);
    let min_k = cfg.min_k.max(1);
    let (cn, ct) = degree_counts(sample, &members, cfg.primary);
    let mass = |d: usize| cn.get(d).copied().unwrap_or(0) + ct.get(d).copied().unwrap_or(0);
    let mut fallbacks = Vec::new();
    for k in (min_k..=k0).rev() {
        let mut starts: Vec<usize> = (lo0..=hi0 - k).collect();
        starts.sort_by_key(|&l| std::cmp::Reverse((l..l + k).map(mass).sum::<usize>()));
        for lo in starts {
            let attempt = gamma.cell_tables(&z, lo, k, pooled_edge(cfg.mode)).and_then(|t| {
                let obs = build_observed_matrices(&t)?;
                let mut comps = eigen_recover(&obs)?;
                comps.offset = lo;
                Ok((t.outside, obs, comps))
            });
            match attempt {
                Ok((outside, obs, comps)) => {
                    let triangularity = triangularity_diagnostic(&comps.primary_given_latent);
                    return Ok(PointIdent { z, lo, k, members, obs, comps, outside, triangularity, fallbacks });
                }
                Err(e) if recoverable(&e) => {
                    log::debug!("window {lo}..{} at z={z:?} rejected: {e}", lo + k);
                    fallbacks.push((lo, k, e.to_string()));
                }
                Err(e) => return Err(e),
            }
        }
    }
    let reasons: Vec<String> = fallbacks.iter().map(|(l, k, r)| format!("{l}..{}: {r}", l + k)).collect();
    Err(Error::EmptyCell(format!(
        "identification failed at z = {z:?} for every degree window inside {lo0}..{hi0} of length at least {min_k} ({})",
        reasons.join("; ")
    )))
}

/// Observed primary-proxy cell of a unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Cell {
    d: u8,
    s: u32,
    n: u32,
}

/// Per-cell sufficient statistics of the units kept at one point.
struct PointCells {
    cells: Vec<Cell>,
    /// `Σ τ_i Y_i` and `Σ τ_i` per cell.
    sum_y: Vec<f64>,
    count: Vec<f64>,
}

fn posterior_mixtures(
    point: &PointIdent,
    comps: &IdentComponents,
    f_marg: &[f64],
    cells: &[Cell],
    p1: f64,
    cfg: &SpeConfig,
) -> Result<Vec<Option<Mixture>>> {
    let mut by_sn: BTreeMap<(u32, u32), Option<Mixture>> = BTreeMap::new();
    let mut out = Vec::with_capacity(cells.len());
    for c in cells {
        let mix = match by_sn.entry((c.s, c.n)) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => {
                let f_n = f_marg[c.n as usize - point.lo];
                e.insert(match latent_posterior(0, c.s, c.n, &point.z, comps, f_n, p1, cfg.mode, 0.0) {
                    Ok(post) => Some(Mixture::from_posterior(&post)),
                    Err(Error::ThinCell { .. }) => None,
                    Err(e) => return Err(e),
                })
            }
        };
        out.push(mix.as_ref().map(|m| m.with_d(c.d)));
    }
    Ok(out)
}

/// `N · Ḡ_z = Σ_{i at z} τ_i (Y_i − m_i) ∂m_i/∂θ` from cell sums.
fn point_moment(mix: &[Mixture], pc: &PointCells, model: &dyn CasfModel, theta: &[f64]) -> Vec<f64> {
    let p = theta.len();
    let mut out = vec![0.0; p];
    let mut g = vec![0.0; p];
    for (c, m) in mix.iter().enumerate() {
        let mean = m.mean(model, theta);
        m.gradient(model, theta, &mut g);
        let w = pc.sum_y[c] - pc.count[c] * mean;
        for k in 0..p {
            out[k] += w * g[k];
        }
    }
    out
}

/// Moment at a perturbed pair of observed matrices; `None` when the
/// perturbation breaks identification.
fn perturbed_moment(
    point: &PointIdent,
    obs: &ObservedMatrices,
    pc: &PointCells,
    model: &dyn CasfModel,
    theta: &[f64],
    p1: f64,
    cfg: &SpeConfig,
) -> Option<Vec<f64>> {
    let mut comps = eigen_recover(obs).ok()?;
    comps.offset = point.lo;
    let f_marg: Vec<f64> = obs.f_marg.iter().copied().collect();
    let mix: Vec<Mixture> =
        posterior_mixtures(point, &comps, &f_marg, &pc.cells, p1, cfg).ok()?.into_iter().collect::<Option<_>>()?;
    Some(point_moment(&mix, pc, model, theta))
}

/// `δ̂_j`: the effect of unit `j`'s contribution to the observed matrices on the
/// averaged moment, by central differences over every matrix entry.
///
/// Entry `(a, b)` of `E` and `F` are sample means over the block members at
/// `z`, so unit `j` in cell `c_j` moves the moment by
/// `(N / n_z) [A_E(c_j) Y_j + A_F(c_j)]`, centered within the block.
#[allow(clippy::too_many_arguments)]
fn delta_correction(
    sample: &Sample,
    points: &[PointIdent],
    point_cells: &[PointCells],
    model: &dyn CasfModel,
    theta: &[f64],
    p1: f64,
    cfg: &SpeConfig,
) -> Vec<Vec<f64>> {
    let n = sample.len();
    let p = theta.len();
    let mut delta = vec![vec![0.0; p]; n];
    let (_, dn) = sample.proxy(cfg.primary);
    let (_, dt) = sample.proxy(cfg.primary.other());
    for (point, pc) in points.iter().zip(point_cells) {
        let k = point.k;
        let mut a_e = vec![vec![vec![0.0; p]; k]; k];
        let mut a_f = vec![vec![vec![0.0; p]; k]; k];
        let mut failed = 0usize;
        for a in 0..k {
            for b in 0..k {
                for which in 0..2 {
                    let base = if which == 0 { point.obs.e[(a, b)] } else { point.obs.f_joint[(a, b)] };
                    let step = 1e-5 * base.abs().max(1e-3);
                    let eval = |sign: f64| {
                        let mut o = point.obs.clone();
                        if which == 0 {
                            o.e[(a, b)] += sign * step;
                        } else {
                            o.f_joint[(a, b)] += sign * step;
                            o.f_marg[b] += sign * step;
                        }
                        perturbed_moment(point, &o, pc, model, theta, p1, cfg)
                    };
                    match (eval(1.0), eval(-1.0)) {
                        (Some(up), Some(down)) => {
                            let target = if which == 0 { &mut a_e[a][b] } else { &mut a_f[a][b] };
                            for q in 0..p {
                                target[q] = (up[q] - down[q]) / (2.0 * step * n as f64);
                            }
                        }
                        _ => failed += 1,
                    }
                }
            }
        }
        if failed > 0 {
            log::warn!("first-stage correction: {failed} perturbations broke identification at z={:?}", point.z);
        }
        let edge = pooled_edge(cfg.mode);
        let block: Vec<(usize, usize, usize)> = point
            .members
            .iter()
            .filter_map(|&j| {
                let b = edge.primary_bin(dn[j] as usize, point.lo, k)?;
                Some((j, instrument_bin(dt[j] as usize, point.lo, k), b))
            })
            .collect();
        if block.is_empty() {
            continue;
        }
        let scale = n as f64 / block.len() as f64;
        let nu: Vec<Vec<f64>> = block
            .iter()
            .map(|&(j, a, b)| (0..p).map(|q| scale * (a_e[a][b][q] * sample.y[j] + a_f[a][b][q])).collect())
            .collect();
        let mean: Vec<f64> = (0..p).map(|q| nu.iter().map(|v| v[q]).sum::<f64>() / nu.len() as f64).collect();
        for (row, &(j, _, _)) in block.iter().enumerate() {
            for q in 0..p {
                delta[j][q] += nu[row][q] - mean[q];
            }
        }
    }
    delta
}

/// Full two-proxy estimator with sandwich inference over `nbrs`.
pub fn estimate(sample: &Sample, model: &dyn CasfModel, nbrs: &DepNeighborhoods, cfg: &SpeConfig) -> Result<SpeResult> {
    sample.validate()?;
    let n = sample.len();
    if nbrs.len() != n {
        return Err(Error::DimMismatch { expected: n, got: nbrs.len() });
    }
    if !(cfg.trim_eps >= 0.0) {
        return Err(Error::BadArgs(format!("trimming threshold must be nonnegative, got {}", cfg.trim_eps)));
    }
    let h = bandwidth(n, cfg.bandwidth_exp);
    let gamma = GammaHat::new(sample, h, cfg.primary)?;
    let p1 = sample.treated_share();
    let (s_obs, dn) = sample.proxy(cfg.primary);

    let points: Vec<PointIdent> = covariate_points(sample)
        .into_iter()
        .map(|(z, members)| identify_point(&gamma, cfg, z, members))
        .collect::<Result<_>>()?;

    let mut tau = vec![0.0; n];
    let mut unit_mix: Vec<Option<Mixture>> = vec![None; n];
    let mut point_cells = Vec::with_capacity(points.len());
    for point in &points {
        let f_marg: Vec<f64> = point.obs.f_marg.iter().copied().collect();
        let f_z = gamma.f_z(&point.z);
        // f̂_{|N|,Z}(n, z) from the unconditioned tables
        let inside = 1.0 - point.outside;
        let edge = pooled_edge(cfg.mode);
        let pooled = edge.pooled_bin(point.k);
        let mut kept: BTreeMap<Cell, (f64, f64)> = BTreeMap::new();
        for &i in &point.members {
            let Some(bin) = edge.primary_bin(dn[i] as usize, point.lo, point.k) else {
                continue;
            };
            if f_marg[bin] * inside * f_z <= cfg.trim_eps {
                continue;
            }
            if bin == pooled {
                // exact latent degree unknown beyond the block: taken as observed
                tau[i] = 1.0;
                unit_mix[i] = Some(Mixture::point(sample.d[i], s_obs[i], dn[i], &point.z));
                continue;
            }
            let e = kept.entry(Cell { d: sample.d[i], s: s_obs[i], n: dn[i] }).or_insert((0.0, 0.0));
            e.0 += sample.y[i];
            e.1 += 1.0;
        }
        let cells: Vec<Cell> = kept.keys().copied().collect();
        let mix = posterior_mixtures(point, &point.comps, &f_marg, &cells, p1, cfg)?;
        // cells whose posterior has no mass are trimmed as well
        for (c, m) in cells.iter().zip(&mix) {
            if m.is_none() {
                log::debug!("cell {c:?} at z={:?} trimmed: empty posterior", point.z);
                kept.remove(c);
            }
        }
        let mix: Vec<Mixture> = mix.into_iter().flatten().collect();
        let cells: Vec<Cell> = kept.keys().copied().collect();
        for &i in &point.members {
            let c = Cell { d: sample.d[i], s: s_obs[i], n: dn[i] };
            if let Ok(pos) = cells.binary_search(&c) {
                tau[i] = 1.0;
                unit_mix[i] = Some(mix[pos].clone());
            }
        }
        point_cells.push(PointCells {
            sum_y: kept.values().map(|v| v.0).collect(),
            count: kept.values().map(|v| v.1).collect(),
            cells,
        });
    }

    // trimmed units carry a placeholder mixture with zero weight
    let placeholder = Mixture::point(0, 0, 0, &sample.z.first().cloned().unwrap_or_default());
    let mix_refs: Vec<&Mixture> = unit_mix.iter().map(|m| m.as_ref().unwrap_or(&placeholder)).collect();
    let problem = Problem { y: &sample.y, tau: &tau, mix: &mix_refs, model };
    let mut fit = fit_theta(&problem, None)?;

    let delta_applied = cfg.delta && points.len() <= MAX_DELTA_POINTS;
    if cfg.delta && !delta_applied {
        log::info!("first-stage correction skipped: {} covariate points exceed {MAX_DELTA_POINTS}", points.len());
    }
    let delta = if delta_applied {
        Some(delta_correction(sample, &points, &point_cells, model, &fit.theta, p1, cfg))
    } else {
        None
    };
    let scores = problem.scores(&fit.theta);
    let sw = sandwich_variance(&fit.hessian, &scores, delta.as_deref(), nbrs)?;
    fit.meat = Some(sw.meat);
    fit.cov = Some(sw.cov);
    Ok(SpeResult { fit, points, tau, p1, h, delta_applied })
}

impl PointIdent {
    /// Recovered `f(|N| | |N*|)` of the primary proxy.
    pub fn primary_matrix(&self) -> &DMatrix<f64> {
        &self.comps.primary_given_latent.entries
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estim::model::LinearCasf;
    use crate::simgen::{simulate, MisclassModel, SimConfig};

    #[test]
    fn covariate_points_group_units() {
        let ds = simulate(&SimConfig { n: 200, seed: 3, ..Default::default() }).unwrap();
        let s = ds.to_sample();
        let pts = covariate_points(&s);
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].0, vec![0.0]);
        assert_eq!(pts.iter().map(|p| p.1.len()).sum::<usize>(), 200);
    }

    #[test]
    fn exact_network_noiseless_recovers_theta() {
        let mut cfg = SimConfig { n: 2000, seed: 5, ..Default::default() }.noiseless();
        cfg.proxy1 = MisclassModel::EXACT;
        cfg.proxy2 = MisclassModel::EXACT;
        let ds = simulate(&cfg).unwrap();
        let s = ds.to_sample();
        let model = LinearCasf::exposure_design();
        let r = estimate(&s, &model, &ds.dep_neighborhoods(), &SpeConfig::default()).unwrap();
        for (a, b) in r.fit.theta.iter().zip(&cfg.theta_true) {
            assert!((a - b).abs() < 1e-6, "{:?}", r.fit.theta);
        }
    }

    #[test]
    fn adaptive_support_stops_at_first_thin_degree() {
        let ds = simulate(&SimConfig { n: 1000, seed: 8, ..Default::default() }).unwrap();
        let s = ds.to_sample();
        let members: Vec<usize> = (0..s.len()).collect();
        let count = |v: &[u32], deg: usize| v.iter().filter(|&&d| d as usize == deg).count();
        let (lo, hi) = initial_support(SupportRule::Adaptive { min_count: 10 }, &s, &members, ProxyId::Second);
        assert!(hi > lo);
        for deg in lo..hi {
            assert!(count(&s.deg1, deg) >= 10 && count(&s.deg2, deg) >= 10);
        }
        let thin = |deg: usize| count(&s.deg1, deg) < 10 || count(&s.deg2, deg) < 10;
        assert!(lo == 0 || thin(lo - 1));
        assert!(thin(hi));
        assert_eq!(
            initial_support(SupportRule::MaxObserved, &s, &members, ProxyId::Second),
            (0, s.max_degree() as usize + 1)
        );
    }
}
