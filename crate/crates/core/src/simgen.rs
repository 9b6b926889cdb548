//! Synthetic populations: unit positions, a latent geometric network with
//! covariate-dependent links, randomized treatment, outcomes with peer shocks,
//! and two misclassified network proxies.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

use crate::data::{Covariate, DepNeighborhoods, Sample};
use crate::error::{Error, Result};
use crate::estim::model::{CasfModel, LatentCell, LinearCasf};
use crate::rng::{substream, Stream};

/// Binary relation stored as sorted neighbor lists, one row per unit.
///
/// Rows may be asymmetric: a proxy row is the self-report of that unit.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Adjacency {
    rows: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Adjacency { rows: vec![Vec::new(); n] }
    }

    pub fn from_rows(mut rows: Vec<Vec<usize>>) -> Result<Self> {
        let n = rows.len();
        for (i, r) in rows.iter_mut().enumerate() {
            r.sort_unstable();
            r.dedup();
            if r.binary_search(&i).is_ok() {
                return Err(Error::BadArgs(format!("self link at unit {i}")));
            }
            if r.last().is_some_and(|&j| j >= n) {
                return Err(Error::BadArgs(format!("row {i} references an out-of-range unit")));
            }
        }
        Ok(Adjacency { rows })
    }

    /// Undirected graph from an edge list.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut rows = vec![Vec::new(); n];
        for &(i, j) in edges {
            rows[i].push(j);
            rows[j].push(i);
        }
        Adjacency::from_rows(rows)
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.rows[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.rows[i].len()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.rows[i].binary_search(&j).is_ok()
    }

    /// Number of ordered linked pairs, i.e. the sum of all degrees.
    pub fn total_links(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows.iter().enumerate().all(|(i, r)| r.iter().all(|&j| self.contains(j, i)))
    }

    pub fn is_hollow(&self) -> bool {
        self.rows.iter().enumerate().all(|(i, r)| r.binary_search(&i).is_err())
    }

    /// `A ≤ B` entrywise.
    pub fn is_subset_of(&self, other: &Adjacency) -> bool {
        self.n() == other.n() && self.rows.iter().enumerate().all(|(i, r)| r.iter().all(|&j| other.contains(i, j)))
    }
}

/// Latent network together with the positions that shaped it.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentNetwork {
    pub adjacency: Adjacency,
    pub positions: Vec<[f64; 2]>,
    /// Link radius `r = (r_deg/n)^{1/2}`.
    pub radius: f64,
}

impl LatentNetwork {
    pub fn n(&self) -> usize {
        self.adjacency.n()
    }
}

/// Misreporting process of one proxy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MisclassModel {
    /// Probability a unit misreports at all.
    pub p_omega: f64,
    /// Per-link false-negative probability `1 − p^U`.
    pub p_u_miss: f64,
    /// False-positive scale `δ^V`; the per-pair probability is `δ^V / n`.
    pub p_v_rate: f64,
    /// Gaussian-copula correlation of error indicators across the two proxies.
    pub copula_rho: f64,
}

impl MisclassModel {
    pub const EXACT: MisclassModel = MisclassModel { p_omega: 0.0, p_u_miss: 0.0, p_v_rate: 0.0, copula_rho: 0.0 };

    pub fn new(p_omega: f64, p_u_miss: f64, p_v_rate: f64) -> Self {
        MisclassModel { p_omega, p_u_miss, p_v_rate, copula_rho: 0.0 }
    }

    pub fn p_v(&self, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            self.p_v_rate / n as f64
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::BadArgs(format!("{name} must lie in [0,1], got {v}")))
            }
        };
        unit("p_omega", self.p_omega)?;
        unit("p_u_miss", self.p_u_miss)?;
        unit("p_v", self.p_v(n))?;
        if !(-1.0..=1.0).contains(&self.copula_rho) || !self.p_v_rate.is_finite() || self.p_v_rate < 0.0 {
            return Err(Error::BadArgs("copula_rho must lie in [-1,1] and p_v_rate be nonnegative".into()));
        }
        Ok(())
    }
}

/// How proxy rows relate to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProxySymmetry {
    /// Row `i` is unit `i`'s own report, perturbed only when `ω_i = 1`.
    #[default]
    Row,
    /// Perturb pairs `i < j` using `ω` of the lower index and mirror.
    Mirror,
}

/// Full data-generating configuration of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub r_deg: f64,
    pub beta: [f64; 3],
    pub theta_true: Vec<f64>,
    pub p_treat: f64,
    /// `P(Z = 1)` of the binary covariate.
    pub p_z: f64,
    pub proxy1: MisclassModel,
    pub proxy2: MisclassModel,
    /// Standard deviation of the idiosyncratic shock.
    pub sigma_idio: f64,
    /// Variance of the per-unit peer shock `v_j`.
    pub peer_var: f64,
    pub symmetry: ProxySymmetry,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 1000,
            r_deg: 5.0,
            beta: [-0.25, 0.5, -1.0],
            theta_true: vec![0.0, 1.0, 1.0 / 3.0, 1.0, -1.0, -0.5, 1.0],
            p_treat: 0.3,
            p_z: 0.5,
            proxy1: MisclassModel::new(0.6, 0.2, 0.1),
            proxy2: MisclassModel::new(0.6, 0.2, 0.0),
            sigma_idio: 1.0,
            peer_var: 0.5,
            symmetry: ProxySymmetry::Row,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn radius(&self) -> f64 {
        (self.r_deg / self.n as f64).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::BadArgs(format!("n must be at least 2, got {}", self.n)));
        }
        if !(self.p_treat > 0.0 && self.p_treat < 1.0) {
            return Err(Error::BadArgs(format!("p_treat must lie in (0,1), got {}", self.p_treat)));
        }
        if !(0.0..=1.0).contains(&self.p_z) {
            return Err(Error::BadArgs(format!("p_z must lie in [0,1], got {}", self.p_z)));
        }
        if !(self.r_deg > 0.0) || self.sigma_idio < 0.0 || self.peer_var < 0.0 {
            return Err(Error::BadArgs("r_deg must be positive and noise scales nonnegative".into()));
        }
        if self.theta_true.len() != 7 {
            return Err(Error::DimMismatch { expected: 7, got: self.theta_true.len() });
        }
        self.proxy1.validate(self.n)?;
        self.proxy2.validate(self.n)?;
        Ok(())
    }

    /// Zero outcome noise.
    pub fn noiseless(mut self) -> Self {
        self.sigma_idio = 0.0;
        self.peer_var = 0.0;
        self
    }
}

pub fn gen_positions<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<[f64; 2]> {
    (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect()
}

pub fn gen_binary<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Vec<u8> {
    (0..n).map(|_| (rng.random::<f64>() < p) as u8).collect()
}

/// `A*_ij = 1[β₁ + β₂(Z_i+Z_j) + β₃ d(ρ_i,ρ_j) + ζ_ij > 0]`, where the
/// distance term is 0 within L1 radius `r = (r_deg/n)^{1/2}` and `+∞` beyond.
///
/// `ζ_ij` is drawn only for pairs inside the radius, in `(i, j>i)` order.
pub fn gen_latent_network<R: Rng + ?Sized>(
    positions: &[[f64; 2]],
    z: &[f64],
    beta: [f64; 3],
    r_deg: f64,
    rng: &mut R,
) -> Result<LatentNetwork> {
    let n = positions.len();
    if z.len() != n {
        return Err(Error::DimMismatch { expected: n, got: z.len() });
    }
    let radius = if n == 0 { 0.0 } else { (r_deg / n as f64).sqrt() };
    let mut rows = vec![Vec::new(); n];
    for i in 0..n {
        let pi = positions[i];
        for j in (i + 1)..n {
            let pj = positions[j];
            let dist = (pi[0] - pj[0]).abs() + (pi[1] - pj[1]).abs();
            if dist > radius {
                continue;
            }
            let zeta: f64 = rng.sample(StandardNormal);
            if beta[0] + beta[1] * (z[i] + z[j]) + zeta > 0.0 {
                rows[i].push(j);
                rows[j].push(i);
            }
        }
    }
    Ok(LatentNetwork { adjacency: Adjacency::from_rows(rows)?, positions: positions.to_vec(), radius })
}

/// Error indicators for one ordered pair in both proxies.
struct PairErrors {
    miss1: bool,
    miss2: bool,
    add1: bool,
    add2: bool,
}

enum ErrorSource<'a, R: Rng> {
    Independent { rng1: &'a mut R, rng2: &'a mut R },
    Copula { rng: &'a mut R, rho: f64, cdf: StatNormal },
}

impl<R: Rng> ErrorSource<'_, R> {
    /// Draws the indicators for a pair; `(perturb1, perturb2)` say which
    /// proxies are misreporting this pair. Independent draws are consumed only
    /// for active proxies; copula draws are consumed for every pair.
    fn draw(
        &mut self,
        linked: bool,
        perturb: (bool, bool),
        p: (&MisclassModel, &MisclassModel),
        pv: (f64, f64),
    ) -> PairErrors {
        match self {
            ErrorSource::Independent { rng1, rng2 } => {
                let mut e = PairErrors { miss1: false, miss2: false, add1: false, add2: false };
                if perturb.0 {
                    let u: f64 = rng1.random();
                    if linked {
                        e.miss1 = u < p.0.p_u_miss;
                    } else {
                        e.add1 = u < pv.0;
                    }
                }
                if perturb.1 {
                    let u: f64 = rng2.random();
                    if linked {
                        e.miss2 = u < p.1.p_u_miss;
                    } else {
                        e.add2 = u < pv.1;
                    }
                }
                e
            }
            ErrorSource::Copula { rng, rho, cdf } => {
                let g: [f64; 4] = [
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                ];
                let c = (1.0 - *rho * *rho).sqrt();
                let u1 = g[0];
                let v1 = g[1];
                let u2 = *rho * g[0] + c * g[2];
                let v2 = *rho * g[1] + c * g[3];
                PairErrors {
                    miss1: perturb.0 && linked && cdf.cdf(u1) < p.0.p_u_miss,
                    add1: perturb.0 && !linked && cdf.cdf(v1) < pv.0,
                    miss2: perturb.1 && linked && cdf.cdf(u2) < p.1.p_u_miss,
                    add2: perturb.1 && !linked && cdf.cdf(v2) < pv.1,
                }
            }
        }
    }
}

/// Two misclassified proxies of `latent`:
/// `A_ij = ω_i[U_ij A*_ij + V_ij(1−A*_ij)] + (1−ω_i)A*_ij`.
///
/// Randomness comes from the `Proxy1`, `Proxy2` and `Copula` substreams of
/// `seed`. With zero copula correlation the two proxies' indicators are drawn
/// independently from their own streams.
pub fn perturb_network(
    latent: &LatentNetwork,
    m1: &MisclassModel,
    m2: &MisclassModel,
    symmetry: ProxySymmetry,
    seed: u64,
) -> Result<(Adjacency, Adjacency)> {
    let n = latent.n();
    m1.validate(n)?;
    m2.validate(n)?;
    let rho = if m1.copula_rho != 0.0 { m1.copula_rho } else { m2.copula_rho };
    if m1.copula_rho != 0.0 && m2.copula_rho != 0.0 && m1.copula_rho != m2.copula_rho {
        return Err(Error::BadArgs("the two proxies disagree on the copula correlation".into()));
    }
    let mut rng1 = substream(seed, Stream::Proxy1);
    let mut rng2 = substream(seed, Stream::Proxy2);
    let omega1: Vec<bool> = (0..n).map(|_| rng1.random::<f64>() < m1.p_omega).collect();
    let omega2: Vec<bool> = (0..n).map(|_| rng2.random::<f64>() < m2.p_omega).collect();
    let mut rng_cop = substream(seed, Stream::Copula);
    let mut source = if rho == 0.0 {
        ErrorSource::Independent { rng1: &mut rng1, rng2: &mut rng2 }
    } else {
        ErrorSource::Copula { rng: &mut rng_cop, rho, cdf: StatNormal::standard() }
    };
    let pv = (m1.p_v(n), m2.p_v(n));
    let adj = &latent.adjacency;
    let mut rows1 = vec![Vec::new(); n];
    let mut rows2 = vec![Vec::new(); n];

    match symmetry {
        ProxySymmetry::Row => {
            for i in 0..n {
                let perturb = (omega1[i], omega2[i]);
                if !perturb.0 && !perturb.1 {
                    rows1[i] = adj.row(i).to_vec();
                    rows2[i] = adj.row(i).to_vec();
                    continue;
                }
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let linked = adj.contains(i, j);
                    let e = source.draw(linked, perturb, (m1, m2), pv);
                    if (linked && !e.miss1) || e.add1 {
                        rows1[i].push(j);
                    }
                    if (linked && !e.miss2) || e.add2 {
                        rows2[i].push(j);
                    }
                }
            }
        }
        ProxySymmetry::Mirror => {
            for i in 0..n {
                let perturb = (omega1[i], omega2[i]);
                for j in (i + 1)..n {
                    let linked = adj.contains(i, j);
                    if !perturb.0 && !perturb.1 {
                        if linked {
                            rows1[i].push(j);
                            rows1[j].push(i);
                            rows2[i].push(j);
                            rows2[j].push(i);
                        }
                        continue;
                    }
                    let e = source.draw(linked, perturb, (m1, m2), pv);
                    if (linked && !e.miss1) || e.add1 {
                        rows1[i].push(j);
                        rows1[j].push(i);
                    }
                    if (linked && !e.miss2) || e.add2 {
                        rows2[i].push(j);
                        rows2[j].push(i);
                    }
                }
            }
        }
    }
    Ok((Adjacency::from_rows(rows1)?, Adjacency::from_rows(rows2)?))
}

/// Treatment indicators, i.i.d. Bernoulli(`p_treat`).
pub fn gen_treatment<R: Rng + ?Sized>(n: usize, p_treat: f64, rng: &mut R) -> Result<Vec<u8>> {
    if !(0.0..=1.0).contains(&p_treat) {
        return Err(Error::BadArgs(format!("p_treat must lie in [0,1], got {p_treat}")));
    }
    Ok(gen_binary(n, p_treat, rng))
}

/// Degrees and treated-neighbor counts `(|N_i|, S_i)` of each row.
pub fn network_stats(adj: &Adjacency, d: &[u8]) -> Result<(Vec<u32>, Vec<u32>)> {
    if d.len() != adj.n() {
        return Err(Error::DimMismatch { expected: adj.n(), got: d.len() });
    }
    let deg = (0..adj.n()).map(|i| adj.degree(i) as u32).collect();
    let s = (0..adj.n()).map(|i| adj.row(i).iter().map(|&j| d[j] as u32).sum()).collect();
    Ok((deg, s))
}

/// Outcomes from the latent exposures:
/// `Y_i = m*(D_i, S*_i, Z_i, |N*_i|; θ) + ε^idio_i + Σ_j A*_ij v_j`.
///
/// Draws `n` idiosyncratic shocks and then `n` peer shocks from `rng`.
pub fn gen_outcomes<R: Rng + ?Sized>(
    d: &[u8],
    z: &[f64],
    latent: &Adjacency,
    theta: &[f64],
    sigma_idio: f64,
    peer_var: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = d.len();
    if z.len() != n || latent.n() != n {
        return Err(Error::DimMismatch { expected: n, got: z.len().min(latent.n()) });
    }
    let model = LinearCasf::exposure_design();
    if theta.len() != model.dim() {
        return Err(Error::DimMismatch { expected: model.dim(), got: theta.len() });
    }
    let idio = Normal::new(0.0, sigma_idio).map_err(|e| Error::BadArgs(e.to_string()))?;
    let peer = Normal::new(0.0, peer_var.sqrt()).map_err(|e| Error::BadArgs(e.to_string()))?;
    let eps: Vec<f64> = (0..n).map(|_| idio.sample(rng)).collect();
    let v: Vec<f64> = (0..n).map(|_| peer.sample(rng)).collect();
    let (deg, s) = network_stats(latent, d)?;
    Ok((0..n)
        .map(|i| {
            let zi = [z[i]];
            let cell = LatentCell::new(d[i], s[i], &zi, deg[i]);
            let peer_shock: f64 = latent.row(i).iter().map(|&j| v[j]).sum();
            model.value(&cell, theta) + eps[i] + peer_shock
        })
        .collect())
}

/// Units within L1 distance `r` of each other.
pub fn build_dep_neighborhoods(positions: &[[f64; 2]], r: f64) -> Result<DepNeighborhoods> {
    DepNeighborhoods::from_positions(positions, r)
}

/// Misclassified-entry accounting of a proxy against the latent network.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MisclassCounts {
    /// Latent links reported absent (1 → 0).
    pub false_negative: usize,
    /// Absent links reported present (0 → 1).
    pub false_positive: usize,
    /// Ordered latent links, `Σ_i |N*_i|`.
    pub latent_links: usize,
}

impl MisclassCounts {
    pub fn compare(latent: &Adjacency, proxy: &Adjacency) -> Self {
        let mut c = MisclassCounts { latent_links: latent.total_links(), ..Default::default() };
        for i in 0..latent.n() {
            c.false_negative += latent.row(i).iter().filter(|&&j| !proxy.contains(i, j)).count();
            c.false_positive += proxy.row(i).iter().filter(|&&j| !latent.contains(i, j)).count();
        }
        c
    }

    pub fn total(&self) -> usize {
        self.false_negative + self.false_positive
    }

    pub fn ratio(&self) -> f64 {
        if self.latent_links == 0 {
            0.0
        } else {
            self.total() as f64 / self.latent_links as f64
        }
    }
}

/// Everything generated for one replication.
#[derive(Debug, Clone)]
pub struct SimDataset {
    pub config: SimConfig,
    pub z: Vec<f64>,
    pub d: Vec<u8>,
    pub latent: LatentNetwork,
    pub proxy1: Adjacency,
    pub proxy2: Adjacency,
    pub y: Vec<f64>,
    pub latent_deg: Vec<u32>,
    pub latent_s: Vec<u32>,
    pub deg1: Vec<u32>,
    pub s1: Vec<u32>,
    pub deg2: Vec<u32>,
    pub s2: Vec<u32>,
}

/// Runs the full data-generating process for `config`.
pub fn simulate(config: &SimConfig) -> Result<SimDataset> {
    config.validate()?;
    let n = config.n;
    let seed = config.seed;
    let positions = gen_positions(n, &mut substream(seed, Stream::Positions));
    let z: Vec<f64> =
        gen_binary(n, config.p_z, &mut substream(seed, Stream::Covariates)).into_iter().map(f64::from).collect();
    let latent =
        gen_latent_network(&positions, &z, config.beta, config.r_deg, &mut substream(seed, Stream::LinkShocks))?;
    let (proxy1, proxy2) = perturb_network(&latent, &config.proxy1, &config.proxy2, config.symmetry, seed)?;
    let d = gen_treatment(n, config.p_treat, &mut substream(seed, Stream::Treatment))?;
    let y = gen_outcomes(
        &d,
        &z,
        &latent.adjacency,
        &config.theta_true,
        config.sigma_idio,
        config.peer_var,
        &mut substream(seed, Stream::Idiosyncratic),
    )?;
    let (latent_deg, latent_s) = network_stats(&latent.adjacency, &d)?;
    let (deg1, s1) = network_stats(&proxy1, &d)?;
    let (deg2, s2) = network_stats(&proxy2, &d)?;
    Ok(SimDataset { config: config.clone(), z, d, latent, proxy1, proxy2, y, latent_deg, latent_s, deg1, s1, deg2, s2 })
}

impl SimDataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Observable part of the dataset, with positions attached.
    pub fn to_sample(&self) -> Sample {
        Sample {
            y: self.y.clone(),
            d: self.d.clone(),
            covariates: vec![Covariate::discrete("z")],
            z: self.z.iter().map(|&v| vec![v]).collect(),
            s1: self.s1.clone(),
            deg1: self.deg1.clone(),
            s2: self.s2.clone(),
            deg2: self.deg2.clone(),
            positions: Some(self.latent.positions.clone()),
            cluster: None,
        }
    }

    /// Infeasible sample in which both proxies are replaced by the latent network.
    pub fn to_latent_sample(&self) -> Sample {
        let mut s = self.to_sample();
        s.s1 = self.latent_s.clone();
        s.deg1 = self.latent_deg.clone();
        s.s2 = self.latent_s.clone();
        s.deg2 = self.latent_deg.clone();
        s
    }

    pub fn dep_neighborhoods(&self) -> DepNeighborhoods {
        DepNeighborhoods::from_positions(&self.latent.positions, self.latent.radius).expect("radius is nonnegative")
    }

    pub fn misclass(&self) -> (MisclassCounts, MisclassCounts) {
        (
            MisclassCounts::compare(&self.latent.adjacency, &self.proxy1),
            MisclassCounts::compare(&self.latent.adjacency, &self.proxy2),
        )
    }
}
