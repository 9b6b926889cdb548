//! Kernel first stage: product-kernel densities over mixed continuous and
//! discrete variables and the nuisance vector built from them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::data::{CovariateKind, ProxyId, Sample};
use crate::error::{Error, Result};

const DENOM_FLOOR: f64 = 1e-12;

/// Gaussian kernel `κ(u)`.
pub fn gaussian(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

/// `∏_q κ(u_q)`. The bandwidth scaling `h^{-Q}` is applied by callers.
pub fn product_kernel(u: &[f64]) -> f64 {
    u.iter().map(|&v| gaussian(v)).product()
}

/// A column of a [`Sample`] usable as a density coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Y,
    D,
    /// Covariate by position.
    Z(usize),
    S(ProxyId),
    Deg(ProxyId),
}

impl Role {
    fn value(self, sample: &Sample, i: usize) -> f64 {
        match self {
            Role::Y => sample.y[i],
            Role::D => sample.d[i] as f64,
            Role::Z(k) => sample.z[i][k],
            Role::S(p) => sample.proxy(p).0[i] as f64,
            Role::Deg(p) => sample.proxy(p).1[i] as f64,
        }
    }
}

/// Split of density coordinates into smoothed and exactly matched ones.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VarSpec {
    pub continuous: Vec<Role>,
    pub discrete: Vec<Role>,
}

impl VarSpec {
    pub fn new(continuous: Vec<Role>, discrete: Vec<Role>) -> Self {
        VarSpec { continuous, discrete }
    }

    /// Covariate coordinates split by their declared kind.
    pub fn covariates(sample: &Sample) -> Self {
        let mut spec = VarSpec::default();
        for (k, c) in sample.covariates.iter().enumerate() {
            match c.kind {
                CovariateKind::Continuous => spec.continuous.push(Role::Z(k)),
                CovariateKind::Discrete => spec.discrete.push(Role::Z(k)),
            }
        }
        spec
    }

    pub fn q(&self) -> usize {
        self.continuous.len()
    }

    pub fn with_discrete(mut self, role: Role) -> Self {
        self.discrete.push(role);
        self
    }

    pub fn with_continuous(mut self, role: Role) -> Self {
        self.continuous.push(role);
        self
    }

    /// `h^{-Q} ∏ κ((W^c_i − w^c)/h) · 1[W^d_i = w^d]` for one row.
    /// `w` lists continuous coordinates first, then discrete ones.
    fn weight(&self, sample: &Sample, i: usize, w: &[f64], h: f64) -> f64 {
        let q = self.q();
        for (k, role) in self.discrete.iter().enumerate() {
            if role.value(sample, i) != w[q + k] {
                return 0.0;
            }
        }
        let mut k = 1.0;
        for (c, role) in self.continuous.iter().enumerate() {
            k *= gaussian((role.value(sample, i) - w[c]) / h) / h;
        }
        k
    }
}

/// `f̂(w) = N⁻¹ Σ_i K(W^c_i, w^c) 1[W^d_i = w^d]`.
pub fn joint_density(sample: &Sample, spec: &VarSpec, w: &[f64], h: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(h > 0.0) {
        return Err(Error::BadArgs(format!("bandwidth must be positive, got {h}")));
    }
    let dim = spec.continuous.len() + spec.discrete.len();
    if w.len() != dim {
        return Err(Error::DimMismatch { expected: dim, got: w.len() });
    }
    let total: f64 = (0..sample.len()).map(|i| spec.weight(sample, i, w, h)).sum();
    Ok(total / sample.len() as f64)
}

/// Bandwidth `h = N^{-exponent}`.
pub fn bandwidth(n: usize, exponent: f64) -> f64 {
    (n as f64).powf(-exponent)
}

/// Kernel-weighted tables of the two degree proxies at one covariate point.
///
/// Rows index the instrument's degree, censored into the block, columns the
/// primary proxy's binned by [`PooledEdge`]. All entries are already divided
/// by `f̂_Z(z)`, so they are conditional on `Z=z`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTables {
    /// Smallest degree in the block; rows and columns cover `lo..lo+k`.
    pub lo: usize,
    pub k: usize,
    /// `f̂_Z(z)`.
    pub f_z: f64,
    /// `f̂_{|Ñ|,|N||Z}(a, b)`.
    pub joint: Vec<Vec<f64>>,
    /// `∫ y f̂_{|Ñ|,|N|,Y|Z}(a, b, y) dy`.
    pub ey: Vec<Vec<f64>>,
    /// Conditional mass of primary degrees falling in no bin.
    pub outside: f64,
}

impl CellTables {
    /// `f̂_{|N||Z}(b)`, the column sums of `joint`.
    pub fn primary_marginal(&self) -> Vec<f64> {
        (0..self.k).map(|b| (0..self.k).map(|a| self.joint[a][b]).sum()).collect()
    }

    pub fn instrument_marginal(&self) -> Vec<f64> {
        self.joint.iter().map(|r| r.iter().sum()).collect()
    }

    /// Rescales to the law conditional on landing in the block.
    pub fn renormalized(&self) -> CellTables {
        let inside = 1.0 - self.outside;
        let scale = if inside > 0.0 { 1.0 / inside } else { 0.0 };
        let f = |m: &Vec<Vec<f64>>| m.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
        CellTables { lo: self.lo, k: self.k, f_z: self.f_z, joint: f(&self.joint), ey: f(&self.ey), outside: 0.0 }
    }
}

/// First-stage nuisance estimates `γ̂`: the five density evaluators with a
/// primary proxy `N` and an instrument proxy `Ñ`.
#[derive(Debug, Clone)]
pub struct GammaHat<'a> {
    sample: &'a Sample,
    primary: ProxyId,
    h: f64,
    zspec: VarSpec,
}

impl<'a> GammaHat<'a> {
    pub fn new(sample: &'a Sample, h: f64, primary: ProxyId) -> Result<Self> {
        if sample.len() < 2 {
            return Err(Error::EmptySample);
        }
        if !(h > 0.0) {
            return Err(Error::BadArgs(format!("bandwidth must be positive, got {h}")));
        }
        Ok(GammaHat { sample, primary, h, zspec: VarSpec::covariates(sample) })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn primary(&self) -> ProxyId {
        self.primary
    }

    pub fn sample(&self) -> &Sample {
        self.sample
    }

    /// Row weights `K(Z_i, z)`, including `h^{-Q}`.
    pub fn z_weights(&self, z: &[f64]) -> Vec<f64> {
        let zs = self.zspec.continuous.iter().chain(&self.zspec.discrete).map(|r| match r {
            Role::Z(k) => z[*k],
            _ => unreachable!(),
        });
        let w: Vec<f64> = zs.collect();
        (0..self.sample.len()).map(|i| self.zspec.weight(self.sample, i, &w, self.h)).collect()
    }

    fn degrees(&self) -> (&[u32], &[u32]) {
        (self.sample.proxy(self.primary.other()).1, self.sample.proxy(self.primary).1)
    }

    fn mean_weight(&self, z: &[f64], pred: impl Fn(usize) -> f64) -> f64 {
        let w = self.z_weights(z);
        w.iter().enumerate().map(|(i, &wi)| if wi == 0.0 { 0.0 } else { wi * pred(i) }).sum::<f64>()
            / self.sample.len() as f64
    }

    /// `f̂_Z(z)`.
    pub fn f_z(&self, z: &[f64]) -> f64 {
        self.mean_weight(z, |_| 1.0)
    }

    /// `f̂_{|N|,Z}(n, z)`.
    pub fn f_n_z(&self, n: u32, z: &[f64]) -> f64 {
        let deg = self.degrees().1;
        self.mean_weight(z, |i| (deg[i] == n) as u8 as f64)
    }

    /// `f̂_{S,|N|,Z}(s, n, z)`.
    pub fn f_s_n_z(&self, s: u32, n: u32, z: &[f64]) -> f64 {
        let (sv, deg) = self.sample.proxy(self.primary);
        self.mean_weight(z, |i| (sv[i] == s && deg[i] == n) as u8 as f64)
    }

    /// `f̂_{|Ñ|,|N|,Z}(ñ, n, z)`.
    pub fn f_nt_n_z(&self, nt: u32, n: u32, z: &[f64]) -> f64 {
        let (dt, dn) = self.degrees();
        self.mean_weight(z, |i| (dt[i] == nt && dn[i] == n) as u8 as f64)
    }

    /// `f̂_{|Ñ|,|N|,Y,Z}(ñ, n, y, z)`, with `Y` smoothed by the same bandwidth.
    pub fn f_nt_n_y_z(&self, nt: u32, n: u32, y: f64, z: &[f64]) -> f64 {
        let (dt, dn) = self.degrees();
        let h = self.h;
        let yv = &self.sample.y;
        self.mean_weight(z, |i| if dt[i] == nt && dn[i] == n { gaussian((yv[i] - y) / h) / h } else { 0.0 })
    }

    /// One pass over the sample producing the `k × k` degree tables at `z`
    /// for the block starting at degree `lo`.
    pub fn cell_tables(&self, z: &[f64], lo: usize, k: usize, pooled: PooledEdge) -> Result<CellTables> {
        if k == 0 {
            return Err(Error::BadArgs("degree block must be nonempty".into()));
        }
        let w = self.z_weights(z);
        let (dt, dn) = self.degrees();
        let n = self.sample.len() as f64;
        let mut joint = vec![vec![0.0; k]; k];
        let mut ey = vec![vec![0.0; k]; k];
        let mut total = 0.0;
        let mut inside = 0.0;
        for (i, &wi) in w.iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            total += wi;
            if let Some(b) = pooled.primary_bin(dn[i] as usize, lo, k) {
                let a = instrument_bin(dt[i] as usize, lo, k);
                inside += wi;
                joint[a][b] += wi;
                ey[a][b] += wi * self.sample.y[i];
            }
        }
        if total < DENOM_FLOOR {
            return Err(Error::EmptyCell(format!("no kernel mass at z = {z:?}")));
        }
        for a in 0..k {
            for b in 0..k {
                joint[a][b] /= total;
                ey[a][b] /= total;
            }
        }
        Ok(CellTables { lo, k, f_z: total / n, joint, ey, outside: 1.0 - inside / total })
    }
}

/// Row of the instrument degree in the block `lo..lo+k`, clamping at both ends.
pub fn instrument_bin(deg: usize, lo: usize, k: usize) -> usize {
    deg.clamp(lo, lo + k - 1) - lo
}

/// Edge of the block whose primary-degree bin also holds every degree beyond
/// it. Degrees past the other edge fall outside the tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PooledEdge {
    Low,
    High,
}

impl PooledEdge {
    /// Column of primary degree `deg` in the block `lo..lo+k`, if any.
    pub fn primary_bin(self, deg: usize, lo: usize, k: usize) -> Option<usize> {
        match self {
            PooledEdge::High if deg >= lo => Some(deg.min(lo + k - 1) - lo),
            PooledEdge::Low if deg < lo + k => Some(deg.max(lo) - lo),
            _ => None,
        }
    }

    /// Column of the pooled bin.
    pub fn pooled_bin(self, k: usize) -> usize {
        match self {
            PooledEdge::Low => 0,
            PooledEdge::High => k - 1,
        }
    }
}

/// `∫ y f̂_{|Ñ|,|N|,Y|Z}(ñ, n, y) dy = Σ Y_i K_i 1[cell] / Σ K_i`, where the
/// first proxy plays `Ñ` and the second `N`.
pub fn cond_moment_y(sample: &Sample, z: &[f64], nt: u32, n: u32, h: f64) -> Result<f64> {
    let g = GammaHat::new(sample, h, ProxyId::Second)?;
    let w = g.z_weights(z);
    let total: f64 = w.iter().sum();
    if total < DENOM_FLOOR {
        return Err(Error::EmptyCell(format!("no kernel mass at z = {z:?}")));
    }
    let cell_mass: f64 =
        w.iter().enumerate().filter(|&(i, _)| sample.deg1[i] == nt && sample.deg2[i] == n).map(|(_, &wi)| wi).sum();
    if cell_mass < DENOM_FLOOR {
        return Err(Error::EmptyCell(format!("no kernel mass at (ñ={nt}, n={n}, z={z:?})")));
    }
    let num: f64 = w
        .iter()
        .enumerate()
        .filter(|&(i, _)| sample.deg1[i] == nt && sample.deg2[i] == n)
        .map(|(i, &wi)| wi * sample.y[i])
        .sum();
    Ok(num / total)
}
