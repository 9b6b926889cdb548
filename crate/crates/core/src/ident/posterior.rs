//! Posterior of the latent exposure `(S*, |N*|)` given an observed cell.

use super::eigen::IdentComponents;
use super::kernels::{binom_unchecked, one_type_kernel, LatentSupportIndex, OneTypeMode};
use crate::error::{Error, Result};

/// `f_{S*,|N*| | D,S,Z,|N|}` at one observed cell, indexed lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPosterior {
    pub d: u8,
    pub s: u32,
    pub n: u32,
    pub z: Vec<f64>,
    pub probs: Vec<f64>,
    /// Sum of the unnormalized six-factor products; 1 under exact inputs.
    pub raw_total: f64,
}

impl LatentPosterior {
    pub fn k(&self) -> usize {
        support_k(self.probs.len())
    }

    /// Nonzero `((s*, n*), prob)` entries.
    pub fn support(&self) -> impl Iterator<Item = ((u32, u32), f64)> + '_ {
        let idx = LatentSupportIndex::new(self.k());
        let pairs: Vec<(u32, u32)> = idx.pairs().to_vec();
        self.probs.iter().zip(pairs).filter(|(p, _)| **p > 0.0).map(|(p, t)| (t, *p))
    }

    /// Point mass at `(s*, n*) = (s, n)`.
    pub fn point_mass(d: u8, s: u32, n: u32, z: &[f64], k: usize) -> Result<Self> {
        let idx = LatentSupportIndex::new(k);
        let mut probs = vec![0.0; idx.len()];
        probs[idx.index(s, n)?] = 1.0;
        Ok(LatentPosterior { d, s, n, z: z.to_vec(), probs, raw_total: 1.0 })
    }

    pub fn mean_exposure(&self) -> f64 {
        self.support().map(|((s, _), p)| s as f64 * p).sum()
    }
}

fn support_k(len: usize) -> usize {
    // len = K(K+1)/2
    let mut k = 0;
    while k * (k + 1) / 2 < len {
        k += 1;
    }
    k
}

/// Assembles the posterior from the six factors
/// `f(S|S*,Z,|N*|,|N|) f(S*|Z,|N*|) f(|N||Z,|N*|) f(|N*||Z) / [f(S|Z,|N|) f(|N||Z)]`
/// for the primary proxy, clipping negatives and renormalizing.
///
/// `f_n` is `f̂_{|N||Z}(n)`; cells with `f_n ≤ eps` are rejected. The
/// posterior does not depend on `d` under randomized treatment.
#[allow(clippy::too_many_arguments)]
pub fn latent_posterior(
    d: u8,
    s: u32,
    n: u32,
    z: &[f64],
    comps: &IdentComponents,
    f_n: f64,
    p1: f64,
    mode: OneTypeMode,
    eps: f64,
) -> Result<LatentPosterior> {
    let k = comps.k();
    if s > n {
        return Err(Error::BadArgs(format!("exposure {s} exceeds degree {n}")));
    }
    if n as usize >= k {
        return Err(Error::BadArgs(format!("degree {n} outside the support of size {k}")));
    }
    if !(f_n > eps) {
        return Err(Error::ThinCell { mass: f_n, eps });
    }
    let idx = LatentSupportIndex::new(k);
    let mut probs = vec![0.0; idx.len()];
    let f_s = binom_unchecked(n, s, p1);
    for (j, &(ss, ns)) in idx.pairs().iter().enumerate() {
        if !mode.degree_feasible(n, ns) {
            continue;
        }
        let kern = one_type_kernel(s, ss, n, ns, p1, mode);
        if kern == 0.0 {
            continue;
        }
        // f(S|S*,…)·f(S*|…): the kernel already is f(S|S*) without false negatives;
        // without false positives it is f(S*|S), and Bayes gives f(S|S*)f(S*) = f(S*|S)f(S).
        let exposure = match mode {
            OneTypeMode::NoFalseNegative => kern * binom_unchecked(ns, ss, p1),
            OneTypeMode::NoFalsePositive => kern * f_s,
        };
        probs[j] = exposure * comps.primary_prob(n as usize, ns as usize) * comps.latent_prob(ns as usize);
    }
    for p in probs.iter_mut() {
        if *p < 0.0 {
            *p = 0.0;
        }
    }
    let total: f64 = probs.iter().sum();
    let denom = f_s * f_n;
    let raw_total = if denom > 0.0 { total / denom } else { f64::INFINITY };
    if !(total > 0.0) {
        return Err(Error::ThinCell { mass: total, eps: 0.0 });
    }
    for p in probs.iter_mut() {
        *p /= total;
    }
    Ok(LatentPosterior { d, s, n, z: z.to_vec(), probs, raw_total })
}
