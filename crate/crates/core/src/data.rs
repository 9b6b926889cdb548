//! Observed per-unit data and dependency neighborhoods.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Which of the two observed network proxies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProxyId {
    First,
    Second,
}

impl ProxyId {
    pub fn other(self) -> ProxyId {
        match self {
            ProxyId::First => ProxyId::Second,
            ProxyId::Second => ProxyId::First,
        }
    }

    pub fn index(self) -> u8 {
        match self {
            ProxyId::First => 1,
            ProxyId::Second => 2,
        }
    }

    pub fn from_index(i: u8) -> Result<ProxyId> {
        match i {
            1 => Ok(ProxyId::First),
            2 => Ok(ProxyId::Second),
            _ => Err(Error::BadArgs(format!("proxy index must be 1 or 2, got {i}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    Continuous,
    Discrete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    pub kind: CovariateKind,
}

impl Covariate {
    pub fn discrete(name: &str) -> Self {
        Covariate { name: name.to_string(), kind: CovariateKind::Discrete }
    }

    pub fn continuous(name: &str) -> Self {
        Covariate { name: name.to_string(), kind: CovariateKind::Continuous }
    }
}

/// Observed tuples `(Y, D, Z, S, |N|, S~, |N~|)` for every sampled unit.
///
/// `z[i]` holds the covariate vector of unit `i`, ordered as `covariates`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub y: Vec<f64>,
    pub d: Vec<u8>,
    pub covariates: Vec<Covariate>,
    pub z: Vec<Vec<f64>>,
    pub s1: Vec<u32>,
    pub deg1: Vec<u32>,
    pub s2: Vec<u32>,
    pub deg2: Vec<u32>,
    pub positions: Option<Vec<[f64; 2]>>,
    pub cluster: Option<Vec<String>>,
}

impl Sample {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Treated-neighbor counts and degrees of one proxy.
    pub fn proxy(&self, p: ProxyId) -> (&[u32], &[u32]) {
        match p {
            ProxyId::First => (&self.s1, &self.deg1),
            ProxyId::Second => (&self.s2, &self.deg2),
        }
    }

    /// Largest degree observed in either proxy.
    pub fn max_degree(&self) -> u32 {
        self.deg1.iter().chain(self.deg2.iter()).copied().max().unwrap_or(0)
    }

    pub fn treated_share(&self) -> f64 {
        if self.d.is_empty() {
            return 0.0;
        }
        self.d.iter().map(|&d| d as f64).sum::<f64>() / self.d.len() as f64
    }

    /// Checks column lengths and the `0 <= S <= |N|`, binary `D` constraints.
    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        let lens = [self.d.len(), self.z.len(), self.s1.len(), self.deg1.len(), self.s2.len(), self.deg2.len()];
        if let Some(&bad) = lens.iter().find(|&&l| l != n) {
            return Err(Error::DimMismatch { expected: n, got: bad });
        }
        if let Some(p) = &self.positions {
            if p.len() != n {
                return Err(Error::DimMismatch { expected: n, got: p.len() });
            }
        }
        if let Some(c) = &self.cluster {
            if c.len() != n {
                return Err(Error::DimMismatch { expected: n, got: c.len() });
            }
        }
        for i in 0..n {
            if self.d[i] > 1 {
                return Err(Error::Integrity { row: i, msg: format!("treatment d={} is not binary", self.d[i]) });
            }
            if self.z[i].len() != self.covariates.len() {
                return Err(Error::Integrity {
                    row: i,
                    msg: format!("{} covariates, expected {}", self.z[i].len(), self.covariates.len()),
                });
            }
            if self.s1[i] > self.deg1[i] {
                return Err(Error::Integrity {
                    row: i,
                    msg: format!("s1={} exceeds deg1={}", self.s1[i], self.deg1[i]),
                });
            }
            if self.s2[i] > self.deg2[i] {
                return Err(Error::Integrity {
                    row: i,
                    msg: format!("s2={} exceeds deg2={}", self.s2[i], self.deg2[i]),
                });
            }
            if !self.y[i].is_finite() {
                return Err(Error::Integrity { row: i, msg: "outcome is not finite".into() });
            }
        }
        Ok(())
    }

    /// Keeps the rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Sample {
        Sample {
            y: idx.iter().map(|&i| self.y[i]).collect(),
            d: idx.iter().map(|&i| self.d[i]).collect(),
            covariates: self.covariates.clone(),
            z: idx.iter().map(|&i| self.z[i].clone()).collect(),
            s1: idx.iter().map(|&i| self.s1[i]).collect(),
            deg1: idx.iter().map(|&i| self.deg1[i]).collect(),
            s2: idx.iter().map(|&i| self.s2[i]).collect(),
            deg2: idx.iter().map(|&i| self.deg2[i]).collect(),
            positions: self.positions.as_ref().map(|p| idx.iter().map(|&i| p[i]).collect()),
            cluster: self.cluster.as_ref().map(|c| idx.iter().map(|&i| c[i].clone()).collect()),
        }
    }
}

/// Symmetric family of dependency neighborhoods, `i` always in its own set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepNeighborhoods {
    sets: Vec<Vec<usize>>,
}

impl DepNeighborhoods {
    /// Builds from explicit sets. Each set is sorted and deduplicated; the
    /// family must be symmetric and reflexive.
    pub fn from_sets(mut sets: Vec<Vec<usize>>) -> Result<Self> {
        let n = sets.len();
        for (i, s) in sets.iter_mut().enumerate() {
            s.sort_unstable();
            s.dedup();
            if s.binary_search(&i).is_err() {
                return Err(Error::BadArgs(format!("unit {i} missing from its own neighborhood")));
            }
            if s.last().is_some_and(|&j| j >= n) {
                return Err(Error::BadArgs(format!("neighborhood of unit {i} references out-of-range unit")));
            }
        }
        let nb = DepNeighborhoods { sets };
        if !nb.is_symmetric() {
            return Err(Error::BadArgs("dependency neighborhoods are not symmetric".into()));
        }
        Ok(nb)
    }

    /// `Δ(i) = {i}`: the independent-observations structure.
    pub fn singletons(n: usize) -> Self {
        DepNeighborhoods { sets: (0..n).map(|i| vec![i]).collect() }
    }

    /// Units within L1 distance `r` of each other.
    pub fn from_positions(positions: &[[f64; 2]], r: f64) -> Result<Self> {
        if !(r >= 0.0) {
            return Err(Error::BadArgs(format!("radius must be nonnegative, got {r}")));
        }
        let n = positions.len();
        let mut sets: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        // sweep over units sorted by x so only a strip is compared
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| positions[a][0].total_cmp(&positions[b][0]).then(a.cmp(&b)));
        for (k, &i) in order.iter().enumerate() {
            let pi = positions[i];
            for &j in &order[k + 1..] {
                let pj = positions[j];
                if pj[0] - pi[0] > r {
                    break;
                }
                if (pi[0] - pj[0]).abs() + (pi[1] - pj[1]).abs() <= r {
                    sets[i].push(j);
                    sets[j].push(i);
                }
            }
        }
        for s in sets.iter_mut() {
            s.sort_unstable();
        }
        Ok(DepNeighborhoods { sets })
    }

    /// Cluster blocks: units sharing an id are mutually dependent.
    pub fn from_clusters<K: Ord + Clone>(ids: &[K]) -> Self {
        let mut groups: BTreeMap<K, Vec<usize>> = BTreeMap::new();
        for (i, k) in ids.iter().enumerate() {
            groups.entry(k.clone()).or_default().push(i);
        }
        let mut sets = vec![Vec::new(); ids.len()];
        for members in groups.values() {
            for &i in members {
                sets[i] = members.clone();
            }
        }
        DepNeighborhoods { sets }
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn get(&self, i: usize) -> &[usize] {
        &self.sets[i]
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn is_symmetric(&self) -> bool {
        self.sets
            .iter()
            .enumerate()
            .all(|(i, s)| s.iter().all(|&j| self.sets.get(j).is_some_and(|t| t.binary_search(&i).is_ok())))
    }

    pub fn max_size(&self) -> usize {
        self.sets.iter().map(Vec::len).max().unwrap_or(0)
    }
}
