//! Closed-form exposure laws under randomized treatment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which error a one-type proxy is free of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OneTypeMode {
    /// Every latent link is reported; spurious links may be added (`N* ⊆ N`).
    #[serde(rename = "nfn", alias = "a", alias = "no_false_negative")]
    NoFalseNegative,
    /// Every reported link is real; latent links may be missed (`N ⊆ N*`).
    #[serde(rename = "nfp", alias = "b", alias = "no_false_positive")]
    NoFalsePositive,
}

impl std::str::FromStr for OneTypeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OneTypeMode::parse(s)
    }
}

impl OneTypeMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nfn" | "a" | "no_false_negative" => Ok(OneTypeMode::NoFalseNegative),
            "nfp" | "b" | "no_false_positive" => Ok(OneTypeMode::NoFalsePositive),
            _ => Err(Error::BadArgs(format!("unknown one-type mode '{s}' (expected nfn or nfp)"))),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            OneTypeMode::NoFalseNegative => "nfn",
            OneTypeMode::NoFalsePositive => "nfp",
        }
    }

    /// Whether a proxy degree `n` is reachable from latent degree `n_star`.
    pub fn degree_feasible(self, n: u32, n_star: u32) -> bool {
        match self {
            OneTypeMode::NoFalseNegative => n_star <= n,
            OneTypeMode::NoFalsePositive => n <= n_star,
        }
    }
}

/// `ln C(n, k)` by summing logs; exact enough for the small degrees involved.
fn ln_choose(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|j| ((n - j) as f64).ln() - ((j + 1) as f64).ln()).sum()
}

fn choose(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    let mut c = 1.0;
    for j in 0..k {
        c = c * (n - j) as f64 / (j + 1) as f64;
    }
    c
}

/// `C(n, s) p^s (1−p)^{n−s}`.
pub fn binom_pmf(n: u32, s: u32, p1: f64) -> Result<f64> {
    if s > n {
        return Err(Error::BadArgs(format!("successes {s} exceed trials {n}")));
    }
    if !(0.0..=1.0).contains(&p1) {
        return Err(Error::BadArgs(format!("probability must lie in [0,1], got {p1}")));
    }
    Ok(binom_unchecked(n, s, p1))
}

pub(crate) fn binom_unchecked(n: u32, s: u32, p1: f64) -> f64 {
    if p1 == 0.0 {
        return (s == 0) as u8 as f64;
    }
    if p1 == 1.0 {
        return (s == n) as u8 as f64;
    }
    if n <= 60 {
        choose(n, s) * p1.powi(s as i32) * (1.0 - p1).powi((n - s) as i32)
    } else {
        (ln_choose(n, s) + s as f64 * p1.ln() + (n - s) as f64 * (1.0 - p1).ln()).exp()
    }
}

/// Law of the observed exposure `S` given the latent one under a one-type
/// proxy.
///
/// With no false negatives, `S − S*` counts treated units among the
/// `n − n*` spurious links. With no false positives the roles flip: the
/// missed `n* − n` links carry `s* − s` treated units. Infeasible
/// combinations return 0.
pub fn one_type_kernel(s: u32, s_star: u32, n: u32, n_star: u32, p1: f64, mode: OneTypeMode) -> f64 {
    if s > n || s_star > n_star {
        return 0.0;
    }
    let (lo_s, hi_s, lo_n, hi_n) = match mode {
        OneTypeMode::NoFalseNegative => (s_star, s, n_star, n),
        OneTypeMode::NoFalsePositive => (s, s_star, n, n_star),
    };
    if lo_n > hi_n || lo_s > hi_s {
        return 0.0;
    }
    let (ds, dn) = (hi_s - lo_s, hi_n - lo_n);
    if ds > dn {
        return 0.0;
    }
    binom_unchecked(dn, ds, p1)
}

/// Lexicographic position of `(s, n)` among `{(s, n): 0 ≤ s ≤ n ≤ K−1}`.
pub fn lexi_index(s: u32, n: u32, k: usize) -> Result<usize> {
    if s > n || n as usize >= k {
        return Err(Error::BadArgs(format!("(s={s}, n={n}) outside the support of size K={k}")));
    }
    let n = n as usize;
    Ok(n * (n + 1) / 2 + s as usize)
}

/// Ordered latent exposure support `(0,0), (0,1), (1,1), (0,2), …`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentSupportIndex {
    k: usize,
    pairs: Vec<(u32, u32)>,
}

impl LatentSupportIndex {
    pub fn new(k: usize) -> Self {
        let pairs = (0..k as u32).flat_map(|n| (0..=n).map(move |s| (s, n))).collect();
        LatentSupportIndex { k, pairs }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `(s*, n*)` pairs in order.
    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    pub fn index(&self, s: u32, n: u32) -> Result<usize> {
        lexi_index(s, n, self.k)
    }
}

/// Conditional propensity `e(d, s, n) = P(D=d) · P(S=s | |N|=n)`.
pub fn propensity(d: u8, s: u32, n: u32, p1: f64) -> Result<f64> {
    if d > 1 {
        return Err(Error::BadArgs(format!("treatment must be 0 or 1, got {d}")));
    }
    let pd = if d == 1 { p1 } else { 1.0 - p1 };
    Ok(pd * binom_pmf(n, s, p1)?)
}
