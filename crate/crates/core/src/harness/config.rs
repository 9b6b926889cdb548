//! Flat key/value experiment configuration.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::ProxyId;
use crate::error::{Error, Result};
use crate::estim::effects::{default_queries, EffectQuery};
use crate::estim::model::{CasfModel, LinearCasf};
use crate::ident::OneTypeMode;
use crate::simgen::{MisclassModel, ProxySymmetry, SimConfig};
use crate::spe::{SpeConfig, SupportRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Spe,
    Naive1,
    Naive2,
    SingleProxy,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [Estimator::Spe, Estimator::Naive1, Estimator::Naive2, Estimator::SingleProxy];

    pub fn tag(self) -> &'static str {
        match self {
            Estimator::Spe => "spe",
            Estimator::Naive1 => "naive1",
            Estimator::Naive2 => "naive2",
            Estimator::SingleProxy => "single_proxy",
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.tag().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown estimator '{s}' (spe, naive1, naive2, single_proxy)")))
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Everything a Monte Carlo run needs. Serialized as a flat TOML table.
///
/// Proxy 1 uses `pomega`/`pu`/`pv`, proxy 2 the keys suffixed with `2`;
/// `pv` is the false-positive scale `δ^V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub rdeg: f64,
    pub p_treat: f64,
    pub p_z: f64,
    pub beta: [f64; 3],
    pub theta_true: Vec<f64>,
    pub sigma: f64,
    pub peer_var: f64,
    pub symmetry: ProxySymmetry,
    pub pomega: f64,
    pub pu: f64,
    pub pv: f64,
    pub pomega2: f64,
    pub pu2: f64,
    pub pv2: f64,
    pub copula_rho: f64,
    pub bandwidth_exp: f64,
    /// Required whenever SPE runs.
    pub mode: Option<OneTypeMode>,
    /// Which proxy (1 or 2) carries one type of error.
    pub one_type_proxy: u8,
    pub min_count: usize,
    pub trim_eps: f64,
    pub delta: bool,
    /// Effect labels such as `tau_s(1,0,3)`.
    pub queries: Vec<String>,
    pub estimators: Vec<Estimator>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        let spe = SpeConfig::default();
        let min_count = match spe.support {
            SupportRule::Adaptive { min_count } => min_count,
            _ => 20,
        };
        ExperimentConfig {
            n: sim.n,
            reps: 200,
            seed: sim.seed,
            rdeg: sim.r_deg,
            p_treat: sim.p_treat,
            p_z: sim.p_z,
            beta: sim.beta,
            theta_true: sim.theta_true,
            sigma: sim.sigma_idio,
            peer_var: sim.peer_var,
            symmetry: sim.symmetry,
            pomega: sim.proxy1.p_omega,
            pu: sim.proxy1.p_u_miss,
            pv: sim.proxy1.p_v_rate,
            pomega2: sim.proxy2.p_omega,
            pu2: sim.proxy2.p_u_miss,
            pv2: sim.proxy2.p_v_rate,
            copula_rho: 0.0,
            bandwidth_exp: spe.bandwidth_exp,
            mode: None,
            one_type_proxy: spe.primary.index(),
            min_count,
            trim_eps: spe.trim_eps,
            delta: spe.delta,
            queries: default_queries().iter().map(EffectQuery::label).collect(),
            estimators: vec![Estimator::Spe, Estimator::Naive1, Estimator::Naive2],
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators requested".into()));
        }
        if self.estimators.contains(&Estimator::Spe) && self.mode.is_none() {
            return Err(Error::Config("SPE needs the one-type error mode (nfn or nfp)".into()));
        }
        if !(self.bandwidth_exp > 0.0) {
            return Err(Error::Config(format!("bandwidth exponent must be positive, got {}", self.bandwidth_exp)));
        }
        ProxyId::from_index(self.one_type_proxy).map_err(|e| Error::Config(e.to_string()))?;
        let dim = LinearCasf::exposure_design().dim();
        if self.theta_true.len() != dim {
            return Err(Error::Config(format!("theta_true needs {dim} entries, got {}", self.theta_true.len())));
        }
        self.parsed_queries()?;
        self.sim_config(self.seed).validate()
    }

    pub fn parsed_queries(&self) -> Result<Vec<EffectQuery>> {
        self.queries.iter().map(|q| EffectQuery::parse(q)).collect()
    }

    /// Simulation settings of one replication.
    pub fn sim_config(&self, seed: u64) -> SimConfig {
        let proxy =
            |p_omega, p_u_miss, p_v_rate| MisclassModel { p_omega, p_u_miss, p_v_rate, copula_rho: self.copula_rho };
        SimConfig {
            n: self.n,
            r_deg: self.rdeg,
            beta: self.beta,
            theta_true: self.theta_true.clone(),
            p_treat: self.p_treat,
            p_z: self.p_z,
            proxy1: proxy(self.pomega, self.pu, self.pv),
            proxy2: proxy(self.pomega2, self.pu2, self.pv2),
            sigma_idio: self.sigma,
            peer_var: self.peer_var,
            symmetry: self.symmetry,
            seed,
        }
    }

    /// SPE settings; `None` when no mode was given.
    pub fn spe_config(&self) -> Option<SpeConfig> {
        Some(SpeConfig {
            primary: ProxyId::from_index(self.one_type_proxy).ok()?,
            mode: self.mode?,
            trim_eps: self.trim_eps,
            support: SupportRule::Adaptive { min_count: self.min_count },
            delta: self.delta,
            bandwidth_exp: self.bandwidth_exp,
            ..SpeConfig::default()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut c = ExperimentConfig { mode: Some(OneTypeMode::NoFalsePositive), reps: 3, ..Default::default() };
        c.estimators.push(Estimator::SingleProxy);
        c.out = Some(PathBuf::from("out.csv"));
        let text = c.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = ExperimentConfig::from_toml_str("n = 500\nmode = \"nfp\"\nestimators = [\"spe\"]\n").unwrap();
        assert_eq!(c.n, 500);
        assert_eq!(c.mode, Some(OneTypeMode::NoFalsePositive));
        assert_eq!(c.reps, ExperimentConfig::default().reps);
        c.validate().unwrap();
    }

    #[test]
    fn spe_without_mode_is_rejected() {
        let c = ExperimentConfig::default();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = ExperimentConfig { estimators: vec![Estimator::Naive1], ..Default::default() };
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        let c = ExperimentConfig { reps: 0, estimators: vec![Estimator::Naive1], ..Default::default() };
        assert!(c.validate().is_err());
        let c = ExperimentConfig { pu: 1.5, estimators: vec![Estimator::Naive1], ..Default::default() };
        assert!(c.validate().is_err());
        assert!("naive3".parse::<Estimator>().is_err());
        assert_eq!("Naive2".parse::<Estimator>().unwrap(), Estimator::Naive2);
    }
}
