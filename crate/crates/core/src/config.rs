//! Scenario files.
//!
//! A scenario is a TOML document. Paths inside it are resolved against the
//! directory holding the file. Unknown keys are rejected.
//!
//! ```toml
//! network = "../crates/core/data/la_testbed.toml"
//! horizon = 24.0
//! seed = 7
//!
//! [demand]
//! scale = 0.1
//! fixed = [{ origin = 0, destination = 2, rate = 1110.8333333333333 }]
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::demand::{calibrate_od_rates, CalibrationOptions, DemandSpec, OdPair, Shares};
use crate::error::{Error, Result};
use crate::matching::MatchParams;
use crate::network::{Network, NodeId, VolumeDelay};
use crate::routing::CostWeights;
use crate::sim::SimParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdRate {
    pub origin: NodeId,
    pub destination: NodeId,
    /// Full-scale vehicles per hour.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemandSection {
    pub scale: f64,
    /// Explicit rates. When empty, rates are calibrated from the observed
    /// link flows of the network.
    pub rates: Vec<OdRate>,
    /// Pairs to calibrate; empty means every connected pair.
    pub pairs: Vec<(NodeId, NodeId)>,
    /// Rates held fixed during calibration.
    pub fixed: Vec<OdRate>,
    /// Period the observed link flows cover, in hours.
    pub observed_period: f64,
}

impl Default for DemandSection {
    fn default() -> Self {
        DemandSection {
            scale: 0.1,
            rates: Vec::new(),
            pairs: Vec::new(),
            fixed: vec![OdRate {
                origin: NodeId(0),
                destination: NodeId(2),
                rate: 26660.0 / 24.0,
            }],
            observed_period: 24.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub network: PathBuf,
    pub demand: DemandSection,
    pub weights: CostWeights,
    pub bpr: VolumeDelay,
    pub dt: f64,
    /// Cost of one waiting step; defaults to one step of weighted travel time.
    pub penalty: Option<f64>,
    pub horizon: f64,
    pub shares: Shares,
    pub window_flexibility: f64,
    pub unused_fraction: Option<f64>,
    pub seed: u64,
    pub replications: usize,
    pub seats: u32,
    /// Defaults to the demand scale.
    pub capacity_scale: Option<f64>,
    pub flow_window: f64,
    pub validation_threshold: f64,
    pub significance: f64,
    pub sweep_levels: Vec<f64>,
    pub record_trace: bool,
    pub output: PathBuf,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            network: PathBuf::new(),
            demand: DemandSection::default(),
            weights: CostWeights::default(),
            bpr: VolumeDelay::default(),
            dt: 0.05,
            penalty: None,
            horizon: 24.0,
            shares: Shares::RIDESHARING,
            window_flexibility: 0.25,
            unused_fraction: None,
            seed: 7,
            replications: 20,
            seats: 3,
            capacity_scale: None,
            flow_window: 0.25,
            validation_threshold: 0.01,
            significance: 0.05,
            sweep_levels: vec![1.0, 0.75, 0.5, 0.25],
            record_trace: false,
            output: PathBuf::from("out"),
            base_dir: PathBuf::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::from_toml(origin, e, text))?;
        cfg.base_dir = origin.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Built-in scenario on the bundled testbed.
    pub fn testbed() -> Self {
        ScenarioConfig::default()
    }

    pub fn validate(&self) -> Result<()> {
        self.shares.validate()?;
        self.weights.validate()?;
        self.bpr.validate()?;
        self.match_params().validate()?;
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Validation(format!("{name} must be > 0, got {v}")))
            }
        };
        positive("horizon", self.horizon)?;
        positive("demand.scale", self.demand.scale)?;
        positive("demand.observed_period", self.demand.observed_period)?;
        positive("flow_window", self.flow_window)?;
        if let Some(c) = self.capacity_scale {
            positive("capacity_scale", c)?;
        }
        if !(self.window_flexibility >= 0.0 && self.window_flexibility.is_finite()) {
            return Err(Error::Validation("window_flexibility must be >= 0".into()));
        }
        if let Some(u) = self.unused_fraction {
            if !(0.0..=1.0).contains(&u) {
                return Err(Error::Validation(format!("unused_fraction {u} outside [0, 1]")));
            }
        }
        if let Some(u) = self.sweep_levels.iter().find(|u| !(0.0..=1.0).contains(*u)) {
            return Err(Error::Validation(format!("sweep level {u} outside [0, 1]")));
        }
        if self.replications == 0 {
            return Err(Error::Validation("replications must be at least 1".into()));
        }
        if !(self.validation_threshold >= 0.0) {
            return Err(Error::Validation("validation_threshold must be >= 0".into()));
        }
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return Err(Error::Validation("significance must lie in (0, 1)".into()));
        }
        if self.seats == 0 {
            return Err(Error::Validation("seats must be at least 1".into()));
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// The network file; an empty path means the bundled testbed.
    pub fn load_network(&self) -> Result<Network> {
        if self.network.as_os_str().is_empty() {
            return Ok(Network::la_testbed());
        }
        Network::load(self.resolve(&self.network))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output)
    }

    pub fn match_params(&self) -> MatchParams {
        MatchParams {
            dt: self.dt,
            penalty: self.penalty.unwrap_or(self.weights.time * self.dt),
            time_weight: self.weights.time,
        }
    }

    pub fn sim_params(&self) -> SimParams {
        SimParams {
            weights: self.weights,
            delay: self.bpr,
            matching: self.match_params(),
            capacity_scale: self.capacity_scale.unwrap_or(self.demand.scale),
            flow_window: self.flow_window,
            horizon: self.horizon,
            record_trace: self.record_trace,
        }
    }

    /// Full-scale hourly O-D rates: the explicit ones, or calibrated from the
    /// network's observed flows.
    pub fn od_rates(&self, network: &Network) -> Result<BTreeMap<OdPair, f64>> {
        if !self.demand.rates.is_empty() {
            let mut rates = BTreeMap::new();
            for r in &self.demand.rates {
                if rates.insert((r.origin, r.destination), r.rate).is_some() {
                    return Err(Error::Validation(format!(
                        "duplicate rate for {}->{}",
                        r.origin, r.destination
                    )));
                }
            }
            return Ok(rates);
        }
        let targets = network.links().iter().map(|l| (l.id, l.observed_daily_flow)).collect();
        let options = CalibrationOptions {
            pairs: self.demand.pairs.clone(),
            fixed: self
                .demand
                .fixed
                .iter()
                .map(|r| ((r.origin, r.destination), r.rate))
                .collect(),
        };
        calibrate_od_rates(network, &targets, self.demand.observed_period, &options)
    }

    pub fn demand_spec(&self, network: &Network) -> Result<DemandSpec> {
        Ok(DemandSpec {
            od_rates: self.od_rates(network)?,
            shares: self.shares,
            window_flexibility: self.window_flexibility,
            horizon: self.horizon,
            scale: self.demand.scale,
            seats: self.seats,
        })
    }

    /// SHA-256 over the resolved settings, seed excluded, plus the network
    /// contents.
    pub fn fingerprint(&self, network: &Network) -> String {
        let mut unseeded = self.clone();
        unseeded.seed = 0;
        unseeded.output = PathBuf::new();
        let text = toml::to_string(&unseeded).unwrap_or_default();
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        hasher.update(format!("{network:?}").as_bytes());
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
