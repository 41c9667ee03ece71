use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{read_json, Error, Result};
use crate::network::NetworkModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonConfig {
    /// Step length in hours.
    pub dt_hours: f64,
    /// Stage-2 horizon in steps.
    pub n: usize,
    /// Stage-1 period in steps.
    pub n_r: usize,
}

impl HorizonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_hours > 0.0 && self.dt_hours.is_finite()) {
            return Err(Error::Config(format!("dt_hours must be positive, got {}", self.dt_hours)));
        }
        if self.n == 0 || self.n >= self.n_r {
            return Err(Error::Config(format!(
                "horizon must satisfy 0 < N < N_r, got N = {}, N_r = {}",
                self.n, self.n_r
            )));
        }
        Ok(())
    }
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self {
            dt_hours: 0.5,
            n: 10,
            n_r: 96,
        }
    }
}

/// Diagonal weight, either one value for every entry or one per entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Diagonal {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Diagonal {
    pub fn resolve(&self, len: usize, what: &str) -> Result<Vec<f64>> {
        let v = match self {
            Diagonal::Scalar(w) => vec![*w; len],
            Diagonal::Vector(v) if v.len() == len => v.clone(),
            Diagonal::Vector(v) => {
                return Err(Error::Config(format!(
                    "{what} has {} entries, expected {len}",
                    v.len()
                )))
            }
        };
        if v.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config(format!("{what} has non-finite entries")));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerWeights {
    /// Stage-1 control weight over `[q_g per capacitor bus, p_bat per battery]`.
    pub t1: Diagonal,
    /// Stage-1 voltage weight per non-root bus.
    pub t2: Diagonal,
    /// Stage-2 voltage weight per non-root bus.
    pub t3: Diagonal,
    /// Weight on ohmic losses `sum r l`, added to both stages.
    #[serde(default = "default_loss_weight")]
    pub loss_weight: f64,
}

fn default_loss_weight() -> f64 {
    0.1
}

impl Default for ControllerWeights {
    fn default() -> Self {
        Self {
            t1: Diagonal::Scalar(1.0),
            t2: Diagonal::Scalar(0.1),
            t3: Diagonal::Scalar(0.1),
            loss_weight: default_loss_weight(),
        }
    }
}

/// Weights resolved against a specific network.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedWeights {
    pub t1: Vec<f64>,
    pub t2: Vec<f64>,
    pub t3: Vec<f64>,
    pub loss_weight: f64,
}

impl ControllerWeights {
    pub fn resolve(&self, model: &NetworkModel) -> Result<ResolvedWeights> {
        let n_u = model.capacitor_buses().len() + model.batteries().len();
        let n_bus = model.n_buses() - 1;
        let w = ResolvedWeights {
            t1: self.t1.resolve(n_u, "T1")?,
            t2: self.t2.resolve(n_bus, "T2")?,
            t3: self.t3.resolve(n_bus, "T3")?,
            loss_weight: self.loss_weight,
        };
        if w.t1.iter().any(|v| *v <= 0.0) {
            return Err(Error::Config("T1 entries must be positive".into()));
        }
        if w.t2.iter().chain(&w.t3).any(|v| *v < 0.0) || !(w.loss_weight >= 0.0) {
            return Err(Error::Config("T2, T3 and loss_weight must be nonnegative".into()));
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceSpec {
    /// Two-level tariff, `peak` during `[peak_start_h, peak_end_h)` each day.
    TimeOfUse {
        off_peak: f64,
        peak: f64,
        peak_start_h: f64,
        peak_end_h: f64,
    },
    Values(Vec<f64>),
    /// JSON array of prices, relative to the config file.
    File(PathBuf),
}

impl Default for PriceSpec {
    fn default() -> Self {
        PriceSpec::TimeOfUse {
            off_peak: 0.1,
            peak: 0.3,
            peak_start_h: 16.0,
            peak_end_h: 21.0,
        }
    }
}

/// Electricity price per step, repeated periodically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSignal {
    pub values: Vec<f64>,
}

impl PriceSignal {
    pub fn from_spec(spec: &PriceSpec, horizon: &HorizonConfig, base_dir: Option<&Path>) -> Result<Self> {
        let values = match spec {
            PriceSpec::TimeOfUse {
                off_peak,
                peak,
                peak_start_h,
                peak_end_h,
            } => (0..horizon.n_r)
                .map(|k| {
                    let h = (k as f64 * horizon.dt_hours).rem_euclid(24.0);
                    if h >= *peak_start_h && h < *peak_end_h {
                        *peak
                    } else {
                        *off_peak
                    }
                })
                .collect(),
            PriceSpec::Values(v) => v.clone(),
            PriceSpec::File(p) => {
                let path = match base_dir {
                    Some(d) if p.is_relative() => d.join(p),
                    _ => p.clone(),
                };
                read_json(&path)?
            }
        };
        let signal = Self { values };
        signal.validate(horizon)?;
        Ok(signal)
    }

    pub fn validate(&self, horizon: &HorizonConfig) -> Result<()> {
        if self.values.len() < horizon.n_r {
            return Err(Error::Config(format!(
                "price signal has {} entries, needs at least N_r = {}",
                self.values.len(),
                horizon.n_r
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("price signal has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn at(&self, k: usize) -> f64 {
        self.values[k % self.values.len()]
    }
}

/// Controller configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    #[serde(flatten)]
    pub horizon: HorizonConfig,
    #[serde(default)]
    pub weights: ControllerWeights,
    /// Nominal squared voltage; defaults to the substation value.
    #[serde(default)]
    pub nu_nom: Option<f64>,
    #[serde(default)]
    pub price: PriceSpec,
}

impl ControllerConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let cfg: Self = read_json(path)?;
        cfg.horizon.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Everything the controller needs, checked against one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerContext {
    pub horizon: HorizonConfig,
    pub weights: ResolvedWeights,
    pub nu_nom: f64,
    pub price: PriceSignal,
}

impl ControllerContext {
    pub fn new(model: &NetworkModel, config: &ControllerConfig, base_dir: Option<&Path>) -> Result<Self> {
        config.horizon.validate()?;
        if model.forecast_len() != config.horizon.n_r {
            return Err(Error::Config(format!(
                "fixed-load forecast has {} steps but N_r = {}; the periodic reference needs one full period",
                model.forecast_len(),
                config.horizon.n_r
            )));
        }
        Ok(Self {
            horizon: config.horizon,
            weights: config.weights.resolve(model)?,
            nu_nom: config.nu_nom.unwrap_or_else(|| model.nu0()),
            price: PriceSignal::from_spec(&config.price, &config.horizon, base_dir)?,
        })
    }

    pub fn dt(&self) -> f64 {
        self.horizon.dt_hours
    }
}
