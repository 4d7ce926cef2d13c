//! Experiment configuration: a flat TOML document with unit-suffixed keys, two presets
//! and the sweep axes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::{db_to_linear, dbm_to_watt, ChannelLaw, RegionSpec};
use crate::convex_solver::SolverTolerances;
use crate::error::{Error, Result};
use crate::short_term::{ArmijoRule, BacktrackParams};
use crate::surrogate::StepSequences;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeId {
    ProposedGmm,
    ProposedPmm,
    DecoupledGmm,
    ScsitGmm,
    ScsitUpa,
}

impl SchemeId {
    pub const ALL: [SchemeId; 5] =
        [SchemeId::ProposedGmm, SchemeId::ProposedPmm, SchemeId::DecoupledGmm, SchemeId::ScsitGmm, SchemeId::ScsitUpa];

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::ProposedGmm => "proposed-gmm",
            SchemeId::ProposedPmm => "proposed-pmm",
            SchemeId::DecoupledGmm => "decoupled-gmm",
            SchemeId::ScsitGmm => "scsit-gmm",
            SchemeId::ScsitUpa => "scsit-upa",
        }
    }

    /// Receive antennas move per channel sample.
    pub fn moves_per_sample(self) -> bool {
        matches!(self, SchemeId::ProposedGmm | SchemeId::ProposedPmm | SchemeId::DecoupledGmm)
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    PowerDbm,
    TxRegionLambda,
    RxRegionLambda,
    MinDistanceLambda,
    RateMinBpsHz,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 5] = [
        SweepAxis::PowerDbm,
        SweepAxis::TxRegionLambda,
        SweepAxis::RxRegionLambda,
        SweepAxis::MinDistanceLambda,
        SweepAxis::RateMinBpsHz,
    ];

    /// Same as the config key it overrides.
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::PowerDbm => "power_dbm",
            SweepAxis::TxRegionLambda => "tx_region_lambda",
            SweepAxis::RxRegionLambda => "rx_region_lambda",
            SweepAxis::MinDistanceLambda => "min_distance_lambda",
            SweepAxis::RateMinBpsHz => "rate_min_bps_hz",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let alias = match s {
            "power" | "p" => "power_dbm",
            "x_t" | "xt" => "tx_region_lambda",
            "x_r" | "xr" => "rx_region_lambda",
            "d" => "min_distance_lambda",
            "r_min" | "rmin" => "rate_min_bps_hz",
            other => other,
        };
        SweepAxis::ALL
            .into_iter()
            .find(|a| a.name() == alias)
            .ok_or_else(|| Error::Config(format!("unknown sweep axis '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

impl FromStr for Sweep {
    type Err = Error;

    /// `AXIS=v1,v2,...`
    fn from_str(s: &str) -> Result<Self> {
        let (axis, values) =
            s.split_once('=').ok_or_else(|| Error::Config(format!("sweep '{s}' is not AXIS=v1,v2,...")))?;
        let values = values
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Config(format!("sweep value '{v}': {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Sweep { axis: axis.trim().parse()?, values })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Paper,
    Desk,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            _ => Err(Error::Config(format!("unknown preset '{s}'"))),
        }
    }
}

/// Every key a config file may set. Lengths are in wavelengths where the key says so.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub n_tx_antennas: usize,
    pub n_rx_antennas: usize,
    pub n_users: usize,
    pub n_paths: usize,
    pub wavelength_m: f64,
    pub min_distance_lambda: f64,
    pub tx_region_lambda: f64,
    pub rx_region_lambda: f64,
    pub noise_dbm: f64,
    pub path_loss_ref_db: f64,
    pub path_loss_exponent: f64,
    pub distance_min_m: f64,
    pub distance_max_m: f64,
    pub power_dbm: f64,
    pub rate_min_bps_hz: f64,

    pub iterations: usize,
    pub batch_size: usize,
    pub short_term_iterations: usize,
    pub tau_t: f64,
    pub tau_r: f64,
    pub tau_h: f64,
    /// tau_Q = tau_q_power_sq / P^2.
    pub tau_q_power_sq: f64,
    pub rho_exponent: f64,
    pub gamma_exponent: f64,
    pub initial_step: f64,
    pub backtrack_shrink: f64,
    pub armijo_xi: f64,
    pub epsilon: f64,
    pub max_backtracks: usize,
    pub armijo_rule: ArmijoRule,
    pub short_term_early_exit: bool,
    pub upa_spacing_lambda: f64,

    pub solver_max_iterations: usize,

    pub realizations: usize,
    pub evaluation_samples: usize,
    pub schemes: Vec<SchemeId>,
    pub seed: u64,
    pub sweep: Option<Sweep>,
    pub workers: usize,
    pub out_dir: PathBuf,
    pub trace: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::preset(Preset::Paper)
    }
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let paper = ExperimentConfig {
            n_tx_antennas: 8,
            n_rx_antennas: 2,
            n_users: 4,
            n_paths: 10,
            wavelength_m: 0.06,
            min_distance_lambda: 0.5,
            tx_region_lambda: 0.5,
            rx_region_lambda: 0.5,
            noise_dbm: -80.0,
            path_loss_ref_db: -40.0,
            path_loss_exponent: 2.8,
            distance_min_m: 20.0,
            distance_max_m: 100.0,
            power_dbm: 20.0,
            rate_min_bps_hz: 1.0,
            iterations: 100,
            batch_size: 10,
            short_term_iterations: 30,
            tau_t: -1.0,
            tau_r: -1.0,
            tau_h: -1.0,
            tau_q_power_sq: -1.0,
            rho_exponent: 0.9,
            gamma_exponent: 1.0,
            initial_step: 10.0,
            backtrack_shrink: 0.5,
            armijo_xi: 0.6,
            epsilon: 1e-6,
            max_backtracks: 60,
            armijo_rule: ArmijoRule::Projected,
            short_term_early_exit: false,
            upa_spacing_lambda: 0.5,
            solver_max_iterations: SolverTolerances::default().max_iterations,
            realizations: 1000,
            evaluation_samples: 200,
            schemes: SchemeId::ALL.to_vec(),
            seed: 0,
            sweep: None,
            workers: 0,
            out_dir: PathBuf::from("out"),
            trace: false,
        };
        match preset {
            Preset::Paper => paper,
            Preset::Desk => ExperimentConfig {
                n_tx_antennas: 4,
                n_rx_antennas: 2,
                n_users: 2,
                n_paths: 4,
                iterations: 30,
                batch_size: 4,
                short_term_iterations: 15,
                realizations: 50,
                evaluation_samples: 100,
                ..paper
            },
        }
    }

    /// Reads a TOML file over a preset; keys absent from the file keep the preset value.
    pub fn from_toml_file(path: &Path, base: Preset) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text, base)
    }

    pub fn from_toml_str(text: &str, base: Preset) -> Result<Self> {
        let overrides: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut merged = toml::Table::try_from(Self::preset(base)).map_err(|e| Error::Config(e.to_string()))?;
        merged.extend(overrides);
        let cfg: ExperimentConfig = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Copy with the sweep axis set to `value`.
    pub fn with_axis(&self, axis: SweepAxis, value: f64) -> Self {
        let mut c = self.clone();
        match axis {
            SweepAxis::PowerDbm => c.power_dbm = value,
            SweepAxis::TxRegionLambda => c.tx_region_lambda = value,
            SweepAxis::RxRegionLambda => c.rx_region_lambda = value,
            SweepAxis::MinDistanceLambda => c.min_distance_lambda = value,
            SweepAxis::RateMinBpsHz => c.rate_min_bps_hz = value,
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("wavelength_m", self.wavelength_m),
            ("min_distance_lambda", self.min_distance_lambda),
            ("tx_region_lambda", self.tx_region_lambda),
            ("rx_region_lambda", self.rx_region_lambda),
            ("distance_min_m", self.distance_min_m),
            ("path_loss_exponent", self.path_loss_exponent),
            ("epsilon", self.epsilon),
            ("initial_step", self.initial_step),
            ("upa_spacing_lambda", self.upa_spacing_lambda),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{key} must be positive, got {v}")));
            }
        }
        let counts = [
            ("n_tx_antennas", self.n_tx_antennas),
            ("n_rx_antennas", self.n_rx_antennas),
            ("n_users", self.n_users),
            ("n_paths", self.n_paths),
            ("batch_size", self.batch_size),
            ("short_term_iterations", self.short_term_iterations),
            ("max_backtracks", self.max_backtracks),
            ("solver_max_iterations", self.solver_max_iterations),
            ("realizations", self.realizations),
            ("evaluation_samples", self.evaluation_samples),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{key} must be at least 1")));
            }
        }
        for (key, v) in [("tau_t", self.tau_t), ("tau_r", self.tau_r), ("tau_h", self.tau_h), ("tau_q_power_sq", self.tau_q_power_sq)] {
            if !(v.is_finite() && v < 0.0) {
                return Err(Error::Config(format!("{key} must be negative, got {v}")));
            }
        }
        if !(self.distance_max_m >= self.distance_min_m) {
            return Err(Error::Config("distance_max_m below distance_min_m".into()));
        }
        if !(self.backtrack_shrink > 0.0 && self.backtrack_shrink < 1.0) {
            return Err(Error::Config("backtrack_shrink must lie in (0, 1)".into()));
        }
        if !(self.armijo_xi > 0.0 && self.armijo_xi < 1.0) {
            return Err(Error::Config("armijo_xi must lie in (0, 1)".into()));
        }
        if !(self.rho_exponent > 0.5 && self.rho_exponent <= 1.0 && self.gamma_exponent > self.rho_exponent) {
            return Err(Error::Config("need 0.5 < rho_exponent <= 1 and gamma_exponent > rho_exponent".into()));
        }
        for (key, v) in [("noise_dbm", self.noise_dbm), ("path_loss_ref_db", self.path_loss_ref_db), ("power_dbm", self.power_dbm)] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{key} must be finite")));
            }
        }
        if !(self.rate_min_bps_hz.is_finite() && self.rate_min_bps_hz >= 0.0) {
            return Err(Error::Config("rate_min_bps_hz must be nonnegative".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("at least one scheme is required".into()));
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() || s.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("sweep values must be finite and nonempty".into()));
            }
            for v in &s.values {
                self.with_axis(s.axis, *v).validate_axis_only()?;
            }
        }
        self.system().tx_region.validate()?;
        Ok(())
    }

    fn validate_axis_only(&self) -> Result<()> {
        let mut c = self.clone();
        c.sweep = None;
        c.validate()
    }

    /// Linear-unit parameters consumed by the optimizers.
    pub fn system(&self) -> SystemParams {
        let lambda = self.wavelength_m;
        let d = self.min_distance_lambda * lambda;
        let x_t = self.tx_region_lambda * lambda;
        let x_r = self.rx_region_lambda * lambda;
        let power = dbm_to_watt(self.power_dbm);
        SystemParams {
            n_tx: self.n_tx_antennas,
            m_rx: self.n_rx_antennas,
            wavelength: lambda,
            noise: dbm_to_watt(self.noise_dbm),
            power,
            rate_min: self.rate_min_bps_hz,
            min_distance: d,
            x_t,
            x_r,
            tx_region: RegionSpec::transmit_gmm(x_t, d),
            rx_region_gmm: RegionSpec::receive_gmm(x_r, d),
            rx_region_pmm: RegionSpec::receive_pmm(x_r, d, self.n_rx_antennas),
            upa_spacing: self.upa_spacing_lambda * lambda,
            law: ChannelLaw {
                n_users: self.n_users,
                n_paths: self.n_paths,
                c0: db_to_linear(self.path_loss_ref_db),
                alpha0: self.path_loss_exponent,
                distance_min_m: self.distance_min_m,
                distance_max_m: self.distance_max_m,
            },
            iterations: self.iterations,
            batch_size: self.batch_size,
            tau_t: self.tau_t,
            tau_r: self.tau_r,
            tau_h: self.tau_h,
            tau_q: self.tau_q_power_sq / (power * power),
            steps: StepSequences { rho_exponent: self.rho_exponent, gamma_exponent: self.gamma_exponent },
            short_term: BacktrackParams {
                initial_step: self.initial_step,
                shrink: self.backtrack_shrink,
                xi: self.armijo_xi,
                epsilon: self.epsilon,
                max_iterations: self.short_term_iterations,
                max_backtracks: self.max_backtracks,
                rule: self.armijo_rule,
                early_exit: self.short_term_early_exit,
            },
            solver: SolverTolerances { max_iterations: self.solver_max_iterations, ..SolverTolerances::default() },
        }
    }
}

/// Resolved system in SI units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub n_tx: usize,
    pub m_rx: usize,
    pub wavelength: f64,
    /// Noise power in W.
    pub noise: f64,
    /// Transmit power budget in W.
    pub power: f64,
    pub rate_min: f64,
    pub min_distance: f64,
    /// Region size parameters X_t and X_r in m.
    pub x_t: f64,
    pub x_r: f64,
    pub tx_region: RegionSpec,
    pub rx_region_gmm: RegionSpec,
    pub rx_region_pmm: RegionSpec,
    pub upa_spacing: f64,
    pub law: ChannelLaw,
    pub iterations: usize,
    pub batch_size: usize,
    pub tau_t: f64,
    pub tau_r: f64,
    pub tau_h: f64,
    pub tau_q: f64,
    pub steps: StepSequences,
    pub short_term: BacktrackParams,
    pub solver: SolverTolerances,
}

impl SystemParams {
    pub fn n_users(&self) -> usize {
        self.law.n_users
    }
}
