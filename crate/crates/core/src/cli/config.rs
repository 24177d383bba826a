use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{Fading, Placement};
use crate::channel::{TapProfile, TimingMode};
use crate::error::{Error, Result};
use crate::geometry::CellConfig;
use crate::learning::{AirInterface, TaskConfig, TrainConfig};
use crate::oac::{fsk_symbols_needed, obda_symbols_needed};
use crate::waveform::OfdmConfig;

/// Built-in parameter sets that a config file is layered on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Profile {
    /// Small numerology and task that run in seconds.
    #[default]
    Desk,
    /// LTE-like 20 MHz numerology, 50 EDs, 500 rounds.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedProfile {
    Epa,
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChannelProfile {
    Named(NamedProfile),
    Custom(TapProfile),
}

impl ChannelProfile {
    pub fn taps(&self) -> TapProfile {
        match self {
            ChannelProfile::Named(NamedProfile::Epa) => TapProfile::epa(),
            ChannelProfile::Named(NamedProfile::Flat) => TapProfile::flat(),
            ChannelProfile::Custom(p) => p.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub profile: ChannelProfile,
    /// Largest ED arrival offset in seconds.
    pub t_sync: f64,
    pub timing: TimingMode,
    /// Receiver DFT window advance in samples.
    pub n_err: usize,
    pub tci_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub r_max_values: Vec<f64>,
    pub alpha_eff_values: Vec<f64>,
    pub k_values: Vec<usize>,
    pub q_values: Vec<f64>,
    pub rounds_values: Vec<usize>,
    pub gamma: usize,
    pub l1_smoothness: f64,
    pub sigma1: f64,
    pub f0_minus_fstar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorFading {
    /// Frequency-flat Rayleigh fading.
    Flat,
    /// The channel section's profile with its timing errors.
    Channel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorPlacement {
    Random,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    pub k_plus_values: Vec<usize>,
    pub snr_db_values: Vec<f64>,
    pub alpha_eff_values: Vec<f64>,
    pub trials: usize,
    pub fading: DetectorFading,
    pub placement: DetectorPlacement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmeprSection {
    pub symbols: usize,
    pub oversampling: usize,
    pub threshold_step_db: f64,
    pub threshold_max_db: f64,
    /// Probability of a `+1` vote for the correlated OBDA case.
    pub obda_bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    /// Number of votes per round to size the resource grid for; the
    /// reference model's parameter count when absent.
    pub q: Option<usize>,
}

/// Everything a run needs, after the profile defaults are applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub cell: CellConfig,
    pub ofdm: OfdmConfig,
    pub channel: ChannelSection,
    pub train: TrainConfig,
    pub task: TaskConfig,
    pub analysis: AnalysisSection,
    pub detector: DetectorSection,
    pub pmepr: PmeprSection,
    pub budget: BudgetSection,
}

/// OFDM symbols each scheme needs for `q` votes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResourceBudget {
    pub q: usize,
    pub fsk_symbols: usize,
    pub obda_symbols: usize,
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    pub fn desk() -> Self {
        let ofdm = OfdmConfig::desk();
        Self {
            seed: 0,
            out: PathBuf::from("results"),
            cell: CellConfig {
                r_min: 10.0,
                r_max: 100.0,
                r_ref: 10.0,
                alpha: 4.0,
                beta: 4.0,
                noise_var: 0.01,
                num_eds: 10,
            },
            channel: ChannelSection {
                profile: ChannelProfile::Named(NamedProfile::Epa),
                t_sync: 1.0 / ofdm.bandwidth(),
                timing: TimingMode::Integer,
                n_err: 3,
                tci_threshold: 0.2,
            },
            ofdm,
            train: TrainConfig::default(),
            task: TaskConfig {
                eval_every: 10,
                ..TaskConfig::default()
            },
            analysis: AnalysisSection {
                r_max_values: vec![20.0, 50.0, 100.0, 200.0, 500.0],
                alpha_eff_values: vec![0.0, 1.0, 2.0, 3.0, 4.0],
                k_values: vec![10, 20, 50, 100],
                q_values: vec![0.0, 0.1, 0.3],
                rounds_values: vec![10, 50, 100, 200, 500],
                gamma: 1,
                l1_smoothness: 1.0,
                sigma1: 1.0,
                f0_minus_fstar: 1.0,
            },
            detector: DetectorSection {
                k_plus_values: vec![5, 6, 8, 10],
                snr_db_values: vec![10.0, 20.0],
                alpha_eff_values: vec![0.0, 2.0],
                trials: 10_000,
                fading: DetectorFading::Flat,
                placement: DetectorPlacement::Random,
            },
            pmepr: PmeprSection {
                symbols: 10_000,
                oversampling: 8,
                threshold_step_db: 0.1,
                threshold_max_db: 30.0,
                obda_bias: 0.9,
            },
            budget: BudgetSection { q: None },
        }
    }

    pub fn paper() -> Self {
        let base = Self::desk();
        Self {
            cell: CellConfig {
                num_eds: 50,
                ..base.cell
            },
            ofdm: OfdmConfig::paper(),
            channel: ChannelSection {
                t_sync: 55.6e-9,
                ..base.channel
            },
            train: TrainConfig {
                batch_size: 64,
                rounds: 500,
                ..base.train
            },
            detector: DetectorSection {
                k_plus_values: vec![25, 30, 40, 50],
                trials: 100_000,
                ..base.detector
            },
            pmepr: PmeprSection {
                threshold_max_db: 40.0,
                ..base.pmepr
            },
            budget: BudgetSection { q: Some(123_090) },
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cell.validate()?;
        self.ofdm.validate()?;
        self.train.validate()?;
        self.air_interface()?;
        if let crate::learning::DataSource::Blobs(b) = &self.task.data {
            b.validate()?;
        }
        if self.task.per_class_per_ed == 0 {
            return Err(Error::config("task.per_class_per_ed", "must be positive"));
        }
        let a = &self.analysis;
        if a.r_max_values.iter().any(|&r| !(r > self.cell.r_min)) {
            return Err(Error::config(
                "analysis.r_max_values",
                "every value must exceed cell.r_min",
            ));
        }
        if a.alpha_eff_values.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::config(
                "analysis.alpha_eff_values",
                "must be nonnegative",
            ));
        }
        if a.k_values.contains(&0) {
            return Err(Error::config("analysis.k_values", "must be positive"));
        }
        if a.q_values.iter().any(|q| !(0.0..=0.5).contains(q)) {
            return Err(Error::config("analysis.q_values", "must lie in [0, 0.5]"));
        }
        if a.rounds_values.contains(&0) {
            return Err(Error::config("analysis.rounds_values", "must be positive"));
        }
        if a.gamma == 0 {
            return Err(Error::config(
                "analysis.gamma",
                "must be a positive integer",
            ));
        }
        for (key, v) in [
            ("analysis.l1_smoothness", a.l1_smoothness),
            ("analysis.sigma1", a.sigma1),
            ("analysis.f0_minus_fstar", a.f0_minus_fstar),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be finite and nonnegative"));
            }
        }
        let d = &self.detector;
        if d.k_plus_values.iter().any(|&k| k > self.cell.num_eds) {
            return Err(Error::config(
                "detector.k_plus_values",
                "must not exceed cell.num_eds",
            ));
        }
        if d.trials == 0 {
            return Err(Error::config("detector.trials", "must be positive"));
        }
        if d.alpha_eff_values
            .iter()
            .any(|&x| !(x >= 0.0 && x <= self.cell.alpha))
        {
            return Err(Error::config(
                "detector.alpha_eff_values",
                "must lie in [0, cell.alpha]",
            ));
        }
        if d.snr_db_values.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("detector.snr_db_values", "must be finite"));
        }
        let p = &self.pmepr;
        if p.symbols == 0 {
            return Err(Error::config("pmepr.symbols", "must be positive"));
        }
        if p.oversampling == 0 {
            return Err(Error::config("pmepr.oversampling", "must be positive"));
        }
        if !(p.threshold_step_db > 0.0 && p.threshold_max_db > 0.0) {
            return Err(Error::config(
                "pmepr.threshold_step_db",
                "thresholds must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&p.obda_bias) {
            return Err(Error::config("pmepr.obda_bias", "must be a probability"));
        }
        if self.budget.q == Some(0) {
            return Err(Error::config("budget.q", "must be positive"));
        }
        Ok(())
    }

    pub fn air_interface(&self) -> Result<AirInterface> {
        AirInterface::new(
            self.cell.clone(),
            self.ofdm.clone(),
            &self.channel.profile.taps(),
            self.channel.t_sync,
            self.channel.timing,
            self.channel.n_err,
            self.channel.tci_threshold,
        )
    }

    /// Votes per round: the budget override or the model's parameter count.
    pub fn vote_dimension(&self) -> Result<usize> {
        if let Some(q) = self.budget.q {
            return Ok(q);
        }
        let (dim, classes) = match &self.task.data {
            crate::learning::DataSource::Blobs(b) => (b.dim, b.num_classes),
            crate::learning::DataSource::Idx { .. } => {
                return Err(Error::config(
                    "budget.q",
                    "must be set when training on IDX data",
                ));
            }
        };
        Ok(crate::learning::model::num_params(
            self.task.model,
            dim,
            classes,
        ))
    }

    pub fn resource_budget(&self) -> Result<ResourceBudget> {
        let q = self.vote_dimension()?;
        Ok(ResourceBudget {
            q,
            fsk_symbols: fsk_symbols_needed(q, self.ofdm.m_active),
            obda_symbols: obda_symbols_needed(q, self.ofdm.m_active),
        })
    }

    pub fn detector_fading(&self) -> Result<Fading> {
        Ok(match self.detector.fading {
            DetectorFading::Flat => Fading::Flat,
            DetectorFading::Channel => {
                let air = self.air_interface()?;
                Fading::Multipath {
                    profile: air.profile,
                    ofdm: air.ofdm,
                    t_sync: air.t_sync,
                    timing: air.timing,
                    n_err: air.n_err,
                }
            }
        })
    }

    pub fn detector_placement(&self) -> Placement {
        match self.detector.placement {
            DetectorPlacement::Random => Placement::Random,
            DetectorPlacement::Deterministic => Placement::Deterministic,
        }
    }

    /// Canonical TOML form, used for hashing.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// SHA-256 of [`Self::to_toml`] in hex.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Recursively overlay `over` on `base`. Tables merge key by key except
/// when a `source` or `kind` tag changes, in which case `over` replaces
/// the table.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            let retag = ["source", "kind"]
                .iter()
                .any(|t| match (b.get(*t), o.get(*t)) {
                    (Some(x), Some(y)) => x != y,
                    (None, Some(_)) => true,
                    _ => false,
                });
            if retag {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parse TOML text on top of a profile. `cell.snr_db` is accepted as an
/// alternative to `cell.noise_var`.
pub fn parse_config(text: &str, profile: Profile) -> Result<ExperimentConfig> {
    let mut over: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    if let Some(toml::Value::Table(cell)) = over.get_mut("cell") {
        if let Some(snr) = cell.remove("snr_db") {
            if cell.contains_key("noise_var") {
                return Err(Error::config(
                    "cell.snr_db",
                    "give either snr_db or noise_var, not both",
                ));
            }
            let snr = snr
                .as_float()
                .or_else(|| snr.as_integer().map(|i| i as f64))
                .ok_or_else(|| Error::config("cell.snr_db", "must be a number"))?;
            cell.insert(
                "noise_var".into(),
                toml::Value::Float(10f64.powf(-snr / 10.0)),
            );
        }
    }
    let mut base = toml::Value::try_from(ExperimentConfig::profile(profile))
        .map_err(|e| Error::Parse(e.to_string()))?;
    merge(&mut base, toml::Value::Table(over));
    let cfg: ExperimentConfig = base
        .try_into()
        .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path, profile: Profile) -> Result<ExperimentConfig> {
    parse_config(&std::fs::read_to_string(path)?, profile)
}
