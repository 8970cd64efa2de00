//! Scenario files: a TOML description pointing at the topology, weather and
//! load CSVs, with controller, plant and battery settings. Relative paths
//! resolve against the scenario file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::{fit_default, BatteryPack, EffPoly};
use crate::mpc::{EfficiencyMode, MpcConfig};
use crate::netmodel::{NetError, NetworkTopology, VscKind};
use crate::plant::profile::{read_load_csv, read_weather_csv, Profile, ProfileError, WeatherRow};
use crate::plant::pv::PanelParams;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Network(#[from] NetError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EffModeName {
    #[default]
    VariableEff,
    ConstantEff,
}

impl std::str::FromStr for EffModeName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "variable_eff" => Ok(Self::VariableEff),
            "constant_eff" => Ok(Self::ConstantEff),
            _ => Err(format!("unknown mode `{s}` (variable_eff | constant_eff)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EffPolyPreset {
    /// Least-squares fit to the exact pack model.
    #[default]
    Fit,
    /// Preset polynomial coefficients.
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadWalk {
    pub step_bound: f64,
}

impl Default for LoadWalk {
    fn default() -> Self {
        Self { step_bound: 0.0075 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PvSection {
    pub nominal_w: f64,
    pub panel: PanelParams,
}

impl Default for PvSection {
    fn default() -> Self {
        Self {
            nominal_w: 1e5,
            panel: PanelParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatterySection {
    pub bus: String,
    pub soc0: f64,
    #[serde(default)]
    pub pack: Option<BatteryPack>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CplSection {
    pub bus: String,
    pub power_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorSection {
    pub window_s: f64,
}

impl Default for PredictorSection {
    fn default() -> Self {
        Self { window_s: 300.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantSection {
    pub pi_kp: f64,
    pub pi_ki: f64,
    pub pi_substeps: usize,
}

impl Default for PlantSection {
    fn default() -> Self {
        Self {
            pi_kp: 1e-4,
            pi_ki: 1e-3,
            pi_substeps: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleSection {
    /// Steps per offline window; 0 means the controller horizon.
    pub window_steps: usize,
    pub max_iter: usize,
    pub step_tol: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            window_steps: 0,
            max_iter: 100,
            step_tol: 1e-6,
        }
    }
}

/// The scenario file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub topology: PathBuf,
    pub pv_weather: PathBuf,
    pub load: PathBuf,
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: EffModeName,
    #[serde(default)]
    pub oracle: bool,
    #[serde(default)]
    pub eff_poly: EffPolyPreset,
    #[serde(default)]
    pub mpc: MpcConfig,
    #[serde(default)]
    pub load_walk: LoadWalk,
    #[serde(default)]
    pub pv: PvSection,
    pub batteries: Vec<BatterySection>,
    #[serde(default)]
    pub cpls: Vec<CplSection>,
    #[serde(default)]
    pub predictor: PredictorSection,
    #[serde(default)]
    pub plant: PlantSection,
    #[serde(default, rename = "oracle_settings")]
    pub oracle_cfg: OracleSection,
}

/// A resolved scenario with its data loaded.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub topo: NetworkTopology,
    pub weather: Vec<WeatherRow>,
    pub load_base: Profile,
    /// Battery VSC index and pack, in topology order.
    pub batteries: Vec<(usize, BatteryPack)>,
    /// CPL VSC index and constant power.
    pub cpls: Vec<(usize, f64)>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: ScenarioFile = toml::from_str(&text).map_err(|e| ScenarioError::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_file(file, base)
    }

    pub fn from_file(file: ScenarioFile, base: &Path) -> Result<Self, ScenarioError> {
        if file.steps < 1 {
            return Err(ScenarioError::Invalid("steps must be at least 1".into()));
        }
        file.mpc.validate().map_err(ScenarioError::Invalid)?;
        let topo = NetworkTopology::from_file(&resolve(base, &file.topology))?;
        let weather = read_weather_csv(&resolve(base, &file.pv_weather))?;
        let load_base = read_load_csv(&resolve(base, &file.load))?;
        let t_s = file.mpc.t_s;
        let check_spacing = |t: &[f64], what: &str| -> Result<(), ScenarioError> {
            if t.windows(2).any(|w| ((w[1] - w[0]) - t_s).abs() > 1e-6) {
                return Err(ScenarioError::Invalid(format!("{what} samples are not {t_s} s apart")));
            }
            Ok(())
        };
        check_spacing(&weather.iter().map(|w| w.t_s).collect::<Vec<_>>(), "weather")?;
        check_spacing(&load_base.t, "load")?;

        let mut batteries = Vec::new();
        for b in &file.batteries {
            let i = topo
                .vsc_at(&b.bus)
                .ok_or_else(|| ScenarioError::Invalid(format!("no converter at battery bus {}", b.bus)))?;
            if topo.vscs[i].kind != VscKind::Battery {
                return Err(ScenarioError::Invalid(format!(
                    "converter at {} is not a battery",
                    b.bus
                )));
            }
            if !(0.0..=1.0).contains(&b.soc0) {
                return Err(ScenarioError::Invalid(format!(
                    "initial SoC {} at {} outside [0, 1]",
                    b.soc0, b.bus
                )));
            }
            let mut pack = b.pack.clone().unwrap_or_else(|| BatteryPack::standard(b.soc0));
            pack.soc = b.soc0;
            batteries.push((i, pack));
        }
        batteries.sort_by_key(|b| b.0);
        let n_batt_vsc = topo.vscs.iter().filter(|v| v.kind == VscKind::Battery).count();
        if batteries.len() != n_batt_vsc || batteries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(ScenarioError::Invalid(
                "every battery converter needs exactly one [[batteries]] entry".into(),
            ));
        }
        let mut cpls = Vec::new();
        for c in &file.cpls {
            let i = topo
                .vsc_at(&c.bus)
                .filter(|&i| topo.vscs[i].kind == VscKind::Cpl)
                .ok_or_else(|| ScenarioError::Invalid(format!("no constant power load converter at {}", c.bus)))?;
            cpls.push((i, c.power_w.max(0.0)));
        }
        cpls.sort_by_key(|c| c.0);
        if cpls.len() != topo.vscs.iter().filter(|v| v.kind == VscKind::Cpl).count() {
            return Err(ScenarioError::Invalid(
                "every constant power load needs a [[cpls]] entry".into(),
            ));
        }
        Ok(Self {
            file,
            topo,
            weather,
            load_base,
            batteries,
            cpls,
        })
    }

    /// Samples consumed before the first controlled step to fill the
    /// predictor window.
    pub fn warmup(&self) -> usize {
        (self.file.predictor.window_s / self.file.mpc.t_s).round() as usize
    }

    /// Largest step count the data supports.
    pub fn max_steps(&self) -> usize {
        self.weather
            .len()
            .min(self.load_base.len())
            .saturating_sub(self.warmup())
    }

    pub fn efficiency_mode(&self, mode: EffModeName) -> Result<EfficiencyMode, ScenarioError> {
        Ok(match mode {
            EffModeName::ConstantEff => EfficiencyMode::constant_default(),
            EffModeName::VariableEff => EfficiencyMode::Variable(self.eff_poly()?),
        })
    }

    pub fn eff_poly(&self) -> Result<EffPoly, ScenarioError> {
        match self.file.eff_poly {
            EffPolyPreset::Table => Ok(EffPoly::table()),
            EffPolyPreset::Fit => {
                let pack = self
                    .batteries
                    .first()
                    .map(|b| b.1.clone())
                    .unwrap_or_else(|| BatteryPack::standard(0.5));
                fit_default(&pack).map_err(|e| ScenarioError::Invalid(e.to_string()))
            }
        }
    }
}
