//! Time series inputs: load and weather CSVs, the load random walk and the
//! moving-average predictor.

use std::collections::VecDeque;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("{path}: {msg}")]
    Invalid { path: String, msg: String },
    #[error("{0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileKind {
    Pv,
    Load,
}

/// Power series in W at a fixed sampling interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub kind: ProfileKind,
    pub t: Vec<f64>,
    pub values: Vec<f64>,
}

impl Profile {
    pub fn new(kind: ProfileKind, t: Vec<f64>, values: Vec<f64>) -> Result<Self, String> {
        if t.len() != values.len() || t.is_empty() {
            return Err("time and value columns differ in length or are empty".into());
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err("time column must be strictly increasing".into());
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(format!("negative or non-finite value {v}"));
        }
        Ok(Self { kind, t, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }
}

#[derive(Debug, Deserialize)]
struct LoadRow {
    t_s: f64,
    total_kw: f64,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
pub struct WeatherRow {
    pub t_s: f64,
    pub irradiance_wm2: f64,
    pub temp_c: f64,
}

fn invalid(path: &Path, msg: impl Into<String>) -> ProfileError {
    ProfileError::Invalid {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

/// Reads `t_s,total_kw` into a load profile in W.
pub fn read_load_csv(path: &Path) -> Result<Profile, ProfileError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut t = Vec::new();
    let mut v = Vec::new();
    for row in rdr.deserialize() {
        let row: LoadRow = row?;
        t.push(row.t_s);
        v.push(row.total_kw * 1e3);
    }
    Profile::new(ProfileKind::Load, t, v).map_err(|m| invalid(path, m))
}

/// Reads `t_s,irradiance_wm2,temp_c`.
pub fn read_weather_csv(path: &Path) -> Result<Vec<WeatherRow>, ProfileError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows: Vec<WeatherRow> = Vec::new();
    for row in rdr.deserialize() {
        let row: WeatherRow = row?;
        if row.irradiance_wm2 < 0.0 || !row.irradiance_wm2.is_finite() || !row.temp_c.is_finite() {
            return Err(invalid(path, format!("bad weather row at t = {}", row.t_s)));
        }
        if rows.last().is_some_and(|l| !(row.t_s > l.t_s)) {
            return Err(invalid(path, "time column must be strictly increasing"));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(invalid(path, "no rows"));
    }
    Ok(rows)
}

/// Multiplies `base` by a random walk whose relative steps are uniform in
/// `±step_bound`.
pub fn generate_load_profile(base: &Profile, step_bound: f64, seed: u64) -> Profile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factor = 1.0;
    let mut values = Vec::with_capacity(base.len());
    for (k, v) in base.values.iter().enumerate() {
        if k > 0 && step_bound > 0.0 {
            factor *= 1.0 + rng.random_range(-step_bound..=step_bound);
        }
        values.push(v * factor);
    }
    Profile {
        kind: base.kind,
        t: base.t.clone(),
        values,
    }
}

/// Trailing moving average over a fixed number of samples.
#[derive(Debug, Clone)]
pub struct Predictor {
    window: usize,
    history: VecDeque<f64>,
}

impl Predictor {
    /// `window_s` must be a positive multiple of `t_s`.
    pub fn new(window_s: f64, t_s: f64) -> Result<Self, String> {
        let n = window_s / t_s;
        if !(n >= 1.0) || (n - n.round()).abs() > 1e-9 {
            return Err(format!("window {window_s} s is not a positive multiple of {t_s} s"));
        }
        Ok(Self {
            window: n.round() as usize,
            history: VecDeque::new(),
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn observe(&mut self, value: f64) {
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back(value);
    }

    pub fn has_history(&self) -> bool {
        !self.history.is_empty()
    }

    /// Constant forecast equal to the trailing mean.
    pub fn predict(&self, horizon: usize) -> Vec<f64> {
        assert!(self.has_history(), "predictor has no history");
        let m = self.history.iter().sum::<f64>() / self.history.len() as f64;
        vec![m; horizon]
    }
}
