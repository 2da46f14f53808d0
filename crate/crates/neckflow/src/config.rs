//! Run configuration: an INI-style `key = value` file with sections.
//!
//! ```text
//! [experiment]
//! kind = neckpinch-d1
//! seed = 1
//!
//! [grid]
//! dim = 1
//! n_y = 321
//! y_max = 40
//! n_theta = 16
//!
//! [initial]
//! family = neck
//! b = 1.0
//! delta = 0.05
//!
//! [time]
//! xi0 = 20
//! tau_end = 60
//!
//! [fit]
//! eps = 0.25
//! every = 0.1
//!
//! [output]
//! dir = out/neckpinch
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use ini::Ini;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: ini::Error },
    #[error("[{section}] {key}: {message}")]
    Invalid { section: String, key: String, message: String },
    #[error("unknown key [{section}] {key}")]
    Unknown { section: String, key: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Cylinder,
    Sphere,
    NeckpinchD1,
    Zoom,
    SpectralSuite,
}

impl Experiment {
    pub fn tag(self) -> &'static str {
        match self {
            Experiment::Cylinder => "cylinder",
            Experiment::Sphere => "sphere",
            Experiment::NeckpinchD1 => "neckpinch-d1",
            Experiment::Zoom => "zoom",
            Experiment::SpectralSuite => "spectral-suite",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        [
            Experiment::Cylinder,
            Experiment::Sphere,
            Experiment::NeckpinchD1,
            Experiment::Zoom,
            Experiment::SpectralSuite,
        ]
        .into_iter()
        .find(|e| e.tag() == tag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub dim: usize,
    pub n_y: usize,
    pub y_max: f64,
    pub n_theta: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Initial {
    /// `u₀ ≡ value`.
    Constant { value: f64 },
    /// Cap `u₀ = √(R² − |z|²)`.
    Sphere { radius: f64 },
    /// `v₀ = √(2 + Σ b_k y_k²/ξ₀) + δ e^{−|y|²} cos θ`.
    Neck { b: Vec<f64>, delta: f64 },
    /// A rescaled snapshot file.
    Snapshot { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub grid: GridConfig,
    pub initial: Initial,
    pub xi0: f64,
    pub tau_end: f64,
    pub t0: f64,
    /// Horizon of unrescaled recipes; `None` runs until `stop_min`.
    pub t_end: Option<f64>,
    pub eps: f64,
    /// Fit cadence in `τ`.
    pub fit_every: f64,
    pub safety: f64,
    /// Zoom anchor; defaults to the snapshot time.
    pub tau1: Option<f64>,
    /// Unrescaled runs stop once `min u` reaches this.
    pub stop_min: f64,
    /// Radius of the `|z| ≤ r` window for curvature monitors.
    pub window: f64,
    pub out_dir: PathBuf,
    /// Snapshot cadence in the run's time variable; 0 writes only the final state.
    pub snapshot_every: f64,
}

impl RunConfig {
    /// Defaults of each recipe, before the file is applied.
    pub fn defaults(experiment: Experiment) -> Self {
        let mut c = RunConfig {
            experiment,
            seed: 1,
            grid: GridConfig { dim: 1, n_y: 321, y_max: 40.0, n_theta: 16 },
            initial: Initial::Neck { b: vec![1.0], delta: 0.05 },
            xi0: 20.0,
            tau_end: 60.0,
            t0: 0.0,
            t_end: None,
            eps: 0.25,
            fit_every: 0.1,
            safety: 0.5,
            tau1: None,
            stop_min: 0.05,
            window: 0.5,
            out_dir: PathBuf::from("out").join(experiment.tag()),
            snapshot_every: 0.0,
        };
        match experiment {
            Experiment::Cylinder => {
                c.grid = GridConfig { dim: 1, n_y: 129, y_max: 8.0, n_theta: 16 };
                c.initial = Initial::Constant { value: core::f64::consts::SQRT_2 };
                c.stop_min = 0.3;
            }
            Experiment::Sphere => {
                c.grid = GridConfig { dim: 1, n_y: 129, y_max: 1.0, n_theta: 16 };
                c.initial = Initial::Sphere { radius: 2.0 };
                c.t_end = Some(0.05);
            }
            Experiment::Zoom => {
                c.initial = Initial::Snapshot { path: PathBuf::from("snapshot.nfs") };
            }
            Experiment::SpectralSuite => {
                c.grid = GridConfig { dim: 1, n_y: 401, y_max: 12.0, n_theta: 16 };
            }
            Experiment::NeckpinchD1 => {}
        }
        c
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let ini = Ini::load_from_file(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_ini(&ini)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let ini = Ini::load_from_str(text).map_err(|e| ConfigError::Read {
            path: PathBuf::from("<string>"),
            source: ini::Error::Parse(e),
        })?;
        Self::from_ini(&ini)
    }

    fn from_ini(ini: &Ini) -> Result<Self, ConfigError> {
        let mut r = Reader { ini, used: HashSet::new() };
        let kind = r.get("experiment", "kind").ok_or_else(|| invalid("experiment", "kind", "missing"))?;
        let experiment = Experiment::from_tag(&kind)
            .ok_or_else(|| invalid("experiment", "kind", &format!("unknown experiment {kind:?}")))?;
        let mut c = Self::defaults(experiment);
        r.set(&mut c.seed, "experiment", "seed")?;
        r.set(&mut c.grid.dim, "grid", "dim")?;
        r.set(&mut c.grid.n_y, "grid", "n_y")?;
        r.set(&mut c.grid.y_max, "grid", "y_max")?;
        r.set(&mut c.grid.n_theta, "grid", "n_theta")?;
        if let Some(family) = r.get("initial", "family") {
            c.initial = match family.as_str() {
                "constant" => Initial::Constant { value: core::f64::consts::SQRT_2 },
                "sphere" => Initial::Sphere { radius: 2.0 },
                "neck" => Initial::Neck { b: vec![1.0; c.grid.dim], delta: 0.05 },
                "snapshot" => Initial::Snapshot { path: PathBuf::from("snapshot.nfs") },
                other => return Err(invalid("initial", "family", &format!("unknown family {other:?}"))),
            };
        }
        match &mut c.initial {
            Initial::Constant { value } => r.set(value, "initial", "value")?,
            Initial::Sphere { radius } => r.set(radius, "initial", "radius")?,
            Initial::Neck { b, delta } => {
                if let Some(list) = r.get("initial", "b") {
                    *b = list
                        .split(',')
                        .map(|s| s.trim().parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|e| invalid("initial", "b", &e.to_string()))?;
                }
                r.set(delta, "initial", "delta")?;
            }
            Initial::Snapshot { path } => {
                if let Some(p) = r.get("initial", "snapshot") {
                    *path = PathBuf::from(p);
                }
            }
        }
        r.set(&mut c.xi0, "time", "xi0")?;
        r.set(&mut c.tau_end, "time", "tau_end")?;
        r.set(&mut c.t0, "time", "t0")?;
        r.set_opt(&mut c.t_end, "time", "t_end")?;
        r.set_opt(&mut c.tau1, "time", "tau1")?;
        r.set(&mut c.stop_min, "time", "stop_min")?;
        r.set(&mut c.safety, "time", "safety")?;
        r.set(&mut c.eps, "fit", "eps")?;
        r.set(&mut c.fit_every, "fit", "every")?;
        r.set(&mut c.window, "output", "window")?;
        r.set(&mut c.snapshot_every, "output", "snapshot_every")?;
        if let Some(dir) = r.get("output", "dir") {
            c.out_dir = PathBuf::from(dir);
        }
        r.reject_unknown()?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.grid;
        if !(1..=3).contains(&g.dim) {
            return Err(invalid("grid", "dim", "must be 1, 2 or 3"));
        }
        if g.n_y < 9 || g.n_y % 2 == 0 {
            return Err(invalid("grid", "n_y", "must be odd and at least 9"));
        }
        if !(g.y_max > 0.0) {
            return Err(invalid("grid", "y_max", "must be positive"));
        }
        if g.n_theta < 8 || g.n_theta % 2 != 0 {
            return Err(invalid("grid", "n_theta", "must be even and at least 8"));
        }
        if let Initial::Neck { b, .. } = &self.initial {
            if b.len() != g.dim {
                return Err(invalid("initial", "b", "needs one entry per y-axis"));
            }
        }
        if !(self.xi0 > 1.0 && self.tau_end >= self.xi0) {
            return Err(invalid("time", "tau_end", "needs tau_end >= xi0 > 1"));
        }
        if !(self.fit_every > 0.0) {
            return Err(invalid("fit", "every", "must be positive"));
        }
        if !(self.eps > 0.0) {
            return Err(invalid("fit", "eps", "must be positive"));
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(invalid("time", "safety", "must lie in (0, 1]"));
        }
        if !(self.stop_min > 0.0) {
            return Err(invalid("time", "stop_min", "must be positive"));
        }
        if !(self.window > 0.0) {
            return Err(invalid("output", "window", "must be positive"));
        }
        if !(self.snapshot_every >= 0.0) {
            return Err(invalid("output", "snapshot_every", "must be nonnegative"));
        }
        Ok(())
    }
}

fn invalid(section: &str, key: &str, message: &str) -> ConfigError {
    ConfigError::Invalid { section: section.into(), key: key.into(), message: message.into() }
}

struct Reader<'a> {
    ini: &'a Ini,
    used: HashSet<(String, String)>,
}

impl Reader<'_> {
    fn get(&mut self, section: &str, key: &str) -> Option<String> {
        let v = self.ini.section(Some(section))?.get(key)?;
        self.used.insert((section.into(), key.into()));
        Some(v.trim().to_string())
    }

    fn set<T: std::str::FromStr>(&mut self, slot: &mut T, section: &str, key: &str) -> Result<(), ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.get(section, key) {
            *slot = v.parse().map_err(|e: T::Err| invalid(section, key, &e.to_string()))?;
        }
        Ok(())
    }

    fn set_opt(&mut self, slot: &mut Option<f64>, section: &str, key: &str) -> Result<(), ConfigError> {
        if let Some(v) = self.get(section, key) {
            *slot = Some(v.parse().map_err(|e: std::num::ParseFloatError| invalid(section, key, &e.to_string()))?);
        }
        Ok(())
    }

    fn reject_unknown(&self) -> Result<(), ConfigError> {
        for (section, props) in self.ini.iter() {
            let section = section.unwrap_or("");
            for (key, _) in props.iter() {
                if !self.used.contains(&(section.to_string(), key.to_string())) {
                    return Err(ConfigError::Unknown { section: section.into(), key: key.into() });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_over_defaults() {
        let c = RunConfig::parse(
            "[experiment]\nkind = neckpinch-d1\nseed = 9\n[grid]\nn_y = 161\n[initial]\nb = 0.5\ndelta = 0\n[output]\ndir = x\n",
        )
        .unwrap();
        assert_eq!(c.experiment, Experiment::NeckpinchD1);
        assert_eq!((c.seed, c.grid.n_y, c.grid.n_theta), (9, 161, 16));
        assert_eq!(c.initial, Initial::Neck { b: vec![0.5], delta: 0.0 });
        assert_eq!(c.out_dir, PathBuf::from("x"));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(RunConfig::parse("[experiment]\nkind = nope\n"), Err(ConfigError::Invalid { .. })));
        assert!(matches!(
            RunConfig::parse("[experiment]\nkind = cylinder\n[grid]\nnn_y = 3\n"),
            Err(ConfigError::Unknown { .. })
        ));
        assert!(matches!(
            RunConfig::parse("[experiment]\nkind = cylinder\n[grid]\nn_y = 64\n"),
            Err(ConfigError::Invalid { .. })
        ));
        assert!(matches!(
            RunConfig::parse("[experiment]\nkind = neckpinch-d1\n[grid]\ndim = 2\n[initial]\nb = 1\n"),
            Err(ConfigError::Invalid { .. })
        ));
    }

    #[test]
    fn recipe_defaults() {
        let c = RunConfig::parse("[experiment]\nkind = sphere\n").unwrap();
        assert_eq!(c.initial, Initial::Sphere { radius: 2.0 });
        assert_eq!(c.t_end, Some(0.05));
    }
}
