//! Run configurations: schema, file loading and the textual model/grid forms.

use std::path::Path;

use kplab_core::ensemble::DisorderModel;
use kplab_core::lyapunov::log_grid;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Parses `uniform:lo,hi`, `two_point:a,p_a,b` or `discrete:v1/w1,v2/w2,…`.
pub fn parse_model(spec: &str) -> Result<DisorderModel, CliError> {
    let bad = || CliError::Config(format!("bad model spec {spec:?}"));
    let (kind, args) = spec.split_once(':').ok_or_else(bad)?;
    let nums = |s: &str| -> Result<Vec<f64>, CliError> {
        s.split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|_| bad()))
            .collect()
    };
    let model = match kind.trim() {
        "uniform" => match nums(args)?[..] {
            [lo, hi] => DisorderModel::Uniform { lo, hi },
            _ => return Err(bad()),
        },
        "two_point" | "twopoint" => match nums(args)?[..] {
            [a, p_a, b] => DisorderModel::TwoPoint { a, p_a, b },
            _ => return Err(bad()),
        },
        "discrete" => {
            let mut values = Vec::new();
            let mut weights = Vec::new();
            for atom in args.split(',') {
                let (v, w) = atom.split_once('/').ok_or_else(bad)?;
                values.push(v.trim().parse().map_err(|_| bad())?);
                weights.push(w.trim().parse().map_err(|_| bad())?);
            }
            DisorderModel::Discrete { values, weights }
        }
        _ => return Err(bad()),
    };
    model.validate()?;
    Ok(model)
}

/// `free` selects the operator without disorder; anything else is a model.
pub fn parse_optional_model(spec: &str) -> Result<Option<DisorderModel>, CliError> {
    if spec.trim() == "free" {
        Ok(None)
    } else {
        parse_model(spec).map(Some)
    }
}

/// `lo:hi:count` (geometric when `log`, else linear) or a comma list.
pub fn parse_grid(spec: &str, log: bool) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Config(format!("bad grid {spec:?}"));
    let parts: Vec<&str> = spec.split(':').collect();
    let grid = match parts[..] {
        [lo, hi, count] => {
            let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
            let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
            let count: usize = count.trim().parse().map_err(|_| bad())?;
            if count < 2 || !(hi > lo) || (log && !(lo > 0.0)) {
                return Err(bad());
            }
            if log {
                log_grid(lo, hi, count)
            } else {
                (0..count)
                    .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
                    .collect()
            }
        }
        [list] => list
            .split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?,
        _ => return Err(bad()),
    };
    if grid.is_empty() || grid.iter().any(|x| !x.is_finite()) {
        return Err(bad());
    }
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SideArg {
    Below,
    Above,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum IdosMethod {
    /// Node counting on finite boxes.
    Direct,
    /// Rotation number of the Prüfer chain.
    Rotation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleArg {
    Critical,
    Ballistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DeviationKind {
    Martingale,
    Norm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    All,
    CriticalScaling,
    Spectral,
    Transport,
    Invariants,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandsConfig {
    pub v: f64,
    pub l_max: u32,
}

impl Default for BandsConfig {
    fn default() -> Self {
        Self { v: 1.0, l_max: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovConfig {
    pub model: String,
    pub l: u32,
    pub side: SideArg,
    pub eps_grid: String,
    /// Steps per realization; unset means the ε-dependent default.
    pub n: Option<usize>,
    pub samples: usize,
    pub seed: u64,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self {
            model: "uniform:0.5,1.5".into(),
            l: 1,
            side: SideArg::Below,
            eps_grid: "1e-3:1e-2:8".into(),
            n: None,
            samples: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdosConfig {
    pub model: String,
    pub l: u32,
    pub eps_grid: String,
    pub method: IdosMethod,
    /// Box length (direct) or chain length (rotation).
    pub n: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for IdosConfig {
    fn default() -> Self {
        Self {
            model: "uniform:0.5,1.5".into(),
            l: 1,
            eps_grid: "1e-4:1e-2:8".into(),
            method: IdosMethod::Direct,
            n: 200,
            samples: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreenConfig {
    pub model: String,
    pub seed: u64,
    pub stream: u64,
    pub energy: f64,
    pub eta: f64,
    pub y: f64,
    pub x_grid: String,
    pub tol: f64,
}

impl Default for GreenConfig {
    fn default() -> Self {
        Self {
            model: "uniform:0.5,1.5".into(),
            seed: 0,
            stream: 0,
            energy: std::f64::consts::PI * std::f64::consts::PI - 0.01,
            eta: 0.05,
            y: 0.5,
            x_grid: "-20:20:81".into(),
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    /// A model spec or `free`.
    pub model: String,
    pub l: u32,
    pub q: f64,
    pub a: f64,
    pub t_grid: String,
    pub schedule: ScheduleArg,
    pub alpha: f64,
    pub c8: f64,
    pub eps0: f64,
    pub span: f64,
    pub energies: usize,
    pub samples: usize,
    pub seed: u64,
    pub m_tol: f64,
    pub refinement_tol: Option<f64>,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            model: "uniform:0.5,1.5".into(),
            l: 1,
            q: 4.0,
            a: 0.5,
            t_grid: "1e2:1e4:7".into(),
            schedule: ScheduleArg::Critical,
            alpha: 0.3,
            c8: 1.0,
            eps0: 1.0,
            span: 25.0,
            energies: 32,
            samples: 32,
            seed: 0,
            m_tol: 1e-9,
            refinement_tol: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviationsConfig {
    pub model: String,
    pub l: u32,
    pub kind: DeviationKind,
    pub alpha: f64,
    pub n_grid: Vec<usize>,
    pub samples: usize,
    pub seed: u64,
}

impl Default for DeviationsConfig {
    fn default() -> Self {
        Self {
            model: "uniform:0.5,1.5".into(),
            l: 1,
            kind: DeviationKind::Martingale,
            alpha: 0.2,
            n_grid: vec![1_000, 10_000, 100_000],
            samples: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub suite: Suite,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            suite: Suite::All,
            seed: 42,
        }
    }
}

/// What a run records next to its outputs; feeding it back through
/// `--config` repeats the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest<C> {
    pub kplab_version: String,
    pub command: String,
    pub config: C,
}

impl<C> Manifest<C> {
    pub fn new(command: &str, config: C) -> Self {
        Self {
            kplab_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
        }
    }
}

/// Reads a config file (TOML by extension, JSON otherwise). A manifest is
/// accepted in place of a bare config when its command matches.
pub fn load<C: DeserializeOwned>(path: &Path, command: &str) -> Result<C, CliError> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
    } else {
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
    };
    let value = match value.get("kplab_version") {
        Some(_) => {
            let m: Manifest<serde_json::Value> = serde_json::from_value(value)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            if m.command != command {
                return Err(CliError::Config(format!(
                    "manifest is for `{}`, not `{command}`",
                    m.command
                )));
            }
            m.config
        }
        None => value,
    };
    serde_json::from_value(value).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_specs() {
        assert_eq!(
            parse_model("uniform:0.5,1.5").unwrap(),
            DisorderModel::default_uniform()
        );
        assert_eq!(
            parse_model("two_point:1,0.5,3").unwrap(),
            DisorderModel::default_two_point()
        );
        assert_eq!(
            parse_model("discrete:1/0.25,2/0.75").unwrap(),
            DisorderModel::Discrete {
                values: vec![1.0, 2.0],
                weights: vec![0.25, 0.75]
            }
        );
        assert!(parse_model("uniform:2,1").is_err());
        assert!(parse_model("gauss:0,1").is_err());
        assert_eq!(parse_optional_model("free").unwrap(), None);
    }

    #[test]
    fn grids() {
        let g = parse_grid("1e-3:1e-2:3", true).unwrap();
        assert!((g[1] - 10f64.powf(-2.5)).abs() < 1e-15);
        assert_eq!(parse_grid("-1:1:3", false).unwrap(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(parse_grid("10,20", true).unwrap(), vec![10.0, 20.0]);
        assert!(parse_grid("0:1:3", true).is_err());
        assert!(parse_grid("1:2", true).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let r: Result<LyapunovConfig, _> = serde_json::from_str(r#"{"l": 2, "sampels": 3}"#);
        assert!(r.is_err());
        let c: LyapunovConfig = serde_json::from_str(r#"{"l": 2}"#).unwrap();
        assert_eq!(c.l, 2);
        assert_eq!(c.samples, 32);
    }
}
