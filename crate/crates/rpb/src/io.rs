//! Artifacts: signal CSVs, JSON checkpoints and metrics.

use std::fs;
use std::path::{Path, PathBuf};

use rpb_core::boost::BoostConfig;
use rpb_core::closedloop::RolloutResult;
use rpb_core::plant::{Layout, PlantModel};
use rpb_core::Signal;
use serde::{Deserialize, Serialize};

use crate::error::{read_err, write_err, CliError, CliResult};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained parameters with enough context to rebuild the operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub boost: BoostConfig,
    pub theta: Vec<f64>,
    pub layout: Layout,
    pub epoch: usize,
    /// Pool loss per epoch. Final checkpoints start at epoch 0,
    /// intermediate ones at epoch 1.
    pub history: Vec<f64>,
    /// Target pair used for every training scenario, if any.
    pub fixed_targets: Option<Vec<[f64; 2]>>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> CliResult<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(read_err(path))?;
        let bad = |reason: String| CliError::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let ck: Self = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {}", ck.version)));
        }
        if ck.theta.len() != ck.boost.n_params() {
            return Err(bad(format!(
                "{} parameters for an architecture with {}",
                ck.theta.len(),
                ck.boost.n_params()
            )));
        }
        if ck.theta.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite parameters".into()));
        }
        Ok(ck)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("artifact types serialize");
    fs::write(path, text + "\n").map_err(write_err(path))
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(write_err(path))
}

/// Writes `t, <names...>` rows, one per time step.
pub fn write_signal_csv(path: &Path, s: &Signal, names: &[String]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (t, row) in s.rows().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(write_err(path))
}

/// Reads a file written by [`write_signal_csv`], dropping the time column.
pub fn read_signal_csv(path: &Path) -> CliResult<Signal> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|e| CliError::Config(format!("{}: {e}", path.display()))))
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Signal::from_rows(&rows)?)
}

/// Column names for the state `η`, `u`, `e` and the reference.
pub struct Columns {
    pub eta: Vec<String>,
    pub u: Vec<String>,
    pub e: Vec<String>,
}

impl Columns {
    pub fn new(model: &PlantModel) -> Self {
        let axes = ["x", "y", "z"];
        let per_robot = |prefix: &str| -> Vec<String> {
            (0..model.robots)
                .flat_map(|i| (0..model.spatial_dim).map(move |k| (i, k)))
                .map(|(i, k)| format!("{prefix}{}_{}", i + 1, axes[k.min(2)]))
                .collect()
        };
        let mut x = Vec::new();
        for i in 0..model.robots {
            for k in 0..model.spatial_dim {
                x.push(format!("p{}_{}", i + 1, axes[k.min(2)]));
            }
            for k in 0..model.spatial_dim {
                x.push(format!("q{}_{}", i + 1, axes[k.min(2)]));
            }
        }
        let mut eta = x.clone();
        eta.extend(per_robot("v"));
        Self {
            e: x.iter().map(|n| format!("e_{n}")).collect(),
            eta,
            u: per_robot("u"),
        }
    }
}

/// All traces of one rollout, row per time step, for plotting elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub eta: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub e: Vec<Vec<f64>>,
    pub w_hat: Vec<Vec<f64>>,
    pub loss: Vec<f64>,
}

fn rows(s: &Signal) -> Vec<Vec<f64>> {
    s.rows().map(|r| r.to_vec()).collect()
}

/// Writes `eta.csv`, `u.csv`, `e.csv`, `w_hat.csv`, `loss.csv` and the
/// combined `rollout.json` into `dir`.
pub fn write_rollout(dir: &Path, model: &PlantModel, res: &RolloutResult, loss: &[f64]) -> CliResult<Vec<PathBuf>> {
    create_dir(dir)?;
    let cols = Columns::new(model);
    let what: [(&str, &Signal, &[String]); 4] = [
        ("eta.csv", &res.eta, &cols.eta),
        ("u.csv", &res.u, &cols.u),
        ("e.csv", &res.e, &cols.e),
        ("w_hat.csv", &res.w_hat, &cols.eta),
    ];
    let mut paths = Vec::new();
    for (name, s, names) in what {
        let p = dir.join(name);
        write_signal_csv(&p, s, names)?;
        paths.push(p);
    }
    let p = dir.join("loss.csv");
    write_series_csv(&p, "t", "loss", loss)?;
    paths.push(p);
    let p = dir.join("rollout.json");
    let record = RolloutRecord {
        eta: rows(&res.eta),
        u: rows(&res.u),
        e: rows(&res.e),
        w_hat: rows(&res.w_hat),
        loss: loss.to_vec(),
    };
    write_json(&p, &record)?;
    paths.push(p);
    Ok(paths)
}

/// Two-column CSV `index, value`.
pub fn write_series_csv(path: &Path, index: &str, value: &str, data: &[f64]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([index, value])?;
    for (i, v) in data.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.flush().map_err(write_err(path))
}
