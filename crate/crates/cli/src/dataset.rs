//! On-disk dataset format for excitation recordings.
//!
//! A single JSON document so a dataset is self-describing: the step
//! length and dimensions are stored alongside the trajectories, and
//! training validates them against the checkpoint architecture rather
//! than trusting file names.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use softctrl::types::Trajectory;
use softctrl::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    /// Step length (s) shared by every trajectory.
    pub dt: f64,
    pub xdim: usize,
    pub udim: usize,
    pub trajectories: Vec<Trajectory>,
}

/// Default dataset location for a scenario.
pub fn dataset_path(out: &Path, scenario_name: &str) -> PathBuf {
    out.join(format!("{scenario_name}_dataset.json"))
}

/// Default checkpoint location for a scenario.
pub fn checkpoint_path(out: &Path, scenario_name: &str) -> PathBuf {
    out.join(format!("{scenario_name}_model.json"))
}

impl DatasetFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body = serde_json::to_string(self).map_err(Error::from)?;
        body.push('\n');
        std::fs::write(path, body)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<DatasetFile> {
        let body = std::fs::read_to_string(path)?;
        let file: DatasetFile = serde_json::from_str(&body).map_err(Error::from)?;
        for t in &file.trajectories {
            if (t.dt() - file.dt).abs() > 1e-12 {
                return Err(Error::Format(format!(
                    "dataset declares dt={} but contains a trajectory at dt={}",
                    file.dt,
                    t.dt()
                )));
            }
        }
        Ok(file)
    }
}
