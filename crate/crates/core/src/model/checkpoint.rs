//! Persistence for trained, calibrated models.
//!
//! A checkpoint bundles the network parameters, the calibrated error
//! bound with its coverage box, and the step length the model was trained
//! and calibrated at. The JSON encoding is deterministic (struct field
//! order, exact float round-trip), so re-saving an unchanged model
//! reproduces the file byte for byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::calibrate::ErrorBound;
use crate::model::net::ModelParams;

/// A trained derivative network plus everything needed to use it safely:
/// calibrated error bound, coverage box, and the step length it is valid
/// for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub bound: ErrorBound,
    /// Step length used for training rollouts and calibration.
    pub dt: f64,
}

impl TrainedModel {
    pub fn new(params: ModelParams, bound: ErrorBound, dt: f64) -> Self {
        TrainedModel { params, bound, dt }
    }

    /// Errors unless the model's input split matches the given plant
    /// dimensions.
    pub fn expect_dims(&self, xdim: usize, udim: usize) -> Result<()> {
        let arch = self.params.arch();
        if arch.xdim != xdim || arch.udim != udim {
            return Err(Error::ModelShape(format!(
                "checkpoint is for dims ({}, {}), plant has ({}, {})",
                arch.xdim, arch.udim, xdim, udim
            )));
        }
        Ok(())
    }

    fn validate(self) -> Result<Self> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Format(format!("checkpoint dt must be positive, got {}", self.dt)));
        }
        if !(self.bound.epsilon.is_finite() && self.bound.epsilon >= 0.0) {
            return Err(Error::Format(format!(
                "checkpoint error bound must be finite and non-negative, got {}",
                self.bound.epsilon
            )));
        }
        let arch = self.params.arch();
        if self.bound.coverage.x_lo.len() != arch.xdim
            || self.bound.coverage.x_hi.len() != arch.xdim
            || self.bound.coverage.u_lo.len() != arch.udim
            || self.bound.coverage.u_hi.len() != arch.udim
        {
            return Err(Error::Format("coverage box dims do not match architecture".into()));
        }
        Ok(self)
    }

    /// Writes the checkpoint as pretty-printed JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body = serde_json::to_string_pretty(self)?;
        body.push('\n');
        fs::write(path, body)?;
        Ok(())
    }

    /// Loads and validates a checkpoint. Parameter-count mismatches,
    /// non-finite values, and unknown fields are all rejected.
    pub fn load(path: &Path) -> Result<TrainedModel> {
        let body = fs::read_to_string(path)?;
        let model: TrainedModel = serde_json::from_str(&body)?;
        model.validate()
    }
}
