use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::Stage;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Summed loss over every sample of the update.
    pub loss: f64,
    pub lr: f64,
    /// Global norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    /// Mean per supervised unit: masked atom for the encoder, answer token
    /// for the language stages.
    pub loss: f64,
    /// Masked element accuracy; encoder stage only.
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub eval_loss: f64,
    pub masked_type_accuracy: Option<f64>,
    pub masked_nll: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: Stage,
    pub seed: u64,
    pub config_hash: String,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub final_metrics: FinalMetrics,
    pub clipped_steps: usize,
    pub wall_clock_seconds: f64,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }

    pub fn final_eval(&self) -> Option<&EvalRecord> {
        self.evals.last()
    }

    /// Per-step CSV: `step,loss,lr,grad_norm`.
    pub fn steps_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "loss", "lr", "grad_norm"])?;
        for s in &self.steps {
            w.write_record([
                s.step.to_string(),
                s.loss.to_string(),
                s.lr.to_string(),
                s.grad_norm.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    /// Writes `{stem}.json` and `{stem}.csv`; returns both paths.
    pub fn write(&self, stem: &Path) -> Result<(PathBuf, PathBuf)> {
        let json = stem.with_extension("json");
        let csv = stem.with_extension("csv");
        std::fs::write(&json, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&json, e))?;
        std::fs::write(&csv, self.steps_csv()?).map_err(|e| Error::io(&csv, e))?;
        Ok((json, csv))
    }
}
