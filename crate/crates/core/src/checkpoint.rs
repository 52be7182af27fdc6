//! Versioned JSON checkpoints: model config, parameter groups, and the
//! normalization statistics and run configuration they were trained with.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::NormStats;
use crate::error::{PadError, Result};
use crate::model::{ModelConfig, PadParameters, ParamGroup};
use crate::solver::SolverConfig;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelConfig,
    pub solver: SolverConfig,
    /// Group name to its tensors, weight then bias per layer.
    pub groups: BTreeMap<String, Vec<Tensor>>,
    pub norm: Option<NormStats>,
    /// Configuration of the run that produced this checkpoint.
    pub config: serde_json::Value,
}

impl Checkpoint {
    pub fn new(
        params: &PadParameters,
        model: &ModelConfig,
        solver: &SolverConfig,
        norm: Option<NormStats>,
        config: serde_json::Value,
    ) -> Checkpoint {
        let groups = params
            .groups()
            .into_iter()
            .map(|g| (g.name().to_string(), params.tensors(g).into_iter().cloned().collect()))
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            model: model.clone(),
            solver: solver.clone(),
            groups,
            norm,
            config,
        }
    }

    /// Rebuild the parameters, checking every shape against the model config.
    pub fn params(&self) -> Result<PadParameters> {
        let mut params = PadParameters::init(&self.model, 0)?;
        for name in self.groups.keys() {
            if ParamGroup::from_name(name).is_none_or(|g| !params.has_group(g)) {
                return Err(PadError::Config(format!("checkpoint has unexpected group {name}")));
            }
        }
        for group in params.groups() {
            let stored = self
                .groups
                .get(group.name())
                .ok_or_else(|| PadError::Config(format!("checkpoint is missing group {}", group.name())))?;
            let slots = params.tensors_mut(group);
            if slots.len() != stored.len() {
                return Err(PadError::Config(format!(
                    "group {} has {} tensors, model expects {}",
                    group.name(),
                    stored.len(),
                    slots.len()
                )));
            }
            for (slot, t) in slots.into_iter().zip(stored) {
                if slot.shape() != t.shape() || t.shape().iter().product::<usize>() != t.data().len() {
                    return Err(PadError::Config(format!(
                        "group {} tensor shape {:?} does not match {:?}",
                        group.name(),
                        t.shape(),
                        slot.shape()
                    )));
                }
                *slot = t.clone();
            }
        }
        Ok(params)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| PadError::Contract(format!("checkpoint serialization: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Checkpoint> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| PadError::Config(format!("invalid checkpoint: {e}")))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(PadError::Config(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        ck.model.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| PadError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path).map_err(|e| PadError::io(path, e))?;
        Checkpoint::from_json(&text)
    }
}
