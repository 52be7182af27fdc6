//! Dataset ingestion, preprocessing and generation.

mod augment;
mod csv_io;
mod normalize;
mod synth;
mod window;

pub use augment::{augment, AugmentSpec};
pub use csv_io::{load_csv, save_csv};
pub use normalize::{normalize, NormStats};
pub use synth::{generate_synthetic, Segment, SyntheticConfig, SyntheticSequence};
pub use window::{drop_observations, make_batch_samples, window_split, BatchSample};

use serde::{Deserialize, Serialize};

use crate::error::{PadError, Result};

/// A full multivariate sequence before windowing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSequence {
    pub times: Vec<f64>,
    /// Row-major `len × n_channels`.
    pub values: Vec<f64>,
    pub n_channels: usize,
    pub channel_names: Vec<String>,
    pub anomaly_flags: Option<Vec<bool>>,
    pub source_name: String,
}

impl RawSequence {
    pub fn new(
        times: Vec<f64>,
        values: Vec<f64>,
        n_channels: usize,
        anomaly_flags: Option<Vec<bool>>,
        source_name: impl Into<String>,
    ) -> Result<Self> {
        let seq = RawSequence {
            channel_names: (0..n_channels).map(|c| format!("x{c}")).collect(),
            times,
            values,
            n_channels,
            anomaly_flags,
            source_name: source_name.into(),
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 {
            return Err(PadError::Input("sequence needs at least one channel".into()));
        }
        if self.values.len() != self.times.len() * self.n_channels {
            return Err(PadError::Input(format!(
                "{} values for {} observations of {} channels",
                self.values.len(),
                self.times.len(),
                self.n_channels
            )));
        }
        if self.channel_names.len() != self.n_channels {
            return Err(PadError::Input("channel name count does not match channels".into()));
        }
        if let Some(k) = self.times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(PadError::Input(format!(
                "timestamps not strictly increasing at observation {}",
                k + 1
            )));
        }
        if let Some(flags) = &self.anomaly_flags {
            if flags.len() != self.times.len() {
                return Err(PadError::Input(format!(
                    "{} flags for {} observations",
                    flags.len(),
                    self.times.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn observation(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_channels..(i + 1) * self.n_channels]
    }

    pub fn flag(&self, i: usize) -> bool {
        self.anomaly_flags.as_ref().is_some_and(|f| f[i])
    }

    /// Observations `[start, end)` as a new sequence.
    pub fn slice(&self, start: usize, end: usize) -> RawSequence {
        let end = end.min(self.len());
        let start = start.min(end);
        RawSequence {
            times: self.times[start..end].to_vec(),
            values: self.values[start * self.n_channels..end * self.n_channels].to_vec(),
            n_channels: self.n_channels,
            channel_names: self.channel_names.clone(),
            anomaly_flags: self.anomaly_flags.as_ref().map(|f| f[start..end].to_vec()),
            source_name: self.source_name.clone(),
        }
    }

    /// Fraction of flagged observations (0 when unlabeled).
    pub fn anomaly_ratio(&self) -> f64 {
        match &self.anomaly_flags {
            Some(f) if !f.is_empty() => f.iter().filter(|&&x| x).count() as f64 / f.len() as f64,
            _ => 0.0,
        }
    }
}

/// Derive an independent RNG seed for one named stochastic component.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ master.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for byte in tag.bytes().chain(master.to_le_bytes()) {
        h ^= byte as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
