use serde::{Deserialize, Serialize};

use super::RawSequence;
use crate::error::{PadError, Result};

/// Per-channel min/max taken from training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    pub fn fit(seqs: &[&RawSequence]) -> Result<NormStats> {
        let first = seqs
            .first()
            .ok_or_else(|| PadError::Input("normalization needs at least one training sequence".into()))?;
        let n = first.n_channels;
        let mut min = vec![f64::INFINITY; n];
        let mut max = vec![f64::NEG_INFINITY; n];
        for s in seqs {
            if s.n_channels != n {
                return Err(PadError::Input(format!(
                    "channel count mismatch: {} vs {n}",
                    s.n_channels
                )));
            }
            for row in s.values.chunks(n) {
                for c in 0..n {
                    min[c] = min[c].min(row[c]);
                    max[c] = max[c].max(row[c]);
                }
            }
        }
        if min.iter().any(|v| !v.is_finite()) {
            return Err(PadError::Input("normalization needs at least one observation".into()));
        }
        Ok(NormStats { min, max })
    }

    pub fn n_channels(&self) -> usize {
        self.min.len()
    }

    /// Scale to `[0, 1]` on the training range; constant channels map to 0.5.
    pub fn apply(&self, seq: &RawSequence) -> Result<RawSequence> {
        self.check(seq)?;
        let n = self.n_channels();
        let mut out = seq.clone();
        for row in out.values.chunks_mut(n) {
            for c in 0..n {
                let range = self.max[c] - self.min[c];
                row[c] = if range > 0.0 {
                    (row[c] - self.min[c]) / range
                } else {
                    0.5
                };
            }
        }
        Ok(out)
    }

    /// Inverse of [`NormStats::apply`]; constant channels return their value.
    pub fn invert(&self, seq: &RawSequence) -> Result<RawSequence> {
        self.check(seq)?;
        let n = self.n_channels();
        let mut out = seq.clone();
        for row in out.values.chunks_mut(n) {
            for c in 0..n {
                let range = self.max[c] - self.min[c];
                row[c] = if range > 0.0 {
                    self.min[c] + row[c] * range
                } else {
                    self.min[c]
                };
            }
        }
        Ok(out)
    }

    fn check(&self, seq: &RawSequence) -> Result<()> {
        if seq.n_channels != self.n_channels() {
            return Err(PadError::Input(format!(
                "sequence has {} channels, statistics have {}",
                seq.n_channels,
                self.n_channels()
            )));
        }
        Ok(())
    }
}

/// Fit statistics on `train` only and scale every sequence of both sets.
pub fn normalize(
    train: &[RawSequence],
    apply: &[RawSequence],
) -> Result<(Vec<RawSequence>, Vec<RawSequence>, NormStats)> {
    let stats = NormStats::fit(&train.iter().collect::<Vec<_>>())?;
    let tr = train.iter().map(|s| stats.apply(s)).collect::<Result<_>>()?;
    let ap = apply.iter().map(|s| stats.apply(s)).collect::<Result<_>>()?;
    Ok((tr, ap, stats))
}
