use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RawSequence;
use crate::error::{PadError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSpec {
    /// Target ratio of implanted to original observations.
    pub gamma: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            gamma: 0.1,
            min_len: 100,
            max_len: 500,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(PadError::Config(format!("augment.gamma must be in [0, 1), got {}", self.gamma)));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(PadError::Config(format!(
                "augment lengths must satisfy 0 < min_len <= max_len, got {}..{}",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }
}

/// Implant copied stretches of the sequence as labeled anomalies.
///
/// While the implanted length is at most `gamma` of the original length:
/// draw a length `l ∈ [min_len, max_len]`, a source offset `r` in the
/// original sequence and an insertion point `s`, then insert a copy of
/// `x[r..r+l]` before position `s`. Copies are flagged, originals are not.
/// Insertion points never touch an earlier implant, so every implant stays
/// a separate flagged run. Timestamps are rebuilt from the original spacing
/// of each observation's source.
pub fn augment(seq: &RawSequence, spec: &AugmentSpec) -> Result<RawSequence> {
    spec.validate()?;
    if seq.anomaly_flags.as_ref().is_some_and(|f| f.iter().any(|&x| x)) {
        return Err(PadError::Input("augmentation expects unlabeled or all-normal data".into()));
    }
    if spec.gamma == 0.0 {
        return Ok(seq.clone());
    }
    let t_len = seq.len();
    if t_len < spec.max_len || t_len < 2 {
        return Err(PadError::Input(format!(
            "augmentation needs at least max_len = {} observations, got {t_len}",
            spec.max_len
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // (source index, implanted)
    let mut order: Vec<(usize, bool)> = (0..t_len).map(|i| (i, false)).collect();
    let mut added = 0usize;
    while added as f64 / t_len as f64 <= spec.gamma {
        let l = rng.gen_range(spec.min_len..=spec.max_len);
        let r = rng.gen_range(0..=t_len - l);
        let valid: Vec<usize> = (0..=order.len())
            .filter(|&s| (s == 0 || !order[s - 1].1) && (s == order.len() || !order[s].1))
            .collect();
        let s = valid[rng.gen_range(0..valid.len())];
        order.splice(s..s, (r..r + l).map(|k| (k, true)));
        added += l;
    }

    let spacing = |k: usize| {
        if k == 0 {
            seq.times[1] - seq.times[0]
        } else {
            seq.times[k] - seq.times[k - 1]
        }
    };
    let mut times = Vec::with_capacity(order.len());
    let mut values = Vec::with_capacity(order.len() * seq.n_channels);
    let mut flags = Vec::with_capacity(order.len());
    for (j, &(src, implanted)) in order.iter().enumerate() {
        let t = if j == 0 {
            seq.times[0]
        } else {
            times[j - 1] + spacing(src)
        };
        times.push(t);
        values.extend_from_slice(seq.observation(src));
        flags.push(implanted);
    }
    let out = RawSequence {
        times,
        values,
        n_channels: seq.n_channels,
        channel_names: seq.channel_names.clone(),
        anomaly_flags: Some(flags),
        source_name: format!("{}+augmented", seq.source_name),
    };
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(len: usize) -> RawSequence {
        RawSequence::new(
            (0..len).map(|i| i as f64 * 0.5).collect(),
            (0..len * 2).map(|i| (i as f64 * 0.01).cos()).collect(),
            2,
            None,
            "base",
        )
        .unwrap()
    }

    #[test]
    fn zero_gamma_is_identity() {
        let s = base(1000);
        let spec = AugmentSpec {
            gamma: 0.0,
            ..AugmentSpec::default()
        };
        assert_eq!(augment(&s, &spec).unwrap(), s);
    }

    #[test]
    fn too_short_for_max_len() {
        let spec = AugmentSpec::default();
        assert!(matches!(augment(&base(499), &spec), Err(PadError::Input(_))));
    }

    #[test]
    fn labeled_anomalies_rejected() {
        let mut s = base(1000);
        let mut flags = vec![false; 1000];
        flags[3] = true;
        s.anomaly_flags = Some(flags);
        assert!(augment(&s, &AugmentSpec::default()).is_err());
    }

    #[test]
    fn spacing_preserved() {
        let out = augment(&base(2000), &AugmentSpec::default()).unwrap();
        assert!(out.times.windows(2).all(|w| (w[1] - w[0] - 0.5).abs() < 1e-12));
    }

    #[test]
    fn msl_like_ratio() {
        let t = 5000;
        let spec = AugmentSpec {
            gamma: 0.1072,
            seed: 42,
            ..AugmentSpec::default()
        };
        let out = augment(&base(t), &spec).unwrap();
        let ratio = (out.len() - t) as f64 / t as f64;
        assert!(ratio > 0.1072 && ratio <= 0.1072 + 500.0 / t as f64, "{ratio}");
    }
}
