use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RawSequence;
use crate::error::{PadError, Result};

/// Synthetic benchmark: smooth multichannel sinusoids with noise, anomalous
/// segments, and a rising ramp immediately before each anomaly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub t_len: usize,
    pub n_channels: usize,
    pub anomaly_count: usize,
    /// When set, anomaly lengths are chosen so the flagged fraction equals
    /// this value; otherwise each length is uniform in `[min_len, max_len]`.
    pub anomaly_ratio: Option<f64>,
    pub precursor_len: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub noise_std: f64,
    pub ramp_amplitude: f64,
    pub anomaly_magnitude: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            t_len: 20_000,
            n_channels: 4,
            anomaly_count: 20,
            anomaly_ratio: None,
            precursor_len: 20,
            min_len: 100,
            max_len: 500,
            noise_std: 0.005,
            ramp_amplitude: 1.5,
            anomaly_magnitude: 3.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Ramp,
    LevelShift,
    AmplitudeBurst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    pub kind: SegmentKind,
}

impl Segment {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    pub sequence: RawSequence,
    pub anomalies: Vec<Segment>,
    pub ramps: Vec<Segment>,
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.t_len < 2 || self.n_channels == 0 {
            return Err(PadError::Input("synthetic data needs t_len >= 2 and n_channels >= 1".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(PadError::Input("synthetic anomaly lengths need 0 < min_len <= max_len".into()));
        }
        if let Some(r) = self.anomaly_ratio {
            if !(0.0..1.0).contains(&r) {
                return Err(PadError::Input(format!("anomaly_ratio must be in [0, 1), got {r}")));
            }
        }
        Ok(())
    }
}

fn segment_lengths(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let n = cfg.anomaly_count;
    let Some(ratio) = cfg.anomaly_ratio else {
        return Ok((0..n).map(|_| rng.gen_range(cfg.min_len..=cfg.max_len)).collect());
    };
    let total = (ratio * cfg.t_len as f64).round() as usize;
    if total < n * cfg.min_len || total > n * cfg.max_len {
        return Err(PadError::Input(format!(
            "anomaly_ratio {ratio} needs {total} flagged points, not reachable with {n} segments of {}..{}",
            cfg.min_len, cfg.max_len
        )));
    }
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..2.0)).collect();
    let wsum: f64 = weights.iter().sum();
    let mut lens: Vec<usize> = weights
        .iter()
        .map(|w| ((total as f64 * w / wsum).round() as usize).clamp(cfg.min_len, cfg.max_len))
        .collect();
    // settle the rounding residual one point at a time
    let mut i = 0;
    while lens.iter().sum::<usize>() != total {
        let sum: usize = lens.iter().sum();
        let k = i % n;
        if sum < total && lens[k] < cfg.max_len {
            lens[k] += 1;
        } else if sum > total && lens[k] > cfg.min_len {
            lens[k] -= 1;
        }
        i += 1;
    }
    Ok(lens)
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticSequence> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (t_len, n_ch) = (cfg.t_len, cfg.n_channels);

    let mut values = vec![0.0; t_len * n_ch];
    let bases: Vec<(f64, f64, f64)> = (0..n_ch)
        .map(|_| {
            (
                rng.gen_range(0.3..0.6),
                rng.gen_range(150.0..300.0),
                rng.gen_range(0.0..TAU),
            )
        })
        .collect();
    for t in 0..t_len {
        for (c, &(amp, period, phase)) in bases.iter().enumerate() {
            let noise: f64 = (0..4).map(|_| rng.gen_range(-1.0..1.0)).sum::<f64>() * 0.5;
            values[t * n_ch + c] = amp * (TAU * t as f64 / period + phase).sin() + cfg.noise_std * noise;
        }
    }

    let lens = segment_lengths(cfg, &mut rng)?;
    let mut anomalies = Vec::new();
    let mut ramps = Vec::new();
    if cfg.anomaly_count > 0 {
        // each anomaly lives in its own slot, keeping a clean gap of at least
        // `precursor_len` before its ramp
        let slot = t_len / cfg.anomaly_count;
        let lead = 2 * cfg.precursor_len + 1;
        for (k, &len) in lens.iter().enumerate() {
            let slack = slot as i64 - (lead + len + 1) as i64;
            if slack < 0 {
                return Err(PadError::Input(format!(
                    "{} anomalies of up to {} points with precursor {} do not fit in {t_len} observations",
                    cfg.anomaly_count, cfg.max_len, cfg.precursor_len
                )));
            }
            let start = k * slot + lead + rng.gen_range(0..=slack as usize);
            let kind = if rng.gen_bool(0.5) {
                SegmentKind::LevelShift
            } else {
                SegmentKind::AmplitudeBurst
            };
            anomalies.push(Segment { start, len, kind });
            if cfg.precursor_len > 0 {
                ramps.push(Segment {
                    start: start - cfg.precursor_len,
                    len: cfg.precursor_len,
                    kind: SegmentKind::Ramp,
                });
            }
        }
    }

    for r in &ramps {
        for k in 0..r.len {
            let lift = cfg.ramp_amplitude * (k + 1) as f64 / r.len as f64;
            for c in 0..n_ch {
                values[(r.start + k) * n_ch + c] += lift;
            }
        }
    }
    let mut flags = vec![false; t_len];
    // one shift direction per channel, shared by every level shift
    let signs: Vec<f64> = (0..n_ch).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
    for a in &anomalies {
        let burst_period = rng.gen_range(6.0..12.0);
        for t in a.start..a.end() {
            flags[t] = true;
            for c in 0..n_ch {
                let delta = match a.kind {
                    SegmentKind::LevelShift => cfg.anomaly_magnitude * signs[c],
                    SegmentKind::AmplitudeBurst => {
                        0.5 * cfg.anomaly_magnitude * (TAU * (t - a.start) as f64 / burst_period).sin()
                    }
                    SegmentKind::Ramp => 0.0,
                };
                values[t * n_ch + c] += delta;
            }
        }
    }

    let sequence = RawSequence::new(
        (0..t_len).map(|t| t as f64).collect(),
        values,
        n_ch,
        Some(flags),
        format!("synthetic(seed={})", cfg.seed),
    )?;
    Ok(SyntheticSequence {
        sequence,
        anomalies,
        ramps,
    })
}
