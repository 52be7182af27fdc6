use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::RawSequence;
use crate::error::{PadError, Result};
use crate::path::TimeSeriesWindow;

/// Split into consecutive non-overlapping windows of exactly `b`
/// observations. A trailing partial window is discarded.
pub fn window_split(seq: &RawSequence, b: usize) -> Result<Vec<TimeSeriesWindow>> {
    if b < 2 {
        return Err(PadError::Input(format!("window size must be >= 2, got {b}")));
    }
    (0..seq.len() / b)
        .map(|i| {
            let part = seq.slice(i * b, (i + 1) * b);
            TimeSeriesWindow::new(
                part.times,
                part.values,
                seq.n_channels,
                part.anomaly_flags.unwrap_or_default(),
                i,
            )
        })
        .collect()
}

/// One training/evaluation example: a window, the start of its successor,
/// and the labels of both tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSample {
    pub input: TimeSeriesWindow,
    /// Leading observations of the next window, read by the anomaly branch
    /// to produce the distillation target.
    pub teacher: TimeSeriesWindow,
    /// Anomaly label of `input`.
    pub label: u8,
    /// 1 iff any of the first `p` observations of the next window is flagged.
    pub poa_label: u8,
}

/// Pair each window with its successor's first `p` observations.
///
/// The teacher window keeps at least two observations so a path can be
/// built from it even when `p == 1`; the PoA label always looks at exactly
/// `p` observations. Pairs whose indices are not adjacent are skipped.
pub fn make_batch_samples(windows: &[TimeSeriesWindow], p: usize) -> Result<Vec<BatchSample>> {
    if p == 0 {
        return Err(PadError::Input("PoA horizon must be positive".into()));
    }
    windows
        .windows(2)
        .filter(|pair| pair[1].window_index() == pair[0].window_index() + 1)
        .map(|pair| {
            let (cur, next) = (&pair[0], &pair[1]);
            if p > next.n_obs() {
                return Err(PadError::Input(format!(
                    "PoA horizon {p} exceeds window length {}",
                    next.n_obs()
                )));
            }
            let teacher = next.prefix(p.max(2))?;
            let poa_label = next.anomaly_flags().iter().take(p).any(|&f| f) as u8;
            Ok(BatchSample {
                input: cur.clone(),
                teacher,
                label: cur.label(),
                poa_label,
            })
        })
        .collect()
}

/// Keep a uniformly random `⌈(1 − ratio)·n⌉` observations, in order, with
/// their original timestamps and flags.
pub fn drop_observations(window: &TimeSeriesWindow, ratio: f64, seed: u64) -> Result<TimeSeriesWindow> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(PadError::Input(format!("drop ratio must be in [0, 1), got {ratio}")));
    }
    if ratio == 0.0 {
        return Ok(window.clone());
    }
    let n = window.n_obs();
    // tolerance keeps e.g. (1 - 0.7) * 30 at 9 rather than 10
    let keep = ((1.0 - ratio) * n as f64 - 1e-9).ceil() as usize;
    if keep < 2 {
        return Err(PadError::Input(format!(
            "dropping {ratio} of {n} observations leaves {keep}, need at least 2"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, keep).into_vec();
    idx.sort_unstable();
    window.select(&idx)
}
