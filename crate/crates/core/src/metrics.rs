//! Comparison metrics over training records.

use crate::error::{Error, Result};
use crate::trainer::EpochRecord;

/// Width of the moving average used by the stability rule.
pub const STABILITY_WINDOW: usize = 10;
/// Number of consecutive small changes required.
pub const STABILITY_PERSISTENCE: usize = 10;
/// Largest moving-average change still counted as stable.
pub const STABILITY_TOLERANCE: f64 = 0.05;

/// Mean per-epoch collision rate over the final `window` epochs.
pub fn collision_rate(records: &[EpochRecord], window: usize) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::config("collision_rate needs at least one epoch record"));
    }
    if window == 0 || window > records.len() {
        return Err(Error::config(format!(
            "collision_rate window {window} must be in 1..={}",
            records.len()
        )));
    }
    let tail = &records[records.len() - window..];
    Ok(tail.iter().map(EpochRecord::collision_rate).sum::<f64>() / window as f64)
}

/// Trailing moving averages; entry `i` covers values `i..i + width`.
pub fn moving_average(values: &[f64], width: usize) -> Vec<f64> {
    if width == 0 || values.len() < width {
        return Vec::new();
    }
    values.windows(width).map(|w| w.iter().sum::<f64>() / width as f64).collect()
}

/// First epoch (1-based) from which the 10-epoch moving-average collision rate
/// changes by less than 0.05 for 10 consecutive epochs.
pub fn iterations_to_stability(records: &[EpochRecord]) -> Option<usize> {
    let rates: Vec<f64> = records.iter().map(EpochRecord::collision_rate).collect();
    stability_epoch(&rates)
}

/// [`iterations_to_stability`] on a bare per-epoch series.
pub fn stability_epoch(rates: &[f64]) -> Option<usize> {
    let ma = moving_average(rates, STABILITY_WINDOW);
    // ma[i] ends at epoch i + WINDOW, so the change ma[i] - ma[i-1] belongs to that epoch.
    let mut run = 0;
    for i in 1..ma.len() {
        if (ma[i] - ma[i - 1]).abs() < STABILITY_TOLERANCE {
            run += 1;
            if run == STABILITY_PERSISTENCE {
                let first = i + 1 - STABILITY_PERSISTENCE;
                return Some(first + STABILITY_WINDOW);
            }
        } else {
            run = 0;
        }
    }
    None
}

/// Collision rate over the stable window: from the stability epoch to the end,
/// or the final `fallback` epochs when the run never stabilizes.
pub fn stable_collision_rate(records: &[EpochRecord], fallback: usize) -> Result<f64> {
    match iterations_to_stability(records) {
        Some(e) => collision_rate(records, records.len() + 1 - e),
        None => collision_rate(records, fallback.min(records.len())),
    }
}

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
