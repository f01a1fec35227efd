//! Evaluation metrics: Otsu segmentation, contrast-to-noise ratio, and the
//! detection-rate / precision / F-measure triple.

use crate::error::{CoreError, Result};
use crate::real::Real;
use crate::video::VideoSequence;
use ndarray::{Array2, Array3, ArrayView2};

const OTSU_BINS: usize = 256;

/// Otsu threshold over a 256-bin histogram: picks the split maximizing the
/// between-class variance (lowest bin index on ties). Returns the bin index
/// of the split; values in bins above the index are foreground.
fn otsu_split(histogram: &[u64; OTSU_BINS]) -> usize {
    let total: u64 = histogram.iter().sum();
    let weighted_sum: f64 = histogram
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();

    let mut best_k = 0usize;
    let mut best_var = f64::NEG_INFINITY;
    let mut w0 = 0.0f64;
    let mut sum0 = 0.0f64;
    for k in 0..OTSU_BINS - 1 {
        w0 += histogram[k] as f64;
        sum0 += k as f64 * histogram[k] as f64;
        let w1 = total as f64 - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (weighted_sum - sum0) / w1;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if var > best_var {
            best_var = var;
            best_k = k;
        }
    }
    best_k
}

fn bin_of(v: f64, min: f64, span: f64) -> usize {
    (((v - min) / span * OTSU_BINS as f64) as usize).min(OTSU_BINS - 1)
}

/// Otsu segmentation of an arbitrary value collection. Returns the per-value
/// foreground flags (in iteration order) and the threshold value (upper edge
/// of the last background bin). Errors on constant input.
pub fn otsu_values<T: Real>(values: &[T]) -> Result<(Vec<bool>, f64)> {
    let min = values.iter().map(|v| v.acc()).fold(f64::INFINITY, f64::min);
    let max = values
        .iter()
        .map(|v| v.acc())
        .fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || !(max > min) {
        return Err(CoreError::Undefined(
            "otsu needs at least two distinct values".into(),
        ));
    }
    let span = max - min;
    let mut histogram = [0u64; OTSU_BINS];
    for v in values {
        histogram[bin_of(v.acc(), min, span)] += 1;
    }
    let k = otsu_split(&histogram);
    let threshold = min + (k + 1) as f64 / OTSU_BINS as f64 * span;
    let mask = values
        .iter()
        .map(|v| bin_of(v.acc(), min, span) > k)
        .collect();
    Ok((mask, threshold))
}

/// Otsu segmentation of a video volume.
pub fn otsu_video<T: Real>(video: &VideoSequence<T>) -> Result<(Array3<bool>, f64)> {
    let values: Vec<T> = video.data().iter().cloned().collect();
    let (flags, threshold) = otsu_values(&values)?;
    let mask = Array3::from_shape_vec(video.data().dim(), flags)
        .expect("flag count equals element count");
    Ok((mask, threshold))
}

/// Contrast-to-noise ratio `|mu_V - mu_B| / sqrt(var_B + var_V)` with
/// population (biased) variances. Errors if the masks overlap, either region
/// is empty, or the denominator vanishes.
pub fn cnr<T: Real>(
    frame: ArrayView2<T>,
    vessel_mask: &Array2<bool>,
    background_mask: &Array2<bool>,
) -> Result<f64> {
    if vessel_mask.dim() != frame.dim() || background_mask.dim() != frame.dim() {
        return Err(CoreError::Contract("cnr mask shape mismatch".into()));
    }
    if vessel_mask
        .iter()
        .zip(background_mask.iter())
        .any(|(&a, &b)| a && b)
    {
        return Err(CoreError::Contract("cnr regions must be disjoint".into()));
    }
    let stats = |mask: &Array2<bool>| -> Option<(f64, f64)> {
        let mut n = 0.0f64;
        let mut sum = 0.0f64;
        for (v, &m) in frame.iter().zip(mask.iter()) {
            if m {
                n += 1.0;
                sum += v.acc();
            }
        }
        if n == 0.0 {
            return None;
        }
        let mean = sum / n;
        let mut var = 0.0f64;
        for (v, &m) in frame.iter().zip(mask.iter()) {
            if m {
                let d = v.acc() - mean;
                var += d * d;
            }
        }
        Some((mean, var / n))
    };
    let (mu_v, var_v) = stats(vessel_mask)
        .ok_or_else(|| CoreError::Undefined("cnr vessel region is empty".into()))?;
    let (mu_b, var_b) = stats(background_mask)
        .ok_or_else(|| CoreError::Undefined("cnr background region is empty".into()))?;
    let denom = (var_b + var_v).sqrt();
    if denom == 0.0 {
        return Err(CoreError::Undefined(
            "cnr undefined: both regions are constant".into(),
        ));
    }
    Ok((mu_v - mu_b).abs() / denom)
}

/// Width of the local background neighbourhood around vessels, in pixels
/// (chessboard metric).
pub const LOCAL_BG_WIDTH: usize = 7;

/// Background regions for CNR evaluation: the global region is the complement
/// of the vessel mask; the local region is the 7-pixel chessboard dilation of
/// the vessel mask minus the mask itself.
pub fn background_regions(vessel_mask: &Array2<bool>) -> Result<(Array2<bool>, Array2<bool>)> {
    let (h, w) = vessel_mask.dim();
    if !vessel_mask.iter().any(|&m| m) {
        return Err(CoreError::Undefined("vessel mask is empty".into()));
    }
    let global = vessel_mask.mapv(|m| !m);
    if !global.iter().any(|&m| m) {
        return Err(CoreError::Undefined(
            "vessel mask covers the whole image".into(),
        ));
    }
    let r = LOCAL_BG_WIDTH as isize;
    let mut dilated = Array2::from_elem((h, w), false);
    for y in 0..h as isize {
        for x in 0..w as isize {
            if vessel_mask[[y as usize, x as usize]] {
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (ny, nx) = (y + dy, x + dx);
                        if ny >= 0 && ny < h as isize && nx >= 0 && nx < w as isize {
                            dilated[[ny as usize, nx as usize]] = true;
                        }
                    }
                }
            }
        }
    }
    let mut local = dilated;
    for (l, &v) in local.iter_mut().zip(vessel_mask.iter()) {
        *l = *l && !v;
    }
    Ok((global, local))
}

/// Pixel classification counts against a ground-truth mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }

    /// Tallies a predicted mask against ground truth.
    pub fn from_masks(pred: &Array3<bool>, truth: &Array3<bool>) -> Result<Self> {
        if pred.dim() != truth.dim() {
            return Err(CoreError::Contract("confusion mask shape mismatch".into()));
        }
        let mut c = ConfusionCounts::default();
        for (&p, &t) in pred.iter().zip(truth.iter()) {
            match (p, t) {
                (true, true) => c.true_pos += 1,
                (true, false) => c.false_pos += 1,
                (false, false) => c.true_neg += 1,
                (false, true) => c.false_neg += 1,
            }
        }
        Ok(c)
    }
}

/// Detection rate, precision and F-measure. Each zero denominator is
/// signalled as its own error.
pub fn dr_p_f(counts: &ConfusionCounts) -> Result<(f64, f64, f64)> {
    let tp = counts.true_pos as f64;
    if counts.true_pos + counts.false_neg == 0 {
        return Err(CoreError::Undefined(
            "detection rate undefined: no ground-truth foreground".into(),
        ));
    }
    if counts.true_pos + counts.false_pos == 0 {
        return Err(CoreError::Undefined(
            "precision undefined: no predicted foreground".into(),
        ));
    }
    let dr = tp / (tp + counts.false_neg as f64);
    let p = tp / (tp + counts.false_pos as f64);
    if dr + p == 0.0 {
        return Err(CoreError::Undefined(
            "f-measure undefined: detection rate and precision are both zero".into(),
        ));
    }
    let f = 2.0 * dr * p / (dr + p);
    Ok((dr, p, f))
}

/// Evaluation summary for one decomposed sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub cnr_global: f64,
    pub cnr_local: f64,
    pub dr: f64,
    pub precision: f64,
    pub f_measure: f64,
    pub mse: f64,
    pub loss_curve: Vec<f64>,
}

/// Per-frame CNR of a vessel-layer video against the planted mask, averaged
/// over frames where the mask is nonempty and the ratio is defined.
/// Returns (global, local).
pub fn cnr_sequence<T: Real>(
    vessel_layer: &VideoSequence<T>,
    planted_mask: &Array3<bool>,
) -> Result<(f64, f64)> {
    let (h, w, frames) = vessel_layer.data().dim();
    if planted_mask.dim() != (h, w, frames) {
        return Err(CoreError::Contract("cnr mask shape mismatch".into()));
    }
    let mut sums = (0.0f64, 0.0f64);
    let mut counts = (0usize, 0usize);
    for t in 0..frames {
        let frame = vessel_layer.data().index_axis(ndarray::Axis(2), t);
        let mask = Array2::from_shape_fn((h, w), |(y, x)| planted_mask[[y, x, t]]);
        let regions = match background_regions(&mask) {
            Ok(r) => r,
            Err(_) => continue, // frame without vessels yet
        };
        if let Ok(v) = cnr(frame.view(), &mask, &regions.0) {
            sums.0 += v;
            counts.0 += 1;
        }
        if let Ok(v) = cnr(frame.view(), &mask, &regions.1) {
            sums.1 += v;
            counts.1 += 1;
        }
    }
    if counts.0 == 0 || counts.1 == 0 {
        return Err(CoreError::Undefined(
            "cnr undefined on every frame of the sequence".into(),
        ));
    }
    Ok((sums.0 / counts.0 as f64, sums.1 / counts.1 as f64))
}
