//! Composite segmentation loss: class-weighted BCE plus soft Jaccard.
//!
//! Per channel `c`, with binary target `y` and predicted probabilities `yhat`
//! over `N` pixels:
//!
//! * `BCE^c = -(1/N) * sum_i [ y_i ln(yhat_i) + (1 - y_i) ln(1 - yhat_i) ]`,
//!   with `yhat` clamped to `[eps, 1 - eps]` inside the logs (the mean over
//!   pixels, not the sum, so the value is resolution-independent).
//! * `J^c = (1/N) * sum_i [ y_i yhat_i / (y_i + yhat_i - y_i yhat_i) ]`,
//!   where any term whose denominator falls below `eps` contributes 0.
//! * `L^c = (1 - alpha) * BCE^c - alpha * J^c`.
//!
//! The total loss averages `L^c` over channels with non-negative class
//! weights `v^c`: `L = (1/V) * sum_c v^c L^c`, `V = sum_c v^c`. Scaling all
//! weights by a positive constant leaves the total unchanged.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pmap::{ChannelName, PixelMap};

/// Default mixing coefficient between BCE and soft Jaccard.
pub const DEFAULT_ALPHA: f64 = 0.15;

/// Default clamp / degeneracy guard.
pub const DEFAULT_EPSILON: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("length mismatch: target has {target} values, prediction {pred}")]
    LengthMismatch { target: usize, pred: usize },
    #[error("empty input")]
    Empty,
    #[error("channel sets differ: target {target:?}, prediction {pred:?}")]
    ChannelMismatch {
        target: Vec<ChannelName>,
        pred: Vec<ChannelName>,
    },
    #[error("dimension mismatch: target {tw}x{th}, prediction {pw}x{ph}")]
    DimensionMismatch { tw: u32, th: u32, pw: u32, ph: u32 },
    #[error("alpha must be in [0, 1], got {0}")]
    BadAlpha(f64),
    #[error("epsilon must be in (0, 0.5), got {0}")]
    BadEpsilon(f64),
    #[error("class weight for {channel} must be finite and non-negative, got {weight}")]
    BadWeight { channel: ChannelName, weight: f64 },
    #[error("no class weight configured for channel {0}")]
    MissingWeight(ChannelName),
    #[error("class weights sum to zero over the map's channels")]
    ZeroWeightSum,
    #[error("threshold must be in [0, 1], got {0}")]
    BadThreshold(f64),
}

/// Configuration of the composite loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossConfig {
    /// Mixing coefficient: `(1 - alpha) * BCE - alpha * J`.
    pub alpha: f64,
    /// Per-channel weights for the total loss.
    pub class_weights: BTreeMap<ChannelName, f64>,
    /// Log clamp and Jaccard degeneracy guard.
    pub epsilon: f64,
}

impl Default for LossConfig {
    /// `alpha = 0.15`, weights Normal/Lymphocyte/Background 1 and Malignant 4
    /// (malignant masks dominate the objective), `epsilon = 1e-7`.
    fn default() -> Self {
        let mut class_weights = BTreeMap::new();
        class_weights.insert(ChannelName::Normal, 1.0);
        class_weights.insert(ChannelName::Lymphocyte, 1.0);
        class_weights.insert(ChannelName::Malignant, 4.0);
        class_weights.insert(ChannelName::Background, 1.0);
        LossConfig {
            alpha: DEFAULT_ALPHA,
            class_weights,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !self.alpha.is_finite() || !(0.0..=1.0).contains(&self.alpha) {
            return Err(LossError::BadAlpha(self.alpha));
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 || self.epsilon >= 0.5 {
            return Err(LossError::BadEpsilon(self.epsilon));
        }
        for (&channel, &weight) in &self.class_weights {
            if !weight.is_finite() || weight < 0.0 {
                return Err(LossError::BadWeight { channel, weight });
            }
        }
        Ok(())
    }

    fn weight(&self, channel: ChannelName) -> Result<f64, LossError> {
        self.class_weights
            .get(&channel)
            .copied()
            .ok_or(LossError::MissingWeight(channel))
    }
}

fn check_pair(target: &[f32], pred: &[f32]) -> Result<usize, LossError> {
    if target.len() != pred.len() {
        return Err(LossError::LengthMismatch {
            target: target.len(),
            pred: pred.len(),
        });
    }
    if target.is_empty() {
        return Err(LossError::Empty);
    }
    Ok(target.len())
}

/// Mean binary cross-entropy of one channel, with predictions clamped to
/// `[eps, 1 - eps]` inside the logarithms.
pub fn bce(target: &[f32], pred: &[f32], epsilon: f64) -> Result<f64, LossError> {
    let n = check_pair(target, pred)?;
    let mut sum = 0.0f64;
    for (&y, &p) in target.iter().zip(pred) {
        let y = y as f64;
        let p = (p as f64).clamp(epsilon, 1.0 - epsilon);
        sum += y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(-sum / n as f64)
}

/// Soft Jaccard of one channel: mean over pixels of
/// `y*yhat / (y + yhat - y*yhat)`, a term counting 0 when its denominator is
/// below `eps`. Equals 1 when prediction and binary target agree exactly.
pub fn soft_jaccard(target: &[f32], pred: &[f32], epsilon: f64) -> Result<f64, LossError> {
    let n = check_pair(target, pred)?;
    let mut sum = 0.0f64;
    for (&y, &p) in target.iter().zip(pred) {
        let (y, p) = (y as f64, p as f64);
        let denom = y + p - y * p;
        if denom >= epsilon {
            sum += y * p / denom;
        }
    }
    Ok(sum / n as f64)
}

/// Composite loss of one channel: `(1 - alpha) * BCE - alpha * J`.
pub fn class_loss(target: &[f32], pred: &[f32], config: &LossConfig) -> Result<f64, LossError> {
    config.validate()?;
    let b = bce(target, pred, config.epsilon)?;
    let j = soft_jaccard(target, pred, config.epsilon)?;
    Ok((1.0 - config.alpha) * b - config.alpha * j)
}

fn check_maps(target: &PixelMap, pred: &PixelMap) -> Result<(), LossError> {
    if target.width() != pred.width() || target.height() != pred.height() {
        return Err(LossError::DimensionMismatch {
            tw: target.width(),
            th: target.height(),
            pw: pred.width(),
            ph: pred.height(),
        });
    }
    let mut t: Vec<ChannelName> = target.channels().to_vec();
    let mut p: Vec<ChannelName> = pred.channels().to_vec();
    t.sort();
    p.sort();
    if t != p {
        return Err(LossError::ChannelMismatch {
            target: target.channels().to_vec(),
            pred: pred.channels().to_vec(),
        });
    }
    if t.is_empty() {
        return Err(LossError::Empty);
    }
    Ok(())
}

/// Class-weighted total loss over all channels of the two maps.
pub fn total_loss(target: &PixelMap, pred: &PixelMap, config: &LossConfig) -> Result<f64, LossError> {
    config.validate()?;
    check_maps(target, pred)?;
    let mut weighted = 0.0f64;
    let mut weight_sum = 0.0f64;
    for &channel in target.channels() {
        let v = config.weight(channel)?;
        let t = target.channel(channel).expect("checked");
        let p = pred.channel(channel).expect("checked");
        weighted += v * class_loss(t, p, config)?;
        weight_sum += v;
    }
    if weight_sum <= 0.0 {
        return Err(LossError::ZeroWeightSum);
    }
    Ok(weighted / weight_sum)
}

/// Signed per-pixel gradients of [`total_loss`] with respect to the predicted
/// map. Same layout as a [`PixelMap`], but values are unconstrained `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap {
    width: u32,
    height: u32,
    channels: Vec<ChannelName>,
    data: Vec<f64>,
}

impl GradientMap {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> &[ChannelName] {
        &self.channels
    }

    /// Row-major gradient values of one channel, if present.
    pub fn channel(&self, name: ChannelName) -> Option<&[f64]> {
        let ci = self.channels.iter().position(|c| *c == name)?;
        let per = (self.width as usize) * (self.height as usize);
        Some(&self.data[ci * per..(ci + 1) * per])
    }

    pub fn get(&self, name: ChannelName, x: u32, y: u32) -> f64 {
        assert!(x < self.width && y < self.height, "pixel out of bounds");
        let ch = self.channel(name).expect("channel not present");
        ch[(y as usize) * (self.width as usize) + x as usize]
    }
}

/// Analytic gradient of the total loss with respect to each predicted pixel.
///
/// Per channel `c` with weight `v^c` and `N` pixels, the pixel gradient is
/// `(v^c / V) * [ (1 - alpha) * dBCE_i - alpha * dJ_i ]` where
/// `dBCE_i = (1/N) * (-y_i / yhat_i + (1 - y_i) / (1 - yhat_i))` (0 where the
/// clamp saturates, i.e. `yhat` outside `(eps, 1 - eps)`), and
/// `dJ_i = (1/N) * y_i^2 / (y_i + yhat_i - y_i yhat_i)^2` (0 where the
/// denominator guard engages).
pub fn total_loss_grad(
    target: &PixelMap,
    pred: &PixelMap,
    config: &LossConfig,
) -> Result<GradientMap, LossError> {
    config.validate()?;
    check_maps(target, pred)?;
    let mut weight_sum = 0.0f64;
    for &channel in target.channels() {
        weight_sum += config.weight(channel)?;
    }
    if weight_sum <= 0.0 {
        return Err(LossError::ZeroWeightSum);
    }

    let per = target.pixel_count();
    let n = per as f64;
    let eps = config.epsilon;
    let alpha = config.alpha;
    let mut data = Vec::with_capacity(per * target.channels().len());
    for &channel in target.channels() {
        let v = config.weight(channel)?;
        let scale = v / weight_sum;
        let t = target.channel(channel).expect("checked");
        let p = pred.channel(channel).expect("checked");
        for (&y, &ph) in t.iter().zip(p) {
            let (y, ph) = (y as f64, ph as f64);
            let dbce = if ph > eps && ph < 1.0 - eps {
                (-y / ph + (1.0 - y) / (1.0 - ph)) / n
            } else {
                0.0
            };
            let denom = y + ph - y * ph;
            let dj = if denom >= eps {
                y * y / (denom * denom) / n
            } else {
                0.0
            };
            data.push(scale * ((1.0 - alpha) * dbce - alpha * dj));
        }
    }
    Ok(GradientMap {
        width: target.width(),
        height: target.height(),
        channels: target.channels().to_vec(),
        data,
    })
}

/// Hard Jaccard index per channel: prediction binarized at `threshold`,
/// compared against an already-binary truth map. Both-empty counts as 1.
pub fn jaccard_index(
    pred: &PixelMap,
    truth: &PixelMap,
    threshold: f64,
) -> Result<BTreeMap<ChannelName, f64>, LossError> {
    if !threshold.is_finite() || !(0.0..=1.0).contains(&threshold) {
        return Err(LossError::BadThreshold(threshold));
    }
    check_maps(truth, pred)?;
    let mut out = BTreeMap::new();
    for &channel in truth.channels() {
        let t = truth.channel(channel).expect("checked");
        let p = pred.channel(channel).expect("checked");
        let mut intersection = 0u64;
        let mut union = 0u64;
        for (&tv, &pv) in t.iter().zip(p) {
            let t_on = tv >= 0.5;
            let p_on = (pv as f64) >= threshold;
            if t_on && p_on {
                intersection += 1;
            }
            if t_on || p_on {
                union += 1;
            }
        }
        let j = if union == 0 {
            1.0
        } else {
            intersection as f64 / union as f64
        };
        out.insert(channel, j);
    }
    Ok(out)
}
