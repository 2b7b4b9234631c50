//! Fixed 81-dimensional feature extraction from nucleus probability maps.
//!
//! For each nucleus channel in order `[Normal, Lymphocyte, Malignant]`:
//!
//! * 7 area thresholds, each contributing `(area, activation)` — the count of
//!   pixels at or above the threshold and their summed values;
//! * 6 blob thresholds, each contributing `(blob_count, blob_activation)` from
//!   a single-scale Laplacian-of-Gaussian detector — the number of detected
//!   blobs whose center activation reaches the threshold and the sum of those
//!   center activations;
//! * 1 total activation (sum of the whole channel).
//!
//! That is `3 * (7*2 + 6*2 + 1) = 81` columns, in a fixed, versioned order.
//!
//! The blob detector smooths the channel with a Gaussian at scale `sigma`,
//! applies the scale-normalized negative Laplacian `sigma^2 * (-laplacian)`,
//! takes strict 8-neighborhood local maxima of positive response, suppresses
//! any maximum with a stronger one within distance `sigma`, and only then
//! gates on the probability value at the blob center. The default
//! `sigma = 15 / (2 sqrt 2)` is the scale at which a scale-normalized LoG
//! peaks for a disk of diameter 15 px, the nucleus-mask diameter; both that
//! choice and center-value gating are interpretations (the detector behind
//! the original feature set is not specified down to parameters), fixed here
//! so results are reproducible.

use serde::Serialize;
use thiserror::Error;

use crate::pmap::{ChannelName, PixelMap};

/// Thresholds for the area/activation statistics, ascending.
pub const AREA_THRESHOLDS: [f64; 7] = [0.02, 0.04, 0.08, 0.16, 0.24, 0.32, 0.5];

/// Thresholds for the blob features, ascending.
pub const BLOB_THRESHOLDS: [f64; 6] = [0.02, 0.04, 0.08, 0.16, 0.24, 0.5];

/// Channels contributing features, in canonical order.
pub const FEATURE_CHANNELS: [ChannelName; 3] = ChannelName::NUCLEUS;

/// Total number of features.
pub const FEATURE_COUNT: usize = 81;

/// Version tag of the canonical column order.
pub const FEATURE_SCHEMA_VERSION: u32 = 1;

/// Default blob scale: `15 / (2 sqrt 2)` px, matched to the 15-px nucleus disk.
pub const DEFAULT_BLOB_SIGMA: f64 = 7.5 / std::f64::consts::SQRT_2;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("required channel {0} missing from map")]
    MissingChannel(ChannelName),
    #[error("sigma must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error("blur kernel of {kernel} taps exceeds map size {width}x{height} (sigma {sigma})")]
    SigmaTooLarge {
        kernel: usize,
        width: u32,
        height: u32,
        sigma: f64,
    },
}

/// One detected Laplacian-of-Gaussian blob.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    /// Sub-pixel center coordinates, inside map bounds.
    pub cx: f64,
    pub cy: f64,
    /// Scale-normalized LoG magnitude at the (integer) maximum; always > 0.
    pub response: f64,
    /// Probability-map value at the pixel nearest to `(cx, cy)`.
    pub center_activation: f64,
}

/// Area and activation of one channel at one threshold:
/// `(|{i : v_i >= t}|, sum of those v_i)`.
pub fn threshold_stats(values: &[f32], t: f64) -> (usize, f64) {
    let mut area = 0usize;
    let mut activation = 0.0f64;
    for &v in values {
        if (v as f64) >= t {
            area += 1;
            activation += v as f64;
        }
    }
    (area, activation)
}

/// Sum of all values of one channel.
pub fn total_activation(values: &[f32]) -> f64 {
    values.iter().map(|&v| v as f64).sum()
}

/// Mirrors `i` into `[0, n)` about the edge pixels (reflect without repeating
/// the edge: -1 maps to 1, n maps to n-2). Valid for `|i| < 2n - 1`.
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let j = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    debug_assert!((0..n).contains(&j));
    j as usize
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (4.0 * sigma).ceil() as usize;
    let mut kernel = vec![0.0f64; 2 * radius + 1];
    let mut sum = 0.0f64;
    for (i, k) in kernel.iter_mut().enumerate() {
        let d = i as f64 - radius as f64;
        *k = (-d * d / (2.0 * sigma * sigma)).exp();
        sum += *k;
    }
    kernel.iter().map(|&k| (k / sum) as f32).collect()
}

/// Separable Gaussian blur, kernel truncated at `4 sigma`, reflective borders.
pub(crate) fn gaussian_blur(
    values: &[f32],
    width: usize,
    height: usize,
    sigma: f64,
) -> Result<Vec<f32>, FeatureError> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(FeatureError::BadSigma(sigma));
    }
    let kernel = gaussian_kernel(sigma);
    let taps = kernel.len();
    if taps > width || taps > height {
        return Err(FeatureError::SigmaTooLarge {
            kernel: taps,
            width: width as u32,
            height: height as u32,
            sigma,
        });
    }
    let radius = taps / 2;

    // Horizontal pass: each row padded by reflection, then accumulated one
    // kernel tap at a time over contiguous slices (vectorizes well).
    let mut mid = vec![0.0f32; width * height];
    let mut padded = vec![0.0f32; width + 2 * radius];
    for y in 0..height {
        let row = &values[y * width..(y + 1) * width];
        for (j, p) in padded.iter_mut().enumerate() {
            *p = row[reflect(j as i64 - radius as i64, width)];
        }
        let out = &mut mid[y * width..(y + 1) * width];
        for (k, &w) in kernel.iter().enumerate() {
            for (o, &p) in out.iter_mut().zip(&padded[k..k + width]) {
                *o += w * p;
            }
        }
    }

    // Vertical pass: whole rows at a time, sourcing reflected row indices.
    let mut out = vec![0.0f32; width * height];
    for (k, &w) in kernel.iter().enumerate() {
        for y in 0..height {
            let sy = reflect(y as i64 + k as i64 - radius as i64, height);
            let src = &mid[sy * width..(sy + 1) * width];
            let dst = &mut out[y * width..(y + 1) * width];
            for (o, &s) in dst.iter_mut().zip(src) {
                *o += w * s;
            }
        }
    }
    Ok(out)
}

/// Scale-normalized negative Laplacian of a smoothed map:
/// `sigma^2 * (4 c - left - right - up - down)`, reflective edges.
pub(crate) fn log_response(smoothed: &[f32], width: usize, height: usize, sigma: f64) -> Vec<f32> {
    let norm = (sigma * sigma) as f32;
    let mut response = vec![0.0f32; width * height];
    for y in 0..height {
        let up = reflect(y as i64 - 1, height);
        let down = reflect(y as i64 + 1, height);
        for x in 0..width {
            let left = reflect(x as i64 - 1, width);
            let right = reflect(x as i64 + 1, width);
            let c = smoothed[y * width + x];
            let lap = smoothed[y * width + left]
                + smoothed[y * width + right]
                + smoothed[up * width + x]
                + smoothed[down * width + x]
                - 4.0 * c;
            response[y * width + x] = -norm * lap;
        }
    }
    response
}

/// Sub-pixel offset of a 1-D quadratic fit through `(fm, f0, fp)`, clamped to
/// `[-0.5, 0.5]`; 0 when the parabola degenerates.
fn parabola_offset(fm: f32, f0: f32, fp: f32) -> f64 {
    let denom = fm as f64 + fp as f64 - 2.0 * f0 as f64;
    if denom >= 0.0 {
        return 0.0;
    }
    ((fm as f64 - fp as f64) / (2.0 * denom)).clamp(-0.5, 0.5)
}

/// All blob candidates of one channel, before threshold gating: strict
/// 8-neighborhood maxima of positive LoG response, sub-pixel refined, with
/// non-maximum suppression at radius `sigma` (a maximum is dropped when any
/// strictly stronger maximum lies within that distance). Scan order.
fn blob_candidates(
    values: &[f32],
    width: usize,
    height: usize,
    sigma: f64,
) -> Result<Vec<Blob>, FeatureError> {
    let smoothed = gaussian_blur(values, width, height, sigma)?;
    let response = log_response(&smoothed, width, height, sigma);

    let mut maxima: Vec<Blob> = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let v = response[y * width + x];
            if v <= 0.0 {
                continue;
            }
            let mut strict = true;
            'neigh: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        continue;
                    }
                    if response[ny as usize * width + nx as usize] >= v {
                        strict = false;
                        break 'neigh;
                    }
                }
            }
            if !strict {
                continue;
            }

            let ox = if x > 0 && x + 1 < width {
                parabola_offset(
                    response[y * width + x - 1],
                    v,
                    response[y * width + x + 1],
                )
            } else {
                0.0
            };
            let oy = if y > 0 && y + 1 < height {
                parabola_offset(
                    response[(y - 1) * width + x],
                    v,
                    response[(y + 1) * width + x],
                )
            } else {
                0.0
            };
            let cx = x as f64 + ox;
            let cy = y as f64 + oy;
            let px = (cx.round() as i64).clamp(0, width as i64 - 1) as usize;
            let py = (cy.round() as i64).clamp(0, height as i64 - 1) as usize;
            maxima.push(Blob {
                cx,
                cy,
                response: v as f64,
                center_activation: values[py * width + px] as f64,
            });
        }
    }

    // One-pass suppression: order-free, so equal responses never suppress
    // each other and the result cannot depend on iteration order.
    let r2 = sigma * sigma;
    let kept = maxima
        .iter()
        .filter(|b| {
            !maxima.iter().any(|o| {
                o.response > b.response
                    && (o.cx - b.cx).powi(2) + (o.cy - b.cy).powi(2) <= r2
            })
        })
        .cloned()
        .collect();
    Ok(kept)
}

/// Laplacian-of-Gaussian blobs of one channel whose center activation reaches
/// `t`. See the module docs for the detector definition.
pub fn log_blobs(
    map: &PixelMap,
    channel: ChannelName,
    t: f64,
    sigma: f64,
) -> Result<Vec<Blob>, FeatureError> {
    let values = map
        .channel(channel)
        .ok_or(FeatureError::MissingChannel(channel))?;
    let candidates = blob_candidates(values, map.width() as usize, map.height() as usize, sigma)?;
    Ok(candidates
        .into_iter()
        .filter(|b| b.center_activation >= t)
        .collect())
}

/// Families a feature column can belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureFamily {
    Area,
    Activation,
    BlobCount,
    BlobActivation,
    TotalActivation,
}

/// Description of one feature column in the canonical order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureDescriptor {
    /// Position in the vector, `0..81`.
    pub index: usize,
    /// CSV column name, `f000`..`f080`.
    pub column: String,
    pub channel: ChannelName,
    pub family: FeatureFamily,
    /// The threshold for thresholded families, absent for total activation.
    pub threshold: Option<f64>,
}

/// The canonical 81-column schema, in order.
pub fn feature_schema() -> Vec<FeatureDescriptor> {
    let mut schema = Vec::with_capacity(FEATURE_COUNT);
    let mut push = |channel, family, threshold| {
        let index = schema.len();
        schema.push(FeatureDescriptor {
            index,
            column: format!("f{index:03}"),
            channel,
            family,
            threshold,
        });
    };
    for channel in FEATURE_CHANNELS {
        for t in AREA_THRESHOLDS {
            push(channel, FeatureFamily::Area, Some(t));
            push(channel, FeatureFamily::Activation, Some(t));
        }
        for t in BLOB_THRESHOLDS {
            push(channel, FeatureFamily::BlobCount, Some(t));
            push(channel, FeatureFamily::BlobActivation, Some(t));
        }
        push(channel, FeatureFamily::TotalActivation, None);
    }
    schema
}

/// An extracted feature vector in the canonical column order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector81 {
    values: [f64; FEATURE_COUNT],
    schema_version: u32,
}

impl FeatureVector81 {
    pub fn new(values: [f64; FEATURE_COUNT]) -> Self {
        FeatureVector81 {
            values,
            schema_version: FEATURE_SCHEMA_VERSION,
        }
    }

    pub fn values(&self) -> &[f64; FEATURE_COUNT] {
        &self.values
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn schema_version(&self) -> u32 {
        self.schema_version
    }
}

/// Extracts the 81 features from the three nucleus channels of `map` (a
/// `Background` channel, if present, is ignored). Uses
/// [`DEFAULT_BLOB_SIGMA`]; errors if a nucleus channel is missing or the map
/// is too small for the blur kernel.
pub fn extract_features(map: &PixelMap) -> Result<FeatureVector81, FeatureError> {
    let mut values = [0.0f64; FEATURE_COUNT];
    let mut at = 0usize;
    let (width, height) = (map.width() as usize, map.height() as usize);
    for channel in FEATURE_CHANNELS {
        let data = map
            .channel(channel)
            .ok_or(FeatureError::MissingChannel(channel))?;
        for t in AREA_THRESHOLDS {
            let (area, activation) = threshold_stats(data, t);
            values[at] = area as f64;
            values[at + 1] = activation;
            at += 2;
        }
        let candidates = blob_candidates(data, width, height, DEFAULT_BLOB_SIGMA)?;
        for t in BLOB_THRESHOLDS {
            let mut count = 0usize;
            let mut activation = 0.0f64;
            for blob in &candidates {
                if blob.center_activation >= t {
                    count += 1;
                    activation += blob.center_activation;
                }
            }
            values[at] = count as f64;
            values[at + 1] = activation;
            at += 2;
        }
        values[at] = total_activation(data);
        at += 1;
    }
    debug_assert_eq!(at, FEATURE_COUNT);
    Ok(FeatureVector81::new(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{synthesize_masks, NucleusClass, PointAnnotation, PointAnnotationSet};

    fn disk_map(centers: &[(u32, u32)], width: u32, height: u32) -> PixelMap {
        let set = PointAnnotationSet {
            patch_id: "t".to_string(),
            points: centers
                .iter()
                .map(|&(x, y)| PointAnnotation {
                    x,
                    y,
                    class: NucleusClass::Malignant,
                })
                .collect(),
        };
        synthesize_masks(&set, width, height, 15).unwrap()
    }

    #[test]
    fn threshold_stats_on_uniform_map() {
        let values = vec![0.3f32; 256];
        let (area, activation) = threshold_stats(&values, 0.16);
        assert_eq!(area, 256);
        assert!((activation - 76.8).abs() < 1e-4);
        assert_eq!(activation, 256.0 * (0.3f32 as f64));
        assert_eq!(threshold_stats(&values, 0.32), (0, 0.0));
        assert_eq!(threshold_stats(&vec![0.0f32; 64], 0.02), (0, 0.0));
    }

    #[test]
    fn threshold_stats_matches_brute_force() {
        // Deterministic pseudo-random values; compare against an index-order scan.
        let values: Vec<f32> = (0..4096u32)
            .map(|i| {
                let h = i.wrapping_mul(2654435761) >> 8;
                (h % 10000) as f32 / 10000.0
            })
            .collect();
        for t in AREA_THRESHOLDS {
            let (area, activation) = threshold_stats(&values, t);
            let mut oracle_area = 0usize;
            let mut oracle_act = 0.0f64;
            for &v in &values {
                if (v as f64) >= t {
                    oracle_area += 1;
                    oracle_act += v as f64;
                }
            }
            assert_eq!(area, oracle_area);
            assert_eq!(activation.to_bits(), oracle_act.to_bits());
        }
    }

    #[test]
    fn activation_bounds() {
        let values: Vec<f32> = (0..1000).map(|i| (i as f32) / 999.0).collect();
        let total = total_activation(&values);
        for t in AREA_THRESHOLDS {
            let (area, activation) = threshold_stats(&values, t);
            assert!(activation <= area as f64 + 1e-12);
            assert!(activation >= t * area as f64 - 1e-12);
            assert!(activation <= total + 1e-12);
        }
    }

    #[test]
    fn blur_is_normalized_and_rejects_oversized_kernels() {
        // A constant map is a fixed point of a normalized kernel with
        // reflective borders.
        let constant = vec![0.37f32; 64 * 64];
        let blurred = gaussian_blur(&constant, 64, 64, DEFAULT_BLOB_SIGMA).unwrap();
        for &v in &blurred {
            assert!((v - 0.37).abs() < 1e-5, "{v}");
        }

        // Arbitrary input: every output is a convex combination of inputs.
        let values: Vec<f32> = (0..64 * 64).map(|i| ((i % 97) as f32) / 96.0).collect();
        let blurred = gaussian_blur(&values, 64, 64, DEFAULT_BLOB_SIGMA).unwrap();
        for &v in &blurred {
            assert!((-1e-5..=1.0 + 1e-5).contains(&(v as f64)), "{v}");
        }

        // 45-tap kernel cannot fit a 32-wide map.
        assert!(matches!(
            gaussian_blur(&values[..32 * 32], 32, 32, DEFAULT_BLOB_SIGMA).unwrap_err(),
            FeatureError::SigmaTooLarge { kernel: 45, .. }
        ));
        assert!(matches!(
            gaussian_blur(&values, 64, 64, -1.0).unwrap_err(),
            FeatureError::BadSigma(_)
        ));
    }

    #[test]
    fn log_blobs_on_zero_map_is_empty() {
        let map = PixelMap::zeros(64, 64, vec![ChannelName::Malignant]).unwrap();
        let blobs = log_blobs(&map, ChannelName::Malignant, 0.02, DEFAULT_BLOB_SIGMA).unwrap();
        assert!(blobs.is_empty());
    }

    #[test]
    fn log_blobs_finds_single_disk_center() {
        let map = disk_map(&[(32, 32)], 64, 64);
        let blobs = log_blobs(&map, ChannelName::Malignant, 0.5, DEFAULT_BLOB_SIGMA).unwrap();
        assert_eq!(blobs.len(), 1, "blobs: {blobs:?}");
        let b = &blobs[0];
        assert!((b.cx - 32.0).abs() <= 1.0 && (b.cy - 32.0).abs() <= 1.0, "{b:?}");
        assert!(b.response > 0.0);
        assert_eq!(b.center_activation, 1.0);
    }

    #[test]
    fn log_blobs_separates_two_disks() {
        let map = disk_map(&[(17, 32), (47, 32)], 64, 64);
        let blobs = log_blobs(&map, ChannelName::Malignant, 0.5, DEFAULT_BLOB_SIGMA).unwrap();
        assert_eq!(blobs.len(), 2, "blobs: {blobs:?}");
        let mut xs: Vec<f64> = blobs.iter().map(|b| b.cx).collect();
        xs.sort_by(f64::total_cmp);
        assert!((xs[0] - 17.0).abs() <= 1.0);
        assert!((xs[1] - 47.0).abs() <= 1.0);
    }

    #[test]
    fn log_blobs_missing_channel_errors() {
        let map = PixelMap::zeros(64, 64, vec![ChannelName::Normal]).unwrap();
        assert!(matches!(
            log_blobs(&map, ChannelName::Malignant, 0.1, DEFAULT_BLOB_SIGMA).unwrap_err(),
            FeatureError::MissingChannel(ChannelName::Malignant)
        ));
    }

    #[test]
    fn schema_has_81_versioned_columns() {
        let schema = feature_schema();
        assert_eq!(schema.len(), FEATURE_COUNT);
        for (i, d) in schema.iter().enumerate() {
            assert_eq!(d.index, i);
            assert_eq!(d.column, format!("f{i:03}"));
        }
        // Channel blocks of 27 in canonical order; Malignant occupies 54..81.
        for d in &schema[..27] {
            assert_eq!(d.channel, ChannelName::Normal);
        }
        for d in &schema[54..] {
            assert_eq!(d.channel, ChannelName::Malignant);
        }
        // Per-channel block layout: area/activation pairs, blob pairs, total.
        assert_eq!(schema[0].family, FeatureFamily::Area);
        assert_eq!(schema[0].threshold, Some(0.02));
        assert_eq!(schema[1].family, FeatureFamily::Activation);
        assert_eq!(schema[13].family, FeatureFamily::Activation);
        assert_eq!(schema[13].threshold, Some(0.5));
        assert_eq!(schema[14].family, FeatureFamily::BlobCount);
        assert_eq!(schema[14].threshold, Some(0.02));
        assert_eq!(schema[25].family, FeatureFamily::BlobActivation);
        assert_eq!(schema[25].threshold, Some(0.5));
        assert_eq!(schema[26].family, FeatureFamily::TotalActivation);
        assert_eq!(schema[26].threshold, None);
    }

    #[test]
    fn extract_on_zero_map_is_all_zero() {
        let map = PixelMap::zeros(64, 64, ChannelName::ALL.to_vec()).unwrap();
        let features = extract_features(&map).unwrap();
        assert!(features.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(features.schema_version(), FEATURE_SCHEMA_VERSION);
    }

    #[test]
    fn extract_single_malignant_disk() {
        let map = disk_map(&[(32, 32)], 64, 64);
        let features = extract_features(&map).unwrap();
        let v = features.values();
        // Normal and Lymphocyte blocks are all zero.
        assert!(v[..54].iter().all(|&x| x == 0.0));
        let schema = feature_schema();
        for d in &schema[54..] {
            match d.family {
                // Binary disk: area 177 and activation 177 at every threshold.
                FeatureFamily::Area | FeatureFamily::Activation => {
                    assert_eq!(v[d.index], 177.0, "{d:?}")
                }
                // One blob with center activation 1.0 at every blob threshold.
                FeatureFamily::BlobCount => assert_eq!(v[d.index], 1.0, "{d:?}"),
                FeatureFamily::BlobActivation => assert_eq!(v[d.index], 1.0, "{d:?}"),
                FeatureFamily::TotalActivation => assert_eq!(v[d.index], 177.0, "{d:?}"),
            }
        }
    }

    #[test]
    fn extract_requires_nucleus_channels() {
        let map = PixelMap::zeros(64, 64, vec![ChannelName::Normal, ChannelName::Malignant]).unwrap();
        assert!(matches!(
            extract_features(&map).unwrap_err(),
            FeatureError::MissingChannel(ChannelName::Lymphocyte)
        ));
    }

    #[test]
    fn blob_count_is_monotone_in_threshold() {
        // A soft map with two disks of different peak values.
        let crisp = disk_map(&[(20, 20), (44, 44)], 64, 64);
        let mut data = Vec::new();
        for &name in crisp.channels() {
            data.extend_from_slice(crisp.channel(name).unwrap());
        }
        // Halve the second disk's values by rebuilding the malignant channel.
        let per = 64 * 64;
        let mal_start = 2 * per;
        for y in 30..64 {
            for x in 30..64 {
                data[mal_start + y * 64 + x] *= 0.4;
            }
        }
        let map = PixelMap::new(64, 64, crisp.channels().to_vec(), data).unwrap();
        let mut previous = usize::MAX;
        for t in BLOB_THRESHOLDS {
            let count = log_blobs(&map, ChannelName::Malignant, t, DEFAULT_BLOB_SIGMA)
                .unwrap()
                .len();
            assert!(count <= previous, "count not monotone at t={t}");
            previous = count;
        }
        // The 0.4-peak disk passes t=0.24 but not t=0.5.
        assert_eq!(
            log_blobs(&map, ChannelName::Malignant, 0.24, DEFAULT_BLOB_SIGMA).unwrap().len(),
            2
        );
        assert_eq!(
            log_blobs(&map, ChannelName::Malignant, 0.5, DEFAULT_BLOB_SIGMA).unwrap().len(),
            1
        );
    }

    #[test]
    fn flips_preserve_pointwise_features_and_blob_count() {
        let map = disk_map(&[(15, 20), (40, 45), (50, 12)], 64, 64);
        let flipped_data: Vec<f32> = map
            .channels()
            .iter()
            .flat_map(|&c| {
                let ch = map.channel(c).unwrap();
                let mut out = Vec::with_capacity(ch.len());
                for y in 0..64 {
                    for x in 0..64 {
                        out.push(ch[y * 64 + (63 - x)]);
                    }
                }
                out
            })
            .collect();
        let flipped = PixelMap::new(64, 64, map.channels().to_vec(), flipped_data).unwrap();
        let a = extract_features(&map).unwrap();
        let b = extract_features(&flipped).unwrap();
        let schema = feature_schema();
        for d in &schema {
            match d.family {
                FeatureFamily::BlobActivation => {} // may differ at sub-pixel gating edges
                _ => assert_eq!(
                    a.values()[d.index],
                    b.values()[d.index],
                    "flip changed {d:?}"
                ),
            }
        }
    }
}
