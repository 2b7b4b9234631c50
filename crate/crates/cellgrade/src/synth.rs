//! Synthetic patch generator for exercising the pipeline end to end.
//!
//! Patches are unions of blurred nucleus disks plus clamped Gaussian noise —
//! deliberately not tissue-realistic. The ground-truth cellularity is an area
//! fraction of the malignant disk union, which makes the feature set provably
//! informative and gives training runs a known irreducible error floor (label
//! noise). Generation parallelizes across patches with per-patch derived
//! seeds, so output never depends on thread count.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{
    synthesize_masks, AnnotationError, NucleusClass, PointAnnotation, PointAnnotationSet,
};
use crate::features::{gaussian_blur, FeatureError};
use crate::pmap::{ChannelName, PixelMap, PmapError};
use crate::seeding::derive_rng;

const SYNTH_STREAM: u64 = 0x5EED;
/// Placement attempts per nucleus before giving up on a patch.
const MAX_PLACEMENT_ATTEMPTS: u32 = 1000;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("patch dimensions {width}x{height} below the 64-pixel minimum")]
    BadDims { width: u32, height: u32 },
    #[error("nucleus diameter must be at least 1")]
    BadDiameter,
    #[error("count range for {class} has lo {lo} > hi {hi}")]
    BadRange { class: NucleusClass, lo: u32, hi: u32 },
    #[error("sigma {0} must be finite and non-negative")]
    BadSigma(f64),
    #[error("minimum separation {0} must be finite and non-negative")]
    BadSeparation(f64),
    #[error("cellularity scale {0} must be finite and positive")]
    BadScale(f64),
    #[error(
        "patch {patch_id}: placed {placed} of {requested} nuclei before running out of room"
    )]
    TooCrowded {
        patch_id: String,
        placed: usize,
        requested: usize,
    },
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Blur(#[from] FeatureError),
    #[error(transparent)]
    Map(#[from] PmapError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
}

/// Generator configuration. Count ranges are inclusive `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub width: u32,
    pub height: u32,
    /// Nucleus disk diameter in pixels.
    pub diameter: u32,
    pub normal_range: (u32, u32),
    pub lymphocyte_range: (u32, u32),
    pub malignant_range: (u32, u32),
    /// Minimum Euclidean distance between any two nucleus centers.
    pub min_separation: f64,
    /// Gaussian blur applied to each mask channel (0 disables).
    pub softness_sigma: f64,
    /// Additive Gaussian pixel noise, clamped back to `[0, 1]` (0 disables).
    pub map_noise_sigma: f64,
    /// Additive Gaussian noise on the cellularity target (0 disables).
    pub label_noise_sigma: f64,
    /// Multiplier from malignant area fraction to cellularity score.
    pub cellularity_scale: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            width: 256,
            height: 256,
            diameter: 15,
            normal_range: (0, 30),
            lymphocyte_range: (0, 40),
            malignant_range: (0, 70),
            min_separation: 8.0,
            softness_sigma: 1.0,
            map_noise_sigma: 0.02,
            label_noise_sigma: 0.02,
            cellularity_scale: 5.0,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.width < 64 || self.height < 64 {
            return Err(SynthError::BadDims {
                width: self.width,
                height: self.height,
            });
        }
        if self.diameter == 0 {
            return Err(SynthError::BadDiameter);
        }
        for (class, (lo, hi)) in [
            (NucleusClass::Normal, self.normal_range),
            (NucleusClass::Lymphocyte, self.lymphocyte_range),
            (NucleusClass::Malignant, self.malignant_range),
        ] {
            if lo > hi {
                return Err(SynthError::BadRange { class, lo, hi });
            }
        }
        for sigma in [
            self.softness_sigma,
            self.map_noise_sigma,
            self.label_noise_sigma,
        ] {
            if !sigma.is_finite() || sigma < 0.0 {
                return Err(SynthError::BadSigma(sigma));
            }
        }
        if !self.min_separation.is_finite() || self.min_separation < 0.0 {
            return Err(SynthError::BadSeparation(self.min_separation));
        }
        if !self.cellularity_scale.is_finite() || self.cellularity_scale <= 0.0 {
            return Err(SynthError::BadScale(self.cellularity_scale));
        }
        Ok(())
    }
}

/// One generated patch: the 4-channel map, its exact nucleus centers, and the
/// cellularity target.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPatch {
    pub maps: PixelMap,
    pub annotations: PointAnnotationSet,
    /// `clamp(area_fraction * scale + label_noise, 0, 1)` — the training target.
    pub true_cellularity: f64,
    /// `area_fraction * scale` before label noise and clamping; can exceed 1
    /// when the scale overshoots.
    pub pre_noise_cellularity: f64,
    /// Pixel count of the malignant disk union (before blur and noise).
    pub malignant_pixels: usize,
}

fn sample_count(rng: &mut impl Rng, (lo, hi): (u32, u32)) -> u32 {
    rng.random_range(lo..=hi)
}

fn place_nuclei(
    rng: &mut impl Rng,
    params: &SynthParams,
    patch_id: &str,
    counts: [(NucleusClass, u32); 3],
) -> Result<Vec<PointAnnotation>, SynthError> {
    let requested: usize = counts.iter().map(|&(_, c)| c as usize).sum();
    let min_sep2 = params.min_separation * params.min_separation;
    let mut points: Vec<PointAnnotation> = Vec::with_capacity(requested);
    for (class, count) in counts {
        for _ in 0..count {
            let mut placed = false;
            for _ in 0..MAX_PLACEMENT_ATTEMPTS {
                let x = rng.random_range(0..params.width);
                let y = rng.random_range(0..params.height);
                let clear = points.iter().all(|p| {
                    let dx = x as f64 - p.x as f64;
                    let dy = y as f64 - p.y as f64;
                    dx * dx + dy * dy >= min_sep2
                });
                if clear {
                    points.push(PointAnnotation { x, y, class });
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(SynthError::TooCrowded {
                    patch_id: patch_id.to_owned(),
                    placed: points.len(),
                    requested,
                });
            }
        }
    }
    Ok(points)
}

/// Generates the patch at `index` of the sequence defined by `params.seed`.
/// `generate` is exactly the concatenation of `generate_one` over `0..n`.
pub fn generate_one(params: &SynthParams, index: usize) -> Result<SynthPatch, SynthError> {
    params.validate()?;
    let mut rng = derive_rng(params.seed, SYNTH_STREAM, index as u64);
    let patch_id = format!("p{index:04}");

    let counts = [
        (NucleusClass::Normal, sample_count(&mut rng, params.normal_range)),
        (
            NucleusClass::Lymphocyte,
            sample_count(&mut rng, params.lymphocyte_range),
        ),
        (
            NucleusClass::Malignant,
            sample_count(&mut rng, params.malignant_range),
        ),
    ];
    let points = place_nuclei(&mut rng, params, &patch_id, counts)?;
    let annotations = PointAnnotationSet {
        patch_id,
        points,
    };
    let masks = synthesize_masks(&annotations, params.width, params.height, params.diameter)?;
    let malignant_pixels = masks
        .channel(ChannelName::Malignant)
        .expect("mask has all channels")
        .iter()
        .filter(|&&v| v > 0.5)
        .count();

    let label_noise = if params.label_noise_sigma > 0.0 {
        Normal::new(0.0, params.label_noise_sigma)
            .expect("validated sigma")
            .sample(&mut rng)
    } else {
        0.0
    };

    let width = params.width as usize;
    let height = params.height as usize;
    let mut data: Vec<f32> = Vec::with_capacity(4 * width * height);
    for channel in ChannelName::ALL {
        let plane = masks.channel(channel).expect("mask has all channels");
        if params.softness_sigma > 0.0 {
            data.extend(gaussian_blur(plane, width, height, params.softness_sigma)?);
        } else {
            data.extend_from_slice(plane);
        }
    }
    if params.map_noise_sigma > 0.0 {
        let noise = Normal::new(0.0, params.map_noise_sigma).expect("validated sigma");
        for v in &mut data {
            *v = (*v as f64 + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32;
        }
    }
    let maps = PixelMap::new(
        params.width,
        params.height,
        ChannelName::ALL.to_vec(),
        data,
    )?;

    let area_fraction = malignant_pixels as f64 / (width * height) as f64;
    let pre_noise_cellularity = area_fraction * params.cellularity_scale;
    let true_cellularity = (pre_noise_cellularity + label_noise).clamp(0.0, 1.0);

    Ok(SynthPatch {
        maps,
        annotations,
        true_cellularity,
        pre_noise_cellularity,
        malignant_pixels,
    })
}

/// Generates `n` patches in parallel. Deterministic for a given
/// `params.seed`, independent of thread count.
pub fn generate(params: &SynthParams, n: usize) -> Result<Vec<SynthPatch>, SynthError> {
    params.validate()?;
    let results: Vec<Result<SynthPatch, SynthError>> = (0..n)
        .into_par_iter()
        .map(|index| generate_one(params, index))
        .collect();
    let mut patches = Vec::with_capacity(n);
    for r in results {
        patches.push(r?);
    }
    Ok(patches)
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    params: SynthParams,
    n_patches: usize,
}

/// Writes a dataset directory: `maps/<patch_id>.pmap`, `annotations.csv`,
/// `targets.csv` (patch_id, true_cellularity), and `manifest.json` with the
/// generator parameters. Everything re-loads bit-exactly through the regular
/// readers.
pub fn emit_dataset(
    patches: &[SynthPatch],
    dir: &Path,
    params: &SynthParams,
) -> Result<(), SynthError> {
    let maps_dir = dir.join("maps");
    std::fs::create_dir_all(&maps_dir)?;

    for patch in patches {
        patch
            .maps
            .save(maps_dir.join(format!("{}.pmap", patch.annotations.patch_id)))?;
    }

    let mut annotations = csv::Writer::from_path(dir.join("annotations.csv"))?;
    annotations.write_record(["patch_id", "x", "y", "class"])?;
    for patch in patches {
        for p in &patch.annotations.points {
            annotations.write_record([
                patch.annotations.patch_id.as_str(),
                &p.x.to_string(),
                &p.y.to_string(),
                p.class.as_str(),
            ])?;
        }
    }
    annotations.flush()?;

    let mut targets = csv::Writer::from_path(dir.join("targets.csv"))?;
    targets.write_record(["patch_id", "true_cellularity"])?;
    for patch in patches {
        targets.write_record([
            patch.annotations.patch_id.as_str(),
            &patch.true_cellularity.to_string(),
        ])?;
    }
    targets.flush()?;

    let manifest = DatasetManifest {
        params: params.clone(),
        n_patches: patches.len(),
    };
    let file = File::create(dir.join("manifest.json"))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
