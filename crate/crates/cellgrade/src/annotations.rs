//! Point annotations of nucleus centers and weak-label mask synthesis.
//!
//! Ground truth arrives as a CSV of per-patch nucleus centers with a class
//! label. [`synthesize_masks`] turns one patch's points into a four-channel
//! binary mask: a fixed-diameter disk around every center, unioned per class,
//! with `Background` as the complement of all nucleus disks.

use std::collections::HashMap;
use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pmap::{ChannelName, PixelMap, PmapError};

/// Nucleus classes a point annotation can carry (no `Background`: background
/// is defined as the absence of nuclei, never annotated directly).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NucleusClass {
    Normal,
    Lymphocyte,
    Malignant,
}

impl NucleusClass {
    pub const ALL: [NucleusClass; 3] = [
        NucleusClass::Normal,
        NucleusClass::Lymphocyte,
        NucleusClass::Malignant,
    ];

    /// The probability-map channel this class writes to.
    pub fn channel(self) -> ChannelName {
        match self {
            NucleusClass::Normal => ChannelName::Normal,
            NucleusClass::Lymphocyte => ChannelName::Lymphocyte,
            NucleusClass::Malignant => ChannelName::Malignant,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NucleusClass::Normal => "Normal",
            NucleusClass::Lymphocyte => "Lymphocyte",
            NucleusClass::Malignant => "Malignant",
        }
    }
}

impl fmt::Display for NucleusClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NucleusClass {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "Normal" => Ok(NucleusClass::Normal),
            "Lymphocyte" => Ok(NucleusClass::Lymphocyte),
            "Malignant" => Ok(NucleusClass::Malignant),
            _ => Err(()),
        }
    }
}

/// One annotated nucleus center, in pixel coordinates of the patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PointAnnotation {
    pub x: u32,
    pub y: u32,
    pub class: NucleusClass,
}

/// All annotated centers of one patch, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointAnnotationSet {
    pub patch_id: String,
    pub points: Vec<PointAnnotation>,
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad header: expected columns patch_id,x,y,class, got {0:?}")]
    BadHeader(Vec<String>),
    #[error("row {row}: expected 4 fields, got {got}")]
    FieldCount { row: u64, got: usize },
    #[error("row {row}: empty patch_id")]
    EmptyPatchId { row: u64 },
    #[error("row {row}: expected non-negative integer coordinate, got {value:?}")]
    BadCoordinate { row: u64, value: String },
    #[error("row {row}: unknown class token {token:?}")]
    UnknownClass { row: u64, token: String },
    #[error("row {row}: point ({x}, {y}) outside patch bounds {width}x{height}")]
    OutOfBounds {
        row: u64,
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },
    #[error("point {index} at ({x}, {y}) outside patch bounds {width}x{height}")]
    PointOutOfBounds {
        index: usize,
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },
    #[error("disk diameter must be at least 1")]
    ZeroDiameter,
    #[error(transparent)]
    Map(#[from] PmapError),
}

/// Parses an annotation CSV (`patch_id,x,y,class`), grouping rows into one
/// [`PointAnnotationSet`] per patch in order of first appearance. Row order
/// within a patch is preserved. Errors carry 1-based file line numbers.
pub fn parse_annotations(path: impl AsRef<Path>) -> Result<Vec<PointAnnotationSet>, AnnotationError> {
    let file = std::fs::File::open(path)?;
    parse_reader(file, None)
}

/// Like [`parse_annotations`], additionally rejecting any point at or beyond
/// the given patch bounds.
pub fn parse_annotations_bounded(
    path: impl AsRef<Path>,
    width: u32,
    height: u32,
) -> Result<Vec<PointAnnotationSet>, AnnotationError> {
    let file = std::fs::File::open(path)?;
    parse_reader(file, Some((width, height)))
}

fn parse_reader(
    reader: impl io::Read,
    bounds: Option<(u32, u32)>,
) -> Result<Vec<PointAnnotationSet>, AnnotationError> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers: Vec<String> = csv.headers()?.iter().map(str::to_string).collect();
    if headers != ["patch_id", "x", "y", "class"] {
        return Err(AnnotationError::BadHeader(headers));
    }

    let mut sets: Vec<PointAnnotationSet> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for record in csv.records() {
        let record = record?;
        let row = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(AnnotationError::FieldCount {
                row,
                got: record.len(),
            });
        }
        let patch_id = record[0].to_string();
        if patch_id.is_empty() {
            return Err(AnnotationError::EmptyPatchId { row });
        }
        let x = parse_coord(&record[1], row)?;
        let y = parse_coord(&record[2], row)?;
        if let Some((width, height)) = bounds {
            if x >= width || y >= height {
                return Err(AnnotationError::OutOfBounds {
                    row,
                    x,
                    y,
                    width,
                    height,
                });
            }
        }
        let class: NucleusClass = record[3].parse().map_err(|()| AnnotationError::UnknownClass {
            row,
            token: record[3].to_string(),
        })?;

        let slot = *index.entry(patch_id.clone()).or_insert_with(|| {
            sets.push(PointAnnotationSet {
                patch_id,
                points: Vec::new(),
            });
            sets.len() - 1
        });
        sets[slot].points.push(PointAnnotation { x, y, class });
    }
    Ok(sets)
}

fn parse_coord(field: &str, row: u64) -> Result<u32, AnnotationError> {
    field.trim().parse::<u32>().map_err(|_| AnnotationError::BadCoordinate {
        row,
        value: field.to_string(),
    })
}

/// Rasterizes one patch's point annotations into a four-channel binary mask.
///
/// Every annotated center contributes a filled disk of the given diameter in
/// its class channel (pixel `(px, py)` is inside when
/// `(px-x)^2 + (py-y)^2 <= (diameter/2)^2`); overlapping disks union. Disks
/// are clipped at the patch border. `Background` is 1 exactly where all three
/// nucleus channels are 0.
pub fn synthesize_masks(
    annotations: &PointAnnotationSet,
    width: u32,
    height: u32,
    diameter: u32,
) -> Result<PixelMap, AnnotationError> {
    if diameter == 0 {
        return Err(AnnotationError::ZeroDiameter);
    }
    if width == 0 || height == 0 {
        return Err(AnnotationError::Map(PmapError::ZeroDimension { width, height }));
    }
    for (index, p) in annotations.points.iter().enumerate() {
        if p.x >= width || p.y >= height {
            return Err(AnnotationError::PointOutOfBounds {
                index,
                x: p.x,
                y: p.y,
                width,
                height,
            });
        }
    }

    let (w, h) = (width as usize, height as usize);
    let per = w * h;
    // Channel-major data in canonical order Normal, Lymphocyte, Malignant, Background.
    let mut data = vec![0.0f32; per * 4];
    let radius = (diameter as f64) / 2.0;
    let r2 = radius * radius;
    let reach = radius.floor() as i64;

    for p in &annotations.points {
        let ci = match p.class {
            NucleusClass::Normal => 0usize,
            NucleusClass::Lymphocyte => 1,
            NucleusClass::Malignant => 2,
        };
        let (cx, cy) = (p.x as i64, p.y as i64);
        for dy in -reach..=reach {
            let py = cy + dy;
            if py < 0 || py >= height as i64 {
                continue;
            }
            for dx in -reach..=reach {
                let px = cx + dx;
                if px < 0 || px >= width as i64 {
                    continue;
                }
                if (dx * dx + dy * dy) as f64 <= r2 {
                    data[ci * per + (py as usize) * w + px as usize] = 1.0;
                }
            }
        }
    }
    for i in 0..per {
        let occupied = data[i] > 0.0 || data[per + i] > 0.0 || data[2 * per + i] > 0.0;
        data[3 * per + i] = if occupied { 0.0 } else { 1.0 };
    }
    let map = PixelMap::new(width, height, ChannelName::ALL.to_vec(), data)?;
    Ok(map)
}
