//! Estimation of residual tumor cellularity from nucleus probability maps.
//!
//! The pipeline, end to end:
//!
//! 1. [`annotations`] turns point-annotated nucleus centers into weak-label
//!    disk masks ([`pmap`] holds the multi-channel probability maps and their
//!    on-disk container format).
//! 2. [`loss`] scores predicted maps against those masks with a class-weighted
//!    binary-cross-entropy + soft-Jaccard composite, including the analytic
//!    gradient used to train a segmentation model.
//! 3. [`features`] reduces a three-class probability map to an 81-dimensional
//!    vector of threshold statistics and Laplacian-of-Gaussian blob features.
//! 4. [`gbt`] fits gradient-boosted regression trees from those vectors to a
//!    cellularity score in `[0, 1]`.
//! 5. [`metrics`] quantifies agreement with reference scores: MSE, Cohen's
//!    kappa on four cellularity bins, ICC(2,1), and bootstrap intervals.
//! 6. [`synth`] generates seeded synthetic datasets so the whole chain can be
//!    exercised and verified without clinical data.
//!
//! Everything is deterministic given a seed: parallel code paths preserve
//! ordering, and no result depends on thread count.

pub mod annotations;
pub mod features;
pub mod gbt;
pub mod loss;
pub mod metrics;
pub mod pmap;
pub mod synth;

mod seeding;

pub use annotations::{AnnotationError, NucleusClass, PointAnnotation, PointAnnotationSet};
pub use features::{Blob, FeatureDescriptor, FeatureFamily, FeatureVector81, FEATURE_COUNT};
pub use gbt::{GbtModel, GbtParams};
pub use loss::{GradientMap, LossConfig};
pub use metrics::{CellularityBin, EvalReport, ScorePair, ScorePairSet};
pub use pmap::{ChannelName, PixelMap, PmapError};
pub use synth::{SynthParams, SynthPatch};
