//! Implementations of the subcommands.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cellgrade::annotations::{parse_annotations_bounded, synthesize_masks};
use cellgrade::features::{extract_features, feature_schema, FEATURE_SCHEMA_VERSION};
use cellgrade::gbt::{fit, GbtModel, GbtParams};
use cellgrade::loss::{total_loss, total_loss_grad, LossConfig};
use cellgrade::metrics::{self, bin4, ScorePair, ScorePairSet};
use cellgrade::pmap::{ChannelName, PixelMap};
use cellgrade::synth::{emit_dataset, generate, SynthParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{FileConfig, Global};
use crate::tables;
use crate::{
    EvaluateArgs, ExtractArgs, GenSynthArgs, LossCheckArgs, PredictArgs, SynthMasksArgs, TrainArgs,
};

#[derive(Serialize)]
struct RunManifest<C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: C,
}

/// Records the resolved configuration next to the command's output. The
/// manifest deliberately omits --threads and --quiet: neither may influence
/// any output byte.
fn write_manifest(path: &Path, command: &'static str, config: impl Serialize) -> Result<()> {
    let manifest = RunManifest {
        tool: "cellgrade",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).context("serializing manifest")?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// `<path>` with `suffix` appended to the file name.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    Ok(())
}

pub fn synth_masks(args: SynthMasksArgs, file: &FileConfig, global: &Global) -> Result<()> {
    #[derive(Serialize)]
    struct Resolved {
        annotations: String,
        width: u32,
        height: u32,
        diameter: u32,
        out_dir: String,
    }

    let section = &file.synth_masks;
    let width = args
        .width
        .or(section.width)
        .context("--width is required (flag or config)")?;
    let height = args
        .height
        .or(section.height)
        .context("--height is required (flag or config)")?;
    let diameter = args.diameter.or(section.diameter).unwrap_or(15);

    let sets = parse_annotations_bounded(&args.annotations, width, height)
        .with_context(|| format!("parsing {}", args.annotations.display()))?;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    for set in &sets {
        let masks = synthesize_masks(set, width, height, diameter)
            .with_context(|| format!("rasterizing patch {}", set.patch_id))?;
        masks
            .save(args.out_dir.join(format!("{}.pmap", set.patch_id)))
            .with_context(|| format!("writing mask for patch {}", set.patch_id))?;
    }
    write_manifest(
        &args.out_dir.join("run.manifest.json"),
        "synth-masks",
        Resolved {
            annotations: args.annotations.display().to_string(),
            width,
            height,
            diameter,
            out_dir: args.out_dir.display().to_string(),
        },
    )?;
    if !global.quiet {
        eprintln!("wrote {} masks to {}", sets.len(), args.out_dir.display());
    }
    Ok(())
}

pub fn extract(args: ExtractArgs, global: &Global) -> Result<()> {
    #[derive(Serialize)]
    struct Resolved {
        maps_dir: String,
        targets: Option<String>,
        out: String,
    }
    #[derive(Serialize)]
    struct SchemaFile {
        schema_version: u32,
        features: Vec<String>,
    }

    let entries: Vec<PathBuf> = std::fs::read_dir(&args.maps_dir)
        .with_context(|| format!("reading {}", args.maps_dir.display()))?
        .map(|entry| entry.map(|e| e.path()))
        .collect::<std::io::Result<Vec<PathBuf>>>()?;
    let mut paths: Vec<PathBuf> = entries
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "pmap"))
        .collect();
    paths.sort();

    let targets = match &args.targets {
        Some(path) => {
            let rows = tables::read_targets(path)?;
            Some((path, rows.into_iter().collect::<HashMap<String, f64>>()))
        }
        None => None,
    };

    type Extracted = (String, (u32, u32), Vec<f64>);
    let rows: Vec<Result<Extracted>> = paths
        .par_iter()
        .map(|path| {
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
                bail!("map file name {} is not valid UTF-8", path.display());
            };
            let map =
                PixelMap::load(path).with_context(|| format!("loading {}", path.display()))?;
            let features = extract_features(&map)
                .with_context(|| format!("extracting features from {}", path.display()))?;
            Ok((
                id.to_string(),
                (map.width(), map.height()),
                features.values().to_vec(),
            ))
        })
        .collect();
    let mut extracted = Vec::with_capacity(rows.len());
    for row in rows {
        extracted.push(row?);
    }
    if let Some(first) = extracted.first() {
        let first_dims = first.1;
        if let Some(offender) = extracted.iter().find(|r| r.1 != first_dims) {
            bail!(
                "mixed patch dimensions: {} is {}x{} but {} is {}x{}",
                extracted[0].0,
                first_dims.0,
                first_dims.1,
                offender.0,
                offender.1 .0,
                offender.1 .1,
            );
        }
    }

    let schema = feature_schema();
    let feature_names: Vec<String> = schema.iter().map(|d| d.column.clone()).collect();

    ensure_parent(&args.out)?;
    let mut writer = csv::Writer::from_path(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut header: Vec<&str> = Vec::with_capacity(feature_names.len() + 2);
    header.push("patch_id");
    header.extend(feature_names.iter().map(String::as_str));
    if targets.is_some() {
        header.push("target");
    }
    writer.write_record(&header)?;
    for (id, _, values) in &extracted {
        let mut record: Vec<String> = Vec::with_capacity(header.len());
        record.push(id.clone());
        record.extend(values.iter().map(f64::to_string));
        if let Some((path, map)) = &targets {
            let Some(target) = map.get(id) else {
                bail!("no target for patch {id} in {}", path.display());
            };
            record.push(target.to_string());
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;

    let schema_bytes = serde_json::to_vec_pretty(&SchemaFile {
        schema_version: FEATURE_SCHEMA_VERSION,
        features: feature_names,
    })?;
    let schema_path = sibling(&args.out, ".schema.json");
    std::fs::write(&schema_path, [schema_bytes, vec![b'\n']].concat())
        .with_context(|| format!("writing {}", schema_path.display()))?;

    write_manifest(
        &sibling(&args.out, ".manifest.json"),
        "extract",
        Resolved {
            maps_dir: args.maps_dir.display().to_string(),
            targets: args.targets.as_ref().map(|p| p.display().to_string()),
            out: args.out.display().to_string(),
        },
    )?;
    if !global.quiet {
        eprintln!("extracted features for {} patches", extracted.len());
    }
    Ok(())
}

pub fn train(args: TrainArgs, file: &FileConfig, global: &Global) -> Result<()> {
    #[derive(Serialize)]
    struct Resolved {
        features: String,
        rounds: usize,
        lr: f64,
        max_depth: usize,
        max_leaves: usize,
        min_leaf: usize,
        seed: u64,
        out: String,
    }

    let section = &file.train;
    let defaults = GbtParams::default();
    let params = GbtParams {
        n_rounds: args.rounds.or(section.rounds).unwrap_or(defaults.n_rounds as u64) as usize,
        learning_rate: args.lr.or(section.lr).unwrap_or(defaults.learning_rate),
        max_depth: args.max_depth.or(section.max_depth).unwrap_or(defaults.max_depth as u64)
            as usize,
        max_leaves: args
            .max_leaves
            .or(section.max_leaves)
            .unwrap_or(defaults.max_leaves as u64) as usize,
        min_samples_leaf: args
            .min_leaf
            .or(section.min_leaf)
            .unwrap_or(defaults.min_samples_leaf as u64) as usize,
        seed: global.seed,
    };

    let table = tables::read_features(&args.features)?;
    let Some(targets) = table.targets.as_ref() else {
        bail!(
            "{} has no target column; extract with --targets to train",
            args.features.display()
        );
    };
    let model = fit(&table.matrix, targets, &params).context("training")?;
    ensure_parent(&args.out)?;
    model
        .save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;

    let mut sum_sq = 0.0f64;
    for (i, target) in targets.iter().enumerate() {
        let prediction = model.predict(table.matrix.row(i))?;
        sum_sq += (prediction - target) * (prediction - target);
    }
    let training_mse = sum_sq / targets.len().max(1) as f64;

    println!("training mse: {training_mse}");
    println!("top importance:");
    for (index, gain) in model.feature_importance().into_iter().take(10) {
        let name = table
            .feature_names
            .get(index)
            .map(String::as_str)
            .unwrap_or("?");
        println!("  {name} {gain}");
    }

    write_manifest(
        &sibling(&args.out, ".manifest.json"),
        "train",
        Resolved {
            features: args.features.display().to_string(),
            rounds: params.n_rounds,
            lr: params.learning_rate,
            max_depth: params.max_depth,
            max_leaves: params.max_leaves,
            min_leaf: params.min_samples_leaf,
            seed: params.seed,
            out: args.out.display().to_string(),
        },
    )?;
    if !global.quiet {
        eprintln!(
            "trained {} rounds on {} rows",
            model.trees().len(),
            table.matrix.n_rows()
        );
    }
    Ok(())
}

pub fn predict(args: PredictArgs, global: &Global) -> Result<()> {
    #[derive(Serialize)]
    struct Resolved {
        model: String,
        features: String,
        out: String,
    }
    #[derive(Deserialize)]
    struct SchemaFile {
        schema_version: u32,
    }

    let model = GbtModel::load(&args.model)
        .with_context(|| format!("loading {}", args.model.display()))?;
    let schema_path = sibling(&args.features, ".schema.json");
    if schema_path.exists() {
        let schema: SchemaFile = serde_json::from_str(
            &std::fs::read_to_string(&schema_path)
                .with_context(|| format!("reading {}", schema_path.display()))?,
        )
        .with_context(|| format!("parsing {}", schema_path.display()))?;
        if schema.schema_version != FEATURE_SCHEMA_VERSION {
            bail!(
                "feature schema version {} does not match the model's supported version {}",
                schema.schema_version,
                FEATURE_SCHEMA_VERSION
            );
        }
    }
    let table = tables::read_features(&args.features)?;
    if table.matrix.width() != model.n_features() {
        bail!(
            "feature schema mismatch: {} has {} feature columns but the model expects {}",
            args.features.display(),
            table.matrix.width(),
            model.n_features()
        );
    }

    ensure_parent(&args.out)?;
    let mut writer = csv::Writer::from_path(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    writer.write_record(["patch_id", "prediction"])?;
    for (i, id) in table.ids.iter().enumerate() {
        let prediction = model.predict(table.matrix.row(i))?;
        writer.write_record([id.as_str(), &prediction.to_string()])?;
    }
    writer.flush()?;

    write_manifest(
        &sibling(&args.out, ".manifest.json"),
        "predict",
        Resolved {
            model: args.model.display().to_string(),
            features: args.features.display().to_string(),
            out: args.out.display().to_string(),
        },
    )?;
    if !global.quiet {
        eprintln!("scored {} rows", table.ids.len());
    }
    Ok(())
}

pub fn evaluate(args: EvaluateArgs, file: &FileConfig, global: &Global) -> Result<()> {
    #[derive(Serialize)]
    struct Resolved {
        predictions: String,
        targets: String,
        n_boot: usize,
        seed: u64,
        out: String,
    }

    let n_boot = args.n_boot.or(file.evaluate.n_boot).unwrap_or(2000) as usize;
    let per_patch_path = args.out.with_extension("csv");
    if per_patch_path == args.out {
        bail!("--out must not use the .csv extension; that name is taken by the per-patch table");
    }

    let predictions = tables::read_predictions(&args.predictions)?;
    let targets: HashMap<String, f64> = tables::read_targets(&args.targets)?.into_iter().collect();
    let mut ids = Vec::with_capacity(predictions.len());
    let mut pairs = Vec::with_capacity(predictions.len());
    for (id, predicted) in predictions {
        let Some(&reference) = targets.get(&id) else {
            bail!("no reference score for patch {id} in {}", args.targets.display());
        };
        pairs.push(ScorePair {
            predicted,
            reference,
        });
        ids.push(id);
    }
    let set = ScorePairSet::with_ids(pairs, ids).context("assembling score pairs")?;
    let report = metrics::evaluate(&set, n_boot, global.seed).context("computing metrics")?;

    ensure_parent(&args.out)?;
    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    std::fs::write(&args.out, bytes).with_context(|| format!("writing {}", args.out.display()))?;

    let mut writer = csv::Writer::from_path(&per_patch_path)
        .with_context(|| format!("creating {}", per_patch_path.display()))?;
    writer.write_record(["patch_id", "predicted", "reference", "bin_pred", "bin_ref"])?;
    let ids = set.ids().expect("ids were provided");
    for (id, pair) in ids.iter().zip(set.pairs()) {
        writer.write_record([
            id.as_str(),
            &pair.predicted.to_string(),
            &pair.reference.to_string(),
            &bin4(pair.predicted)?.to_string(),
            &bin4(pair.reference)?.to_string(),
        ])?;
    }
    writer.flush()?;

    println!(
        "n={} mse={} kappa4={} icc21={}",
        report.n, report.mse.point, report.kappa4.point, report.icc21.point
    );
    write_manifest(
        &sibling(&args.out, ".manifest.json"),
        "evaluate",
        Resolved {
            predictions: args.predictions.display().to_string(),
            targets: args.targets.display().to_string(),
            n_boot,
            seed: global.seed,
            out: args.out.display().to_string(),
        },
    )?;
    Ok(())
}

pub fn gen_synth(args: GenSynthArgs, file: &FileConfig, global: &Global) -> Result<()> {
    #[derive(Serialize)]
    struct Resolved<'a> {
        n: usize,
        out_dir: String,
        params: &'a SynthParams,
    }

    let section = &file.gen_synth;
    let d = SynthParams::default();
    let params = SynthParams {
        width: args.width.or(section.width).unwrap_or(d.width),
        height: args.height.or(section.height).unwrap_or(d.height),
        diameter: args.diameter.or(section.diameter).unwrap_or(d.diameter),
        normal_range: args.normal_range.or(section.normal_range).unwrap_or(d.normal_range),
        lymphocyte_range: args
            .lymphocyte_range
            .or(section.lymphocyte_range)
            .unwrap_or(d.lymphocyte_range),
        malignant_range: args
            .malignant_range
            .or(section.malignant_range)
            .unwrap_or(d.malignant_range),
        min_separation: args
            .min_separation
            .or(section.min_separation)
            .unwrap_or(d.min_separation),
        softness_sigma: args
            .softness_sigma
            .or(section.softness_sigma)
            .unwrap_or(d.softness_sigma),
        map_noise_sigma: args
            .map_noise_sigma
            .or(section.map_noise_sigma)
            .unwrap_or(d.map_noise_sigma),
        label_noise_sigma: args
            .label_noise_sigma
            .or(section.label_noise_sigma)
            .unwrap_or(d.label_noise_sigma),
        cellularity_scale: args
            .cellularity_scale
            .or(section.cellularity_scale)
            .unwrap_or(d.cellularity_scale),
        seed: global.seed,
    };
    let n = args.n as usize;

    let patches = generate(&params, n).context("generating patches")?;
    emit_dataset(&patches, &args.out_dir, &params)
        .with_context(|| format!("writing dataset to {}", args.out_dir.display()))?;
    write_manifest(
        &args.out_dir.join("run.manifest.json"),
        "gen-synth",
        Resolved {
            n,
            out_dir: args.out_dir.display().to_string(),
            params: &params,
        },
    )?;
    if !global.quiet {
        eprintln!("wrote {n} synthetic patches to {}", args.out_dir.display());
    }
    Ok(())
}

pub fn loss_check(args: LossCheckArgs, file: &FileConfig, global: &Global) -> Result<()> {
    let section = &file.loss_check;
    let size = args.size.or(section.size).unwrap_or(16);
    let trials = args.trials.or(section.trials).unwrap_or(1000);
    let config = LossConfig {
        alpha: args
            .alpha
            .or(section.alpha)
            .unwrap_or(cellgrade::loss::DEFAULT_ALPHA),
        ..LossConfig::default()
    };
    config.validate().context("loss configuration")?;

    let channels = ChannelName::ALL.to_vec();
    let n_px = (size as usize) * (size as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(global.seed);
    let mut worst = 0.0f64;
    for trial in 0..trials {
        // Alternate binary and smooth targets; keep predictions away from the
        // clamp region so the finite difference stays two-sided.
        let binary = trial % 2 == 0;
        let tdata: Vec<f32> = (0..4 * n_px)
            .map(|_| {
                if binary {
                    if rng.random::<f64>() < 0.5 {
                        0.0
                    } else {
                        1.0
                    }
                } else {
                    rng.random()
                }
            })
            .collect();
        let pdata: Vec<f32> = (0..4 * n_px).map(|_| rng.random_range(0.02f32..0.98)).collect();
        let target = PixelMap::new(size, size, channels.clone(), tdata)?;
        let pred = PixelMap::new(size, size, channels.clone(), pdata.clone())?;

        let ci = rng.random_range(0..channels.len());
        let pi = rng.random_range(0..n_px);
        let flat = ci * n_px + pi;

        let grad = total_loss_grad(&target, &pred, &config)?;
        let analytic = grad.channel(channels[ci]).expect("channel present")[pi];

        // Perturb by the actually representable f32 steps.
        let base = pdata[flat] as f64;
        let x_plus = (base + 1e-5) as f32;
        let x_minus = (base - 1e-5) as f32;
        let mut up = pdata.clone();
        up[flat] = x_plus;
        let mut down = pdata.clone();
        down[flat] = x_minus;
        let loss_up = total_loss(&target, &PixelMap::new(size, size, channels.clone(), up)?, &config)?;
        let loss_down =
            total_loss(&target, &PixelMap::new(size, size, channels.clone(), down)?, &config)?;
        let fd = (loss_up - loss_down) / (x_plus as f64 - x_minus as f64);

        let scale = analytic.abs().max(fd.abs()).max(1e-10);
        let rel = (analytic - fd).abs() / scale;
        if rel > worst {
            worst = rel;
        }
    }

    let mut stdout = std::io::stdout().lock();
    writeln!(
        stdout,
        "worst relative gradient error: {worst:e} over {trials} coordinates"
    )?;
    if worst >= 1e-4 {
        bail!("gradient check failed: worst relative error {worst:e} >= 1e-4");
    }
    Ok(())
}
