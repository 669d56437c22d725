use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use eyemark::checkpoint::Checkpoint;
use eyemark::config::Config;
use eyemark::data::manifest::{
    self, load_samples, read_manifest, split_by_source, write_manifest, BuildReport, Summary, IMAGE_EXTENSIONS,
};
use eyemark::heatmap::render_overlay;
use eyemark::image::Image;
use eyemark::infer::predict_images;
use eyemark::landmarks::{LandmarkSet, Point, NUM_LANDMARKS};
use eyemark::metrics;
use eyemark::model::Model;
use eyemark::plot::save_ced_plot;
use eyemark::train::{log_csv, Sample, Trainer};
use log::info;
use serde::{Deserialize, Serialize};

use crate::stage::Stage;
use crate::Common;

/// One entry of a predictions file.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct Prediction {
    image: String,
    points: [Point; NUM_LANDMARKS],
}

fn resolve(common: &Common, threshold: Option<f64>) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = threshold {
        cfg.eval.threshold = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn record_config(cfg: &Config, stage: &Stage) -> Result<()> {
    let text = cfg.to_toml()?;
    info!("resolved config:\n{}", text.trim_end());
    fs::write(stage.path().join("resolved.toml"), text)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn manifest_base(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

/// Path key with empty and `.` segments removed.
fn path_key(s: &str) -> String {
    s.split('/').filter(|c| !c.is_empty() && *c != ".").collect::<Vec<_>>().join("/")
}

fn write_build(stage: &Stage, report: &BuildReport) -> Result<()> {
    write_manifest(&stage.path().join("manifest.jsonl"), &report.records)?;
    let skipped: String = report.skipped.iter().map(|s| format!("{}: {}\n", s.path, s.reason)).collect();
    fs::write(stage.path().join("skipped.txt"), skipped)?;
    Ok(())
}

pub fn preprocess(common: &Common, input: &Path) -> Result<ExitCode> {
    let cfg = resolve(common, None)?;
    if !input.is_dir() {
        bail!("{} is not a directory", input.display());
    }
    let stage = Stage::new(&common.out_dir, "preprocess")?;
    record_config(&cfg, &stage)?;
    let report = manifest::preprocess(input, stage.path(), cfg.data.size)?;
    write_build(&stage, &report)?;
    let dest = stage.commit()?;
    info!(
        "{} records ({} skipped) in {}",
        report.records.len(),
        report.skipped.len(),
        dest.join("manifest.jsonl").display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn augment(common: &Common, manifest_path: &Path) -> Result<ExitCode> {
    let cfg = resolve(common, None)?;
    let records = read_manifest(manifest_path)?;
    let stage = Stage::new(&common.out_dir, "augment")?;
    record_config(&cfg, &stage)?;
    let report = manifest::augment_manifest(&records, manifest_base(manifest_path), stage.path(), &cfg.data.augment())?;
    write_build(&stage, &report)?;
    let table = Summary::of(&report.records).table();
    fs::write(stage.path().join("summary.txt"), &table)?;
    let dest = stage.commit()?;
    print!("{table}");
    info!("{} records in {}", report.records.len(), dest.join("manifest.jsonl").display());
    Ok(ExitCode::SUCCESS)
}

fn check_sizes(samples: &[Sample], size: usize) -> Result<()> {
    for s in samples {
        if s.image.shape()[1..] != [size, size] {
            bail!(
                "manifest image is {}x{}, but data.size is {size}; preprocess with the same configuration",
                s.image.shape()[2],
                s.image.shape()[1]
            );
        }
    }
    Ok(())
}

pub fn train(common: &Common, manifest_path: &Path) -> Result<ExitCode> {
    let cfg = resolve(common, None)?;
    let records = read_manifest(manifest_path)?;
    if records.is_empty() {
        bail!("{} has no records", manifest_path.display());
    }
    let (train_records, val_records) = split_by_source(&records, cfg.train.val_fraction, cfg.seed);
    let base = manifest_base(manifest_path);
    let train = load_samples(&train_records, base)?;
    let val = load_samples(&val_records, base)?;
    check_sizes(&train, cfg.data.size)?;
    check_sizes(&val, cfg.data.size)?;
    let model = Model::new(cfg.model.clone())?;

    let stage = Stage::new(&common.out_dir, "train")?;
    record_config(&cfg, &stage)?;
    let split: String = val_records.iter().map(|r| format!("{}\n", r.image)).collect();
    fs::write(stage.path().join("validation.txt"), split)?;
    info!(
        "{} training samples, {} validation samples, {} parameters",
        train.len(),
        val.len(),
        model.specs().param_count()
    );
    let trainer = Trainer {
        model: &model,
        loss: &cfg.loss,
        cfg: &cfg.train,
        seed: cfg.seed,
    };
    let outcome = trainer.run(model.init(cfg.seed)?, &train, &val, |_, _| {})?;
    fs::write(stage.path().join("log.csv"), log_csv(&outcome.log))?;
    Checkpoint {
        model: cfg.model.clone(),
        input_size: cfg.data.size,
        store: outcome.store,
    }
    .save(&stage.path().join("checkpoint.json"))?;
    let dest = stage.commit()?;
    if let Some(e) = outcome.halted {
        eprintln!(
            "error: training halted: {e}; the last good checkpoint is {}",
            dest.join("checkpoint.json").display()
        );
        return Ok(ExitCode::from(3));
    }
    info!("checkpoint written to {}", dest.join("checkpoint.json").display());
    Ok(ExitCode::SUCCESS)
}

/// Named images from a file, a directory (recursively) or a manifest.
fn collect_inputs(input: &Path) -> Result<Vec<(String, PathBuf)>> {
    fn is_image(p: &Path) -> bool {
        p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
    }
    fn walk(dir: &Path, base: &Path, out: &mut Vec<(String, PathBuf)>) -> Result<()> {
        for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                walk(&path, base, out)?;
            } else if is_image(&path) {
                let rel = path.strip_prefix(base).unwrap_or(&path);
                let name = rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy().into_owned())
                    .collect::<Vec<_>>()
                    .join("/");
                out.push((name, path));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    if input.is_dir() {
        walk(input, input, &mut out)?;
        out.sort();
    } else if input.extension().is_some_and(|e| e == "jsonl") {
        let base = manifest_base(input);
        out = read_manifest(input)?
            .into_iter()
            .map(|r| (r.image.clone(), base.join(&r.image)))
            .collect();
    } else if is_image(input) {
        let name = input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        out.push((name, input.to_path_buf()));
    } else {
        bail!("{} is not an image, a directory or a .jsonl manifest", input.display());
    }
    if out.is_empty() {
        bail!("no images found in {}", input.display());
    }
    Ok(out)
}

fn load_images(inputs: &[(String, PathBuf)]) -> Result<Vec<Image>> {
    inputs
        .iter()
        .map(|(_, p)| Image::load(p).with_context(|| format!("loading {}", p.display())))
        .collect()
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, Model)> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let model = Model::new(ck.model.clone())?;
    Ok((ck, model))
}

fn run_inference(cfg: &Config, checkpoint: &Path, inputs: &[(String, PathBuf)]) -> Result<Vec<eyemark::infer::Inference>> {
    let (ck, model) = load_checkpoint(checkpoint)?;
    let images = load_images(inputs)?;
    Ok(predict_images(&model, &ck.store, &images, ck.input_size, cfg.train.batch_size)?)
}

pub fn infer(common: &Common, checkpoint: &Path, input: &Path) -> Result<ExitCode> {
    let cfg = resolve(common, None)?;
    let inputs = collect_inputs(input)?;
    let results = run_inference(&cfg, checkpoint, &inputs)?;
    let preds: Vec<Prediction> = inputs
        .iter()
        .zip(&results)
        .map(|((name, _), r)| Prediction {
            image: name.clone(),
            points: r.landmarks.points,
        })
        .collect();
    let stage = Stage::new(&common.out_dir, "infer")?;
    record_config(&cfg, &stage)?;
    write_json(&stage.path().join("predictions.json"), &preds)?;
    let dest = stage.commit()?;
    info!("{} predictions in {}", preds.len(), dest.join("predictions.json").display());
    Ok(ExitCode::SUCCESS)
}

pub fn render(common: &Common, checkpoint: &Path, input: &Path) -> Result<ExitCode> {
    let cfg = resolve(common, None)?;
    let inputs = collect_inputs(input)?;
    let results = run_inference(&cfg, checkpoint, &inputs)?;
    let stage = Stage::new(&common.out_dir, "render")?;
    record_config(&cfg, &stage)?;
    for ((name, _), r) in inputs.iter().zip(&results) {
        let path = stage.path().join(path_key(name)).with_extension("png");
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        render_overlay(&r.input, &r.heat, &path)?;
    }
    let dest = stage.commit()?;
    info!("{} overlays in {}", results.len(), dest.display());
    Ok(ExitCode::SUCCESS)
}

pub fn eval(
    common: &Common,
    manifest_path: &Path,
    checkpoint: Option<&Path>,
    predictions: Option<&Path>,
    threshold: Option<f64>,
) -> Result<ExitCode> {
    let cfg = resolve(common, threshold)?;
    let records = read_manifest(manifest_path)?;
    if records.is_empty() {
        bail!("{} has no records", manifest_path.display());
    }
    let base = manifest_base(manifest_path);
    let inputs: Vec<(String, PathBuf)> = records.iter().map(|r| (r.image.clone(), base.join(&r.image))).collect();
    let images = load_images(&inputs)?;
    let gts = records
        .iter()
        .zip(&images)
        .map(|(r, im)| LandmarkSet::new(r.points, im.width(), im.height()))
        .collect::<eyemark::Result<Vec<_>>>()?;

    let (preds, computed) = match (checkpoint, predictions) {
        (Some(ck), _) => {
            let results = run_inference(&cfg, ck, &inputs)?;
            let preds: Vec<Prediction> = inputs
                .iter()
                .zip(&results)
                .map(|((name, _), r)| Prediction {
                    image: name.clone(),
                    points: r.landmarks.points,
                })
                .collect();
            (preds, true)
        }
        (None, Some(p)) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let list: Vec<Prediction> = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            (list, false)
        }
        (None, None) => bail!("either --checkpoint or --predictions is required"),
    };
    let by_key: BTreeMap<String, &Prediction> = preds.iter().map(|p| (path_key(&p.image), p)).collect();
    let mut pairs = Vec::with_capacity(records.len());
    for (r, gt) in records.iter().zip(gts) {
        let p = by_key
            .get(&path_key(&r.image))
            .with_context(|| format!("no prediction for {}", r.image))?;
        pairs.push((gt.clone(), LandmarkSet::unchecked(p.points, gt.width, gt.height)));
    }
    let report = metrics::evaluate(&pairs, cfg.eval.threshold)?;

    let stage = Stage::new(&common.out_dir, "eval")?;
    record_config(&cfg, &stage)?;
    write_json(&stage.path().join("report.json"), &report)?;
    save_ced_plot(&report, &stage.path().join("ced.png"))?;
    if computed {
        write_json(&stage.path().join("predictions.json"), &preds)?;
    }
    let dest = stage.commit()?;
    println!(
        "n={} excluded={} nme_mean={:.6} auc@{}={:.6} fr@{}={:.6}",
        report.n, report.excluded, report.nme_mean, report.threshold, report.auc_0_05, report.threshold, report.fr_0_05
    );
    info!("report written to {}", dest.join("report.json").display());
    Ok(ExitCode::SUCCESS)
}
