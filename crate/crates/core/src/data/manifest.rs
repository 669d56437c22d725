//! Line-delimited JSON manifests of cropped and augmented samples.
//!
//! Image paths in a manifest are relative to the manifest's directory and
//! start with the augmentation tag: `<tag>/<group>/<stem>.png`, where
//! `<group>` is the first-level subdirectory of the raw input (`.` for files
//! at its root).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment, crop_resize, AugmentConfig, AugmentTag};
use super::pts::{read_box, read_pts, select_eyes, sidecars, FaceBox};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::landmarks::{LandmarkSet, Point, NUM_LANDMARKS};
use crate::train::Sample;

pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub image: String,
    #[serde(rename = "box")]
    pub bbox: FaceBox,
    pub points: [Point; NUM_LANDMARKS],
    pub tag: AugmentTag,
}

impl Record {
    /// `<group>/<stem>.png`: the path below the tag directory.
    pub fn source_key(&self) -> &str {
        self.image.split_once('/').map_or(self.image.as_str(), |(_, rest)| rest)
    }

    pub fn group(&self) -> &str {
        let key = self.source_key();
        key.split_once('/').map_or(".", |(g, _)| g)
    }
}

/// A record that could not be produced, with the reason.
#[derive(Clone, Debug, PartialEq)]
pub struct Skipped {
    pub path: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct BuildReport {
    pub records: Vec<Record>,
    pub skipped: Vec<Skipped>,
}

/// One raw image with its annotation sidecars.
#[derive(Clone, Debug, PartialEq)]
pub struct RawItem {
    pub image: PathBuf,
    /// Path relative to the raw directory, `/`-separated.
    pub rel: String,
}

fn rel_string(path: &Path, base: &Path) -> String {
    let rel = path.strip_prefix(base).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            walk(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Images under `raw_dir` (recursively) that have a `.pts` sidecar, sorted
/// by relative path.
pub fn scan_raw(raw_dir: &Path) -> Result<Vec<RawItem>> {
    let mut files = Vec::new();
    walk(raw_dir, &mut files)?;
    let mut items: Vec<RawItem> = files
        .into_iter()
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .filter(|p| sidecars(p).0.is_file())
        .map(|p| RawItem {
            rel: rel_string(&p, raw_dir),
            image: p,
        })
        .collect();
    items.sort_by(|a, b| a.rel.cmp(&b.rel));
    Ok(items)
}

fn png_key(rel: &str) -> String {
    let p = Path::new(rel).with_extension("png");
    let s = rel_string(&p, Path::new(""));
    if s.contains('/') {
        s
    } else {
        format!("./{s}")
    }
}

/// Loads one raw item and crops it to `size × size`.
pub fn load_raw(item: &RawItem, size: usize) -> Result<(Image, FaceBox, LandmarkSet)> {
    let image = Image::load(&item.image)?;
    let (pts_path, box_path) = sidecars(&item.image);
    let ann = read_pts(&pts_path)?;
    let bbox = if box_path.is_file() {
        read_box(&box_path)?
    } else {
        FaceBox::full(image.width(), image.height())
    };
    let eyes = select_eyes(&ann, image.width(), image.height());
    let (img, lm) = crop_resize(&image, &bbox, &eyes, size)?;
    if let Some(i) = lm.first_out_of_frame() {
        return Err(Error::InvalidArgument(format!("landmark {i} leaves the cropped frame")));
    }
    Ok((img, bbox, lm))
}

fn save_record(out_dir: &Path, tag: AugmentTag, key: &str, bbox: FaceBox, image: &Image, lm: &LandmarkSet) -> Result<Record> {
    let rel = format!("{tag}/{key}");
    let path = out_dir.join(&rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    image.save(&path)?;
    Ok(Record {
        image: rel,
        bbox,
        points: lm.points,
        tag,
    })
}

/// Crops every raw item to `size × size` and writes it under
/// `out_dir/original/`. Unreadable or inconsistent items are skipped.
pub fn preprocess(raw_dir: &Path, out_dir: &Path, size: usize) -> Result<BuildReport> {
    build(raw_dir, out_dir, size, None)
}

/// [`preprocess`] followed by every enabled augmentation of each crop.
pub fn build_manifest(raw_dir: &Path, out_dir: &Path, size: usize, cfg: &AugmentConfig) -> Result<BuildReport> {
    build(raw_dir, out_dir, size, Some(cfg))
}

fn build(raw_dir: &Path, out_dir: &Path, size: usize, cfg: Option<&AugmentConfig>) -> Result<BuildReport> {
    let mut report = BuildReport::default();
    for item in scan_raw(raw_dir)? {
        let key = png_key(&item.rel);
        match load_raw(&item, size) {
            Ok((img, bbox, lm)) => match cfg {
                None => report
                    .records
                    .push(save_record(out_dir, AugmentTag::Original, &key, bbox, &img, &lm)?),
                Some(cfg) => augment_one(out_dir, &key, bbox, &img, &lm, cfg, &mut report)?,
            },
            Err(e) => {
                warn!("skipping {}: {e}", item.rel);
                report.skipped.push(Skipped {
                    path: item.rel.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    report.records.sort_by(|a, b| a.image.cmp(&b.image));
    info!("{} records, {} skipped", report.records.len(), report.skipped.len());
    Ok(report)
}

fn augment_one(
    out_dir: &Path,
    key: &str,
    bbox: FaceBox,
    img: &Image,
    lm: &LandmarkSet,
    cfg: &AugmentConfig,
    report: &mut BuildReport,
) -> Result<()> {
    let (kept, dropped) = augment(img, lm, cfg);
    for a in kept {
        report
            .records
            .push(save_record(out_dir, a.tag, key, bbox, &a.image, &a.landmarks)?);
    }
    for tag in dropped {
        report.skipped.push(Skipped {
            path: format!("{tag}/{key}"),
            reason: "landmark left the frame".into(),
        });
    }
    Ok(())
}

/// Augments the originals of an existing manifest into `out_dir`.
pub fn augment_manifest(records: &[Record], base: &Path, out_dir: &Path, cfg: &AugmentConfig) -> Result<BuildReport> {
    let mut report = BuildReport::default();
    for r in records.iter().filter(|r| r.tag == AugmentTag::Original) {
        let path = base.join(&r.image);
        let loaded = Image::load(&path).and_then(|img| {
            let lm = LandmarkSet::new(r.points, img.width(), img.height())?;
            Ok((img, lm))
        });
        match loaded {
            Ok((img, lm)) => augment_one(out_dir, r.source_key(), r.bbox, &img, &lm, cfg, &mut report)?,
            Err(e) => {
                warn!("skipping {}: {e}", r.image);
                report.skipped.push(Skipped {
                    path: r.image.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    report.records.sort_by(|a, b| a.image.cmp(&b.image));
    Ok(report)
}

pub fn to_jsonl(records: &[Record]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn write_manifest(path: &Path, records: &[Record]) -> Result<()> {
    fs::write(path, to_jsonl(records)?)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<Record>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Loads the images of `records`, resolved against `base`.
pub fn load_samples(records: &[Record], base: &Path) -> Result<Vec<Sample>> {
    records
        .iter()
        .map(|r| {
            let img = Image::load(&base.join(&r.image))?;
            Ok(Sample {
                landmarks: LandmarkSet::new(r.points, img.width(), img.height())?,
                image: img.to_tensor(),
            })
        })
        .collect()
}

/// Splits `records` by source image so that augmented copies of one face
/// never straddle the split; the validation side keeps only original crops.
/// At least one source stays on the training side.
pub fn split_by_source(records: &[Record], val_fraction: f64, seed: u64) -> (Vec<Record>, Vec<Record>) {
    let mut keys: Vec<&str> = records.iter().map(Record::source_key).collect();
    keys.sort_unstable();
    keys.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    keys.shuffle(&mut rng);
    let n_val = ((keys.len() as f64 * val_fraction).round() as usize).min(keys.len().saturating_sub(1));
    let val_keys = &keys[..n_val];
    let (val, train): (Vec<Record>, Vec<Record>) = records
        .iter()
        .cloned()
        .partition(|r| val_keys.contains(&r.source_key()));
    (train, val.into_iter().filter(|r| r.tag == AugmentTag::Original).collect())
}

/// Category counts per raw group.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    pub groups: Vec<String>,
    /// `category → group → count`.
    pub counts: BTreeMap<&'static str, BTreeMap<String, usize>>,
}

pub const CATEGORIES: [&str; 4] = ["Original", "Horizontally Flipped", "Rotated", "Blurred"];

fn category(tag: AugmentTag) -> &'static str {
    match tag {
        AugmentTag::Original => CATEGORIES[0],
        AugmentTag::Hflip => CATEGORIES[1],
        AugmentTag::Rot(_) => CATEGORIES[2],
        AugmentTag::Blur => CATEGORIES[3],
    }
}

impl Summary {
    pub fn of(records: &[Record]) -> Self {
        let mut groups: Vec<String> = records.iter().map(|r| r.group().to_string()).collect();
        groups.sort();
        groups.dedup();
        let mut counts: BTreeMap<&'static str, BTreeMap<String, usize>> = BTreeMap::new();
        for r in records {
            *counts
                .entry(category(r.tag))
                .or_default()
                .entry(r.group().to_string())
                .or_default() += 1;
        }
        Self { groups, counts }
    }

    pub fn count(&self, category: &str, group: &str) -> usize {
        self.counts.get(category).and_then(|g| g.get(group)).copied().unwrap_or(0)
    }

    pub fn total(&self, category: &str) -> usize {
        self.counts.get(category).map_or(0, |g| g.values().sum())
    }

    /// Plain-text table: one row per category, one column per group plus a total.
    pub fn table(&self) -> String {
        let mut header = vec!["Category".to_string()];
        header.extend(self.groups.iter().cloned());
        header.push("Total".into());
        let mut rows = vec![header];
        for c in CATEGORIES {
            let mut row = vec![c.to_string()];
            row.extend(self.groups.iter().map(|g| self.count(c, g).to_string()));
            row.push(self.total(c).to_string());
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        for (n, row) in rows.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, w))| if i == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            let _ = writeln!(s, "{}", cells.join(" | ").trim_end());
            if n == 0 {
                let _ = writeln!(s, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-|-"));
            }
        }
        s
    }
}
