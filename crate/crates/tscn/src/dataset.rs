//! On-disk dataset layout: `manifest.json` plus one raw little-endian f32
//! file per video and modality (row-major `T x D`, no header).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tscn_core::numkit::Matrix;
use tscn_core::synthdata::{Dataset, GtSegment, VideoSample};

use crate::error::{AppError, Result};

pub const MANIFEST: &str = "manifest.json";
const FEATURE_DIR: &str = "features";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Test,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    #[serde(rename = "C")]
    num_classes: usize,
    #[serde(rename = "D")]
    feature_dim: usize,
    class_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seconds_per_snippet: Option<f64>,
    videos: Vec<ManifestVideo>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestVideo {
    id: String,
    subset: Subset,
    #[serde(rename = "T")]
    t_len: usize,
    label: Vec<f64>,
    rgb_file: String,
    flow_file: String,
    /// `[start, end, category]`, 1-based inclusive snippets, 0-based category.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_segments: Option<Vec<[usize; 3]>>,
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(AppError::Data(format!("video id {id:?} is not usable as a file name")))
    }
}

fn write_features(path: &Path, m: &Matrix) -> Result<()> {
    let mut bytes = Vec::with_capacity(m.as_slice().len() * 4);
    for &v in m.as_slice() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

fn read_features(path: &Path, t_len: usize, dim: usize) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(AppError::Data(format!(
            "{}: corrupt length {} bytes (not a whole number of f32 values)",
            path.display(),
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if values.len() != t_len * dim {
        return Err(AppError::Data(format!(
            "{}: shape mismatch, manifest declares {t_len}x{dim} = {} values, file holds {}",
            path.display(),
            t_len * dim,
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(AppError::Data(format!("{}: non-finite feature value", path.display())));
    }
    Ok(Matrix::from_vec(t_len, dim, values)?)
}

pub fn save(dataset: &Dataset, dir: &Path) -> Result<()> {
    dataset.validate()?;
    let feature_dir = dir.join(FEATURE_DIR);
    fs::create_dir_all(&feature_dir).map_err(|e| AppError::io(&feature_dir, e))?;
    let mut videos = Vec::with_capacity(dataset.train.len() + dataset.test.len());
    let subsets = dataset
        .train
        .iter()
        .map(|v| (Subset::Train, v))
        .chain(dataset.test.iter().map(|v| (Subset::Test, v)));
    for (subset, v) in subsets {
        check_id(&v.id)?;
        let rgb_file = format!("{FEATURE_DIR}/{}_rgb.f32", v.id);
        let flow_file = format!("{FEATURE_DIR}/{}_flow.f32", v.id);
        write_features(&dir.join(&rgb_file), &v.rgb)?;
        write_features(&dir.join(&flow_file), &v.flow)?;
        videos.push(ManifestVideo {
            id: v.id.clone(),
            subset,
            t_len: v.len(),
            label: v.label.clone(),
            rgb_file,
            flow_file,
            gt_segments: v
                .gt_segments
                .as_ref()
                .map(|segs| segs.iter().map(|s| [s.start, s.end, s.category]).collect()),
        });
    }
    let manifest = Manifest {
        num_classes: dataset.num_classes,
        feature_dim: dataset.feature_dim,
        class_names: dataset.class_names.clone(),
        seconds_per_snippet: dataset.seconds_per_snippet,
        videos,
    };
    let path = dir.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| AppError::Data(e.to_string()))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| AppError::io(&path, e))
}

pub fn load(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| AppError::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    let (c, d) = (manifest.num_classes, manifest.feature_dim);
    let mut dataset = Dataset {
        num_classes: c,
        feature_dim: d,
        class_names: manifest.class_names,
        train: Vec::new(),
        test: Vec::new(),
        seconds_per_snippet: manifest.seconds_per_snippet,
    };
    for mv in manifest.videos {
        let resolve = |f: &str| -> PathBuf { dir.join(f) };
        let video = VideoSample {
            rgb: read_features(&resolve(&mv.rgb_file), mv.t_len, d)?,
            flow: read_features(&resolve(&mv.flow_file), mv.t_len, d)?,
            id: mv.id,
            label: mv.label,
            gt_segments: mv.gt_segments.map(|segs| {
                segs.into_iter()
                    .map(|[start, end, category]| GtSegment { start, end, category })
                    .collect()
            }),
        };
        match mv.subset {
            Subset::Train => dataset.train.push(video),
            Subset::Test => dataset.test.push(video),
        }
    }
    dataset.validate()?;
    Ok(dataset)
}

/// Videos of one subset.
pub fn split(dataset: &Dataset, subset: Subset) -> &[VideoSample] {
    match subset {
        Subset::Train => &dataset.train,
        Subset::Test => &dataset.test,
    }
}

/// One-paragraph summary printed after generation or loading.
pub fn describe(dataset: &Dataset) -> String {
    let all = || dataset.train.iter().chain(&dataset.test);
    let snippets: usize = all().map(|v| v.len()).sum();
    let segments: usize = all().filter_map(|v| v.gt_segments.as_ref()).map(|s| s.len()).sum();
    let (t_min, t_max) = all().fold((usize::MAX, 0), |(lo, hi), v| (lo.min(v.len()), hi.max(v.len())));
    format!(
        "{} train / {} test videos, C={} D={}, T in [{}, {}], {} snippets, {} ground-truth segments{}",
        dataset.train.len(),
        dataset.test.len(),
        dataset.num_classes,
        dataset.feature_dim,
        if snippets == 0 { 0 } else { t_min },
        t_max,
        snippets,
        segments,
        if dataset.is_evaluable() { "" } else { " (test split not evaluable)" }
    )
}
