//! Synthetic two-modality datasets with planted action instances.
//!
//! Every class owns three fixed directions: an RGB action pattern, an RGB
//! scene pattern and a flow action pattern, all with the same norm.
//! Snippets inside a planted action carry the action patterns on top of
//! Gaussian noise. Two per-modality failure modes are planted on purpose:
//!
//! * scene confounders: a background stretch that carries the RGB scene
//!   pattern of the video's class but nothing in flow,
//! * flow misses: an action whose flow pattern is suppressed (slow motion).

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::numkit::{dot, Matrix};
use crate::{Error, Result};

/// Ground-truth action instance in 1-based inclusive snippet indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GtSegment {
    pub start: usize,
    pub end: usize,
    /// 0-based class index.
    pub category: usize,
}

impl GtSegment {
    /// Interval on the continuous time axis where snippet `i` covers `[i-1, i)`.
    pub fn interval(&self) -> (f64, f64) {
        ((self.start - 1) as f64, self.end as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub id: String,
    /// Normalized multi-hot label.
    pub label: Vec<f64>,
    pub rgb: Matrix,
    pub flow: Matrix,
    /// `None` when only video-level labels are known.
    pub gt_segments: Option<Vec<GtSegment>>,
}

impl VideoSample {
    pub fn len(&self) -> usize {
        self.rgb.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self, modality: crate::basemodel::Modality) -> &Matrix {
        match modality {
            crate::basemodel::Modality::Rgb => &self.rgb,
            crate::basemodel::Modality::Flow => &self.flow,
        }
    }

    pub fn validate(&self, num_classes: usize, feature_dim: usize) -> Result<()> {
        let t_len = self.rgb.rows();
        if t_len == 0 {
            return Err(Error::InvalidArgument(format!("video {} has zero snippets", self.id)));
        }
        for (name, m) in [("rgb", &self.rgb), ("flow", &self.flow)] {
            if m.shape() != (t_len, feature_dim) {
                return Err(Error::shape(
                    "video features",
                    format!("{name} ({t_len}, {feature_dim}) for {}", self.id),
                    format!("{:?}", m.shape()),
                ));
            }
        }
        if self.label.len() != num_classes {
            return Err(Error::shape("video label", num_classes, self.label.len()));
        }
        let sum: f64 = self.label.iter().sum();
        if self.label.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "label of {} must be nonnegative and sum to 1 (sum {sum})",
                self.id
            )));
        }
        for seg in self.gt_segments.iter().flatten() {
            if seg.start < 1 || seg.start > seg.end || seg.end > t_len {
                return Err(Error::InvalidArgument(format!(
                    "segment [{}, {}] of {} outside 1..={t_len}",
                    seg.start, seg.end, self.id
                )));
            }
            if seg.category >= num_classes || self.label[seg.category] <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "segment category {} of {} has no label mass",
                    seg.category, self.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub class_names: Vec<String>,
    pub train: Vec<VideoSample>,
    pub test: Vec<VideoSample>,
    /// Optional time scale for exporting proposals in seconds.
    pub seconds_per_snippet: Option<f64>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.class_names.len() != self.num_classes {
            return Err(Error::shape("class names", self.num_classes, self.class_names.len()));
        }
        let mut ids = BTreeSet::new();
        for v in self.train.iter().chain(&self.test) {
            v.validate(self.num_classes, self.feature_dim)?;
            if !ids.insert(v.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate video id {}", v.id)));
            }
        }
        Ok(())
    }

    /// Whether every test video carries segment-level ground truth.
    pub fn is_evaluable(&self) -> bool {
        !self.test.is_empty() && self.test.iter().all(|v| v.gt_segments.is_some())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct GeneratorConfig {
    pub num_videos: usize,
    pub num_test_videos: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Inclusive snippet-count range.
    pub t_range: [usize; 2],
    pub actions_per_video_range: [usize; 2],
    pub action_length_range: [usize; 2],
    /// Norm of every class pattern.
    pub signal_norm: f64,
    pub rgb_noise: f64,
    pub flow_noise: f64,
    /// Per-video probability of one RGB-only scene confounder stretch.
    pub rgb_false_positive_rate: f64,
    /// Per-action probability that its flow pattern is suppressed.
    pub flow_miss_rate: f64,
    /// Cosine between a class's RGB scene pattern and its RGB action pattern.
    pub confounder_similarity: f64,
    /// Fraction of the flow pattern kept on a suppressed action.
    pub flow_miss_residual: f64,
    /// Probability that an additional action belongs to a different class.
    pub multi_class_rate: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_videos: 60,
            num_test_videos: 30,
            num_classes: 5,
            feature_dim: 32,
            t_range: [40, 80],
            actions_per_video_range: [1, 3],
            action_length_range: [5, 14],
            signal_norm: 3.0,
            rgb_noise: 1.0,
            flow_noise: 1.0,
            rgb_false_positive_rate: 0.5,
            flow_miss_rate: 0.2,
            confounder_similarity: 0.8,
            flow_miss_residual: 0.3,
            multi_class_rate: 0.2,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_classes < 2 || self.feature_dim < 2 {
            return bad(format!(
                "need at least 2 classes and 2 feature dims, got C={} D={}",
                self.num_classes, self.feature_dim
            ));
        }
        if self.num_videos == 0 {
            return bad("num_videos must be positive".into());
        }
        for (name, [lo, hi]) in [
            ("t_range", self.t_range),
            ("actions_per_video_range", self.actions_per_video_range),
            ("action_length_range", self.action_length_range),
        ] {
            if lo > hi || lo == 0 {
                return bad(format!("{name} must be a nonempty positive range, got [{lo}, {hi}]"));
            }
        }
        if self.action_length_range[1] + 2 > self.t_range[0] {
            return bad(format!(
                "longest action ({}) must fit in the shortest video ({}) with a margin",
                self.action_length_range[1], self.t_range[0]
            ));
        }
        for (name, r) in [
            ("rgb_false_positive_rate", self.rgb_false_positive_rate),
            ("flow_miss_rate", self.flow_miss_rate),
            ("multi_class_rate", self.multi_class_rate),
            ("confounder_similarity", self.confounder_similarity),
            ("flow_miss_residual", self.flow_miss_residual),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} must be in [0, 1], got {r}"));
            }
        }
        for (name, v) in [
            ("signal_norm", self.signal_norm),
            ("rgb_noise", self.rgb_noise),
            ("flow_noise", self.flow_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

/// Generator bookkeeping for one video, not part of the on-disk format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedVideo {
    pub id: String,
    /// RGB-only confounder stretches, 1-based inclusive.
    pub confounders: Vec<(usize, usize)>,
    /// Indices into the video's `gt_segments` whose flow pattern was suppressed.
    pub flow_missed: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub dataset: Dataset,
    /// Train videos first, then test, aligned with the dataset.
    pub planted: Vec<PlantedVideo>,
}

/// Per-class signal directions.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPatterns {
    pub rgb_action: Matrix,
    pub rgb_scene: Matrix,
    pub flow_action: Matrix,
}

fn random_directions(rng: &mut ChaCha8Rng, rows: usize, dim: usize, norm: f64) -> Matrix {
    let mut m = Matrix::zeros(rows, dim);
    for r in 0..rows {
        let row = m.row_mut(r);
        row.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let n = libm::sqrt(row.iter().map(|v| v * v).sum::<f64>());
        row.iter_mut().for_each(|v| *v *= norm / n);
    }
    m
}

pub fn generate(config: &GeneratorConfig) -> Result<Generated> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (c, d) = (config.num_classes, config.feature_dim);
    let rgb_action = random_directions(&mut rng, c, d, config.signal_norm);
    let mut rgb_scene = random_directions(&mut rng, c, d, config.signal_norm);
    let rho = config.confounder_similarity;
    for k in 0..c {
        let a = rgb_action.row(k);
        let r = rgb_scene.row_mut(k);
        // orthogonal part of r, rescaled, then mixed toward the action pattern
        let proj = dot(a, r) / dot(a, a);
        r.iter_mut().zip(a).for_each(|(v, x)| *v -= proj * x);
        let n = libm::sqrt(dot(r, r));
        let side = if n > 0.0 { libm::sqrt(1.0 - rho * rho) * config.signal_norm / n } else { 0.0 };
        r.iter_mut().zip(a).for_each(|(v, x)| *v = side * *v + rho * x);
    }
    let patterns = ClassPatterns {
        rgb_action,
        rgb_scene,
        flow_action: random_directions(&mut rng, c, d, config.signal_norm),
    };
    let mut planted = Vec::with_capacity(config.num_videos + config.num_test_videos);
    let mut train = Vec::with_capacity(config.num_videos);
    for i in 0..config.num_videos {
        let (v, p) = generate_video(config, &patterns, &mut rng, format!("train_{i:04}"));
        train.push(v);
        planted.push(p);
    }
    let mut test = Vec::with_capacity(config.num_test_videos);
    for i in 0..config.num_test_videos {
        let (v, p) = generate_video(config, &patterns, &mut rng, format!("test_{i:04}"));
        test.push(v);
        planted.push(p);
    }
    let dataset = Dataset {
        num_classes: c,
        feature_dim: d,
        class_names: (0..c).map(|k| format!("action_{k}")).collect(),
        train,
        test,
        seconds_per_snippet: None,
    };
    dataset.validate()?;
    Ok(Generated { dataset, planted })
}

/// Picks a start for a `len`-snippet stretch that keeps one free snippet
/// between itself and every occupied stretch.
fn place(rng: &mut ChaCha8Rng, t_len: usize, len: usize, occupied: &[(usize, usize)]) -> Option<usize> {
    let starts: Vec<usize> = (1..=t_len + 1 - len)
        .filter(|&s| {
            let e = s + len - 1;
            occupied.iter().all(|&(os, oe)| e + 1 < os || s > oe + 1)
        })
        .collect();
    starts.choose(rng).copied()
}

fn generate_video(
    config: &GeneratorConfig,
    patterns: &ClassPatterns,
    rng: &mut ChaCha8Rng,
    id: String,
) -> (VideoSample, PlantedVideo) {
    let (c, d) = (config.num_classes, config.feature_dim);
    let t_len = rng.random_range(config.t_range[0]..=config.t_range[1]);
    let n_actions = rng.random_range(config.actions_per_video_range[0]..=config.actions_per_video_range[1]);
    let primary = rng.random_range(0..c);
    let [min_len, max_len] = config.action_length_range;

    let mut occupied: Vec<(usize, usize)> = Vec::new();
    let mut segments = Vec::new();
    for k in 0..n_actions {
        let category = if k > 0 && rng.random_bool(config.multi_class_rate) {
            (primary + rng.random_range(1..c)) % c
        } else {
            primary
        };
        let len = rng.random_range(min_len..=max_len);
        if let Some(s) = place(rng, t_len, len, &occupied) {
            occupied.push((s, s + len - 1));
            segments.push(GtSegment {
                start: s,
                end: s + len - 1,
                category,
            });
        }
    }
    segments.sort_by_key(|s| s.start);

    let mut confounders = Vec::new();
    if rng.random_bool(config.rgb_false_positive_rate) {
        let len = rng.random_range(min_len..=max_len);
        if let Some(s) = place(rng, t_len, len, &occupied) {
            occupied.push((s, s + len - 1));
            confounders.push((s, s + len - 1));
        }
    }
    let flow_missed: Vec<usize> = (0..segments.len())
        .filter(|_| rng.random_bool(config.flow_miss_rate))
        .collect();

    let mut rgb = Matrix::zeros(t_len, d);
    let mut flow = Matrix::zeros(t_len, d);
    rgb.as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = config.rgb_noise * rng.sample::<f64, _>(StandardNormal));
    flow.as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = config.flow_noise * rng.sample::<f64, _>(StandardNormal));
    let add = |m: &mut Matrix, start: usize, end: usize, pattern: &[f64], gain: f64| {
        for t in start - 1..end {
            m.row_mut(t).iter_mut().zip(pattern).for_each(|(v, p)| *v += gain * p);
        }
    };
    for (k, seg) in segments.iter().enumerate() {
        add(&mut rgb, seg.start, seg.end, patterns.rgb_action.row(seg.category), 1.0);
        let flow_gain = if flow_missed.contains(&k) { config.flow_miss_residual } else { 1.0 };
        add(&mut flow, seg.start, seg.end, patterns.flow_action.row(seg.category), flow_gain);
    }
    for &(s, e) in &confounders {
        add(&mut rgb, s, e, patterns.rgb_scene.row(primary), 1.0);
    }
    // the on-disk format stores f32; keep generated data exactly representable
    for m in [&mut rgb, &mut flow] {
        m.as_mut_slice().iter_mut().for_each(|v| *v = *v as f32 as f64);
    }

    let mut label = vec![0.0; c];
    for seg in &segments {
        label[seg.category] = 1.0;
    }
    let mass: f64 = label.iter().sum();
    label.iter_mut().for_each(|v| *v /= mass);

    let planted = PlantedVideo {
        id: id.clone(),
        confounders,
        flow_missed,
    };
    let video = VideoSample {
        id,
        label,
        rgb,
        flow,
        gt_segments: Some(segments),
    };
    (video, planted)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            num_videos: 20,
            num_test_videos: 10,
            feature_dim: 8,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn single_action_no_failures() {
        let cfg = GeneratorConfig {
            actions_per_video_range: [1, 1],
            rgb_false_positive_rate: 0.0,
            flow_miss_rate: 0.0,
            ..small(3)
        };
        let g = generate(&cfg).unwrap();
        for (v, p) in g.dataset.train.iter().chain(&g.dataset.test).zip(&g.planted) {
            assert_eq!(v.gt_segments.as_ref().unwrap().len(), 1);
            assert!(p.confounders.is_empty() && p.flow_missed.is_empty());
            assert_eq!(v.label.iter().filter(|&&y| y == 1.0).count(), 1);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(generate(&small(9)).unwrap(), generate(&small(9)).unwrap());
        assert_ne!(generate(&small(9)).unwrap().dataset, generate(&small(10)).unwrap().dataset);
    }

    #[test]
    fn labels_match_planted_segments() {
        let g = generate(&small(4)).unwrap();
        g.dataset.validate().unwrap();
        for v in g.dataset.train.iter().chain(&g.dataset.test) {
            let segs = v.gt_segments.as_ref().unwrap();
            for (c, &y) in v.label.iter().enumerate() {
                assert_eq!(y > 0.0, segs.iter().any(|s| s.category == c));
            }
            for w in segs.windows(2) {
                assert!(w[0].end + 1 < w[1].start, "segments touch in {}", v.id);
            }
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = GeneratorConfig::default();
        for cfg in [
            GeneratorConfig { num_classes: 1, ..base.clone() },
            GeneratorConfig { feature_dim: 1, ..base.clone() },
            GeneratorConfig { t_range: [50, 40], ..base.clone() },
            GeneratorConfig { flow_miss_rate: 1.5, ..base.clone() },
            GeneratorConfig { action_length_range: [5, 40], ..base.clone() },
            GeneratorConfig { actions_per_video_range: [0, 2], ..base.clone() },
        ] {
            assert!(generate(&cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn video_validation_catches_bad_segments() {
        let g = generate(&small(1)).unwrap();
        let mut v = g.dataset.train[0].clone();
        v.gt_segments.as_mut().unwrap()[0].end = v.len() + 1;
        assert!(v.validate(5, 8).is_err());
        let mut v = g.dataset.train[0].clone();
        v.label = vec![0.2; 5];
        v.label[0] = 0.3;
        assert!(v.validate(5, 8).is_err());
    }
}
