//! Turning trained two-stream outputs into scored action proposals.
//!
//! Attention and T-CAM of both streams are fused with the same weight,
//! upsampled by linear interpolation, thresholded into runs, and each run
//! is scored per selected category with an outer-inner contrast of the
//! attention-weighted T-CAM.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::basemodel::AttentionTcam;
use crate::consensus::fuse_attention;
use crate::numkit::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ActionProposal {
    pub video_id: String,
    /// Start time in snippet units.
    pub start: f64,
    /// End time in snippet units.
    pub end: f64,
    /// 0-based class index.
    pub category: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LocalizationConfig {
    pub upsample_factor: usize,
    /// Strict attention threshold for proposal runs.
    pub attention_threshold: f64,
    pub top_k: usize,
    /// Categories with fused video score below this are rejected.
    pub class_score_floor: f64,
    /// RGB weight in the late fusion.
    pub beta: f64,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            upsample_factor: 8,
            attention_threshold: 0.5,
            top_k: 2,
            class_score_floor: 0.1,
            beta: 0.4,
        }
    }
}

impl LocalizationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.upsample_factor == 0 {
            return Err(Error::InvalidConfig("upsample_factor must be >= 1".into()));
        }
        if !(self.attention_threshold > 0.0 && self.attention_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "attention_threshold must be in (0, 1), got {}",
                self.attention_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidConfig(format!("beta must be in [0, 1], got {}", self.beta)));
        }
        Ok(())
    }
}

/// Source coordinate read by upsampled index `j`, clamped to `[0, len - 1]`.
fn source_coordinate(j: usize, factor: usize, len: usize) -> (usize, usize, f64) {
    let p = ((j as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (len - 1) as f64);
    let i0 = libm::floor(p) as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, p - i0 as f64)
}

#[inline]
fn lerp(a: f64, b: f64, frac: f64) -> f64 {
    (a + frac * (b - a)).clamp(a.min(b), a.max(b))
}

pub fn upsample_linear(sequence: &[f64], factor: usize) -> Result<Vec<f64>> {
    if factor == 0 {
        return Err(Error::InvalidArgument("upsample factor must be >= 1".into()));
    }
    if sequence.is_empty() {
        return Err(Error::InvalidArgument("cannot upsample an empty sequence".into()));
    }
    let n = sequence.len();
    Ok((0..n * factor)
        .map(|j| {
            let (i0, i1, frac) = source_coordinate(j, factor, n);
            lerp(sequence[i0], sequence[i1], frac)
        })
        .collect())
}

/// Upsamples every column of `m` along the row (time) axis.
pub fn upsample_linear_rows(m: &Matrix, factor: usize) -> Result<Matrix> {
    if factor == 0 {
        return Err(Error::InvalidArgument("upsample factor must be >= 1".into()));
    }
    if m.rows() == 0 {
        return Err(Error::InvalidArgument("cannot upsample an empty sequence".into()));
    }
    let n = m.rows();
    let mut out = Matrix::zeros(n * factor, m.cols());
    for j in 0..n * factor {
        let (i0, i1, frac) = source_coordinate(j, factor, n);
        let (a, b) = (m.row(i0), m.row(i1));
        for (c, o) in out.row_mut(j).iter_mut().enumerate() {
            *o = lerp(a[c], b[c], frac);
        }
    }
    Ok(out)
}

/// Top `top_k` categories by fused probability (ties: lower index), minus
/// any scoring below `floor`.
pub fn select_categories(y_fuse: &[f64], top_k: usize, floor: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..y_fuse.len()).collect();
    order.sort_by(|&a, &b| y_fuse[b].total_cmp(&y_fuse[a]));
    order.into_iter().take(top_k).filter(|&c| y_fuse[c] >= floor).collect()
}

/// Maximal runs with value strictly above `threshold`, as 1-based inclusive
/// index pairs.
pub fn extract_segments(attention: &[f64], threshold: f64) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &a) in attention.iter().enumerate() {
        match (a > threshold, open) {
            (true, None) => open = Some(i + 1),
            (false, Some(s)) => {
                runs.push((s, i));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        runs.push((s, attention.len()));
    }
    runs
}

/// Outer-inner contrast of the per-snippet weights `w` for the 1-based
/// inclusive proposal `[start, end]`.
///
/// The outer region widens the proposal by `L/4` on each side
/// (`L = end - start`), rounded outward and clamped to the sequence. Both
/// means divide by snippet counts.
pub fn oic_score_weights(start: usize, end: usize, w: &[f64]) -> Result<f64> {
    let n = w.len();
    if start < 1 || start > end || end > n {
        return Err(Error::InvalidArgument(format!(
            "proposal [{start}, {end}] outside 1..={n}"
        )));
    }
    let margin = (end - start) as f64 / 4.0;
    let outer_start = (libm::floor(start as f64 - margin) as i64).max(1) as usize;
    let outer_end = (libm::ceil(end as f64 + margin) as usize).min(n);
    let inner_sum: f64 = w[start - 1..end].iter().sum();
    let inner_len = end - start + 1;
    let inner_mean = inner_sum / inner_len as f64;
    let outer_len = outer_end - outer_start + 1;
    if outer_len == inner_len {
        return Ok(inner_mean);
    }
    // margins summed directly rather than outer minus inner
    let margin_sum: f64 = w[outer_start - 1..start - 1].iter().sum::<f64>() + w[end..outer_end].iter().sum::<f64>();
    Ok(inner_mean - margin_sum / (outer_len - inner_len) as f64)
}

/// OIC score of `[start, end]` for `category` from fused (upsampled)
/// attention and T-CAM.
pub fn oic_score(start: usize, end: usize, category: usize, attention: &[f64], tcam: &Matrix) -> Result<f64> {
    if tcam.rows() != attention.len() || category >= tcam.cols() {
        return Err(Error::shape(
            "oic_score tcam",
            format!("{} rows with column {category}", attention.len()),
            format!("{:?}", tcam.shape()),
        ));
    }
    let w: Vec<f64> = attention.iter().enumerate().map(|(i, a)| a * tcam.get(i, category)).collect();
    oic_score_weights(start, end, &w)
}

fn fuse_rows(rgb: &Matrix, flow: &Matrix, beta: f64) -> Result<Matrix> {
    if rgb.shape() != flow.shape() {
        return Err(Error::shape(
            "fused tcam",
            format!("{:?}", rgb.shape()),
            format!("{:?}", flow.shape()),
        ));
    }
    let data = fuse_attention(rgb.as_slice(), flow.as_slice(), beta)?;
    Matrix::from_vec(rgb.rows(), rgb.cols(), data)
}

/// Fused and upsampled outputs of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedOutputs {
    pub attention: Vec<f64>,
    pub tcam: Matrix,
    pub video_prediction: Vec<f64>,
}

pub fn fuse_outputs(rgb: &AttentionTcam, flow: &AttentionTcam, config: &LocalizationConfig) -> Result<FusedOutputs> {
    let attention = fuse_attention(&rgb.attention, &flow.attention, config.beta)?;
    let tcam = fuse_rows(&rgb.tcam, &flow.tcam, config.beta)?;
    let video_prediction = fuse_attention(&rgb.video_prediction, &flow.video_prediction, config.beta)?;
    Ok(FusedOutputs {
        attention: upsample_linear(&attention, config.upsample_factor)?,
        tcam: upsample_linear_rows(&tcam, config.upsample_factor)?,
        video_prediction,
    })
}

/// Scored proposals for one video. Proposals with `score <= 0` are dropped.
pub fn localize(
    video_id: &str,
    rgb: &AttentionTcam,
    flow: &AttentionTcam,
    config: &LocalizationConfig,
) -> Result<Vec<ActionProposal>> {
    config.validate()?;
    let fused = fuse_outputs(rgb, flow, config)?;
    let categories = select_categories(&fused.video_prediction, config.top_k, config.class_score_floor);
    let runs = extract_segments(&fused.attention, config.attention_threshold);
    let factor = config.upsample_factor as f64;
    let mut proposals = Vec::new();
    for &c in &categories {
        let w: Vec<f64> = fused
            .attention
            .iter()
            .enumerate()
            .map(|(i, a)| a * fused.tcam.get(i, c))
            .collect();
        for &(s, e) in &runs {
            let score = oic_score_weights(s, e, &w)?;
            if score > 0.0 {
                proposals.push(ActionProposal {
                    video_id: video_id.into(),
                    start: (s - 1) as f64 / factor,
                    end: e as f64 / factor,
                    category: c,
                    score,
                });
            }
        }
    }
    Ok(proposals)
}

/// Proposals from a single stream's outputs (fusion of a stream with itself).
pub fn localize_single(video_id: &str, outputs: &AttentionTcam, config: &LocalizationConfig) -> Result<Vec<ActionProposal>> {
    localize(video_id, outputs, outputs, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn upsample_examples() {
        let s = [0.2, 0.7, 0.4];
        assert_eq!(upsample_linear(&s, 1).unwrap(), s.to_vec());
        assert_eq!(upsample_linear(&[0.3; 5], 8).unwrap(), vec![0.3; 40]);
        let up = upsample_linear(&[0.0, 1.0], 8).unwrap();
        assert_eq!(up.len(), 16);
        assert_eq!(up[11], 0.9375);
        assert_eq!(up[0], 0.0);
        assert_eq!(up[15], 1.0);
        assert!(upsample_linear(&s, 0).is_err());
    }

    #[test]
    fn upsample_matrix_by_column() {
        let m = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let up = upsample_linear_rows(&m, 8).unwrap();
        assert_eq!(up.shape(), (16, 2));
        assert_eq!(up.column(0), upsample_linear(&[0.0, 1.0], 8).unwrap());
        assert!(up.column(1).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn select_examples() {
        assert_eq!(select_categories(&[0.7, 0.2, 0.1], 2, 0.1), vec![0, 1]);
        assert_eq!(select_categories(&[0.95, 0.03, 0.02], 2, 0.1), vec![0]);
        let third = 1.0 / 3.0;
        assert_eq!(select_categories(&[third; 3], 2, 0.1), vec![0, 1]);
        assert_eq!(select_categories(&[0.1, 0.05, 0.85], 2, 0.1), vec![2, 0]);
    }

    #[test]
    fn extract_examples() {
        assert_eq!(extract_segments(&[0.2, 0.7, 0.8, 0.3, 0.9], 0.5), vec![(2, 3), (5, 5)]);
        assert!(extract_segments(&[0.1, 0.5, 0.4], 0.5).is_empty());
        assert_eq!(extract_segments(&[0.6; 7], 0.5), vec![(1, 7)]);
    }

    #[test]
    fn oic_examples() {
        assert_eq!(oic_score_weights(3, 6, &[0.4; 12]).unwrap(), 0.0);
        let mut w = vec![0.0; 16];
        w[4..8].iter_mut().for_each(|v| *v = 1.0);
        assert_eq!(oic_score_weights(5, 8, &w).unwrap(), 1.0);
        let inv: Vec<f64> = w.iter().map(|v| 1.0 - v).collect();
        assert_eq!(oic_score_weights(5, 8, &inv).unwrap(), -1.0);
        // outer region clamped to the inner one: no margin term
        assert_eq!(oic_score_weights(1, 4, &[0.5, 0.25, 0.75, 0.5]).unwrap(), 0.5);
        // single snippet proposal: L = 0, no margin
        assert_eq!(oic_score_weights(3, 3, &[0.1, 0.2, 0.3]).unwrap(), 0.3);
        assert!(oic_score_weights(0, 2, &w).is_err());
        assert!(oic_score_weights(5, 17, &w).is_err());
    }

    fn outputs(attention: Vec<f64>, tcam_rows: Vec<Vec<f64>>, y: Vec<f64>) -> AttentionTcam {
        let t = attention.len();
        AttentionTcam {
            attention,
            tcam: Matrix::from_rows(&tcam_rows).unwrap(),
            video_prediction: y,
            embedded: Matrix::zeros(t, 1),
            foreground_feature: vec![0.0],
        }
    }

    #[test]
    fn localize_below_threshold_is_empty() {
        let o = outputs(vec![0.3; 6], vec![vec![0.5, 0.5]; 6], vec![0.5, 0.5]);
        assert!(localize("v", &o, &o, &LocalizationConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn localize_shares_segments_across_categories() {
        let att = vec![0.1, 0.1, 0.9, 0.9, 0.9, 0.1, 0.1, 0.1];
        let tcam: Vec<Vec<f64>> = (0..8).map(|i| if (2..5).contains(&i) { vec![0.7, 0.3] } else { vec![0.5, 0.5] }).collect();
        let o = outputs(att, tcam, vec![0.6, 0.4]);
        let props = localize("v", &o, &o, &LocalizationConfig::default()).unwrap();
        assert_eq!(props.len(), 2);
        assert_eq!((props[0].start, props[0].end), (props[1].start, props[1].end));
        assert_eq!((props[0].category, props[1].category), (0, 1));
        assert!(props[0].score > props[1].score && props[1].score > 0.0);
        // boundaries back in snippet units
        assert!(props[0].start >= 2.0 && props[0].end <= 5.0 && props[0].end > 4.0);
    }

    #[test]
    fn localize_drops_nonpositive_scores() {
        // everything above threshold: the outer region equals the inner one
        let o = outputs(vec![0.9; 4], vec![vec![0.5, 0.5]; 4], vec![0.5, 0.5]);
        let props = localize("v", &o, &o, &LocalizationConfig::default()).unwrap();
        assert!(props.iter().all(|p| p.score > 0.0));
        assert_eq!(props.len(), 2);
    }

    proptest! {
        #[test]
        fn upsample_preserves_bounds(s in proptest::collection::vec(-5.0f64..5.0, 1..20), f in 1usize..10) {
            let up = upsample_linear(&s, f).unwrap();
            let (lo, hi) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            prop_assert_eq!(up.len(), s.len() * f);
            prop_assert!(up.iter().all(|&v| v >= lo && v <= hi));
        }

        #[test]
        fn segments_are_sorted_disjoint_maximal(a in proptest::collection::vec(0.01f64..0.99, 0..50)) {
            let runs = extract_segments(&a, 0.5);
            for w in runs.windows(2) {
                prop_assert!(w[0].1 + 1 < w[1].0);
            }
            for &(s, e) in &runs {
                prop_assert!(a[s - 1..e].iter().all(|&v| v > 0.5));
                prop_assert!(s == 1 || a[s - 2] <= 0.5);
                prop_assert!(e == a.len() || a[e] <= 0.5);
            }
            let covered: usize = runs.iter().map(|(s, e)| e - s + 1).sum();
            prop_assert_eq!(covered, a.iter().filter(|&&v| v > 0.5).count());
        }

        #[test]
        fn segments_of_doubled_sequence(a in proptest::collection::vec(0.01f64..0.99, 1..30)) {
            let n = a.len();
            let runs = extract_segments(&a, 0.5);
            let doubled: Vec<f64> = a.iter().chain(&a).copied().collect();
            let mut expected = runs.clone();
            let shifted: Vec<(usize, usize)> = runs.iter().map(|&(s, e)| (s + n, e + n)).collect();
            match (expected.last().copied(), shifted.first().copied()) {
                (Some((s, e)), Some((s2, e2))) if e == n && s2 == n + 1 => {
                    expected.pop();
                    expected.push((s, e2));
                    expected.extend_from_slice(&shifted[1..]);
                }
                _ => expected.extend_from_slice(&shifted),
            }
            prop_assert_eq!(extract_segments(&doubled, 0.5), expected);
        }

        #[test]
        fn oic_homogeneous(w in proptest::collection::vec(0.0f64..1.0, 4..40), lambda in 0.01f64..100.0, a in 0usize..40, b in 0usize..40) {
            let n = w.len();
            let (s, e) = (a % n + 1, b % n + 1);
            let (s, e) = (s.min(e), s.max(e));
            let base = oic_score_weights(s, e, &w).unwrap();
            let scaled: Vec<f64> = w.iter().map(|v| v * lambda).collect();
            let got = oic_score_weights(s, e, &scaled).unwrap();
            prop_assert!((got - lambda * base).abs() <= 1e-9 * (1.0 + lambda));
        }

        #[test]
        fn oic_sign_flip_on_binary(bits in proptest::collection::vec(proptest::bool::ANY, 4..40), a in 0usize..40, b in 0usize..40) {
            let w: Vec<f64> = bits.iter().map(|&x| if x { 1.0 } else { 0.0 }).collect();
            let n = w.len();
            let (s, e) = (a % n + 1, b % n + 1);
            let (s, e) = (s.min(e), s.max(e));
            let max = w.iter().copied().fold(0.0, f64::max);
            let flipped: Vec<f64> = w.iter().map(|v| max - v).collect();
            let p = oic_score_weights(s, e, &w).unwrap();
            let q = oic_score_weights(s, e, &flipped).unwrap();
            let outer_is_inner = {
                let m = (e - s) as f64 / 4.0;
                libm::floor(s as f64 - m).max(1.0) as usize == s && (libm::ceil(e as f64 + m) as usize).min(n) == e
            };
            if !outer_is_inner {
                prop_assert!((p + q).abs() < 1e-12, "p={} q={}", p, q);
            }
        }
    }
}
