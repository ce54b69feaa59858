//! Ground-truth matching and detection metrics: IoU, per-class average
//! precision, mAP over IoU thresholds, and precision/recall/F-measure.
//!
//! Proposals are ranked by descending score (ties: earlier start, then
//! lower video id) and greedily matched to the unmatched ground truth of
//! the same video and class with the highest IoU at or above the
//! threshold. AP is the all-point average of precision at every hit,
//! divided by the number of ground-truth instances.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::localization::ActionProposal;
use crate::synthdata::VideoSample;
use crate::{Error, Result};

/// Ground-truth instance on the continuous snippet-time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub video_id: String,
    pub start: f64,
    pub end: f64,
    /// 0-based class index.
    pub category: usize,
}

/// Collects ground truth from videos; every video must carry segments.
pub fn ground_truth_of(videos: &[VideoSample]) -> Result<Vec<GtInstance>> {
    let mut out = Vec::new();
    for v in videos {
        let segs = v.gt_segments.as_ref().ok_or_else(|| {
            Error::Evaluation(format!("video {} has no segment-level ground truth", v.id))
        })?;
        out.extend(segs.iter().map(|s| {
            let (start, end) = s.interval();
            GtInstance {
                video_id: v.id.clone(),
                start,
                end,
                category: s.category,
            }
        }));
    }
    Ok(out)
}

pub fn iou(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    for (s, e) in [a, b] {
        if !(s <= e) {
            return Err(Error::InvalidArgument(format!("invalid interval [{s}, {e}]")));
        }
    }
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        // two identical points
        return Ok(if a == b { 1.0 } else { 0.0 });
    }
    Ok(inter / union)
}

/// Ranks proposals: descending score, earlier start, lower video id.
pub fn rank_proposals<'a>(proposals: impl IntoIterator<Item = &'a ActionProposal>) -> Vec<&'a ActionProposal> {
    let mut ranked: Vec<&ActionProposal> = proposals.into_iter().collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.start.total_cmp(&b.start))
            .then_with(|| a.video_id.cmp(&b.video_id))
    });
    ranked
}

/// True-positive flag for every ranked proposal of one class.
fn match_ranked(ranked: &[&ActionProposal], gts: &[&GtInstance], threshold: f64) -> Result<Vec<bool>> {
    let mut used = vec![false; gts.len()];
    ranked
        .iter()
        .map(|p| {
            if !p.score.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite proposal score in {}", p.video_id)));
            }
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if used[g] || gt.video_id != p.video_id || gt.category != p.category {
                    continue;
                }
                let o = iou((p.start, p.end), (gt.start, gt.end))?;
                if o >= threshold && best.map_or(true, |(_, b)| o > b) {
                    best = Some((g, o));
                }
            }
            Ok(match best {
                Some((g, _)) => {
                    used[g] = true;
                    true
                }
                None => false,
            })
        })
        .collect()
}

/// AP of one class; `None` when the class has no ground truth.
pub fn average_precision(
    proposals: &[&ActionProposal],
    gts: &[&GtInstance],
    iou_threshold: f64,
) -> Result<Option<f64>> {
    if gts.is_empty() {
        return Ok(None);
    }
    let ranked = rank_proposals(proposals.iter().copied());
    let hits = match_ranked(&ranked, gts, iou_threshold)?;
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (k, &hit) in hits.iter().enumerate() {
        if hit {
            tp += 1;
            sum += tp as f64 / (k + 1) as f64;
        }
    }
    Ok(Some(sum / gts.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub num_gt: usize,
}

pub fn precision_recall_f(
    proposals: &[ActionProposal],
    gts: &[GtInstance],
    num_classes: usize,
    iou_threshold: f64,
) -> Result<PrecisionRecall> {
    let mut tp = 0;
    for c in 0..num_classes {
        let ranked = rank_proposals(proposals.iter().filter(|p| p.category == c));
        let class_gt: Vec<&GtInstance> = gts.iter().filter(|g| g.category == c).collect();
        tp += match_ranked(&ranked, &class_gt, iou_threshold)?.iter().filter(|&&h| h).count();
    }
    let considered = proposals.iter().filter(|p| p.category < num_classes).count();
    let precision = if considered == 0 { 0.0 } else { tp as f64 / considered as f64 };
    let recall = if gts.is_empty() { 0.0 } else { tp as f64 / gts.len() as f64 };
    let f_measure = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(PrecisionRecall {
        precision,
        recall,
        f_measure,
        true_positives: tp,
        false_positives: considered - tp,
        num_gt: gts.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ThresholdRow {
    pub iou_threshold: f64,
    pub map: f64,
    /// `None` for classes without ground truth.
    pub per_class_ap: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub rows: Vec<ThresholdRow>,
    /// Mean of `rows[..].map`.
    pub average_map: f64,
    /// Counts and rates at IoU 0.5.
    pub at_half: PrecisionRecall,
    pub num_proposals: usize,
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn map_at(&self, threshold: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| (r.iou_threshold - threshold).abs() < 1e-9)
            .map(|r| r.map)
    }
}

/// 0.1, 0.2, ..., 0.9
pub fn default_thresholds() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}

pub fn map_at(
    proposals: &[ActionProposal],
    gts: &[GtInstance],
    num_classes: usize,
    thresholds: &[f64],
) -> Result<EvalReport> {
    if gts.is_empty() {
        return Err(Error::Evaluation("no ground-truth instances".into()));
    }
    if let Some(g) = gts.iter().find(|g| g.category >= num_classes) {
        return Err(Error::Evaluation(format!(
            "ground truth category {} outside {num_classes} classes",
            g.category
        )));
    }
    let mut notes = Vec::new();
    let by_class: Vec<(Vec<&ActionProposal>, Vec<&GtInstance>)> = (0..num_classes)
        .map(|c| {
            (
                proposals.iter().filter(|p| p.category == c).collect(),
                gts.iter().filter(|g| g.category == c).collect(),
            )
        })
        .collect();
    for (c, (_, g)) in by_class.iter().enumerate() {
        if g.is_empty() {
            notes.push(format!("class {c} has no ground truth; excluded from mAP"));
        }
    }
    let mut rows = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let per_class_ap = by_class
            .iter()
            .map(|(p, g)| average_precision(p, g, t))
            .collect::<Result<Vec<_>>>()?;
        let defined: Vec<f64> = per_class_ap.iter().flatten().copied().collect();
        rows.push(ThresholdRow {
            iou_threshold: t,
            map: defined.iter().sum::<f64>() / defined.len() as f64,
            per_class_ap,
        });
    }
    let average_map = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.map).sum::<f64>() / rows.len() as f64
    };
    Ok(EvalReport {
        rows,
        average_map,
        at_half: precision_recall_f(proposals, gts, num_classes, 0.5)?,
        num_proposals: proposals.len(),
        notes,
    })
}

/// Population variance of an attention sequence.
pub fn attention_variance(attention: &[f64]) -> f64 {
    if attention.is_empty() {
        return 0.0;
    }
    let n = attention.len() as f64;
    let mean = attention.iter().sum::<f64>() / n;
    attention.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prop(video: &str, start: f64, end: f64, category: usize, score: f64) -> ActionProposal {
        ActionProposal {
            video_id: video.into(),
            start,
            end,
            category,
            score,
        }
    }

    fn gt(video: &str, start: f64, end: f64, category: usize) -> GtInstance {
        GtInstance {
            video_id: video.into(),
            start,
            end,
            category,
        }
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou((2.0, 6.0), (2.0, 6.0)).unwrap(), 1.0);
        assert!((iou((2.0, 6.0), (4.0, 8.0)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou((0.0, 1.0), (2.0, 3.0)).unwrap(), 0.0);
        assert_eq!(iou((0.0, 1.0), (1.0, 3.0)).unwrap(), 0.0);
        assert!(iou((3.0, 1.0), (0.0, 1.0)).is_err());
    }

    #[test]
    fn ap_examples() {
        let g = [gt("a", 0.0, 4.0, 0)];
        let gr: Vec<&GtInstance> = g.iter().collect();
        let p = [prop("a", 0.0, 4.0, 0, 0.9)];
        assert_eq!(average_precision(&p.iter().collect::<Vec<_>>(), &gr, 0.5).unwrap(), Some(1.0));

        let p = [prop("a", 0.0, 4.0, 0, 0.9), prop("a", 10.0, 12.0, 0, 0.3)];
        assert_eq!(average_precision(&p.iter().collect::<Vec<_>>(), &gr, 0.5).unwrap(), Some(1.0));

        let g = [gt("a", 0.0, 4.0, 0), gt("a", 10.0, 14.0, 0)];
        let p = [
            prop("a", 0.0, 4.0, 0, 0.9),
            prop("a", 20.0, 24.0, 0, 0.8),
            prop("a", 10.0, 14.0, 0, 0.7),
        ];
        let ap = average_precision(&p.iter().collect::<Vec<_>>(), &g.iter().collect::<Vec<_>>(), 0.5)
            .unwrap()
            .unwrap();
        assert!((ap - 0.8333333333333334).abs() < 1e-12, "{ap}");

        assert_eq!(average_precision(&[], &[], 0.5).unwrap(), None);
    }

    #[test]
    fn duplicates_count_once() {
        let g = [gt("a", 0.0, 4.0, 0)];
        let p = [prop("a", 0.0, 4.0, 0, 0.9), prop("a", 0.0, 4.0, 0, 0.8)];
        let r = precision_recall_f(&p, &g, 1, 0.5).unwrap();
        assert_eq!((r.true_positives, r.false_positives), (1, 1));
    }

    #[test]
    fn matching_respects_video_and_class() {
        let g = [gt("a", 0.0, 4.0, 0)];
        let p = [prop("b", 0.0, 4.0, 0, 0.9), prop("a", 0.0, 4.0, 1, 0.9)];
        let r = precision_recall_f(&p, &g, 2, 0.5).unwrap();
        assert_eq!(r.true_positives, 0);
    }

    #[test]
    fn greedy_takes_highest_iou() {
        let g = [gt("a", 0.0, 4.0, 0), gt("a", 1.0, 5.0, 0)];
        // the top proposal overlaps the second GT better; the next one can still claim the first
        let p = [prop("a", 1.0, 5.0, 0, 0.9), prop("a", 0.0, 4.0, 0, 0.8)];
        let r = precision_recall_f(&p, &g, 1, 0.5).unwrap();
        assert_eq!(r.true_positives, 2);
    }

    #[test]
    fn prf_examples() {
        let g = [gt("a", 0.0, 4.0, 0), gt("a", 10.0, 14.0, 0)];
        let p = [prop("a", 0.0, 4.0, 0, 0.9), prop("a", 20.0, 24.0, 0, 0.8)];
        let r = precision_recall_f(&p, &g, 1, 0.5).unwrap();
        assert_eq!((r.precision, r.recall, r.f_measure), (0.5, 0.5, 0.5));
        let p = [prop("a", 0.0, 4.0, 0, 0.9), prop("a", 10.0, 14.0, 0, 0.8)];
        let r = precision_recall_f(&p, &g, 1, 0.5).unwrap();
        assert_eq!((r.precision, r.recall, r.f_measure), (1.0, 1.0, 1.0));
        let r = precision_recall_f(&[], &g, 1, 0.5).unwrap();
        assert_eq!((r.precision, r.recall, r.f_measure), (0.0, 0.0, 0.0));
    }

    #[test]
    fn map_examples() {
        let g = [gt("a", 0.0, 4.0, 0), gt("b", 3.0, 9.0, 1)];
        let perfect = [prop("a", 0.0, 4.0, 0, 0.5), prop("b", 3.0, 9.0, 1, 0.4)];
        let rep = map_at(&perfect, &g, 3, &default_thresholds()).unwrap();
        assert!(rep.rows.iter().all(|r| r.map == 1.0));
        assert_eq!(rep.average_map, 1.0);
        assert_eq!(rep.notes.len(), 1);
        assert_eq!(rep.rows[0].per_class_ap[2], None);
        let rep = map_at(&[], &g, 3, &default_thresholds()).unwrap();
        assert!(rep.rows.iter().all(|r| r.map == 0.0));
        assert!(map_at(&perfect, &[], 3, &[0.5]).is_err());
        assert_eq!(rep.map_at(0.5), Some(0.0));
    }

    #[test]
    fn ground_truth_requires_segments() {
        let g = crate::synthdata::generate(&crate::synthdata::GeneratorConfig {
            num_videos: 2,
            num_test_videos: 0,
            feature_dim: 4,
            ..Default::default()
        })
        .unwrap();
        let mut videos = g.dataset.train;
        assert!(!ground_truth_of(&videos).unwrap().is_empty());
        videos[1].gt_segments = None;
        assert!(ground_truth_of(&videos).is_err());
    }

    #[test]
    fn variance() {
        assert_eq!(attention_variance(&[0.5; 4]), 0.0);
        assert_eq!(attention_variance(&[0.0, 1.0]), 0.25);
    }
}
