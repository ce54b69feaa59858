//! Text artifacts: training log CSV, pseudo ground truth dumps, proposal
//! JSON and evaluation reports.
//!
//! Floats are written with Rust's shortest round-trip formatting so equal
//! runs produce equal bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use tscn_core::consensus::{EpochLog, PseudoGroundTruth, PseudoGtStats};
use tscn_core::evaluation::EvalReport;
use tscn_core::localization::ActionProposal;

use crate::error::{AppError, Result};

pub const LOG_HEADER: &str = "iteration,epoch,stream,mean_cls_loss,mean_att_loss,mean_gt_loss,mean_total_loss";

pub fn log_row(log: &EpochLog) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        log.iteration,
        log.epoch,
        log.stream.name(),
        log.mean_cls_loss,
        log.mean_att_loss,
        log.mean_gt_loss.map(|v| v.to_string()).unwrap_or_default(),
        log.mean_total_loss
    )
}

pub fn log_csv(logs: &[EpochLog]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for l in logs {
        out.push_str(&log_row(l));
        out.push('\n');
    }
    out
}

/// One row per snippet: `video_id,snippet,target` with 1-based snippets.
pub fn pseudo_gt_csv(gts: &[PseudoGroundTruth]) -> String {
    let mut out = String::from("video_id,snippet,target\n");
    for g in gts {
        for (i, v) in g.values.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", g.video_id, i + 1, v);
        }
    }
    out
}

/// Reads a dump written by [`pseudo_gt_csv`] back into per-video sequences.
pub fn parse_pseudo_gt_csv(text: &str) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let bad = || AppError::Data(format!("pseudo ground truth line {}: {line:?}", n + 1));
        let mut parts = line.split(',');
        let (Some(id), Some(snippet), Some(value), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad());
        };
        let snippet: usize = snippet.parse().map_err(|_| bad())?;
        let value: f64 = value.parse().map_err(|_| bad())?;
        let seq = out.entry(id.to_string()).or_default();
        if snippet != seq.len() + 1 {
            return Err(bad());
        }
        seq.push(value);
    }
    Ok(out)
}

pub const STATS_HEADER: &str = "iteration,videos,snippets,mean_value,foreground_fraction";

pub fn stats_row(iteration: usize, s: &PseudoGtStats) -> String {
    format!(
        "{iteration},{},{},{},{}",
        s.videos, s.snippets, s.mean_value, s.foreground_fraction
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalEntry {
    pub label: String,
    pub score: f64,
    pub segment: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProposalFile {
    pub results: BTreeMap<String, Vec<ProposalEntry>>,
}

/// `video_ids` lists every localized video so videos without proposals
/// still appear with an empty list.
pub fn proposals_json<'a>(
    video_ids: impl IntoIterator<Item = &'a str>,
    proposals: &[ActionProposal],
    class_names: &[String],
) -> Result<String> {
    let mut file = ProposalFile::default();
    for id in video_ids {
        file.results.entry(id.to_string()).or_default();
    }
    for p in proposals {
        let label = class_names
            .get(p.category)
            .ok_or_else(|| AppError::Data(format!("proposal category {} has no class name", p.category)))?;
        file.results.entry(p.video_id.clone()).or_default().push(ProposalEntry {
            label: label.clone(),
            score: p.score,
            segment: [p.start, p.end],
        });
    }
    let mut text = serde_json::to_string_pretty(&file).map_err(|e| AppError::Data(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn parse_proposals_json(text: &str, class_names: &[String]) -> Result<Vec<ActionProposal>> {
    let file: ProposalFile =
        serde_json::from_str(text).map_err(|e| AppError::Data(format!("proposals: {e}")))?;
    let mut out = Vec::new();
    for (video_id, entries) in file.results {
        for e in entries {
            let category = class_names
                .iter()
                .position(|c| *c == e.label)
                .ok_or_else(|| AppError::Data(format!("proposal label {:?} is not a dataset class", e.label)))?;
            let [start, end] = e.segment;
            if !(start <= end) || !e.score.is_finite() {
                return Err(AppError::Data(format!(
                    "malformed proposal in {video_id}: segment [{start}, {end}], score {}",
                    e.score
                )));
            }
            out.push(ActionProposal {
                video_id: video_id.clone(),
                start,
                end,
                category,
                score: e.score,
            });
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct ReportFile<'a> {
    class_names: &'a [String],
    #[serde(flatten)]
    report: &'a EvalReport,
}

pub fn report_json(report: &EvalReport, class_names: &[String]) -> Result<String> {
    let mut text = serde_json::to_string_pretty(&ReportFile { class_names, report })
        .map_err(|e| AppError::Data(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

/// Plain-text table with metrics as percentages.
pub fn report_table(report: &EvalReport, class_names: &[String]) -> String {
    let mut header = vec!["IoU".to_string(), "mAP(%)".to_string()];
    header.extend(class_names.iter().cloned());
    let mut rows = vec![header];
    for r in &report.rows {
        let mut row = vec![format!("{:.2}", r.iou_threshold), pct(r.map)];
        row.extend(r.per_class_ap.iter().map(|ap| ap.map_or_else(|| "-".to_string(), pct)));
        rows.push(row);
    }
    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(cell, w)| format!("{cell:>w$}")).collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    let h = &report.at_half;
    let _ = writeln!(out, "average mAP(%): {}", pct(report.average_map));
    let _ = writeln!(
        out,
        "IoU 0.50: precision {}%  recall {}%  F-measure {:.4}  (TP {}, FP {}, GT {}, proposals {})",
        pct(h.precision),
        pct(h.recall),
        h.f_measure,
        h.true_positives,
        h.false_positives,
        h.num_gt,
        report.num_proposals
    );
    for note in &report.notes {
        let _ = writeln!(out, "note: {note}");
    }
    out
}
