//! Per-video plot emission: upsampled attention sequences as CSV, and an
//! SVG with one row per sequence plus ground-truth and proposal boxes.

use std::fmt::Write as _;

use tscn_core::evaluation::GtInstance;
use tscn_core::localization::{upsample_linear, ActionProposal};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct VideoPlot {
    pub video_id: String,
    /// Upsampled attention sequences, all of length `T * factor`.
    pub rgb: Vec<f64>,
    pub flow: Vec<f64>,
    pub fused: Vec<f64>,
    /// Snippet-resolution pseudo ground truth, when the video has one.
    pub pseudo_gt: Option<Vec<f64>>,
    pub factor: usize,
    pub proposals: Vec<ActionProposal>,
    pub ground_truth: Vec<GtInstance>,
}

impl VideoPlot {
    /// Builds the plot from snippet-level attention.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        video_id: &str,
        rgb: &[f64],
        flow: &[f64],
        beta: f64,
        factor: usize,
        pseudo_gt: Option<Vec<f64>>,
        proposals: Vec<ActionProposal>,
        ground_truth: Vec<GtInstance>,
    ) -> Result<Self> {
        let fused = tscn_core::consensus::fuse_attention(rgb, flow, beta)?;
        Ok(Self {
            video_id: video_id.to_string(),
            rgb: upsample_linear(rgb, factor)?,
            flow: upsample_linear(flow, factor)?,
            fused: upsample_linear(&fused, factor)?,
            pseudo_gt,
            factor,
            proposals,
            ground_truth,
        })
    }

    pub fn len(&self) -> usize {
        self.fused.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fused.is_empty()
    }

    /// Snippet-unit time of the centre of upsampled position `j`.
    fn time(&self, j: usize) -> f64 {
        (j as f64 + 0.5) / self.factor as f64
    }

    /// Pseudo ground truth held constant across each snippet.
    fn pseudo_gt_at(&self, j: usize) -> Option<f64> {
        self.pseudo_gt.as_ref().map(|g| g[j / self.factor])
    }

    /// Sequences drawn as rows, in order.
    fn rows(&self) -> Vec<(&'static str, Vec<f64>)> {
        let mut rows = vec![
            ("A_rgb", self.rgb.clone()),
            ("A_flow", self.flow.clone()),
            ("A_fuse", self.fused.clone()),
        ];
        if self.pseudo_gt.is_some() {
            rows.push(("pseudo_gt", (0..self.len()).filter_map(|j| self.pseudo_gt_at(j)).collect()));
        }
        rows
    }
}

pub fn plot_csv(plot: &VideoPlot) -> String {
    let mut out = String::from("time,a_rgb,a_flow,a_fuse");
    if plot.pseudo_gt.is_some() {
        out.push_str(",pseudo_gt");
    }
    out.push('\n');
    for j in 0..plot.len() {
        let _ = write!(out, "{},{},{},{}", plot.time(j), plot.rgb[j], plot.flow[j], plot.fused[j]);
        if let Some(g) = plot.pseudo_gt_at(j) {
            let _ = write!(out, ",{g}");
        }
        out.push('\n');
    }
    out
}

const WIDTH: f64 = 960.0;
const LEFT: f64 = 90.0;
const ROW_H: f64 = 48.0;
const GAP: f64 = 12.0;
const BOX_H: f64 = 18.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn plot_svg(plot: &VideoPlot, class_names: &[String]) -> String {
    let rows = plot.rows();
    let duration = plot.len() as f64 / plot.factor as f64;
    let span = WIDTH - LEFT - 10.0;
    let x = |t: f64| LEFT + span * t / duration.max(f64::MIN_POSITIVE);
    let box_top = 24.0 + rows.len() as f64 * (ROW_H + GAP);
    let height = box_top + 2.0 * (BOX_H + GAP) + 10.0;
    let name = |c: usize| class_names.get(c).map_or_else(|| c.to_string(), |n| escape(n));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="4" y="14">{}</text>"#, escape(&plot.video_id));
    for (r, (label, values)) in rows.iter().enumerate() {
        let top = 24.0 + r as f64 * (ROW_H + GAP);
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(j, v)| format!("{:.2},{:.2}", x(plot.time(j)), top + ROW_H * (1.0 - v.clamp(0.0, 1.0))))
            .collect();
        let _ = writeln!(s, r#"<g class="attention-row" data-name="{label}">"#);
        let _ = writeln!(
            s,
            r##"<rect x="{LEFT}" y="{top}" width="{span}" height="{ROW_H}" fill="none" stroke="#bbb"/>"##
        );
        let _ = writeln!(s, r#"<text x="4" y="{:.1}">{label}</text>"#, top + ROW_H / 2.0 + 4.0);
        let _ = writeln!(
            s,
            r##"<polyline fill="none" stroke="#1f77b4" stroke-width="1" points="{}"/>"##,
            points.join(" ")
        );
        let _ = writeln!(s, "</g>");
    }
    let _ = writeln!(s, r#"<text x="4" y="{:.1}">ground truth</text>"#, box_top + 13.0);
    for g in &plot.ground_truth {
        let _ = writeln!(
            s,
            r##"<rect class="gt" x="{:.2}" y="{box_top}" width="{:.2}" height="{BOX_H}" fill="#2ca02c" fill-opacity="0.6"><title>{} [{}, {}]</title></rect>"##,
            x(g.start),
            (x(g.end) - x(g.start)).max(1.0),
            name(g.category),
            g.start,
            g.end
        );
    }
    let prop_top = box_top + BOX_H + GAP;
    let _ = writeln!(s, r#"<text x="4" y="{:.1}">proposals</text>"#, prop_top + 13.0);
    for p in &plot.proposals {
        let _ = writeln!(
            s,
            r##"<rect class="proposal" x="{:.2}" y="{prop_top}" width="{:.2}" height="{BOX_H}" fill="#d62728" fill-opacity="0.5"><title>{} [{}, {}] score {:.4}</title></rect>"##,
            x(p.start),
            (x(p.end) - x(p.start)).max(1.0),
            name(p.category),
            p.start,
            p.end,
            p.score
        );
    }
    s.push_str("</svg>\n");
    s
}
