//! Two-stream fusion, pseudo ground truth generation and the iterative
//! refinement training loop.
//!
//! Iteration 0 trains both streams from video-level labels only. Before
//! iteration `n + 1`, the lowest-loss checkpoints of iteration `n` are
//! frozen, their fused attention on every training video becomes the
//! frame-level pseudo ground truth, and both streams continue training
//! (warm-started, fresh optimizer) with the extra MSE term.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basemodel::{ModelConfig, Modality, StreamModel, Upstream};
use crate::losses::{
    attention_norm_loss, classification_loss, classification_loss_grad, pseudo_gt_loss, pseudo_gt_loss_grad,
    total_loss, LossConfig,
};
use crate::numkit::AdamState;
use crate::synthdata::VideoSample;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum PseudoGtKind {
    Soft,
    Hard,
}

impl PseudoGtKind {
    pub fn name(self) -> &'static str {
        match self {
            PseudoGtKind::Soft => "soft",
            PseudoGtKind::Hard => "hard",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoGroundTruth {
    pub video_id: String,
    pub values: Vec<f64>,
    pub kind: PseudoGtKind,
    /// Iteration whose checkpoints produced these targets.
    pub source_iteration: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RefinementConfig {
    /// RGB weight in the late fusion.
    pub beta: f64,
    /// Hard pseudo ground truth threshold (strict).
    pub theta: f64,
    pub kind: PseudoGtKind,
    /// Number of refinement iterations after iteration 0.
    pub iterations: usize,
    pub epochs_initial: usize,
    pub epochs_refine: usize,
    /// Temporal max pooling kernel applied to fused attention before
    /// pseudo ground truth generation.
    pub smoothing: Option<usize>,
    pub learning_rate: f64,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            beta: 0.4,
            theta: 0.5,
            kind: PseudoGtKind::Hard,
            iterations: 4,
            epochs_initial: 80,
            epochs_refine: 40,
            smoothing: None,
            learning_rate: 1e-4,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidConfig(format!("beta must be in [0, 1], got {}", self.beta)));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::InvalidConfig(format!("theta must be in (0, 1), got {}", self.theta)));
        }
        if let Some(k) = self.smoothing {
            if k % 2 == 0 {
                return Err(Error::InvalidConfig(format!("smoothing kernel must be odd, got {k}")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn epochs_for(&self, iteration: usize) -> usize {
        if iteration == 0 {
            self.epochs_initial
        } else {
            self.epochs_refine
        }
    }
}

/// `beta * rgb + (1 - beta) * flow`, elementwise.
pub fn fuse_attention(rgb: &[f64], flow: &[f64], beta: f64) -> Result<Vec<f64>> {
    if rgb.len() != flow.len() {
        return Err(Error::shape("fuse_attention", rgb.len(), flow.len()));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("beta must be in [0, 1], got {beta}")));
    }
    Ok(rgb
        .iter()
        .zip(flow)
        .map(|(&r, &f)| if r == f { r } else { beta * r + (1.0 - beta) * f })
        .collect())
}

/// Stride-1 max pooling over a centered window truncated at the boundaries.
pub fn max_pool_smooth(attention: &[f64], kernel: usize) -> Result<Vec<f64>> {
    if kernel % 2 == 0 {
        return Err(Error::InvalidArgument(format!("pooling kernel must be odd, got {kernel}")));
    }
    let half = kernel / 2;
    let n = attention.len();
    Ok((0..n)
        .map(|t| {
            attention[t.saturating_sub(half)..(t + half + 1).min(n)]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect())
}

pub fn make_pseudo_gt(
    video_id: &str,
    fused: &[f64],
    kind: PseudoGtKind,
    theta: f64,
    source_iteration: usize,
) -> Result<PseudoGroundTruth> {
    if let Some(v) = fused.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!(
            "fused attention value {v} outside [0, 1] for {video_id}"
        )));
    }
    let values = match kind {
        PseudoGtKind::Soft => fused.to_vec(),
        PseudoGtKind::Hard => fused.iter().map(|&a| if a > theta { 1.0 } else { 0.0 }).collect(),
    };
    Ok(PseudoGroundTruth {
        video_id: video_id.into(),
        values,
        kind,
        source_iteration,
    })
}

/// Pseudo ground truth for every video from frozen stream checkpoints.
pub fn generate_pseudo_gt(
    rgb: &StreamModel,
    flow: &StreamModel,
    videos: &[VideoSample],
    config: &RefinementConfig,
    source_iteration: usize,
) -> Result<Vec<PseudoGroundTruth>> {
    videos
        .iter()
        .map(|v| {
            let a_rgb = rgb.forward(&v.rgb)?.output.attention;
            let a_flow = flow.forward(&v.flow)?.output.attention;
            let mut fused = fuse_attention(&a_rgb, &a_flow, config.beta)?;
            if let Some(k) = config.smoothing {
                fused = max_pool_smooth(&fused, k)?;
            }
            make_pseudo_gt(&v.id, &fused, config.kind, config.theta, source_iteration)
        })
        .collect()
}

/// Per-epoch mean losses of one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub iteration: usize,
    pub epoch: usize,
    pub stream: Modality,
    pub mean_cls_loss: f64,
    pub mean_att_loss: f64,
    /// Absent at iteration 0.
    pub mean_gt_loss: Option<f64>,
    pub mean_total_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoGtStats {
    pub videos: usize,
    pub snippets: usize,
    pub mean_value: f64,
    /// Fraction of snippets with target above 0.5.
    pub foreground_fraction: f64,
}

impl PseudoGtStats {
    pub fn of(gts: &[PseudoGroundTruth]) -> Self {
        let snippets: usize = gts.iter().map(|g| g.values.len()).sum();
        let (sum, fg) = gts
            .iter()
            .flat_map(|g| &g.values)
            .fold((0.0, 0usize), |(s, n), &v| (s + v, n + usize::from(v > 0.5)));
        let denom = snippets.max(1) as f64;
        Self {
            videos: gts.len(),
            snippets,
            mean_value: sum / denom,
            foreground_fraction: fg as f64 / denom,
        }
    }
}

/// Selected checkpoint of one stream within an iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: StreamModel,
    /// 0-based epoch within the iteration.
    pub epoch: usize,
    pub mean_total_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationResult {
    pub iteration: usize,
    pub rgb: Checkpoint,
    pub flow: Checkpoint,
    /// Targets used for training in this iteration (none at iteration 0).
    pub pseudo_gt: Option<Vec<PseudoGroundTruth>>,
}

impl IterationResult {
    pub fn checkpoint(&self, modality: Modality) -> &Checkpoint {
        match modality {
            Modality::Rgb => &self.rgb,
            Modality::Flow => &self.flow,
        }
    }

    pub fn pseudo_gt_stats(&self) -> Option<PseudoGtStats> {
        self.pseudo_gt.as_deref().map(PseudoGtStats::of)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementRun {
    pub iterations: Vec<IterationResult>,
    pub log: Vec<EpochLog>,
}

impl RefinementRun {
    pub fn last(&self) -> &IterationResult {
        self.iterations.last().expect("a run has at least iteration 0")
    }
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingSetup {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub refinement: RefinementConfig,
    pub seed: u64,
}

impl TrainingSetup {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.refinement.validate()
    }

    /// Initial parameter seeds for the RGB and flow streams.
    pub fn stream_seeds(&self) -> [u64; 2] {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        [rng.next_u64(), rng.next_u64()]
    }
}

pub fn run_refinement(
    videos: &[VideoSample],
    num_classes: usize,
    setup: &TrainingSetup,
) -> Result<RefinementRun> {
    run_refinement_with(videos, num_classes, setup, |_| {})
}

/// [`run_refinement`] with a callback invoked after every epoch of each stream.
pub fn run_refinement_with(
    videos: &[VideoSample],
    num_classes: usize,
    setup: &TrainingSetup,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<RefinementRun> {
    setup.validate()?;
    let first = videos
        .first()
        .ok_or_else(|| Error::InvalidArgument("training set is empty".into()))?;
    let feature_dim = first.rgb.cols();
    for v in videos {
        v.validate(num_classes, feature_dim)?;
    }

    let [rgb_seed, flow_seed] = setup.stream_seeds();
    let mut models = [
        StreamModel::init(&setup.model, feature_dim, num_classes, Modality::Rgb, rgb_seed)?,
        StreamModel::init(&setup.model, feature_dim, num_classes, Modality::Flow, flow_seed)?,
    ];
    let mut order_rng = ChaCha8Rng::seed_from_u64(setup.seed ^ 0x5eed_0f0d_e7a1_1ed5);
    let mut run = RefinementRun {
        iterations: Vec::with_capacity(setup.refinement.iterations + 1),
        log: Vec::new(),
    };
    let mut pseudo_gt: Option<Vec<PseudoGroundTruth>> = None;

    for iteration in 0..=setup.refinement.iterations {
        if iteration > 0 {
            let prev = run.last();
            pseudo_gt = Some(generate_pseudo_gt(
                &prev.rgb.model,
                &prev.flow.model,
                videos,
                &setup.refinement,
                iteration - 1,
            )?);
            models = [prev.rgb.model.clone(), prev.flow.model.clone()];
        }
        let epochs = setup.refinement.epochs_for(iteration);
        let orders: Vec<Vec<usize>> = (0..epochs)
            .map(|_| {
                let mut o: Vec<usize> = (0..videos.len()).collect();
                o.shuffle(&mut order_rng);
                o
            })
            .collect();

        let mut best: Vec<Checkpoint> = Vec::with_capacity(2);
        for model in &mut models {
            let (checkpoint, logs) =
                train_stream(model, videos, pseudo_gt.as_deref(), &orders, iteration, setup, &mut on_epoch)?;
            run.log.extend(logs);
            best.push(checkpoint);
        }
        let flow = best.pop().expect("two streams");
        let rgb = best.pop().expect("two streams");
        run.iterations.push(IterationResult {
            iteration,
            rgb,
            flow,
            pseudo_gt: pseudo_gt.take(),
        });
    }
    Ok(run)
}

/// Trains one stream for one refinement iteration with a fresh optimizer and
/// returns its lowest-loss epoch checkpoint.
fn train_stream(
    model: &mut StreamModel,
    videos: &[VideoSample],
    pseudo_gt: Option<&[PseudoGroundTruth]>,
    orders: &[Vec<usize>],
    iteration: usize,
    setup: &TrainingSetup,
    on_epoch: &mut impl FnMut(&EpochLog),
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    let stream = model.modality;
    let cfg = &setup.loss;
    let mut adam = AdamState::new(model.num_params(), setup.refinement.learning_rate);
    let mut best: Option<Checkpoint> = None;
    let mut logs = Vec::with_capacity(orders.len());

    for (epoch, order) in orders.iter().enumerate() {
        let (mut cls_sum, mut att_sum, mut gt_sum, mut total_sum) = (0.0, 0.0, 0.0, 0.0);
        for &vi in order {
            let video = &videos[vi];
            let non_finite = |quantity| Error::NonFinite {
                quantity,
                stream: stream.name(),
                iteration,
                epoch,
                video: video.id.clone(),
            };
            let features = video.features(stream);
            let pass = model.forward(features)?;
            let out = &pass.output;
            let cls = classification_loss(&video.label, &out.video_prediction)?;
            let norm = attention_norm_loss(&out.attention, cfg.s);
            let mut d_att = norm.gradient(out.attention.len());
            d_att.iter_mut().for_each(|g| *g *= cfg.alpha);
            let gt_loss = match pseudo_gt {
                Some(gts) => {
                    let gt = &gts[vi].values;
                    let d_gt = pseudo_gt_loss_grad(&out.attention, gt)?;
                    d_att.iter_mut().zip(d_gt).for_each(|(d, g)| *d += cfg.gamma * g);
                    Some(pseudo_gt_loss(&out.attention, gt)?)
                }
                None => None,
            };
            let total = total_loss(cls, norm.value, gt_loss, iteration, cfg)?;
            if !total.is_finite() {
                return Err(non_finite("loss"));
            }
            let upstream = Upstream {
                attention: d_att,
                video_prediction: classification_loss_grad(&video.label, &out.video_prediction)?,
                tcam: None,
            };
            let grads = model.backward(features, &pass, &upstream)?;
            if !grads.is_finite() {
                return Err(non_finite("gradient"));
            }
            adam.step_groups(&mut model.param_slices_mut(), &grads.slices())?;
            if !model.is_finite() {
                return Err(non_finite("parameter"));
            }
            cls_sum += cls;
            att_sum += norm.value;
            gt_sum += gt_loss.unwrap_or(0.0);
            total_sum += total;
        }
        let n = order.len() as f64;
        let log = EpochLog {
            iteration,
            epoch,
            stream,
            mean_cls_loss: cls_sum / n,
            mean_att_loss: att_sum / n,
            mean_gt_loss: pseudo_gt.map(|_| gt_sum / n),
            mean_total_loss: total_sum / n,
        };
        on_epoch(&log);
        if best.as_ref().map_or(true, |b| log.mean_total_loss < b.mean_total_loss) {
            best = Some(Checkpoint {
                model: model.clone(),
                epoch,
                mean_total_loss: log.mean_total_loss,
            });
        }
        logs.push(log);
    }
    let best = best.unwrap_or_else(|| Checkpoint {
        model: model.clone(),
        epoch: 0,
        mean_total_loss: f64::NAN,
    });
    *model = best.model.clone();
    Ok((best, logs))
}
