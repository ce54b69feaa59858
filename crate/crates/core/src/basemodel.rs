//! Single-stream model: temporal convolution embedding, attention head,
//! attention-weighted pooling, video-level classifier and T-CAM.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numkit::{
    dot, relu_backward, relu_in_place, sigmoid, softmax, softmax_backward, Linear, Matrix, TemporalConv,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Modality {
    Rgb,
    Flow,
}

impl Modality {
    pub const BOTH: [Modality; 2] = [Modality::Rgb, Modality::Flow];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Flow => "flow",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rgb" => Some(Modality::Rgb),
            "flow" => Some(Modality::Flow),
            _ => None,
        }
    }
}

impl core::fmt::Display for Modality {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ModelConfig {
    /// Number of temporal convolutions, each followed by ReLU.
    pub conv_layers: usize,
    pub kernel_size: usize,
    /// Embedding width; `None` keeps the input feature width.
    pub embed_dim: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            conv_layers: 2,
            kernel_size: 3,
            embed_dim: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.embed_dim == Some(0) {
            return Err(Error::InvalidConfig("embed_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Parameters of one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamModel {
    pub modality: Modality,
    pub convs: Vec<TemporalConv>,
    /// `D' x 1` attention head.
    pub attention: Linear,
    /// `D' x C` classification head shared by pooling and T-CAM.
    pub classifier: Linear,
}

/// Per-stream outputs for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTcam {
    pub attention: Vec<f64>,
    pub tcam: Matrix,
    pub video_prediction: Vec<f64>,
    pub embedded: Matrix,
    pub foreground_feature: Vec<f64>,
}

/// A recorded forward pass: outputs plus the hidden activations needed by
/// [`StreamModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub output: AttentionTcam,
    /// Post-ReLU outputs of every conv layer except the last (which is
    /// `output.embedded`).
    hidden: Vec<Matrix>,
}

/// Gradients of a scalar objective with respect to the stream outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Upstream {
    pub attention: Vec<f64>,
    pub video_prediction: Vec<f64>,
    pub tcam: Option<Matrix>,
}

impl Upstream {
    pub fn zeros(t_len: usize, num_classes: usize) -> Self {
        Self {
            attention: vec![0.0; t_len],
            video_prediction: vec![0.0; num_classes],
            tcam: None,
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        let mut s = self.clone();
        s.attention.iter_mut().for_each(|v| *v *= k);
        s.video_prediction.iter_mut().for_each(|v| *v *= k);
        if let Some(t) = s.tcam.as_mut() {
            t.scale(k);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParamGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamGrads {
    pub convs: Vec<ConvParamGrads>,
    pub attention_weights: Matrix,
    pub attention_bias: Vec<f64>,
    pub classifier_weights: Matrix,
    pub classifier_bias: Vec<f64>,
}

impl StreamGrads {
    /// Gradient slices in [`StreamModel::param_slices_mut`] order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.convs.len() + 4);
        for c in &self.convs {
            out.push(c.weights.as_slice());
            out.push(c.bias.as_slice());
        }
        out.push(self.attention_weights.as_slice());
        out.push(&self.attention_bias);
        out.push(self.classifier_weights.as_slice());
        out.push(&self.classifier_bias);
        out
    }

    pub fn flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

impl StreamModel {
    /// Fan-in scaled uniform weights in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`,
    /// zero biases.
    pub fn init(
        config: &ModelConfig,
        input_dim: usize,
        num_classes: usize,
        modality: Modality,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 || num_classes == 0 {
            return Err(Error::InvalidArgument(format!(
                "input_dim ({input_dim}) and num_classes ({num_classes}) must be positive"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed = config.embed_dim.unwrap_or(input_dim);
        let mut uniform = |n: usize, fan_in: usize| -> Vec<f64> {
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
        };
        let mut convs = Vec::with_capacity(config.conv_layers);
        let mut width = input_dim;
        for _ in 0..config.conv_layers {
            let mut conv = TemporalConv::zeros(config.kernel_size, width, embed)?;
            conv.weights = uniform(conv.weights.len(), config.kernel_size * width);
            convs.push(conv);
            width = embed;
        }
        let attention = Linear {
            weights: Matrix::from_vec(width, 1, uniform(width, width))?,
            bias: vec![0.0],
        };
        let classifier = Linear {
            weights: Matrix::from_vec(width, num_classes, uniform(width * num_classes, width))?,
            bias: vec![0.0; num_classes],
        };
        Ok(Self {
            modality,
            convs,
            attention,
            classifier,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.convs.first().map_or(self.embed_dim(), |c| c.in_dim)
    }

    pub fn embed_dim(&self) -> usize {
        self.classifier.in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.out_dim()
    }

    pub fn kernel_size(&self) -> usize {
        self.convs.first().map_or(1, |c| c.kernel_size)
    }

    pub fn num_params(&self) -> usize {
        self.convs.iter().map(TemporalConv::num_params).sum::<usize>()
            + self.attention.num_params()
            + self.classifier.num_params()
    }

    /// Parameter groups in a fixed order: per conv layer (weights, bias),
    /// then attention (weights, bias), then classifier (weights, bias).
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.convs.len() + 4);
        for c in &mut self.convs {
            out.push(&mut c.weights);
            out.push(&mut c.bias);
        }
        out.push(self.attention.weights.as_mut_slice());
        out.push(&mut self.attention.bias);
        out.push(self.classifier.weights.as_mut_slice());
        out.push(&mut self.classifier.bias);
        out
    }

    /// Names and lengths of the parameter groups, in
    /// [`param_slices_mut`](Self::param_slices_mut) order.
    pub fn param_layout(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{i}.weights"), c.weights.len()));
            out.push((format!("conv{i}.bias"), c.bias.len()));
        }
        out.push(("attention.weights".into(), self.attention.weights.as_slice().len()));
        out.push(("attention.bias".into(), 1));
        out.push(("classifier.weights".into(), self.classifier.weights.as_slice().len()));
        out.push(("classifier.bias".into(), self.classifier.bias.len()));
        out
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut m = self.clone();
        m.param_slices_mut().iter().flat_map(|s| s.iter().copied()).collect()
    }

    pub fn set_params_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::shape("StreamModel::set_params_flat", self.num_params(), values.len()));
        }
        let mut offset = 0;
        for s in self.param_slices_mut() {
            s.copy_from_slice(&values[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params_flat().iter().all(|v| v.is_finite())
    }

    /// Checks that `other` has the same architecture.
    pub fn same_shape(&self, other: &StreamModel) -> bool {
        self.param_layout() == other.param_layout()
            && self.convs.iter().zip(&other.convs).all(|(a, b)| a.kernel_size == b.kernel_size)
    }

    pub fn forward(&self, features: &Matrix) -> Result<ForwardPass> {
        if features.rows() == 0 {
            return Err(Error::InvalidArgument("video has zero snippets".into()));
        }
        if features.cols() != self.input_dim() {
            return Err(Error::shape("stream input width", self.input_dim(), features.cols()));
        }
        let mut hidden = Vec::with_capacity(self.convs.len());
        let mut h = features.clone();
        for conv in &self.convs {
            let mut out = conv.forward(&h)?;
            relu_in_place(&mut out);
            hidden.push(core::mem::replace(&mut h, out));
        }
        // hidden[0] is the features; keep only conv outputs
        if !hidden.is_empty() {
            hidden.remove(0);
        }
        let embedded = h;
        let t_len = embedded.rows();
        let w_att = self.attention.weights.as_slice();
        let b_att = self.attention.bias[0];
        let attention: Vec<f64> = embedded.iter_rows().map(|x| sigmoid(dot(w_att, x) + b_att)).collect();
        let mass: f64 = attention.iter().sum();
        let mut fg = vec![0.0; embedded.cols()];
        for (a, x) in attention.iter().zip(embedded.iter_rows()) {
            fg.iter_mut().zip(x).for_each(|(f, x)| *f += a * x);
        }
        fg.iter_mut().for_each(|f| *f /= mass);
        let video_prediction = softmax(&self.classifier.forward(&fg)?);
        let mut tcam = Matrix::zeros(t_len, self.num_classes());
        for t in 0..t_len {
            let s = softmax(&self.classifier.forward(embedded.row(t))?);
            tcam.row_mut(t).copy_from_slice(&s);
        }
        Ok(ForwardPass {
            output: AttentionTcam {
                attention,
                tcam,
                video_prediction,
                embedded,
                foreground_feature: fg,
            },
            hidden,
        })
    }

    /// Parameter gradients of the objective whose output gradients are
    /// `upstream`, through the pass recorded on `features`.
    pub fn backward(&self, features: &Matrix, pass: &ForwardPass, upstream: &Upstream) -> Result<StreamGrads> {
        let out = &pass.output;
        let t_len = features.rows();
        let c = self.num_classes();
        let d = self.embed_dim();
        if out.embedded.shape() != (t_len, d)
            || out.tcam.shape() != (t_len, c)
            || pass.hidden.len() + 1 != self.convs.len().max(1)
            || features.cols() != self.input_dim()
        {
            return Err(Error::InvalidArgument(
                "forward pass was not recorded with this model and these features".into(),
            ));
        }
        if upstream.attention.len() != t_len {
            return Err(Error::shape("upstream attention", t_len, upstream.attention.len()));
        }
        if upstream.video_prediction.len() != c {
            return Err(Error::shape("upstream video prediction", c, upstream.video_prediction.len()));
        }
        if let Some(tcam) = &upstream.tcam {
            if tcam.shape() != (t_len, c) {
                return Err(Error::shape("upstream tcam", format!("({t_len}, {c})"), format!("{:?}", tcam.shape())));
            }
        }

        let mut cls_w = Matrix::zeros(d, c);
        let mut cls_b = vec![0.0; c];
        let mut att_w = Matrix::zeros(d, 1);
        let mut att_b = vec![0.0];
        let x = &out.embedded;
        let mut d_x = Matrix::zeros(t_len, d);

        // video-level classifier and attention-weighted pooling
        let d_logits = softmax_backward(&out.video_prediction, &upstream.video_prediction);
        let d_fg = self
            .classifier
            .accumulate_backward(&out.foreground_feature, &d_logits, &mut cls_w, &mut cls_b)?;
        let mass: f64 = out.attention.iter().sum();
        let mut d_att = upstream.attention.clone();
        for t in 0..t_len {
            let xt = x.row(t);
            let centered: f64 = d_fg
                .iter()
                .zip(xt)
                .zip(&out.foreground_feature)
                .map(|((g, xi), f)| g * (xi - f))
                .sum();
            d_att[t] += centered / mass;
            let k = out.attention[t] / mass;
            d_x.row_mut(t).iter_mut().zip(&d_fg).for_each(|(dx, g)| *dx += k * g);
        }

        if let Some(d_tcam) = &upstream.tcam {
            for t in 0..t_len {
                let dl = softmax_backward(out.tcam.row(t), d_tcam.row(t));
                let dx = self.classifier.accumulate_backward(x.row(t), &dl, &mut cls_w, &mut cls_b)?;
                d_x.row_mut(t).iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
            }
        }

        for t in 0..t_len {
            let a = out.attention[t];
            let dz = d_att[t] * a * (1.0 - a);
            let dx = self.attention.accumulate_backward(x.row(t), &[dz], &mut att_w, &mut att_b)?;
            d_x.row_mut(t).iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
        }

        let mut conv_grads = Vec::with_capacity(self.convs.len());
        let mut upstream_h = d_x;
        for (l, conv) in self.convs.iter().enumerate().rev() {
            let output = if l + 1 == self.convs.len() { x } else { &pass.hidden[l] };
            let input = if l == 0 { features } else { &pass.hidden[l - 1] };
            relu_backward(output, &mut upstream_h);
            let g = conv.backward(input, &upstream_h)?;
            conv_grads.push(ConvParamGrads {
                weights: g.weights,
                bias: g.bias,
            });
            upstream_h = g.input;
        }
        conv_grads.reverse();

        Ok(StreamGrads {
            convs: conv_grads,
            attention_weights: att_w,
            attention_bias: att_b,
            classifier_weights: cls_w,
            classifier_bias: cls_b,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{
        attention_norm_loss, classification_loss, classification_loss_grad, pseudo_gt_loss, pseudo_gt_loss_grad,
    };
    use crate::numkit::grad_check;

    fn random_features(seed: u64, t: usize, d: usize) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(t, d, |_, _| rng.random_range(-1.0..1.0))
    }

    fn tiny_model(seed: u64) -> StreamModel {
        let cfg = ModelConfig {
            embed_dim: Some(5),
            ..Default::default()
        };
        StreamModel::init(&cfg, 4, 3, Modality::Rgb, seed).unwrap()
    }

    #[test]
    fn zeroed_attention_gives_plain_mean() {
        let mut m = tiny_model(1);
        m.attention.weights.scale(0.0);
        let f = random_features(2, 6, 4);
        let out = m.forward(&f).unwrap().output;
        assert!(out.attention.iter().all(|&a| a == 0.5));
        for j in 0..5 {
            let mean = out.embedded.column(j).iter().sum::<f64>() / 6.0;
            assert!((out.foreground_feature[j] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn single_snippet_pools_to_itself() {
        let m = tiny_model(3);
        let out = m.forward(&random_features(4, 1, 4)).unwrap().output;
        for (a, b) in out.foreground_feature.iter().zip(out.embedded.row(0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zeroed_classifier_is_uniform() {
        let mut m = tiny_model(5);
        m.classifier.weights.scale(0.0);
        let out = m.forward(&random_features(6, 7, 4)).unwrap().output;
        for row in out.tcam.iter_rows().chain(core::iter::once(out.video_prediction.as_slice())) {
            assert!(row.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        }
    }

    #[test]
    fn output_contracts() {
        let m = tiny_model(7);
        let out = m.forward(&random_features(8, 9, 4)).unwrap().output;
        assert!(out.attention.iter().all(|&a| a > 0.0 && a < 1.0));
        for row in out.tcam.iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!((out.video_prediction.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // T-CAM row equals the classifier applied to that embedded snippet
        for t in 0..9 {
            let s = softmax(&m.classifier.forward(out.embedded.row(t)).unwrap());
            assert_eq!(s.as_slice(), out.tcam.row(t));
        }
    }

    #[test]
    fn outputs_depend_only_on_receptive_field() {
        let m = tiny_model(9);
        let f = random_features(10, 12, 4);
        let base = m.forward(&f).unwrap().output;
        // two K=3 layers see two rows on each side
        let mut g = f.clone();
        g.row_mut(11).iter_mut().for_each(|v| *v += 3.0);
        let moved = m.forward(&g).unwrap().output;
        for t in 0..9 {
            assert_eq!(base.attention[t], moved.attention[t]);
            assert_eq!(base.tcam.row(t), moved.tcam.row(t));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = tiny_model(1);
        assert!(m.forward(&Matrix::zeros(0, 4)).is_err());
        assert!(m.forward(&Matrix::zeros(5, 3)).is_err());
        let f = random_features(1, 5, 4);
        let pass = m.forward(&f).unwrap();
        let g = random_features(1, 6, 4);
        assert!(m.backward(&g, &pass, &Upstream::zeros(6, 3)).is_err());
        assert!(m.backward(&f, &pass, &Upstream::zeros(4, 3)).is_err());
    }

    #[test]
    fn streams_initialize_independently() {
        let cfg = ModelConfig::default();
        let a = StreamModel::init(&cfg, 4, 3, Modality::Rgb, 1).unwrap();
        let b = StreamModel::init(&cfg, 4, 3, Modality::Flow, 2).unwrap();
        assert!(a.same_shape(&b));
        assert_ne!(a.params_flat(), b.params_flat());
        assert!(a.attention.bias == [0.0] && a.convs.iter().all(|c| c.bias.iter().all(|&b| b == 0.0)));
        let bound = 1.0 / libm::sqrt(12.0);
        assert!(a.convs[0].weights.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn flat_params_round_trip() {
        let mut m = tiny_model(4);
        let mut p = m.params_flat();
        assert_eq!(p.len(), m.num_params());
        assert_eq!(m.param_layout().iter().map(|(_, n)| n).sum::<usize>(), m.num_params());
        p.iter_mut().for_each(|v| *v *= 2.0);
        m.set_params_flat(&p).unwrap();
        assert_eq!(m.params_flat(), p);
        assert!(m.set_params_flat(&p[1..]).is_err());
    }

    #[test]
    fn attention_only_loss_with_single_snippet_has_no_attention_gradient_from_pooling() {
        let m = tiny_model(11);
        let f = random_features(12, 1, 4);
        let pass = m.forward(&f).unwrap();
        let y = [0.0, 1.0, 0.0];
        let up = Upstream {
            attention: vec![0.0],
            video_prediction: classification_loss_grad(&y, &pass.output.video_prediction).unwrap(),
            tcam: None,
        };
        let g = m.backward(&f, &pass, &up).unwrap();
        assert!(g.attention_weights.as_slice().iter().all(|&v| v.abs() < 1e-15));
        assert!(g.attention_bias[0].abs() < 1e-15);
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let m = tiny_model(13);
        let f = random_features(14, 6, 4);
        let pass = m.forward(&f).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let up = Upstream {
            attention: (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
            video_prediction: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
            tcam: Some(Matrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0))),
        };
        let g1 = m.backward(&f, &pass, &up).unwrap().flat();
        let g2 = m.backward(&f, &pass, &up.scaled(2.0)).unwrap().flat();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    /// Full refinement objective with a T-CAM probe term so every path is
    /// exercised.
    fn full_objective(m: &StreamModel, f: &Matrix, y: &[f64], gt: &[f64], probe: &Matrix) -> f64 {
        let out = m.forward(f).unwrap().output;
        classification_loss(y, &out.video_prediction).unwrap()
            + 0.1 * attention_norm_loss(&out.attention, 2).value
            + 2.0 * pseudo_gt_loss(&out.attention, gt).unwrap()
            + dot(out.tcam.as_slice(), probe.as_slice())
    }

    #[test]
    fn full_loss_gradient_check() {
        for seed in 0..20u64 {
            let m = tiny_model(100 + seed);
            let f = random_features(200 + seed, 6, 4);
            let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
            let y = [0.5, 0.0, 0.5];
            let gt: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
            let probe = Matrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));

            let pass = m.forward(&f).unwrap();
            let out = &pass.output;
            let norm = attention_norm_loss(&out.attention, 2);
            let mut d_att = norm.gradient(6);
            d_att.iter_mut().for_each(|v| *v *= 0.1);
            for (d, g) in d_att.iter_mut().zip(pseudo_gt_loss_grad(&out.attention, &gt).unwrap()) {
                *d += 2.0 * g;
            }
            let up = Upstream {
                attention: d_att,
                video_prediction: classification_loss_grad(&y, &out.video_prediction).unwrap(),
                tcam: Some(probe.clone()),
            };
            let analytic = m.backward(&f, &pass, &up).unwrap().flat();
            let report = grad_check(
                |p| {
                    let mut mm = m.clone();
                    mm.set_params_flat(p).unwrap();
                    full_objective(&mm, &f, &y, &gt, &probe)
                },
                &m.params_flat(),
                &analytic,
                1e-5,
                1e-4,
            );
            assert!(report.passed, "seed {seed}: {report:?}");
        }
    }
}
