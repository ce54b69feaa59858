//! Differentiable layer primitives with explicit forward and backward passes.
//!
//! Layers are tape-free: a backward pass takes the values its forward pass
//! consumed (and, where cheaper, produced) and returns exact analytic
//! gradients.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::matrix::{dot, Matrix};
use crate::{Error, Result};

/// 1-D convolution over the time axis with zero padding, stride 1.
///
/// Weights are laid out `[k][in][out]`; output row `t` sums input rows
/// `t - K/2 ..= t + K/2`, treating rows outside the sequence as zero.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TemporalConv {
    pub kernel_size: usize,
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalConvGrads {
    pub input: Matrix,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl TemporalConv {
    pub fn zeros(kernel_size: usize, in_dim: usize, out_dim: usize) -> Result<Self> {
        check_kernel(kernel_size)?;
        Ok(Self {
            kernel_size,
            in_dim,
            out_dim,
            weights: vec![0.0; kernel_size * in_dim * out_dim],
            bias: vec![0.0; out_dim],
        })
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    #[inline]
    fn w_index(&self, k: usize, i: usize, o: usize) -> usize {
        (k * self.in_dim + i) * self.out_dim + o
    }

    fn validate(&self, input: &Matrix) -> Result<()> {
        check_kernel(self.kernel_size)?;
        if self.weights.len() != self.kernel_size * self.in_dim * self.out_dim {
            return Err(Error::shape(
                "temporal conv weights",
                self.kernel_size * self.in_dim * self.out_dim,
                self.weights.len(),
            ));
        }
        if self.bias.len() != self.out_dim {
            return Err(Error::shape("temporal conv bias", self.out_dim, self.bias.len()));
        }
        if input.rows() == 0 {
            return Err(Error::InvalidArgument("temporal conv input has zero rows".into()));
        }
        if input.cols() != self.in_dim {
            return Err(Error::shape("temporal conv input width", self.in_dim, input.cols()));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        self.validate(input)?;
        let t_len = input.rows();
        let half = self.kernel_size / 2;
        let mut out = Matrix::zeros(t_len, self.out_dim);
        for t in 0..t_len {
            let out_row = out.row_mut(t);
            out_row.copy_from_slice(&self.bias);
            for k in 0..self.kernel_size {
                let Some(src) = (t + k).checked_sub(half).filter(|&s| s < t_len) else {
                    continue;
                };
                for (i, &x) in input.row(src).iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    let base = self.w_index(k, i, 0);
                    let w = &self.weights[base..base + self.out_dim];
                    out_row.iter_mut().zip(w).for_each(|(o, w)| *o += x * w);
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&self, input: &Matrix, upstream: &Matrix) -> Result<TemporalConvGrads> {
        self.validate(input)?;
        if upstream.shape() != (input.rows(), self.out_dim) {
            return Err(Error::shape(
                "temporal conv upstream",
                format!("({}, {})", input.rows(), self.out_dim),
                format!("{:?}", upstream.shape()),
            ));
        }
        let t_len = input.rows();
        let half = self.kernel_size / 2;
        let mut d_input = Matrix::zeros(t_len, self.in_dim);
        let mut d_weights = vec![0.0; self.weights.len()];
        let mut d_bias = vec![0.0; self.out_dim];
        for t in 0..t_len {
            let g = upstream.row(t);
            d_bias.iter_mut().zip(g).for_each(|(b, g)| *b += g);
            for k in 0..self.kernel_size {
                let Some(src) = (t + k).checked_sub(half).filter(|&s| s < t_len) else {
                    continue;
                };
                for i in 0..self.in_dim {
                    let x = input.get(src, i);
                    let base = self.w_index(k, i, 0);
                    let w = &self.weights[base..base + self.out_dim];
                    let dw = &mut d_weights[base..base + self.out_dim];
                    dw.iter_mut().zip(g).for_each(|(dw, g)| *dw += x * g);
                    let di = dot(w, g);
                    d_input.row_mut(src)[i] += di;
                }
            }
        }
        Ok(TemporalConvGrads {
            input: d_input,
            weights: d_weights,
            bias: d_bias,
        })
    }
}

fn check_kernel(kernel_size: usize) -> Result<()> {
    if kernel_size % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "temporal conv kernel size must be odd, got {kernel_size}"
        )));
    }
    Ok(())
}

/// Fully-connected layer `y = x · W + b` with `W` of shape `in × out`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Linear {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads {
    pub input: Vec<f64>,
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(in_dim, out_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn num_params(&self) -> usize {
        self.weights.as_slice().len() + self.bias.len()
    }

    fn validate(&self, input: &[f64]) -> Result<()> {
        if self.bias.len() != self.out_dim() {
            return Err(Error::shape("fc bias", self.out_dim(), self.bias.len()));
        }
        if input.len() != self.in_dim() {
            return Err(Error::shape("fc input", self.in_dim(), input.len()));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.validate(input)?;
        let mut out = self.bias.clone();
        for (x, w_row) in input.iter().zip(self.weights.iter_rows()) {
            out.iter_mut().zip(w_row).for_each(|(o, w)| *o += x * w);
        }
        Ok(out)
    }

    /// Applies the layer to every row of `input`.
    pub fn forward_rows(&self, input: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(input.rows(), self.out_dim());
        for r in 0..input.rows() {
            let y = self.forward(input.row(r))?;
            out.row_mut(r).copy_from_slice(&y);
        }
        Ok(out)
    }

    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<LinearGrads> {
        let mut grads = LinearGrads {
            input: Vec::new(),
            weights: Matrix::zeros(self.in_dim(), self.out_dim()),
            bias: vec![0.0; self.out_dim()],
        };
        grads.input = self.accumulate_backward(input, upstream, &mut grads.weights, &mut grads.bias)?;
        Ok(grads)
    }

    /// Adds parameter gradients into `d_weights`/`d_bias` and returns the
    /// input gradient.
    pub fn accumulate_backward(
        &self,
        input: &[f64],
        upstream: &[f64],
        d_weights: &mut Matrix,
        d_bias: &mut [f64],
    ) -> Result<Vec<f64>> {
        self.validate(input)?;
        if upstream.len() != self.out_dim() {
            return Err(Error::shape("fc upstream", self.out_dim(), upstream.len()));
        }
        d_bias.iter_mut().zip(upstream).for_each(|(b, g)| *b += g);
        let mut d_input = Vec::with_capacity(input.len());
        for (i, &x) in input.iter().enumerate() {
            d_weights
                .row_mut(i)
                .iter_mut()
                .zip(upstream)
                .for_each(|(dw, g)| *dw += x * g);
            d_input.push(dot(self.weights.row(i), upstream));
        }
        Ok(d_input)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Gradient of sigmoid given its output `y = sigmoid(x)`.
#[inline]
pub fn sigmoid_backward(y: f64, upstream: f64) -> f64 {
    upstream * y * (1.0 - y)
}

/// Softmax with max subtraction.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|v| libm::exp(v - max)).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Vector-Jacobian product of softmax given its output `p`.
pub fn softmax_backward(p: &[f64], upstream: &[f64]) -> Vec<f64> {
    let inner = dot(p, upstream);
    p.iter().zip(upstream).map(|(p, g)| p * (g - inner)).collect()
}

pub fn relu_in_place(m: &mut Matrix) {
    m.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Masks `upstream` by the positivity of the ReLU output.
pub fn relu_backward(output: &Matrix, upstream: &mut Matrix) {
    upstream
        .as_mut_slice()
        .iter_mut()
        .zip(output.as_slice())
        .for_each(|(g, &y)| {
            if y <= 0.0 {
                *g = 0.0;
            }
        });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::gradcheck::{central_difference, grad_check};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, rand_vec(rng, r * c)).unwrap()
    }

    #[test]
    fn conv_identity_kernel_one() {
        let mut conv = TemporalConv::zeros(1, 3, 3).unwrap();
        for i in 0..3 {
            conv.weights[i * 3 + i] = 1.0;
        }
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.0, 4.0]]).unwrap();
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn conv_zero_weights_gives_bias() {
        let mut conv = TemporalConv::zeros(3, 2, 2).unwrap();
        conv.bias = vec![0.7, -1.5];
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let y = conv.forward(&x).unwrap();
        for row in y.iter_rows() {
            assert_eq!(row, &[0.7, -1.5]);
        }
    }

    #[test]
    fn conv_hand_example_zero_padding() {
        let conv = TemporalConv {
            kernel_size: 3,
            in_dim: 1,
            out_dim: 1,
            weights: vec![1.0, 1.0, 1.0],
            bias: vec![0.0],
        };
        let x = Matrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(conv.forward(&x).unwrap().as_slice(), &[3.0, 6.0, 5.0]);
    }

    #[test]
    fn conv_rejects_even_kernel_and_empty_input() {
        assert!(TemporalConv::zeros(2, 1, 1).is_err());
        let conv = TemporalConv::zeros(3, 2, 1).unwrap();
        assert!(conv.forward(&Matrix::zeros(0, 2)).is_err());
        assert!(conv.forward(&Matrix::zeros(4, 3)).is_err());
    }

    #[test]
    fn fc_examples() {
        let mut id = Linear::zeros(2, 2);
        id.weights.set(0, 0, 1.0);
        id.weights.set(1, 1, 1.0);
        assert_eq!(id.forward(&[0.3, -0.4]).unwrap(), vec![0.3, -0.4]);

        let mut z = Linear::zeros(2, 1);
        z.bias = vec![0.3];
        assert_eq!(z.forward(&[5.0, 6.0]).unwrap(), vec![0.3]);

        let fc = Linear {
            weights: Matrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap(),
            bias: vec![0.5],
        };
        assert_eq!(fc.forward(&[1.0, 2.0]).unwrap(), vec![-0.5]);
        assert!(fc.forward(&[1.0]).is_err());
    }

    #[test]
    fn fc_bias_gradient_is_upstream() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fc = Linear {
            weights: rand_matrix(&mut rng, 3, 2),
            bias: rand_vec(&mut rng, 2),
        };
        let g = fc.backward(&[0.1, 0.2, 0.3], &[0.25, -4.0]).unwrap();
        assert_eq!(g.bias, vec![0.25, -4.0]);
    }

    #[test]
    fn sigmoid_and_softmax_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid_backward(sigmoid(0.0), 1.0), 0.25);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        assert_eq!(softmax(&[1000.0, 1000.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let k = [1, 3, 5][trial % 3];
            let (t, din, dout) = (rng.random_range(1..7), rng.random_range(1..5), rng.random_range(1..5));
            let mut conv = TemporalConv::zeros(k, din, dout).unwrap();
            conv.weights = rand_vec(&mut rng, conv.weights.len());
            conv.bias = rand_vec(&mut rng, dout);
            let x = rand_matrix(&mut rng, t, din);
            let probe = rand_matrix(&mut rng, t, dout);
            let loss = |c: &TemporalConv, x: &Matrix| dot(c.forward(x).unwrap().as_slice(), probe.as_slice());
            let g = conv.backward(&x, &probe).unwrap();

            let report = grad_check(
                |w| {
                    let mut c = conv.clone();
                    c.weights.copy_from_slice(w);
                    loss(&c, &x)
                },
                &conv.weights,
                &g.weights,
                1e-5,
                1e-4,
            );
            assert!(report.passed, "weights trial {trial}: {report:?}");
            let report = grad_check(
                |b| {
                    let mut c = conv.clone();
                    c.bias.copy_from_slice(b);
                    loss(&c, &x)
                },
                &conv.bias,
                &g.bias,
                1e-5,
                1e-4,
            );
            assert!(report.passed, "bias trial {trial}: {report:?}");
            let report = grad_check(
                |xs| loss(&conv, &Matrix::from_vec(t, din, xs.to_vec()).unwrap()),
                x.as_slice(),
                g.input.as_slice(),
                1e-5,
                1e-4,
            );
            assert!(report.passed, "input trial {trial}: {report:?}");
        }
    }

    #[test]
    fn fc_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..20 {
            let (din, dout) = (rng.random_range(1..6), rng.random_range(1..6));
            let fc = Linear {
                weights: rand_matrix(&mut rng, din, dout),
                bias: rand_vec(&mut rng, dout),
            };
            let x = rand_vec(&mut rng, din);
            let probe = rand_vec(&mut rng, dout);
            let g = fc.backward(&x, &probe).unwrap();
            let report = grad_check(
                |w| {
                    let mut f = fc.clone();
                    f.weights.as_mut_slice().copy_from_slice(w);
                    dot(&f.forward(&x).unwrap(), &probe)
                },
                fc.weights.as_slice(),
                g.weights.as_slice(),
                1e-5,
                1e-4,
            );
            assert!(report.passed, "trial {trial}: {report:?}");
            let report = grad_check(|xs| dot(&fc.forward(xs).unwrap(), &probe), &x, &g.input, 1e-5, 1e-4);
            assert!(report.passed, "trial {trial}: {report:?}");
        }
    }

    #[test]
    fn softmax_and_sigmoid_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let n = rng.random_range(1..6);
            let z: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let probe = rand_vec(&mut rng, n);
            let analytic = softmax_backward(&softmax(&z), &probe);
            let report = grad_check(|z| dot(&softmax(z), &probe), &z, &analytic, 1e-5, 1e-4);
            assert!(report.passed, "{report:?}");

            let x = rng.random_range(-4.0..4.0);
            let numeric = central_difference(|p| sigmoid(p[0]), &[x], 1e-5)[0];
            let analytic = sigmoid_backward(sigmoid(x), 1.0);
            assert!((numeric - analytic).abs() / analytic.abs().max(1e-8) < 1e-4);
        }
    }

    #[test]
    fn relu_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..20 {
            // keep away from the kink
            let x: Vec<f64> = (0..6)
                .map(|_| {
                    let v: f64 = rng.random_range(0.01..2.0);
                    if rng.random_bool(0.5) { v } else { -v }
                })
                .collect();
            let probe = rand_vec(&mut rng, 6);
            let xm = Matrix::from_vec(2, 3, x.clone()).unwrap();
            let mut out = xm.clone();
            relu_in_place(&mut out);
            let mut g = Matrix::from_vec(2, 3, probe.clone()).unwrap();
            relu_backward(&out, &mut g);
            let report = grad_check(
                |p| {
                    let mut m = Matrix::from_vec(2, 3, p.to_vec()).unwrap();
                    relu_in_place(&mut m);
                    dot(m.as_slice(), &probe)
                },
                &x,
                g.as_slice(),
                1e-5,
                1e-4,
            );
            assert!(report.passed, "{report:?}");
        }
    }
}
