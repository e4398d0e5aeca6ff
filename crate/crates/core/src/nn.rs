//! Small residual MLPs with reverse-mode gradients, AdamW, and a
//! central-difference gradient checker.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;

/// Anything exposing its trainable tensors as flat slices, in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Flat copy of every tensor, in tensor order.
    fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }
}

/// Plain parameter vector, used by the linear downstream models and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams(pub Vec<f64>);

impl Parameters for FlatParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.0]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in x out`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }

    fn random(fan_in: usize, fan_out: usize, rng: &mut rng::Rng) -> Self {
        let scale = 1.0 / (fan_in.max(1) as f64).sqrt();
        let w = Array2::from_shape_simple_fn((fan_in, fan_out), || {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        });
        Linear {
            w,
            b: Array1::zeros(fan_out),
        }
    }

    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w);
        y += &self.b;
        y
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Shape of a residual MLP: `depth` hidden layers of width `hidden`.
/// `depth = 0` gives a single linear map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: usize,
    pub depth: usize,
    pub output: usize,
}

/// `h1 = silu(x W0 + b0)`, `h_{l+1} = h_l + silu(h_l W_l + b_l)`, `y = h W_out + b_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    shape: MlpShape,
    layers: Vec<Linear>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct MlpTape {
    input: Array2<f64>,
    /// Input to each hidden layer's affine map after the first.
    hidden_inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
    last_hidden: Array2<f64>,
}

impl Mlp {
    /// Random hidden layers (scaled normal), zero output layer.
    pub fn new(shape: MlpShape, seed: u64) -> Self {
        let mut rng = rng::rng(seed);
        let mut layers = Vec::with_capacity(shape.depth + 1);
        if shape.depth == 0 {
            layers.push(Linear::zeros(shape.input, shape.output));
        } else {
            layers.push(Linear::random(shape.input, shape.hidden, &mut rng));
            for _ in 1..shape.depth {
                layers.push(Linear::random(shape.hidden, shape.hidden, &mut rng));
            }
            layers.push(Linear::zeros(shape.hidden, shape.output));
        }
        Mlp { shape, layers }
    }

    pub fn from_layers(shape: MlpShape, layers: Vec<Linear>) -> Result<Self> {
        let mut dims = vec![shape.input];
        dims.extend(std::iter::repeat_n(shape.hidden, shape.depth));
        dims.push(shape.output);
        if layers.len() != dims.len() - 1
            || layers
                .iter()
                .zip(dims.windows(2))
                .any(|(l, w)| l.w.dim() != (w[0], w[1]) || l.b.len() != w[1])
        {
            return Err(Error::Shape(format!("layers do not match shape {shape:?}")));
        }
        Ok(Mlp { shape, layers })
    }

    pub fn shape(&self) -> MlpShape {
        self.shape
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    /// Same shape, all zeros. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Mlp {
            shape: self.shape,
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.w.nrows(), l.w.ncols()))
                .collect(),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_tape(x).0
    }

    pub fn forward_tape(&self, x: ArrayView2<f64>) -> (Array2<f64>, MlpTape) {
        assert_eq!(x.ncols(), self.shape.input, "input width");
        let last = self.layers.len() - 1;
        if last == 0 {
            let y = self.layers[0].apply(x);
            return (
                y,
                MlpTape {
                    input: x.to_owned(),
                    hidden_inputs: Vec::new(),
                    pre_activations: Vec::new(),
                    last_hidden: x.to_owned(),
                },
            );
        }
        let mut pre = Vec::with_capacity(last);
        let mut hidden_inputs = Vec::with_capacity(last.saturating_sub(1));
        let a0 = self.layers[0].apply(x);
        let mut h = a0.mapv(silu);
        pre.push(a0);
        for layer in &self.layers[1..last] {
            let a = layer.apply(h.view());
            hidden_inputs.push(h.clone());
            h.zip_mut_with(&a, |hv, &av| *hv += silu(av));
            pre.push(a);
        }
        let y = self.layers[last].apply(h.view());
        (
            y,
            MlpTape {
                input: x.to_owned(),
                hidden_inputs,
                pre_activations: pre,
                last_hidden: h,
            },
        )
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d output`.
    pub fn backward(&self, tape: &MlpTape, d_out: ArrayView2<f64>, grads: &mut Mlp) {
        let last = self.layers.len() - 1;
        {
            let g = &mut grads.layers[last];
            g.w += &tape.last_hidden.t().dot(&d_out);
            g.b += &d_out.sum_axis(Axis(0));
        }
        if last == 0 {
            return;
        }
        let mut dh = d_out.dot(&self.layers[last].w.t());
        for l in (1..last).rev() {
            let mut da = tape.pre_activations[l].mapv(silu_grad);
            da *= &dh;
            let h_in = &tape.hidden_inputs[l - 1];
            let g = &mut grads.layers[l];
            g.w += &h_in.t().dot(&da);
            g.b += &da.sum_axis(Axis(0));
            dh += &da.dot(&self.layers[l].w.t());
        }
        let mut da0 = tape.pre_activations[0].mapv(silu_grad);
        da0 *= &dh;
        let g = &mut grads.layers[0];
        g.w += &tape.input.t().dot(&da0);
        g.b += &da0.sum_axis(Axis(0));
    }

    /// Zeroes the output layer so the network starts as the zero map.
    pub fn zero_output(&mut self) {
        let last = self.layers.len() - 1;
        self.layers[last].w.fill(0.0);
        self.layers[last].b.fill(0.0);
    }
}

impl Parameters for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.w.as_slice().expect("standard layout"),
                    l.b.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.w.as_slice_mut().expect("standard layout"),
                    l.b.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Moment estimates with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new<P: Parameters + ?Sized>(params: &P, config: AdamWConfig) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        AdamW {
            config,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update with the configured learning rate.
    pub fn step<P: Parameters + ?Sized, G: Parameters + ?Sized>(
        &mut self,
        params: &mut P,
        grads: &G,
    ) -> Result<()> {
        let lr = self.config.lr;
        self.step_with_lr(params, grads, lr)
    }

    pub fn step_with_lr<P: Parameters + ?Sized, G: Parameters + ?Sized>(
        &mut self,
        params: &mut P,
        grads: &G,
        lr: f64,
    ) -> Result<()> {
        let grads = grads.tensors();
        let mut tensors = params.tensors_mut();
        if grads.len() != tensors.len()
            || tensors.len() != self.m.len()
            || tensors
                .iter()
                .zip(&grads)
                .zip(&self.m)
                .any(|((p, g), m)| p.len() != g.len() || p.len() != m.len())
        {
            return Err(Error::Shape(
                "gradient shapes do not match parameter shapes".into(),
            ));
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powf(self.step as f64);
        let bc2 = 1.0 - c.beta2.powf(self.step as f64);
        for (((p, g), m), v) in tensors
            .iter_mut()
            .zip(&grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * c.weight_decay * p[i];
                p[i] -= lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        drop(tensors);
        if !params.all_finite() {
            return Err(Error::NonFinite("parameters after optimizer step".into()));
        }
        Ok(())
    }
}

/// Max over a random subset of coordinates of
/// `|analytic - central_difference| / (|analytic| + 1e-8)`, step `h`.
pub fn finite_diff_check<P, F>(
    params: &P,
    analytic: &P,
    mut loss: F,
    samples: usize,
    h: f64,
    seed: u64,
) -> f64
where
    P: Parameters + Clone,
    F: FnMut(&P) -> f64,
{
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let grad_flat = analytic.to_flat();
    assert_eq!(grad_flat.len(), total, "gradient layout");
    let mut rng = rng::rng(seed);
    let picks: Vec<usize> = if samples >= total {
        (0..total).collect()
    } else {
        (0..samples).map(|_| rng.random_range(0..total)).collect()
    };
    let locate = |flat: usize| {
        let mut rem = flat;
        for (t, &n) in sizes.iter().enumerate() {
            if rem < n {
                return (t, rem);
            }
            rem -= n;
        }
        unreachable!("index within total")
    };
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for flat in picks {
        let (t, i) = locate(flat);
        let orig = params.tensors()[t][i];
        probe.tensors_mut()[t][i] = orig + h;
        let up = loss(&probe);
        probe.tensors_mut()[t][i] = orig - h;
        let down = loss(&probe);
        probe.tensors_mut()[t][i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = grad_flat[flat];
        worst = worst.max((a - numeric).abs() / (a.abs() + 1e-8));
    }
    worst
}

/// Sinusoidal embedding of integer timestep `t`, width `dim`
/// (first half sines, second half cosines).
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn shape(depth: usize) -> MlpShape {
        MlpShape {
            input: 3,
            hidden: 5,
            depth,
            output: 2,
        }
    }

    fn randomized(depth: usize, seed: u64) -> Mlp {
        let mut net = Mlp::new(shape(depth), seed);
        let mut r = rng::rng(seed + 1);
        for t in net.tensors_mut() {
            for v in t.iter_mut() {
                *v = r.random_range(-0.8..0.8);
            }
        }
        net
    }

    fn sq_loss(net: &Mlp, x: &Array2<f64>, target: &Array2<f64>) -> f64 {
        let y = net.forward(x.view());
        (&y - target).mapv(|v| v * v).sum() * 0.5
    }

    #[test]
    fn zero_output_layer_gives_zero_map() {
        let net = Mlp::new(shape(2), 3);
        let y = net.forward(array![[1.0, -2.0, 0.5]].view());
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x = array![[0.3, -1.2, 0.7], [1.1, 0.4, -0.2], [-0.5, 0.9, 0.0]];
        let target = array![[0.5, -0.1], [0.0, 0.2], [1.0, 1.0]];
        for depth in [0, 1, 2, 3] {
            let net = randomized(depth, 10 + depth as u64);
            let (y, tape) = net.forward_tape(x.view());
            let mut grads = net.zeros_like();
            net.backward(&tape, (&y - &target).view(), &mut grads);
            let err = finite_diff_check(&net, &grads, |p| sq_loss(p, &x, &target), 1000, 1e-5, 1);
            assert!(err < 1e-6, "depth {depth}: {err}");
        }
    }

    #[test]
    fn linear_loss_is_exact() {
        let p = FlatParams(vec![0.3, -0.7, 2.0]);
        let coef = [1.5, -2.0, 0.25];
        let loss = |q: &FlatParams| q.0.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>();
        let g = FlatParams(coef.to_vec());
        assert!(finite_diff_check(&p, &g, loss, 10, 1e-5, 0) < 1e-6);
    }

    #[test]
    fn adamw_zero_gradient_without_decay_is_identity() {
        let mut p = FlatParams(vec![1.0, -2.0]);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(&p, cfg);
        opt.step(&mut p, &FlatParams(vec![0.0, 0.0])).unwrap();
        assert_eq!(p.0, vec![1.0, -2.0]);
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn adamw_descends_quadratic_bowl_monotonically() {
        let mut p = FlatParams(vec![1.0]);
        let cfg = AdamWConfig {
            lr: 1e-2,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(&p, cfg);
        let mut last = p.0[0].abs();
        for _ in 0..100 {
            let g = FlatParams(vec![2.0 * p.0[0]]);
            opt.step(&mut p, &g).unwrap();
            assert!(p.0[0].abs() < last);
            last = p.0[0].abs();
        }
    }

    #[test]
    fn weight_decay_alone_shrinks_norm() {
        let mut p = FlatParams(vec![3.0, -4.0]);
        let mut opt = AdamW::new(
            &p,
            AdamWConfig {
                lr: 0.1,
                weight_decay: 0.5,
                ..Default::default()
            },
        );
        opt.step(&mut p, &FlatParams(vec![0.0, 0.0])).unwrap();
        let norm = (p.0[0].powi(2) + p.0[1].powi(2)).sqrt();
        assert!(norm < 5.0);
    }

    #[test]
    fn adamw_rejects_shape_mismatch() {
        let mut p = FlatParams(vec![1.0]);
        let mut opt = AdamW::new(&p, AdamWConfig::default());
        assert!(matches!(
            opt.step(&mut p, &FlatParams(vec![0.0, 1.0])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn embedding_is_bounded_and_distinct() {
        let a = timestep_embedding(3, 64);
        let b = timestep_embedding(4, 64);
        assert_eq!(a.len(), 64);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(a, b);
    }
}
