//! Small dense networks with hand-written backpropagation.
//!
//! Parameters of an [`Mlp`] live in one flat vector. Layer `k` stores its
//! weight matrix row-major (`out x in`) followed by its bias. A [`Net`] is an
//! MLP with an optional convolutional front end on the gain matrix whose
//! pooled output is prepended to the feature vector.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LearnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => wsrm_core::bcd::sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width, hidden widths, output width.
    pub widths: Vec<usize>,
    /// One per weight layer.
    pub activations: Vec<Activation>,
    pub seed: u64,
}

impl MlpSpec {
    /// `depth` weight layers: ReLU hidden layers of width `hidden` and the
    /// given head activation.
    pub fn uniform(input: usize, hidden: usize, depth: usize, output: usize, head: Activation, seed: u64) -> Self {
        let mut widths = vec![input];
        widths.extend(std::iter::repeat_n(hidden, depth.saturating_sub(1)));
        widths.push(output);
        let mut activations = vec![Activation::Relu; depth.saturating_sub(1)];
        activations.push(head);
        Self { widths, activations, seed }
    }

    fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.iter().any(|w| *w == 0) {
            return Err(LearnError::InvalidSpec("need at least two positive widths".into()));
        }
        if self.activations.len() != self.widths.len() - 1 {
            return Err(LearnError::InvalidSpec(format!(
                "{} activations for {} layers",
                self.activations.len(),
                self.widths.len() - 1
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<f64>,
}

/// Layer outputs kept by [`Mlp::forward`]; `acts[0]` is the input.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache holds the input at least")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(LearnError::ShapeMismatch { expected, found })
    }
}

impl Mlp {
    /// Weights and biases uniform in `+-1/sqrt(fan_in)`.
    pub fn new(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut params = Vec::with_capacity(spec.param_count());
        for w in spec.widths.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[1] * (w[0] + 1) {
                params.push(rng.random_range(-bound..=bound));
            }
        }
        Ok(Self { spec, params })
    }

    /// Network with the given flat parameters.
    pub fn from_params(spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        check_len(spec.param_count(), params.len())?;
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_width(&self) -> usize {
        self.spec.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.spec.widths.last().expect("validated")
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        check_len(self.input_width(), input.len())?;
        let mut acts = Vec::with_capacity(self.spec.widths.len());
        acts.push(input.to_vec());
        let mut offset = 0;
        for (k, w) in self.spec.widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + n_out * n_in];
            let bias = &self.params[offset + n_out * n_in..offset + n_out * (n_in + 1)];
            let x = &acts[k];
            let act = self.spec.activations[k];
            let y: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    let z = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias[o];
                    act.apply(z)
                })
                .collect();
            acts.push(y);
            offset += n_out * (n_in + 1);
        }
        let out = acts.last().expect("nonempty").clone();
        Ok((out, ForwardCache { acts }))
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward(input).map(|(y, _)| y)
    }

    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f64]) -> Result<Gradients> {
        let mut params = vec![0.0; self.params.len()];
        let input = self.backward_into(cache, grad_output, &mut params)?;
        Ok(Gradients { params, input })
    }

    /// Adds the parameter gradient into `grad_params` and returns the input
    /// gradient.
    pub fn backward_into(&self, cache: &ForwardCache, grad_output: &[f64], grad_params: &mut [f64]) -> Result<Vec<f64>> {
        check_len(self.output_width(), grad_output.len())?;
        check_len(self.params.len(), grad_params.len())?;
        check_len(self.spec.widths.len(), cache.acts.len())?;
        let mut offset = self.params.len();
        let mut upstream = grad_output.to_vec();
        for k in (0..self.spec.widths.len() - 1).rev() {
            let (n_in, n_out) = (self.spec.widths[k], self.spec.widths[k + 1]);
            offset -= n_out * (n_in + 1);
            let act = self.spec.activations[k];
            let y = &cache.acts[k + 1];
            let x = &cache.acts[k];
            let delta: Vec<f64> = (0..n_out).map(|o| upstream[o] * act.derivative(y[o])).collect();
            let weights = &self.params[offset..offset + n_out * n_in];
            let mut down = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let g_row = &mut grad_params[offset + o * n_in..offset + (o + 1) * n_in];
                for (g, xi) in g_row.iter_mut().zip(x) {
                    *g += d * xi;
                }
                grad_params[offset + n_out * n_in + o] += d;
                for (dn, wi) in down.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                    *dn += d * wi;
                }
            }
            upstream = down;
        }
        Ok(upstream)
    }
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(size: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; size], v: vec![0.0; size], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Descends along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_len(self.m.len(), params.len())?;
        check_len(self.m.len(), grad.len())?;
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// `target <- tau * online + (1 - tau) * target`.
pub fn soft_update(target: &mut [f64], online: &[f64], tau: f64) {
    for (t, o) in target.iter_mut().zip(online) {
        *t = tau * o + (1.0 - tau) * *t;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    /// Column stride inside each row; every row is kept.
    pub stride: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self { kernel: 2, stride: 1 }
    }
}

/// Single-channel `K x K` cross-correlation of the gain matrix with
/// wrap-around indexing, mean-pooled over each row so the output has one
/// entry per link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvFeature {
    pub spec: ConvSpec,
    pub kernel: Vec<f64>,
}

impl ConvFeature {
    pub fn new(spec: ConvSpec, seed: u64) -> Result<Self> {
        if spec.kernel == 0 || spec.stride == 0 {
            return Err(LearnError::InvalidSpec("kernel and stride must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / spec.kernel as f64;
        let kernel = (0..spec.kernel * spec.kernel).map(|_| rng.random_range(-bound..=bound)).collect();
        Ok(Self { spec, kernel })
    }

    fn columns(&self, l: usize) -> impl Iterator<Item = usize> {
        (0..l).step_by(self.spec.stride)
    }

    /// Pooled patch sums: `patch[r][i*K+j] = mean_c G[(r+i)%L][(c+j)%L]`.
    /// The feature is linear in the kernel through these.
    fn patches(&self, g: &DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
        let l = g.nrows();
        let k = self.spec.kernel;
        if k > l {
            return Err(LearnError::KernelTooLarge { kernel: k, links: l });
        }
        check_len(l, g.ncols())?;
        let cols: Vec<usize> = self.columns(l).collect();
        let scale = 1.0 / cols.len() as f64;
        Ok((0..l)
            .map(|r| {
                let mut p = vec![0.0; k * k];
                for &c in &cols {
                    for i in 0..k {
                        for j in 0..k {
                            p[i * k + j] += g[((r + i) % l, (c + j) % l)];
                        }
                    }
                }
                p.iter_mut().for_each(|x| *x *= scale);
                p
            })
            .collect())
    }

    pub fn forward(&self, g: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self
            .patches(g)?
            .iter()
            .map(|p| p.iter().zip(&self.kernel).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Adds the kernel gradient for output gradient `grad` into `out`.
    pub fn backward_into(&self, g: &DMatrix<f64>, grad: &[f64], out: &mut [f64]) -> Result<()> {
        check_len(g.nrows(), grad.len())?;
        check_len(self.kernel.len(), out.len())?;
        for (p, d) in self.patches(g)?.iter().zip(grad) {
            for (o, x) in out.iter_mut().zip(p) {
                *o += d * x;
            }
        }
        Ok(())
    }
}

/// MLP with an optional convolutional front end. The network input is
/// `[conv(G), features, extra]`, where `extra` carries the action for
/// critics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Net {
    pub conv: Option<ConvFeature>,
    pub mlp: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetCache {
    mlp: ForwardCache,
    conv_width: usize,
}

/// Gradient of a [`Net`]: kernel part (empty without conv) and MLP part.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrad {
    pub conv: Vec<f64>,
    pub mlp: Vec<f64>,
}

impl NetGrad {
    pub fn scale(&mut self, s: f64) {
        self.conv.iter_mut().chain(self.mlp.iter_mut()).for_each(|x| *x *= s);
    }
}

/// Optimizer state for a [`Net`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetOptimizer {
    pub conv: Adam,
    pub mlp: Adam,
}

impl NetOptimizer {
    pub fn new(net: &Net, lr: f64) -> Self {
        Self {
            conv: Adam::new(net.conv.as_ref().map_or(0, |c| c.kernel.len()), lr),
            mlp: Adam::new(net.mlp.params().len(), lr),
        }
    }

    pub fn step(&mut self, net: &mut Net, grad: &NetGrad) -> Result<()> {
        if let Some(conv) = net.conv.as_mut() {
            self.conv.step(&mut conv.kernel, &grad.conv)?;
        }
        self.mlp.step(net.mlp.params_mut(), &grad.mlp)
    }
}

impl Net {
    /// Net over `[conv(G), inputs]`; the conv part adds one input per link.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        conv: Option<ConvSpec>,
        links: usize,
        inputs: usize,
        hidden: usize,
        depth: usize,
        output: usize,
        head: Activation,
        seed: u64,
    ) -> Result<Self> {
        let conv = match conv {
            Some(spec) if spec.kernel > links => return Err(LearnError::KernelTooLarge { kernel: spec.kernel, links }),
            Some(spec) => Some(ConvFeature::new(spec, seed ^ 0xc0de)?),
            None => None,
        };
        let width = inputs + if conv.is_some() { links } else { 0 };
        let mlp = Mlp::new(MlpSpec::uniform(width, hidden, depth, output, head, seed))?;
        Ok(Self { conv, mlp })
    }

    /// Multiplies the last layer's weights and bias by `s`.
    pub fn scale_head(&mut self, s: f64) {
        let widths = &self.mlp.spec().widths;
        let k = widths.len();
        let n = widths[k - 1] * (widths[k - 2] + 1);
        let len = self.mlp.params().len();
        self.mlp.params_mut()[len - n..].iter_mut().for_each(|x| *x *= s);
    }

    pub fn zero_grad(&self) -> NetGrad {
        NetGrad {
            conv: vec![0.0; self.conv.as_ref().map_or(0, |c| c.kernel.len())],
            mlp: vec![0.0; self.mlp.params().len()],
        }
    }

    fn assemble(&self, gains: Option<&DMatrix<f64>>, features: &[f64], extra: &[f64]) -> Result<(Vec<f64>, usize)> {
        let mut input = Vec::with_capacity(self.mlp.input_width());
        let conv_width = match (&self.conv, gains) {
            (Some(conv), Some(g)) => {
                input.extend(conv.forward(g)?);
                g.nrows()
            }
            (Some(_), None) => return Err(LearnError::InvalidSpec("conv front end needs the gain matrix".into())),
            (None, _) => 0,
        };
        input.extend_from_slice(features);
        input.extend_from_slice(extra);
        Ok((input, conv_width))
    }

    pub fn forward(&self, gains: Option<&DMatrix<f64>>, features: &[f64], extra: &[f64]) -> Result<(Vec<f64>, NetCache)> {
        let (input, conv_width) = self.assemble(gains, features, extra)?;
        let (y, mlp) = self.mlp.forward(&input)?;
        Ok((y, NetCache { mlp, conv_width }))
    }

    pub fn predict(&self, gains: Option<&DMatrix<f64>>, features: &[f64], extra: &[f64]) -> Result<Vec<f64>> {
        self.forward(gains, features, extra).map(|(y, _)| y)
    }

    /// Accumulates parameter gradients and returns the gradient with
    /// respect to `[features, extra]`.
    pub fn backward_into(
        &self,
        gains: Option<&DMatrix<f64>>,
        cache: &NetCache,
        grad_output: &[f64],
        grad: &mut NetGrad,
    ) -> Result<Vec<f64>> {
        let input_grad = self.mlp.backward_into(&cache.mlp, grad_output, &mut grad.mlp)?;
        if let (Some(conv), Some(g)) = (&self.conv, gains) {
            conv.backward_into(g, &input_grad[..cache.conv_width], &mut grad.conv)?;
        }
        Ok(input_grad[cache.conv_width..].to_vec())
    }

    pub fn soft_update_from(&mut self, online: &Net, tau: f64) {
        if let (Some(t), Some(o)) = (self.conv.as_mut(), online.conv.as_ref()) {
            soft_update(&mut t.kernel, &o.kernel, tau);
        }
        soft_update(self.mlp.params_mut(), online.mlp.params(), tau);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_net_sigmoid_head_gives_half() {
        let spec = MlpSpec::uniform(4, 8, 3, 2, Activation::Sigmoid, 0);
        let n = spec.param_count();
        let net = Mlp::from_params(spec, vec![0.0; n]).unwrap();
        assert_eq!(net.predict(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn identity_layer() {
        let spec = MlpSpec { widths: vec![3, 3], activations: vec![Activation::Identity], seed: 0 };
        let mut p = vec![0.0; 12];
        for i in 0..3 {
            p[i * 3 + i] = 1.0;
        }
        let net = Mlp::from_params(spec, p).unwrap();
        assert_eq!(net.predict(&[1.5, -2.0, 7.0]).unwrap(), vec![1.5, -2.0, 7.0]);
    }

    #[test]
    fn affine_gradients() {
        let spec = MlpSpec { widths: vec![1, 1], activations: vec![Activation::Identity], seed: 0 };
        let net = Mlp::from_params(spec, vec![2.0, 0.5]).unwrap();
        let (y, cache) = net.forward(&[3.0]).unwrap();
        assert_eq!(y, vec![6.5]);
        let g = net.backward(&cache, &[1.0]).unwrap();
        assert_eq!(g.params, vec![3.0, 1.0]);
        assert_eq!(g.input, vec![2.0]);
        let z = net.backward(&cache, &[0.0]).unwrap();
        assert!(z.params.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn shape_mismatch_reported() {
        let net = Mlp::new(MlpSpec::uniform(3, 4, 2, 1, Activation::Identity, 1)).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(LearnError::ShapeMismatch { expected: 3, found: 1 })));
    }

    #[test]
    fn soft_update_rules() {
        let online = vec![1.0, 2.0];
        let mut t = vec![0.0, 0.0];
        soft_update(&mut t, &online, 0.0);
        assert_eq!(t, vec![0.0, 0.0]);
        soft_update(&mut t, &online, 0.5);
        soft_update(&mut t, &online, 0.5);
        assert_eq!(t, vec![0.75, 1.5]);
        soft_update(&mut t, &online, 1.0);
        assert_eq!(t, online);
    }

    #[test]
    fn adam_first_step_is_lr() {
        let mut opt = Adam::new(2, 1e-2);
        let mut p = vec![1.0, 1.0];
        opt.step(&mut p, &[3.0, -0.2]).unwrap();
        assert!((p[0] - (1.0 - 1e-2)).abs() < 1e-9);
        assert!((p[1] - (1.0 + 1e-2)).abs() < 1e-9);
        let before = p.clone();
        let mut fresh = Adam::new(2, 1e-2);
        fresh.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn conv_unit_kernel_is_row_mean() {
        let g = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let conv = ConvFeature { spec: ConvSpec { kernel: 1, stride: 1 }, kernel: vec![1.0] };
        assert_eq!(conv.forward(&g).unwrap(), vec![2.0, 5.0, 8.0]);
        let zero = ConvFeature { spec: ConvSpec { kernel: 2, stride: 1 }, kernel: vec![0.0; 4] };
        assert_eq!(zero.forward(&g).unwrap(), vec![0.0; 3]);
        let big = ConvFeature { spec: ConvSpec { kernel: 4, stride: 1 }, kernel: vec![0.0; 16] };
        assert!(matches!(big.forward(&g), Err(LearnError::KernelTooLarge { .. })));
    }
}
