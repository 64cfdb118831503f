//! A small fully connected reward network with hand-written backprop and Adam.
//!
//! Parameters live in one flat vector, layer by layer: the `out x in`
//! weight matrix in row-major order followed by the `out` biases.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, invalid, Error, Result};
use crate::kv::KvDoc;

pub const MODEL_SCHEMA: &str = "trex-model/1";
pub const LEAKY_SLOPE: f64 = 0.01;
const ACTIVATION_ID: &str = "leaky_relu:0.01";

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

#[inline]
fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

#[inline]
fn leaky_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// MLP with LeakyReLU hidden layers and a single linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardNet {
    layer_sizes: Vec<usize>,
    params: Vec<f64>,
    seed: u64,
    /// Identifies the current parameter values; changes on every mutation.
    stamp: u64,
}

#[derive(Clone, Copy, Debug)]
struct LayerView {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
}

/// Per-parameter gradient, laid out like [`RewardNet::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<f64>);

impl Gradients {
    pub fn zeros_like(net: &RewardNet) -> Self {
        Gradients(vec![0.0; net.num_params()])
    }

    pub fn scale(&mut self, k: f64) {
        self.0.iter_mut().for_each(|g| *g *= k);
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Activations recorded by [`RewardNet::forward_cached`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    stamp: u64,
    /// Input to each layer: `inputs[0]` is the observation.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<f64>>,
    pub output: f64,
}

fn count_params(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(invalid!("a net needs at least an input and an output layer"));
    }
    if sizes.contains(&0) {
        return Err(invalid!("layer sizes must be positive: {sizes:?}"));
    }
    if *sizes.last().unwrap() != 1 {
        return Err(invalid!("output layer must have exactly 1 unit, got {}", sizes.last().unwrap()));
    }
    Ok(())
}

impl RewardNet {
    /// Glorot-uniform weights, zero biases.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(count_params(layer_sizes));
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-a..=a)));
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Ok(RewardNet {
            layer_sizes: layer_sizes.to_vec(),
            params,
            seed,
            stamp: fresh_stamp(),
        })
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        Self::from_params(layer_sizes, vec![0.0; count_params(layer_sizes)], 0)
    }

    pub fn from_params(layer_sizes: &[usize], params: Vec<f64>, seed: u64) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let expected = count_params(layer_sizes);
        if params.len() != expected {
            return Err(Error::Dimension { expected, got: params.len() });
        }
        Ok(RewardNet {
            layer_sizes: layer_sizes.to_vec(),
            params,
            seed,
            stamp: fresh_stamp(),
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access to the parameters; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.stamp = fresh_stamp();
        &mut self.params
    }

    /// Index of the first parameter of the final layer (its weights, then bias).
    pub fn output_layer_offset(&self) -> usize {
        self.layers().last().unwrap().w
    }

    fn layers(&self) -> Vec<LayerView> {
        let mut off = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let view = LayerView { w: off, b: off + w[0] * w[1], fan_in: w[0], fan_out: w[1] };
                off = view.b + w[1];
                view
            })
            .collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let width = self.layer_sizes.iter().copied().max().unwrap_or(1);
        let mut act = Vec::with_capacity(width);
        let mut next = Vec::with_capacity(width);
        act.extend_from_slice(x);
        let p = &self.params;
        let mut off = 0;
        let last = self.layer_sizes.len() - 2;
        for (k, w) in self.layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bias = off + fan_in * fan_out;
            next.clear();
            for o in 0..fan_out {
                let row = &p[off + o * fan_in..off + (o + 1) * fan_in];
                let z = p[bias + o] + row.iter().zip(&act).map(|(w, v)| w * v).sum::<f64>();
                next.push(if k < last { leaky(z) } else { z });
            }
            off = bias + fan_out;
            std::mem::swap(&mut act, &mut next);
        }
        Ok(act[0])
    }

    /// Sign of every hidden pre-activation at `x`; where it changes, the
    /// output is not differentiable.
    pub fn activation_pattern(&self, x: &[f64]) -> Result<Vec<bool>> {
        let cache = self.forward_cached(x)?;
        Ok(cache.pre.iter().flatten().map(|z| *z >= 0.0).collect())
    }

    fn affine(&self, l: &LayerView, x: &[f64]) -> Vec<f64> {
        let p = &self.params;
        (0..l.fan_out)
            .map(|o| {
                let row = &p[l.w + o * l.fan_in..l.w + (o + 1) * l.fan_in];
                p[l.b + o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        self.check_input(x)?;
        let layers = self.layers();
        let mut inputs = Vec::with_capacity(layers.len());
        let mut pre = Vec::with_capacity(layers.len() - 1);
        let mut act = x.to_vec();
        for (k, l) in layers.iter().enumerate() {
            let z = self.affine(l, &act);
            inputs.push(act);
            if k + 1 < layers.len() {
                act = z.iter().map(|v| leaky(*v)).collect();
                pre.push(z);
            } else {
                act = z;
            }
        }
        Ok(ForwardCache { stamp: self.stamp, inputs, pre, output: act[0] })
    }

    /// Gradient of `upstream * output` with respect to every parameter.
    pub fn backward(&self, upstream: f64, cache: &ForwardCache) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(upstream, cache, &mut grads)?;
        Ok(grads)
    }

    /// Accumulates `upstream * d output / d params` into `grads`.
    pub fn backward_into(&self, upstream: f64, cache: &ForwardCache, grads: &mut Gradients) -> Result<()> {
        if cache.stamp != self.stamp {
            return Err(contract!("stale forward cache: parameters changed since the forward pass"));
        }
        if grads.0.len() != self.num_params() {
            return Err(Error::Dimension { expected: self.num_params(), got: grads.0.len() });
        }
        if upstream == 0.0 {
            return Ok(());
        }
        let layers = self.layers();
        let g = &mut grads.0;
        let mut delta = vec![upstream];
        for (k, l) in layers.iter().enumerate().rev() {
            let input = &cache.inputs[k];
            for o in 0..l.fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                g[l.b + o] += d;
                let row = &mut g[l.w + o * l.fan_in..l.w + (o + 1) * l.fan_in];
                row.iter_mut().zip(input).for_each(|(gw, x)| *gw += d * x);
            }
            if k == 0 {
                break;
            }
            let pre = &cache.pre[k - 1];
            let mut next = vec![0.0; l.fan_in];
            for o in 0..l.fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &self.params[l.w + o * l.fan_in..l.w + (o + 1) * l.fan_in];
                next.iter_mut().zip(row).for_each(|(n, w)| *n += d * w);
            }
            next.iter_mut().zip(pre).for_each(|(n, z)| *n *= leaky_grad(*z));
            delta = next;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(&mut file).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut file).map_err(|e| match e {
            Error::Invalid(m) => invalid!("{}: {m}", path.display()),
            other => other,
        })
    }

    /// Key-value header ending in a `data` line, then little-endian f64 parameters.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let mut head = KvDoc::new(MODEL_SCHEMA);
        let sizes: Vec<String> = self.layer_sizes.iter().map(usize::to_string).collect();
        head.set("layer_sizes", sizes.join(" "));
        head.set("activation", ACTIVATION_ID);
        head.set("seed", self.seed);
        head.set("params", self.params.len());
        w.write_all(head.render().as_bytes())?;
        w.write_all(b"data\n")?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io("<model>", e))?;
        let marker = b"\ndata\n";
        let split = bytes
            .windows(marker.len())
            .position(|w| w == marker)
            .ok_or_else(|| invalid!("model file has no `data` marker"))?;
        let head = std::str::from_utf8(&bytes[..split + 1]).map_err(|_| invalid!("model header is not UTF-8"))?;
        let head = KvDoc::parse(head)?;
        if head.schema != MODEL_SCHEMA {
            return Err(Error::Schema { what: "model".into(), expected: MODEL_SCHEMA.into(), found: head.schema });
        }
        let activation = head.require("activation")?;
        if activation != ACTIVATION_ID {
            return Err(invalid!("unsupported activation `{activation}`"));
        }
        let sizes: Vec<usize> = head.parse_list("layer_sizes")?.ok_or_else(|| invalid!("missing layer_sizes"))?;
        let n: usize = head.parse_required("params")?;
        let data = &bytes[split + marker.len()..];
        if data.len() != n * 8 {
            return Err(invalid!("model declares {n} parameters but carries {} bytes", data.len()));
        }
        let params = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_params(&sizes, params, head.parse_required("seed")?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

/// Central-difference gradient of `loss` with respect to every parameter.
pub fn finite_diff_grad(loss: impl Fn(&RewardNet) -> f64, net: &RewardNet, step: f64) -> Gradients {
    let mut probe = net.clone();
    let mut grads = Vec::with_capacity(net.num_params());
    for i in 0..net.num_params() {
        let orig = net.params[i];
        probe.params_mut()[i] = orig + step;
        let up = loss(&probe);
        probe.params_mut()[i] = orig - step;
        let down = loss(&probe);
        probe.params_mut()[i] = orig;
        grads.push((up - down) / (2.0 * step));
    }
    Gradients(grads)
}

/// Largest elementwise `|a - b| / max(|a|, |b|)`.
///
/// The denominator is floored at 1e-6: below that, central differences at
/// step 1e-5 carry absolute noise of the same order as the value itself.
pub fn max_relative_error(a: &Gradients, b: &Gradients) -> f64 {
    a.0.iter()
        .zip(&b.0)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient.
    pub weight_decay: f64,
}

impl AdamState {
    pub fn new(net: &RewardNet, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; net.num_params()],
            v: vec![0.0; net.num_params()],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Bias-corrected Adam update in place.
pub fn adam_step(net: &mut RewardNet, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    let n = net.num_params();
    if grads.0.len() != n || state.m.len() != n {
        return Err(Error::Dimension { expected: n, got: grads.0.len().min(state.m.len()) });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let wd = state.weight_decay;
    let params = net.params_mut();
    for i in 0..n {
        let g = grads.0[i] + wd * params[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straight-line evaluator that shares no code with `forward`.
    fn reference_forward(net: &RewardNet, x: &[f64]) -> f64 {
        let sizes = net.layer_sizes();
        let p = net.params();
        let mut off = 0;
        let mut act = x.to_vec();
        for k in 0..sizes.len() - 1 {
            let (n_in, n_out) = (sizes[k], sizes[k + 1]);
            let mut out = vec![0.0; n_out];
            for o in 0..n_out {
                let mut s = 0.0;
                for i in 0..n_in {
                    s += p[off + o * n_in + i] * act[i];
                }
                out[o] = s + p[off + n_in * n_out + o];
                if k + 2 < sizes.len() && out[o] < 0.0 {
                    out[o] *= 0.01;
                }
            }
            off += n_in * n_out + n_out;
            act = out;
        }
        act[0]
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = RewardNet::zeros(&[4, 8, 1]).unwrap();
        assert_eq!(net.forward(&[0.3, 0.1, 0.9, 0.2]).unwrap(), 0.0);
    }

    #[test]
    fn linear_layer_is_dot_plus_bias() {
        let net = RewardNet::from_params(&[3, 1], vec![1.0, -2.0, 0.5, 0.25], 0).unwrap();
        assert_eq!(net.forward(&[1.0, 1.0, 2.0]).unwrap(), 1.0 - 2.0 + 1.0 + 0.25);
        assert!(matches!(net.forward(&[1.0]), Err(Error::Dimension { expected: 3, got: 1 })));
    }

    #[test]
    fn forward_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..10 {
            let net = RewardNet::init(&[6, 16, 8, 1], seed).unwrap();
            for _ in 0..20 {
                let x: Vec<f64> = (0..6).map(|_| rng.gen()).collect();
                let a = net.forward(&x).unwrap();
                assert!((a - reference_forward(&net, &x)).abs() <= 1e-12 * a.abs().max(1.0));
                assert_eq!(net.forward_cached(&x).unwrap().output, a);
            }
        }
    }

    #[test]
    fn invalid_architectures() {
        assert!(RewardNet::init(&[4], 0).is_err());
        assert!(RewardNet::init(&[4, 2], 0).is_err());
        assert!(RewardNet::init(&[4, 0, 1], 0).is_err());
        assert!(RewardNet::from_params(&[2, 1], vec![0.0; 2], 0).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let net = RewardNet::init(&[3, 5, 1], 1).unwrap();
        let cache = net.forward_cached(&[0.1, 0.2, 0.3]).unwrap();
        assert!(net.backward(0.0, &cache).unwrap().0.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn single_layer_gradient_is_scaled_input() {
        let net = RewardNet::from_params(&[3, 1], vec![0.4, -0.1, 2.0, 0.0], 0).unwrap();
        let x = [0.5, 0.25, 1.0];
        let g = net.backward(3.0, &net.forward_cached(&x).unwrap()).unwrap();
        assert_eq!(g.0, vec![1.5, 0.75, 3.0, 3.0]);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = RewardNet::init(&[2, 3, 1], 0).unwrap();
        let cache = net.forward_cached(&[0.1, 0.2]).unwrap();
        let other = RewardNet::init(&[2, 3, 1], 0).unwrap();
        assert!(other.backward(1.0, &cache).is_err());
        net.params_mut()[0] += 1.0;
        assert!(matches!(net.backward(1.0, &cache), Err(Error::Contract(_))));
        let copy = net.clone();
        let fresh = copy.forward_cached(&[0.1, 0.2]).unwrap();
        assert!(net.backward(1.0, &fresh).is_ok());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..5 {
            let net = RewardNet::init(&[4, 7, 5, 1], seed).unwrap();
            let x: Vec<f64> = (0..4).map(|_| rng.gen()).collect();
            let analytic = net.backward(1.0, &net.forward_cached(&x).unwrap()).unwrap();
            let numeric = finite_diff_grad(|n| n.forward(&x).unwrap(), &net, 1e-5);
            assert!(max_relative_error(&analytic, &numeric) < 1e-4);
        }
    }

    #[test]
    fn finite_diff_basics() {
        let net = RewardNet::from_params(&[1, 1], vec![3.0, 0.0], 0).unwrap();
        let g = finite_diff_grad(|n| n.params()[0].powi(2), &net, 1e-5);
        assert!((g.0[0] - 6.0).abs() < 1e-6);
        assert!(g.0[1].abs() < 1e-12);
        let g = finite_diff_grad(|_| 4.2, &net, 1e-5);
        assert!(g.0.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut net = RewardNet::init(&[3, 4, 1], 2).unwrap();
        let before = net.params().to_vec();
        let mut st = AdamState::new(&net, 1e-3);
        let zero = Gradients::zeros_like(&net);
        adam_step(&mut net, &zero, &mut st).unwrap();
        assert_eq!(net.params(), &before[..]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut net = RewardNet::from_params(&[1, 1], vec![1.0, 0.0], 0).unwrap();
        let mut st = AdamState::new(&net, 0.01);
        let g = 0.3;
        adam_step(&mut net, &Gradients(vec![g, -g]), &mut st).unwrap();
        let expected = 0.01 * g / (g.abs() + 1e-8);
        assert!((net.params()[0] - (1.0 - expected)).abs() < 1e-15);
        assert!((net.params()[1] - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_converges_on_a_convex_quadratic() {
        // f(p) = |p|^2 over the weight and bias of a 1-in linear net
        let mut net = RewardNet::from_params(&[1, 1], vec![0.5, -0.3], 0).unwrap();
        let grad = |n: &RewardNet| Gradients(n.params().iter().map(|p| 2.0 * p).collect());
        let mut st = AdamState::new(&net, 0.3);
        for _ in 0..200 {
            let g = grad(&net);
            adam_step(&mut net, &g, &mut st).unwrap();
            st.lr *= 0.98;
        }
        assert!(grad(&net).norm() < 1e-6, "{}", grad(&net).norm());
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut net = RewardNet::init(&[2, 1], 0).unwrap();
        let mut st = AdamState::new(&net, 0.1);
        assert!(adam_step(&mut net, &Gradients(vec![0.0]), &mut st).is_err());
    }

    #[test]
    fn model_bytes_round_trip_bit_exact() {
        let net = RewardNet::init(&[6, 64, 64, 1], 99).unwrap();
        let bytes = net.to_bytes();
        let back = RewardNet::read_from(&mut &bytes[..]).unwrap();
        assert_eq!(back.params(), net.params());
        assert_eq!(back.to_bytes(), bytes);
        let x = [0.1, 0.9, 0.0, 0.5, 0.3, 1.0];
        assert_eq!(back.forward(&x).unwrap().to_bits(), net.forward(&x).unwrap().to_bits());
        let mut truncated = bytes.clone();
        truncated.pop();
        assert!(RewardNet::read_from(&mut &truncated[..]).is_err());
    }
}
