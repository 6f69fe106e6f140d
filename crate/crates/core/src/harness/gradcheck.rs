//! Central finite-difference checks for every layer and both training
//! objectives, on small randomised instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::{a2c_objective, A2cConfig, QAgent, QConfig, QInput};
use crate::error::Result;
use crate::nn::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, log_softmax, relu, relu_backward, softmax,
    ArchSpec, ConvSpec, Network, Tensor,
};
use crate::observation::{phase_onehot, Frame, Observation, SnnFeatures};
use crate::replay::Transition;
use crate::sim::Phase;

pub const STEP: f64 = 1e-5;

/// Relative error between an analytic and a numerical derivative. The
/// denominator is floored so that two vanishing derivatives compare as equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub checked: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance && self.checked > 0
    }
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<24} {:>5} derivatives  max rel err {:.3e}  (tol {:.0e})  {}",
            self.name,
            self.checked,
            self.max_rel_error,
            self.tolerance,
            if self.passed() { "ok" } else { "FAILED" }
        )
    }
}

/// Compares `analytic` against central differences of `f` around `x`.
pub fn compare<F>(x: &[f64], analytic: &[f64], mut f: F) -> Result<(usize, f64)>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + STEP;
        let up = f(&probe)?;
        probe[i] = x[i] - STEP;
        let down = f(&probe)?;
        probe[i] = x[i];
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * STEP)));
    }
    Ok((x.len(), worst))
}

fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn result(name: &'static str, parts: &[(usize, f64)], tolerance: f64) -> CheckResult {
    CheckResult {
        name,
        checked: parts.iter().map(|p| p.0).sum(),
        max_rel_error: parts.iter().map(|p| p.1).fold(0.0, f64::max),
        tolerance,
    }
}

fn tensor(shape: &[usize], data: &[f64]) -> Result<Tensor> {
    Tensor::new(shape.to_vec(), data.to_vec())
}

/// Convolution: gradients of `<R, conv(x)>` w.r.t. input, weights and bias.
pub fn check_conv(seed: u64, channels: usize, size: usize, filters: usize, kernel: usize, stride: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = [channels, size, size];
    let ws = [filters, channels, kernel, kernel];
    let x = random_vec(&mut rng, xs.iter().product());
    let w = random_vec(&mut rng, ws.iter().product());
    let b = random_vec(&mut rng, filters);
    let out = conv2d_forward(&tensor(&xs, &x)?, &tensor(&ws, &w)?, &tensor(&[filters], &b)?, stride)?;
    let r = random_vec(&mut rng, out.len());
    let (gi, gw, gb) = conv2d_backward(&tensor(out.shape(), &r)?, &tensor(&xs, &x)?, &tensor(&ws, &w)?, stride)?;
    let loss = |x: &[f64], w: &[f64], b: &[f64]| -> Result<f64> {
        let y = conv2d_forward(&tensor(&xs, x)?, &tensor(&ws, w)?, &tensor(&[filters], b)?, stride)?;
        Ok(dot(y.data(), &r))
    };
    let parts = [
        compare(&x, gi.data(), |p| loss(p, &w, &b))?,
        compare(&w, gw.data(), |p| loss(&x, p, &b))?,
        compare(&b, gb.data(), |p| loss(&x, &w, p))?,
    ];
    Ok(result("conv2d", &parts, 1e-6))
}

pub fn check_dense(seed: u64, inputs: usize, outputs: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_vec(&mut rng, inputs);
    let w = random_vec(&mut rng, inputs * outputs);
    let b = random_vec(&mut rng, outputs);
    let r = random_vec(&mut rng, outputs);
    let ws = [outputs, inputs];
    let (gi, gw, gb) = dense_backward(&Tensor::from_vec(r.clone()), &Tensor::from_vec(x.clone()), &tensor(&ws, &w)?)?;
    let loss = |x: &[f64], w: &[f64], b: &[f64]| -> Result<f64> {
        let y = dense_forward(&Tensor::from_vec(x.to_vec()), &tensor(&ws, w)?, &Tensor::from_vec(b.to_vec()))?;
        Ok(dot(y.data(), &r))
    };
    let parts = [
        compare(&x, gi.data(), |p| loss(p, &w, &b))?,
        compare(&w, gw.data(), |p| loss(&x, p, &b))?,
        compare(&b, gb.data(), |p| loss(&x, &w, p))?,
    ];
    Ok(result("dense", &parts, 1e-6))
}

/// ReLU away from the kink, where the derivative is defined.
pub fn check_relu(seed: u64, n: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.01..1.0);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    let r = random_vec(&mut rng, n);
    let g = relu_backward(&r, &x);
    let part = compare(&x, &g, |p| Ok(dot(&relu(p), &r)))?;
    Ok(result("relu", &[part], 1e-6))
}

/// Softmax, through both `<R, softmax(z)>` and the log-likelihood
/// `-log softmax(z)[a]`.
pub fn check_softmax(seed: u64, n: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<f64> = random_vec(&mut rng, n).iter().map(|v| 3.0 * v).collect();
    let r = random_vec(&mut rng, n);
    let a = rng.random_range(0..n);
    let p = softmax(&z)?;
    let pr = dot(&p, &r);
    let g_inner: Vec<f64> = p.iter().zip(&r).map(|(pi, ri)| pi * (ri - pr)).collect();
    let g_nll: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(k, pk)| pk - if k == a { 1.0 } else { 0.0 })
        .collect();
    let parts = [
        compare(&z, &g_inner, |q| Ok(dot(&softmax(q)?, &r)))?,
        compare(&z, &g_nll, |q| Ok(-log_softmax(q)?[a]))?,
    ];
    Ok(result("softmax", &parts, 1e-6))
}

fn flat_params(net: &Network) -> Vec<f64> {
    net.params().iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn with_params(net: &Network, flat: &[f64]) -> Network {
    let mut out = net.clone();
    let mut offset = 0;
    for t in out.params_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    }
    out
}

/// Architecture used by the network-level checks: four 8x8 frames, one
/// strided conv layer and a small hidden layer.
pub fn tiny_arch() -> ArchSpec {
    ArchSpec {
        input: [4, 8, 8],
        convs: vec![ConvSpec {
            filters: 3,
            kernel: 4,
            stride: 2,
        }],
        hidden: 12,
    }
}

fn random_observation(rng: &mut impl Rng) -> Result<Observation> {
    let mut obs = Observation::new(Frame::from_pixels(8, 8, (0..64).map(|_| rng.random()).collect())?);
    for _ in 0..3 {
        obs = obs.push_frame(Frame::from_pixels(8, 8, (0..64).map(|_| rng.random()).collect())?)?;
    }
    Ok(obs)
}

fn random_phase(rng: &mut impl Rng) -> Phase {
    if rng.random::<bool>() {
        Phase::Ewg
    } else {
        Phase::Nsg
    }
}

/// Full backward pass of a conv-trunk network under random head gradients.
pub fn check_network(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::policy_value(&tiny_arch(), 2, &mut rng)?;
    let batch = 3;
    let mut x = Vec::new();
    for _ in 0..batch {
        random_observation(&mut rng)?.write_input(&mut x);
    }
    let r0 = random_vec(&mut rng, 2 * batch);
    let r1 = random_vec(&mut rng, batch);
    let trace = net.forward(&x, batch)?;
    let grads = net.backward(&trace, &[r0.clone(), r1.clone()])?;
    let theta = flat_params(&net);
    let part = compare(&theta, &grads.flatten(), |p| {
        let t = with_params(&net, p).forward(&x, batch)?;
        Ok(dot(&t.heads[0], &r0) + dot(&t.heads[1], &r1))
    })?;
    Ok(result("network", &[part], 1e-4))
}

fn q_loss_check<I: QInput>(
    name: &'static str,
    net: Network,
    batch: Vec<Transition<I>>,
    tolerance: f64,
) -> Result<CheckResult> {
    let agent = QAgent::<I>::new(net, QConfig::default())?;
    let refs: Vec<&Transition<I>> = batch.iter().collect();
    let targets = agent.targets(&refs)?;
    let (_, grads) = agent.loss_and_grads(&refs, &targets)?;
    let base = agent.online().clone();
    let theta = flat_params(&base);
    let part = compare(&theta, &grads.flatten(), |p| {
        let mut probe = agent.clone();
        probe.online_mut().copy_from(&with_params(&base, p))?;
        probe.batch_loss(&refs, &targets)
    })?;
    Ok(result(name, &[part], tolerance))
}

/// Mean squared TD error of the conv-trunk agent with the targets held fixed.
pub fn check_dqn_loss(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::q_network(&tiny_arch(), 2, &mut rng)?;
    let mut batch = Vec::new();
    for i in 0..4 {
        batch.push(Transition {
            s: random_observation(&mut rng)?,
            a: random_phase(&mut rng),
            r: -rng.random_range(0.0..5.0),
            s_next: random_observation(&mut rng)?,
            terminal: i == 3,
        });
    }
    q_loss_check("dqn loss", net, batch, 1e-4)
}

/// The same loss for the shallow network on queue features.
pub fn check_snn_loss(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::shallow(SnnFeatures::WIDTH, 10, 2, &mut rng)?;
    let feat = |rng: &mut ChaCha8Rng| SnnFeatures {
        queue_counts: [0; 4].map(|_| rng.random_range(0..8)),
        phase_onehot: phase_onehot(random_phase(rng)),
    };
    let batch = (0..5)
        .map(|_| Transition {
            s: feat(&mut rng),
            a: random_phase(&mut rng),
            r: -rng.random_range(0.0..5.0),
            s_next: feat(&mut rng),
            terminal: false,
        })
        .collect();
    q_loss_check("snn loss", net, batch, 1e-6)
}

/// Actor-critic objective with the advantages frozen.
pub fn check_a2c_objective(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::policy_value(&tiny_arch(), 2, &mut rng)?;
    let n = 4;
    let mut x = Vec::new();
    for _ in 0..n {
        random_observation(&mut rng)?.write_input(&mut x);
    }
    let actions: Vec<Phase> = (0..n).map(|_| random_phase(&mut rng)).collect();
    let returns = random_vec(&mut rng, n);
    let advantages = random_vec(&mut rng, n);
    let config = A2cConfig {
        value_coef: 0.5,
        entropy_coef: 0.05,
        ..A2cConfig::default()
    };
    let objective = |net: &Network| -> Result<f64> {
        let (l, _) = a2c_objective(net, &x, &actions, &returns, &advantages, &config)?;
        Ok(l.policy_loss + config.value_coef * l.value_loss)
    };
    let (_, grads) = a2c_objective(&net, &x, &actions, &returns, &advantages, &config)?;
    let theta = flat_params(&net);
    let part = compare(&theta, &grads.flatten(), |p| objective(&with_params(&net, p)))?;
    Ok(result("a2c objective", &[part], 1e-4))
}

/// Every suite, in a fixed order.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        check_conv(seed, 1, 5, 1, 3, 1)?,
        check_conv(seed + 1, 2, 7, 3, 3, 2)?,
        check_dense(seed + 2, 6, 4)?,
        check_relu(seed + 3, 32)?,
        check_softmax(seed + 4, 5)?,
        check_network(seed + 5)?,
        check_dqn_loss(seed + 6)?,
        check_a2c_objective(seed + 7)?,
        check_snn_loss(seed + 8)?,
    ])
}
