//! DQN for the child agent.
//!
//! A three-weight-layer fully connected network (4 -> 64 -> 64 -> out) with
//! rectifier hidden activations, explicit forward/backward passes, plain
//! SGD, a target copy synchronized on a fixed interval, and a FIFO replay
//! buffer. The loss is the mean squared TD error over the batch.

use std::collections::VecDeque;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const DIVERGENCE_LIMIT: f64 = 1e12;

/// Fully connected network with rectifier hidden layers and identity output.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub sizes: Vec<usize>,
    /// Per layer, row-major (out x in).
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl QNetwork {
    /// Xavier-uniform initialization in +-sqrt(6 / (fan_in + fan_out)).
    pub fn new(sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(sizes.len() >= 2);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-limit..limit))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        QNetwork {
            sizes: sizes.to_vec(),
            weights,
            biases,
        }
    }

    pub fn zeroed(sizes: &[usize]) -> Self {
        QNetwork {
            sizes: sizes.to_vec(),
            weights: sizes.windows(2).map(|p| vec![0.0; p[0] * p[1]]).collect(),
            biases: sizes.windows(2).map(|p| vec![0.0; p[1]]).collect(),
        }
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn layer_out(&self, layer: usize, input: &[f64], out: &mut Vec<f64>) {
        let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let w = &self.weights[layer];
        let b = &self.biases[layer];
        out.clear();
        for o in 0..n_out {
            let row = &w[o * n_in..(o + 1) * n_in];
            let mut acc = b[o];
            for (wi, xi) in row.iter().zip(input) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }

    /// Deterministic affine-rectifier-affine-rectifier-affine map.
    pub fn forward(&self, features: &[f64]) -> Vec<f64> {
        debug_assert_eq!(features.len(), self.input_size());
        let layers = self.sizes.len() - 1;
        let mut cur = features.to_vec();
        let mut next = Vec::new();
        for layer in 0..layers {
            self.layer_out(layer, &cur, &mut next);
            if layer + 1 < layers {
                for v in &mut next {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Forward pass keeping post-activation values of every layer (index 0
    /// is the input itself), for backprop.
    fn forward_cached(&self, features: &[f64]) -> Vec<Vec<f64>> {
        let layers = self.sizes.len() - 1;
        let mut acts = vec![features.to_vec()];
        for layer in 0..layers {
            let mut out = Vec::new();
            self.layer_out(layer, &acts[layer], &mut out);
            if layer + 1 < layers {
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            acts.push(out);
        }
        acts
    }

    /// Text checkpoint: version line, layer sizes, then bit-exact
    /// hex-encoded parameters in layer order (weights then bias per layer).
    pub fn save(&self) -> String {
        let mut out = String::from("qnetwork v1\n");
        out.push_str(
            &self
                .sizes
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(" "),
        );
        out.push('\n');
        for layer in 0..self.sizes.len() - 1 {
            for v in self.weights[layer].iter().chain(&self.biases[layer]) {
                out.push_str(&format!("{:016x}\n", v.to_bits()));
            }
        }
        out
    }

    pub fn load(text: &str) -> Result<Self> {
        let path = Path::new("qnetwork");
        let mut lines = text.lines();
        match lines.next() {
            Some("qnetwork v1") => {}
            other => {
                return Err(Error::parse(
                    path,
                    1,
                    format!("bad checkpoint header {other:?}"),
                ))
            }
        }
        let sizes: Vec<usize> = lines
            .next()
            .ok_or_else(|| Error::parse(path, 2, "missing sizes"))?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| Error::parse(path, 2, "bad size")))
            .collect::<Result<_>>()?;
        if sizes.len() < 2 {
            return Err(Error::parse(path, 2, "need at least 2 layer sizes"));
        }
        let mut net = QNetwork::zeroed(&sizes);
        let mut lineno = 2;
        for layer in 0..sizes.len() - 1 {
            let layer_params = net.weights[layer].len() + net.biases[layer].len();
            for k in 0..layer_params {
                lineno += 1;
                let line = lines
                    .next()
                    .ok_or_else(|| Error::parse(path, lineno, "truncated checkpoint"))?;
                let bits = u64::from_str_radix(line.trim(), 16)
                    .map_err(|_| Error::parse(path, lineno, "bad parameter"))?;
                let v = f64::from_bits(bits);
                let nw = net.weights[layer].len();
                if k < nw {
                    net.weights[layer][k] = v;
                } else {
                    net.biases[layer][k - nw] = v;
                }
            }
        }
        if lines.next().is_some() {
            return Err(Error::parse(path, lineno + 1, "trailing data"));
        }
        Ok(net)
    }
}

/// Copy online parameters into the target network.
pub fn sync_target(net: &QNetwork, target: &mut QNetwork) -> Result<()> {
    if net.sizes != target.sizes {
        return Err(Error::InvalidArgument(format!(
            "architecture mismatch: {:?} vs {:?}",
            net.sizes, target.sizes
        )));
    }
    target.weights = net.weights.clone();
    target.biases = net.biases.clone();
    Ok(())
}

/// One replay sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: [f64; 4],
    pub a: usize,
    pub r: f64,
    pub s_next: [f64; 4],
    pub terminal: bool,
}

/// FIFO ring of transitions with uniform sampling without replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            data: VecDeque::with_capacity(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() == self.capacity {
            self.data.pop_front();
        }
        self.data.push_back(t);
    }

    /// Uniform sample of `n` distinct stored transitions.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Transition>> {
        if n > self.data.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot sample {n} from buffer of {}",
                self.data.len()
            )));
        }
        // Partial Fisher-Yates over an index vector.
        let mut indices: Vec<usize> = (0..self.data.len()).collect();
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let j = rng.gen_range(k..indices.len());
            indices.swap(k, j);
            out.push(self.data[indices[k]]);
        }
        Ok(out)
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DqnHyperparams {
    pub lr: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub target_sync_interval: usize,
}

impl Default for DqnHyperparams {
    fn default() -> Self {
        DqnHyperparams {
            lr: 1e-3,
            gamma: 0.95,
            batch_size: 32,
            target_sync_interval: 100,
        }
    }
}

impl DqnHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0
            || self.gamma <= 0.0
            || self.batch_size == 0
            || self.target_sync_interval == 0
        {
            return Err(Error::Config(format!(
                "DQN hyperparameters must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Per-sample TD targets: r + gamma * max target-net Q(s'), r on terminals.
pub fn td_targets(batch: &[Transition], target_net: &QNetwork, gamma: f64) -> Vec<f64> {
    batch
        .iter()
        .map(|t| {
            if t.terminal {
                t.r
            } else {
                let q_next = target_net.forward(&t.s_next);
                t.r + gamma * q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .collect()
}

/// Mean squared TD error of the online network against fixed targets.
/// Shared by training and the finite-difference gradient oracle.
pub fn batch_loss(net: &QNetwork, batch: &[Transition], targets: &[f64]) -> f64 {
    let mut loss = 0.0;
    for (t, target) in batch.iter().zip(targets) {
        let q = net.forward(&t.s)[t.a];
        loss += (target - q) * (target - q);
    }
    loss / batch.len() as f64
}

/// Analytic loss gradient, same parameter layout as the network.
pub fn batch_gradient(net: &QNetwork, batch: &[Transition], targets: &[f64]) -> QNetwork {
    let layers = net.sizes.len() - 1;
    let mut grad = QNetwork::zeroed(&net.sizes);
    let scale = 1.0 / batch.len() as f64;
    for (t, target) in batch.iter().zip(targets) {
        let acts = net.forward_cached(&t.s);
        // d(loss_sample)/d(q_a) = 2 (q_a - target) / batch
        let q = acts[layers][t.a];
        let mut delta = vec![0.0; net.output_size()];
        delta[t.a] = 2.0 * (q - target) * scale;
        for layer in (0..layers).rev() {
            let n_in = net.sizes[layer];
            let input = &acts[layer];
            // Accumulate weight/bias gradients for this layer.
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                grad.biases[layer][o] += d;
                let row = &mut grad.weights[layer][o * n_in..(o + 1) * n_in];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            if layer == 0 {
                break;
            }
            // Propagate through the weights and the rectifier of the
            // previous layer (post-activation stored in acts[layer]).
            let mut prev = vec![0.0; n_in];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &net.weights[layer][o * n_in..(o + 1) * n_in];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            for (p, a) in prev.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }
    grad
}

/// One SGD step on the squared-TD-error loss. Returns the pre-step loss.
pub fn train_batch(
    net: &mut QNetwork,
    target_net: &QNetwork,
    batch: &[Transition],
    hyper: &DqnHyperparams,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let targets = td_targets(batch, target_net, hyper.gamma);
    let loss = batch_loss(net, batch, &targets);
    if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
        return Err(Error::Divergence(format!("loss {loss}")));
    }
    let grad = batch_gradient(net, batch, &targets);
    for layer in 0..net.sizes.len() - 1 {
        for (w, g) in net.weights[layer].iter_mut().zip(&grad.weights[layer]) {
            *w -= hyper.lr * g;
        }
        for (b, g) in net.biases[layer].iter_mut().zip(&grad.biases[layer]) {
            *b -= hyper.lr * g;
        }
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;

    fn features(seed: f64) -> [f64; 4] {
        [seed, seed * 0.5, 1.0 - seed, 0.3]
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = QNetwork::zeroed(&[4, 64, 64, 25]);
        assert!(net.forward(&features(0.7)).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constructed_passthrough() {
        // Single path: input0 -> hidden0 -> hidden0 -> output0, all unit
        // weights; positive inputs ride through the rectifiers unchanged.
        let mut net = QNetwork::zeroed(&[4, 3, 3, 2]);
        net.weights[0][0] = 1.0; // hidden0 <- input0
        net.weights[1][0] = 1.0; // hidden0 <- hidden0
        net.weights[2][0] = 1.0; // out0 <- hidden0
        let out = net.forward(&[0.42, 9.0, 9.0, 9.0]);
        assert_eq!(out[0], 0.42);
        assert_eq!(out[1], 0.0);
    }

    #[test]
    fn forward_is_pure() {
        let mut rng = stream(1, 0);
        let net = QNetwork::new(&[4, 64, 64, 25], &mut rng);
        let x = features(0.3);
        assert_eq!(net.forward(&x), net.forward(&x));
    }

    #[test]
    fn td_target_cases() {
        let zero = QNetwork::zeroed(&[4, 8, 8, 5]);
        let term = Transition {
            s: features(0.1),
            a: 0,
            r: 5.0,
            s_next: features(0.2),
            terminal: true,
        };
        let cont = Transition {
            terminal: false,
            ..term
        };
        assert_eq!(td_targets(&[term], &zero, 0.95), vec![5.0]);
        assert_eq!(td_targets(&[cont], &zero, 0.0), vec![5.0]);
        assert_eq!(td_targets(&[cont], &zero, 0.95), vec![5.0]);
        let mut rng = stream(2, 0);
        let net = QNetwork::new(&[4, 8, 8, 5], &mut rng);
        let max_q = net
            .forward(&cont.s_next)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(td_targets(&[cont], &net, 0.5)[0], 5.0 + 0.5 * max_q);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        // Zero net, zero rewards, terminal: predictions equal targets.
        let mut net = QNetwork::zeroed(&[4, 8, 8, 5]);
        let target = net.clone();
        let batch = [Transition {
            s: features(0.5),
            a: 2,
            r: 0.0,
            s_next: features(0.6),
            terminal: true,
        }];
        let loss = train_batch(&mut net, &target, &batch, &DqnHyperparams::default()).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(net, QNetwork::zeroed(&[4, 8, 8, 5]));
    }

    fn finite_difference_gradient(
        net: &QNetwork,
        batch: &[Transition],
        targets: &[f64],
        h: f64,
    ) -> QNetwork {
        let mut fd = QNetwork::zeroed(&net.sizes);
        let mut probe = net.clone();
        for layer in 0..net.sizes.len() - 1 {
            for k in 0..net.weights[layer].len() {
                let orig = probe.weights[layer][k];
                probe.weights[layer][k] = orig + h;
                let hi = batch_loss(&probe, batch, targets);
                probe.weights[layer][k] = orig - h;
                let lo = batch_loss(&probe, batch, targets);
                probe.weights[layer][k] = orig;
                fd.weights[layer][k] = (hi - lo) / (2.0 * h);
            }
            for k in 0..net.biases[layer].len() {
                let orig = probe.biases[layer][k];
                probe.biases[layer][k] = orig + h;
                let hi = batch_loss(&probe, batch, targets);
                probe.biases[layer][k] = orig - h;
                let lo = batch_loss(&probe, batch, targets);
                probe.biases[layer][k] = orig;
                fd.biases[layer][k] = (hi - lo) / (2.0 * h);
            }
        }
        fd
    }

    /// Max relative error between analytic and finite-difference gradients.
    pub(crate) fn gradient_check(seed: u64) -> f64 {
        use rand::Rng;
        let mut rng = stream(seed, 17);
        let net = QNetwork::new(&[4, 6, 6, 5], &mut rng);
        let batch: Vec<Transition> = (0..3)
            .map(|_| Transition {
                s: std::array::from_fn(|_| rng.gen_range(-1.0..1.0)),
                a: rng.gen_range(0..5),
                r: rng.gen_range(-2.0..2.0),
                s_next: std::array::from_fn(|_| rng.gen_range(-1.0..1.0)),
                terminal: rng.gen(),
            })
            .collect();
        let targets = td_targets(&batch, &net, 0.9);
        let analytic = batch_gradient(&net, &batch, &targets);
        let numeric = finite_difference_gradient(&net, &batch, &targets, 1e-5);
        let mut max_rel = 0.0f64;
        for layer in 0..net.sizes.len() - 1 {
            for (a, n) in analytic.weights[layer]
                .iter()
                .chain(&analytic.biases[layer])
                .zip(numeric.weights[layer].iter().chain(&numeric.biases[layer]))
            {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
                max_rel = max_rel.max(rel);
            }
        }
        max_rel
    }

    #[test]
    fn backprop_matches_finite_differences() {
        for seed in 0..10 {
            let err = gradient_check(seed);
            assert!(err < 1e-4, "seed {seed}: max relative error {err}");
        }
    }

    #[test]
    fn repeated_steps_on_fixed_batch_decrease_loss() {
        let mut rng = stream(3, 0);
        let mut net = QNetwork::new(&[4, 8, 8, 5], &mut rng);
        let target = QNetwork::zeroed(&[4, 8, 8, 5]);
        let batch = [Transition {
            s: features(0.4),
            a: 1,
            r: 2.0,
            s_next: features(0.5),
            terminal: true,
        }];
        let hyper = DqnHyperparams {
            lr: 1e-3,
            ..Default::default()
        };
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            let loss = train_batch(&mut net, &target, &batch, &hyper).unwrap();
            assert!(loss <= last + 1e-12, "loss increased: {last} -> {loss}");
            last = loss;
        }
    }

    #[test]
    fn supervised_toy_regression_converges() {
        // 25-way regression to constant targets through terminal rewards.
        let mut rng = stream(4, 0);
        let mut net = QNetwork::new(&[4, 64, 64, 25], &mut rng);
        let target_net = QNetwork::zeroed(&[4, 64, 64, 25]);
        let hyper = DqnHyperparams::default();
        let samples: Vec<Transition> = (0..25)
            .map(|a| Transition {
                s: features((a as f64) / 25.0),
                a,
                r: 0.5,
                s_next: features(0.0),
                terminal: true,
            })
            .collect();
        let mut loss = f64::INFINITY;
        for step in 0..20_000 {
            let batch: Vec<Transition> = (0..hyper.batch_size)
                .map(|_| samples[rng.gen_range(0..samples.len())])
                .collect();
            loss = train_batch(&mut net, &target_net, &batch, &hyper).unwrap();
            if loss < 1e-3 {
                assert!(step < 20_000);
                return;
            }
        }
        panic!("toy regression did not converge: final loss {loss}");
    }

    #[test]
    fn divergent_loss_aborts() {
        let mut net = QNetwork::zeroed(&[4, 4, 4, 2]);
        let target = net.clone();
        let batch = [Transition {
            s: features(0.1),
            a: 0,
            r: 1e200,
            s_next: features(0.1),
            terminal: true,
        }];
        assert!(matches!(
            train_batch(&mut net, &target, &batch, &DqnHyperparams::default()),
            Err(Error::Divergence(_))
        ));
    }

    #[test]
    fn sync_target_copies_and_isolates() {
        let mut rng = stream(5, 0);
        let net = QNetwork::new(&[4, 8, 8, 5], &mut rng);
        let mut target = QNetwork::zeroed(&[4, 8, 8, 5]);
        sync_target(&net, &mut target).unwrap();
        let x = features(0.9);
        assert_eq!(net.forward(&x), target.forward(&x));
        // Mutate online net: target unaffected.
        let mut online = net.clone();
        online.weights[0][0] += 1.0;
        assert_eq!(target.forward(&x), net.forward(&x));
        // Idempotent.
        let snapshot = target.clone();
        sync_target(&net, &mut target).unwrap();
        assert_eq!(target, snapshot);
        // Architecture mismatch.
        let mut other = QNetwork::zeroed(&[4, 8, 5]);
        assert!(sync_target(&net, &mut other).is_err());
    }

    #[test]
    fn target_is_stale_between_syncs() {
        let mut rng = stream(6, 0);
        let mut net = QNetwork::new(&[4, 8, 8, 5], &mut rng);
        let mut target = QNetwork::zeroed(&[4, 8, 8, 5]);
        sync_target(&net, &mut target).unwrap();
        let batch = [Transition {
            s: features(0.3),
            a: 0,
            r: 1.0,
            s_next: features(0.4),
            terminal: false,
        }];
        let before = td_targets(&batch, &target, 0.95);
        train_batch(&mut net, &target, &batch, &DqnHyperparams::default()).unwrap();
        assert_eq!(td_targets(&batch, &target, 0.95), before);
    }

    #[test]
    fn buffer_fifo_eviction() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..4 {
            buf.push(Transition {
                s: features(i as f64),
                a: i,
                r: 0.0,
                s_next: features(0.0),
                terminal: false,
            });
        }
        assert_eq!(buf.len(), 3);
        let all = buf.sample(3, &mut stream(7, 0)).unwrap();
        assert!(all.iter().all(|t| t.a != 0), "oldest should be evicted");
    }

    #[test]
    fn exhaustive_sample_is_permutation() {
        let mut buf = ReplayBuffer::new(10);
        for i in 0..10 {
            buf.push(Transition {
                s: features(i as f64),
                a: i,
                r: 0.0,
                s_next: features(0.0),
                terminal: false,
            });
        }
        let mut drawn: Vec<usize> = buf
            .sample(10, &mut stream(8, 0))
            .unwrap()
            .iter()
            .map(|t| t.a)
            .collect();
        drawn.sort_unstable();
        assert_eq!(drawn, (0..10).collect::<Vec<_>>());
        assert!(buf.sample(11, &mut stream(8, 0)).is_err());
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let mut buf = ReplayBuffer::new(16);
        for i in 0..16 {
            buf.push(Transition {
                s: features(i as f64),
                a: i,
                r: 0.0,
                s_next: features(0.0),
                terminal: false,
            });
        }
        let a = buf.sample(5, &mut stream(9, 0)).unwrap();
        let b = buf.sample(5, &mut stream(9, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let mut rng = stream(10, 0);
        let net = QNetwork::new(&[4, 64, 64, 25], &mut rng);
        let text = net.save();
        let back = QNetwork::load(&text).unwrap();
        assert_eq!(net, back);
        assert!(QNetwork::load("garbage").is_err());
    }
}
