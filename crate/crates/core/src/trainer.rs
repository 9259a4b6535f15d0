//! Plain mini-batch SGD on softmax cross-entropy for the experiment
//! classifier. Every source of randomness is derived from the config seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledSet;
use crate::error::{Error, Result};
use crate::model::{forward, random_network, Matrix, Network};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub widths: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub init_stddev: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            widths: vec![36, 32, 32, 2],
            learning_rate: 0.02,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            checkpoint_every: 2,
            init_stddev: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return bad(format!("widths {:?} must have at least two positive entries", self.widths));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.init_stddev.is_finite() && self.init_stddev > 0.0) {
            return bad(format!("init_stddev must be positive, got {}", self.init_stddev));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.checkpoint_every == 0 {
            return bad("epochs, batch_size and checkpoint_every must be positive".into());
        }
        if !self.epochs.is_multiple_of(self.checkpoint_every) {
            return bad(format!("checkpoint_every {} does not divide epochs {}", self.checkpoint_every, self.epochs));
        }
        Ok(())
    }

    /// Epochs at which checkpoints are taken, starting with 0.
    pub fn checkpoint_epochs(&self) -> Vec<usize> {
        (0..=self.epochs).step_by(self.checkpoint_every.max(1)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub network: Network,
    pub train_loss: f64,
    pub train_accuracy: f64,
}

impl Checkpoint {
    /// `run{seed}_epoch{NN}.net`
    pub fn file_name(&self, seed: u64) -> String {
        format!("run{seed}_epoch{:02}.net", self.epoch)
    }
}

/// Per-layer parameter gradients, laid out like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

fn check_labels(net: &Network, points: &[Vec<f64>], labels: &[u8]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if points.len() != labels.len() {
        return Err(Error::InvalidArgument(format!("{} points but {} labels", points.len(), labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= net.output_dim()) {
        return Err(Error::InvalidArgument(format!("label {l} out of range for {} outputs", net.output_dim())));
    }
    Ok(())
}

/// Mean softmax cross-entropy over the batch and its gradient.
pub fn loss_and_gradient(net: &Network, points: &[Vec<f64>], labels: &[u8]) -> Result<(f64, Gradients)> {
    check_labels(net, points, labels)?;
    let layers = net.layers();
    let mut grads = Gradients {
        weights: layers.iter().map(|l| Matrix::zeros(l.out_width(), l.in_width())).collect(),
        biases: layers.iter().map(|l| vec![0.0; l.out_width()]).collect(),
    };
    let scale = 1.0 / points.len() as f64;
    let mut loss = 0.0;
    for (x, &y) in points.iter().zip(labels) {
        let trace = forward(net, x)?;
        let logp = log_softmax(trace.output());
        loss -= logp[y as usize];
        // d loss / d output
        let mut delta: Vec<f64> = logp.iter().map(|v| v.exp() * scale).collect();
        delta[y as usize] -= scale;
        for k in (0..layers.len()).rev() {
            let layer = &layers[k];
            if layer.relu() {
                for (d, &a) in delta.iter_mut().zip(&trace.preactivations[k]) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = trace.layer_input(k);
            let gw = &mut grads.weights[k];
            for (j, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grads.biases[k][j] += d;
                for (g, &v) in gw.row_mut(j).iter_mut().zip(input) {
                    *g += d * v;
                }
            }
            if k > 0 {
                let w = layer.weights();
                let mut back = vec![0.0; layer.in_width()];
                for (j, &d) in delta.iter().enumerate() {
                    if d != 0.0 {
                        for (b, &m) in back.iter_mut().zip(w.row(j)) {
                            *b += d * m;
                        }
                    }
                }
                delta = back;
            }
        }
    }
    Ok((loss * scale, grads))
}

/// Mean loss without gradients.
pub fn mean_loss(net: &Network, points: &[Vec<f64>], labels: &[u8]) -> Result<f64> {
    check_labels(net, points, labels)?;
    let mut total = 0.0;
    for (x, &y) in points.iter().zip(labels) {
        total -= log_softmax(&net.output(x)?)[y as usize];
    }
    Ok(total / points.len() as f64)
}

/// Index of the largest output; ties go to the lower index.
pub fn predict(net: &Network, x: &[f64]) -> Result<usize> {
    let out = net.output(x)?;
    Ok(out.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best }).0)
}

/// Fraction of argmax-correct predictions.
pub fn evaluate(net: &Network, data: &LabeledSet) -> Result<f64> {
    let labels = data.labels.as_ref().ok_or_else(|| Error::InvalidArgument("evaluation needs labeled data".into()))?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let mut correct = 0usize;
    for (x, &y) in data.points.iter().zip(labels) {
        correct += usize::from(predict(net, x)? == y as usize);
    }
    Ok(correct as f64 / data.len() as f64)
}

/// `|a - b| / max(|a|, |b|, 1e-6)`; the floor keeps zero gradients of dead
/// units from dividing by zero.
pub fn relative_deviation(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn sgd_step(net: &mut Network, grads: &Gradients, lr: f64) {
    for ((layer, gw), gb) in net.layers_mut().iter_mut().zip(&grads.weights).zip(&grads.biases) {
        let (w, b) = layer.params_mut();
        for (p, g) in w.as_mut_slice().iter_mut().zip(gw.as_slice()) {
            *p -= lr * g;
        }
        for (p, g) in b.iter_mut().zip(gb) {
            *p -= lr * g;
        }
    }
}

/// Trains a fresh network and returns checkpoints at epoch 0 and every
/// `checkpoint_every` epochs.
pub fn train(data: &LabeledSet, config: &TrainConfig) -> Result<Vec<Checkpoint>> {
    config.validate()?;
    let labels = data.labels.as_ref().ok_or_else(|| Error::InvalidArgument("training needs labeled data".into()))?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if config.widths[0] != data.dim() {
        return Err(Error::InputShape { expected: config.widths[0], actual: data.dim() });
    }
    let classes = labels.iter().copied().max().unwrap_or(0) as usize + 1;
    if *config.widths.last().expect("validated") < classes {
        return Err(Error::InvalidArgument(format!(
            "output width {} cannot represent {classes} classes",
            config.widths.last().expect("validated")
        )));
    }

    let mut net = random_network(&config.widths, config.seed, config.init_stddev)?;
    // separate stream for minibatch order
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let snapshot = |net: &Network, epoch: usize| -> Result<Checkpoint> {
        let train_loss = mean_loss(net, &data.points, labels)?;
        if !train_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: train_loss });
        }
        Ok(Checkpoint { epoch, network: net.clone(), train_loss, train_accuracy: evaluate(net, data)? })
    };

    let mut checkpoints = vec![snapshot(&net, 0)?];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch_x = Vec::with_capacity(config.batch_size);
    let mut batch_y = Vec::with_capacity(config.batch_size);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.push(data.points[i].clone());
                batch_y.push(labels[i]);
            }
            let (loss, grads) = loss_and_gradient(&net, &batch_x, &batch_y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            sgd_step(&mut net, &grads, config.learning_rate);
        }
        if epoch % config.checkpoint_every == 0 {
            checkpoints.push(snapshot(&net, epoch)?);
        }
    }
    Ok(checkpoints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthetic_blobs, Category};
    use crate::model::{Layer, Network};

    fn zero_net(widths: &[usize]) -> Network {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| Layer::new(Matrix::zeros(w[1], w[0]), vec![0.0; w[1]], k + 2 < widths.len()).unwrap())
            .collect();
        Network::new(widths[0], layers).unwrap()
    }

    #[test]
    fn uniform_softmax_loss() {
        let net = zero_net(&[3, 4, 2]);
        let (loss, _) = loss_and_gradient(&net, &[vec![0.1, 0.2, 0.3], vec![0.5, 0.5, 0.5]], &[0, 1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn loss_vanishes_with_margin() {
        let mut last = f64::INFINITY;
        for scale in [1.0, 2.0, 5.0, 10.0, 50.0] {
            let l = Layer::new(Matrix::from_rows(&[vec![scale], vec![-scale]]), vec![0.0, 0.0], false).unwrap();
            let net = Network::new(1, vec![l]).unwrap();
            let (loss, _) = loss_and_gradient(&net, &[vec![1.0]], &[0]).unwrap();
            assert!(loss < last);
            last = loss;
        }
        assert!(last < 1e-40);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = random_network(&[3, 4, 2], 11, 1.0).unwrap();
        let pts = vec![vec![0.3, -0.2, 0.9], vec![-0.5, 0.4, 0.1], vec![1.0, 1.0, -1.0]];
        let labels = vec![0, 1, 1];
        let (_, grads) = loss_and_gradient(&net, &pts, &labels).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for k in 0..net.layer_count() {
            let n_w = net.layers()[k].weights().as_slice().len();
            for p in 0..n_w + net.layers()[k].out_width() {
                let perturbed = |d: f64| {
                    let mut n = net.clone();
                    let (w, b) = n.layers_mut()[k].params_mut();
                    if p < n_w {
                        w.as_mut_slice()[p] += d
                    } else {
                        b[p - n_w] += d
                    }
                    mean_loss(&n, &pts, &labels).unwrap()
                };
                let fd = (perturbed(h) - perturbed(-h)) / (2.0 * h);
                let g = if p < n_w { grads.weights[k].as_slice()[p] } else { grads.biases[k][p - n_w] };
                worst = worst.max(relative_deviation(fd, g));
            }
        }
        assert!(worst < 1e-4, "max relative deviation {worst}");
    }

    #[test]
    fn evaluate_tie_break_and_errors() {
        let net = zero_net(&[2, 2]);
        let set = LabeledSet::new(
            vec![vec![0.1, 0.1], vec![0.2, 0.2], vec![0.3, 0.3], vec![0.4, 0.4]],
            Some(vec![0, 1, 1, 0]),
            Category::Train,
        )
        .unwrap();
        assert_eq!(evaluate(&net, &set).unwrap(), 0.5);
        let empty = LabeledSet::new(vec![], Some(vec![]), Category::Train).unwrap();
        assert!(evaluate(&net, &empty).is_err());
        let unlabeled = LabeledSet::new(vec![vec![0.0, 0.0]], None, Category::Random2).unwrap();
        assert!(evaluate(&net, &unlabeled).is_err());
    }

    #[test]
    fn checkpoint_schedule_and_determinism() {
        let data = synthetic_blobs(64, 4, 0.5, 1).unwrap();
        let cfg = TrainConfig { widths: vec![4, 5, 2], epochs: 4, seed: 3, ..TrainConfig::default() };
        let a = train(&data, &cfg).unwrap();
        let b = train(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().map(|c| c.epoch).collect::<Vec<_>>(), vec![0, 2, 4]);
        assert_eq!(a[1].file_name(3), "run3_epoch02.net");
        assert_eq!(TrainConfig::default().checkpoint_epochs().len(), 11);
    }

    #[test]
    fn config_validation() {
        let data = synthetic_blobs(8, 4, 0.5, 1).unwrap();
        assert!(train(&data, &TrainConfig { epochs: 5, ..TrainConfig::default() }).is_err());
        assert!(matches!(train(&data, &TrainConfig::default()), Err(Error::InputShape { .. })));
        let unlabeled = data.clone();
        let unlabeled = LabeledSet { labels: None, ..unlabeled };
        let cfg = TrainConfig { widths: vec![4, 2], ..TrainConfig::default() };
        assert!(train(&unlabeled, &cfg).is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..cfg.clone() }.validate().is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let data = synthetic_blobs(64, 4, 0.5, 1).unwrap();
        let cfg = TrainConfig {
            widths: vec![4, 16, 16, 2],
            learning_rate: 1e300,
            epochs: 2,
            init_stddev: 1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&data, &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn blobs_train_to_high_accuracy() {
        let data = synthetic_blobs(1000, 36, 0.5, 0).unwrap();
        let ckpts = train(&data, &TrainConfig::default()).unwrap();
        let last = ckpts.last().unwrap();
        assert!(last.train_accuracy >= 0.95, "accuracy {}", last.train_accuracy);
        assert!(last.train_loss < ckpts[0].train_loss);
    }

    #[test]
    fn checkpoints_are_snapshots() {
        let data = synthetic_blobs(64, 4, 0.5, 1).unwrap();
        let cfg = TrainConfig { widths: vec![4, 5, 2], epochs: 4, seed: 3, ..TrainConfig::default() };
        let short = train(&data, &TrainConfig { epochs: 2, ..cfg.clone() }).unwrap();
        let long = train(&data, &cfg).unwrap();
        assert_eq!(short[..], long[..2]);
    }
}
