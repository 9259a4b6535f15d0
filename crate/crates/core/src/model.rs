//! Fully connected ReLU networks: evaluation, activation patterns and the
//! exact affine map a network computes inside one linear region.
//!
//! Layer `k` computes `A = W·X + b` and, when its `relu` flag is set,
//! `X' = max(A, 0)`. A network with every flag set is the all-ReLU model;
//! classifiers usually clear the flag on the output layer to get logits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidNetwork(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input; meant for
    /// fixtures and tests.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Matrix { rows: rows.len(), cols, data: rows.concat() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// `self · v`
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (d, &b) in dst.iter_mut().zip(other.row(k)) {
                    *d += a * b;
                }
            }
        }
        out
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One affine layer with an optional ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    weights: Matrix,
    bias: Vec<f64>,
    relu: bool,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>, relu: bool) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::InvalidNetwork(format!(
                "bias length {} does not match weight rows {}",
                bias.len(),
                weights.rows()
            )));
        }
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::InvalidNetwork("layer with zero width".into()));
        }
        if let Some(v) = weights.as_slice().iter().chain(&bias).find(|v| !v.is_finite()) {
            return Err(Error::InvalidNetwork(format!("non-finite parameter {v}")));
        }
        Ok(Layer { weights, bias, relu })
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn relu(&self) -> bool {
        self.relu
    }

    pub fn in_width(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_width(&self) -> usize {
        self.weights.rows()
    }

    pub fn preactivation(&self, x: &[f64]) -> Vec<f64> {
        let mut a = self.weights.mul_vec(x);
        for (v, b) in a.iter_mut().zip(&self.bias) {
            *v += b;
        }
        a
    }

    pub(crate) fn params_mut(&mut self) -> (&mut Matrix, &mut Vec<f64>) {
        (&mut self.weights, &mut self.bias)
    }
}

/// Ordered stack of layers. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_dim: usize,
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidNetwork("input_dim must be positive".into()));
        }
        if layers.is_empty() {
            return Err(Error::InvalidNetwork("network needs at least one layer".into()));
        }
        let mut width = input_dim;
        for (k, layer) in layers.iter().enumerate() {
            if layer.in_width() != width {
                return Err(Error::InvalidNetwork(format!(
                    "layer {k} expects {} inputs but receives {width}",
                    layer.in_width()
                )));
            }
            width = layer.out_width();
        }
        Ok(Network { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_width)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Widths including the input: `[input_dim, w_1, ..., w_s]`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim).chain(self.layers.iter().map(Layer::out_width)).collect()
    }

    /// Number of neurons that sit behind a ReLU.
    pub fn relu_neuron_count(&self) -> usize {
        self.layers.iter().filter(|l| l.relu).map(Layer::out_width).sum()
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::InputShape { expected: self.input_dim, actual: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("input contains non-finite values".into()));
        }
        Ok(())
    }

    /// Network output only, without keeping the per-layer trace.
    pub fn output(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        for layer in &self.layers {
            cur = layer.preactivation(&cur);
            if layer.relu {
                cur.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        Ok(cur)
    }

    /// Relabels the neurons of hidden layer `layer`: new neuron `i` is old
    /// neuron `perm[i]`. The next layer's columns are permuted to match, so
    /// the network function is unchanged.
    pub fn permute_neurons(&self, layer: usize, perm: &[usize]) -> Result<Network> {
        if layer + 1 >= self.layers.len() {
            return Err(Error::InvalidArgument(format!("layer {layer} is not a hidden layer")));
        }
        let width = self.layers[layer].out_width();
        let mut seen = vec![false; width];
        if perm.len() != width || !perm.iter().all(|&p| p < width && !std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument("not a permutation of the layer".into()));
        }
        let mut net = self.clone();
        let src = &self.layers[layer];
        let (w, b) = net.layers[layer].params_mut();
        for (i, &p) in perm.iter().enumerate() {
            w.row_mut(i).copy_from_slice(src.weights.row(p));
            b[i] = src.bias[p];
        }
        let next_src = &self.layers[layer + 1];
        let (w, _) = net.layers[layer + 1].params_mut();
        for r in 0..w.rows() {
            for (i, &p) in perm.iter().enumerate() {
                w.set(r, i, next_src.weights.get(r, p));
            }
        }
        Ok(net)
    }
}

/// Per-layer values for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub preactivations: Vec<Vec<f64>>,
    pub activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map_or(&[], Vec::as_slice)
    }

    /// Values feeding layer `k` (the input for `k == 0`).
    pub fn layer_input(&self, k: usize) -> &[f64] {
        if k == 0 {
            &self.input
        } else {
            &self.activations[k - 1]
        }
    }
}

pub fn forward(net: &Network, x: &[f64]) -> Result<ForwardTrace> {
    net.check_input(x)?;
    let mut preactivations = Vec::with_capacity(net.layers.len());
    let mut activations: Vec<Vec<f64>> = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        let input = activations.last().map_or(x, Vec::as_slice);
        let a = layer.preactivation(input);
        let act = if layer.relu { a.iter().map(|v| v.max(0.0)).collect() } else { a.clone() };
        preactivations.push(a);
        activations.push(act);
    }
    Ok(ForwardTrace { input: x.to_vec(), preactivations, activations })
}

/// Sign bits of every ReLU pre-activation, in layer order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActivationPattern {
    pub bits: Vec<bool>,
}

impl ActivationPattern {
    pub fn from_trace(net: &Network, trace: &ForwardTrace, sign_tolerance: f64) -> Self {
        let bits = net
            .layers
            .iter()
            .zip(&trace.preactivations)
            .filter(|(l, _)| l.relu)
            .flat_map(|(_, a)| a.iter().map(move |&v| v > sign_tolerance))
            .collect();
        ActivationPattern { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

impl std::fmt::Display for ActivationPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Activation pattern with the default sign tolerance of zero: a neuron is
/// on iff its pre-activation is strictly positive.
pub fn activation_pattern(net: &Network, x: &[f64]) -> Result<ActivationPattern> {
    activation_pattern_with_tolerance(net, x, 0.0)
}

pub fn activation_pattern_with_tolerance(net: &Network, x: &[f64], sign_tolerance: f64) -> Result<ActivationPattern> {
    let trace = forward(net, x)?;
    Ok(ActivationPattern::from_trace(net, &trace, sign_tolerance))
}

/// `x ↦ matrix·x + offset`, over the raw network input.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub matrix: Matrix,
    pub offset: Vec<f64>,
}

impl AffineMap {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.matrix.mul_vec(x);
        for (v, c) in y.iter_mut().zip(&self.offset) {
            *v += c;
        }
        y
    }
}

/// The affine map computed by the first `upto_layer` layers (1-based) on
/// the linear region containing `x`. Rows of inactive ReLU neurons are
/// zeroed before composing.
pub fn local_affine_map(net: &Network, x: &[f64], upto_layer: usize) -> Result<AffineMap> {
    if upto_layer == 0 || upto_layer > net.layers.len() {
        return Err(Error::InvalidArgument(format!(
            "upto_layer must be in 1..={}, got {upto_layer}",
            net.layers.len()
        )));
    }
    let trace = forward(net, x)?;
    let n = net.input_dim;
    let mut matrix = Matrix::zeros(n, n);
    (0..n).for_each(|i| matrix.set(i, i, 1.0));
    let mut offset = vec![0.0; n];
    for (layer, pre) in net.layers[..upto_layer].iter().zip(&trace.preactivations) {
        let mut m = layer.weights.matmul(&matrix);
        let mut c: Vec<f64> = layer.weights.mul_vec(&offset).iter().zip(&layer.bias).map(|(a, b)| a + b).collect();
        if layer.relu {
            for (j, &a) in pre.iter().enumerate() {
                if a <= 0.0 {
                    m.row_mut(j).fill(0.0);
                    c[j] = 0.0;
                }
            }
        }
        matrix = m;
        offset = c;
    }
    Ok(AffineMap { matrix, offset })
}

/// I.i.d. `Normal(0, init_stddev²)` weights and biases. Hidden layers use
/// ReLU; the output layer is linear.
pub fn random_network(widths: &[usize], seed: u64, init_stddev: f64) -> Result<Network> {
    random_network_with_output_relu(widths, seed, init_stddev, false)
}

pub fn random_network_with_output_relu(
    widths: &[usize],
    seed: u64,
    init_stddev: f64,
    output_relu: bool,
) -> Result<Network> {
    if widths.len() < 2 {
        return Err(Error::InvalidArgument("widths needs an input width and at least one layer width".into()));
    }
    if widths.contains(&0) {
        return Err(Error::InvalidArgument("widths must be positive".into()));
    }
    let normal =
        Normal::new(0.0, init_stddev).map_err(|e| Error::InvalidArgument(format!("init_stddev {init_stddev}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = widths.len() - 2;
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights: Vec<f64> = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect();
            let bias: Vec<f64> = (0..fan_out).map(|_| normal.sample(&mut rng)).collect();
            Layer::new(Matrix::from_row_major(fan_out, fan_in, weights)?, bias, k < last || output_relu)
        })
        .collect::<Result<Vec<_>>>()?;
    Network::new(widths[0], layers)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// One ReLU neuron computing `max(x, 0)`.
    pub fn single_neuron() -> Network {
        let l = Layer::new(Matrix::from_rows(&[vec![1.0]]), vec![0.0], true).unwrap();
        Network::new(1, vec![l]).unwrap()
    }

    /// `max(max(x, 0) - 1, 0)`.
    pub fn two_layer() -> Network {
        let l1 = Layer::new(Matrix::from_rows(&[vec![1.0]]), vec![0.0], true).unwrap();
        let l2 = Layer::new(Matrix::from_rows(&[vec![1.0]]), vec![-1.0], true).unwrap();
        Network::new(1, vec![l1, l2]).unwrap()
    }
}
