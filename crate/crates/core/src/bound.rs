//! Layer-wise propagation of exactness flags, sign-stability flags and
//! deviation slacks over a Euclidean ball.
//!
//! For every neuron the propagation tracks three facts that hold for all
//! inputs `x'` in the ball `B_r(x)`:
//!
//! - `exact` (P = 0): the neuron equals one fixed affine function
//!   `L·x' + c` of the raw input;
//! - `!sign_may_flip` (S = 0): the pre-activation keeps the sign it has at
//!   the center (or the neuron is certified dead);
//! - `slack` (U): `|value(x') - value(x)| <= U`.
//!
//! Layer `k+1` is derived from layer `k` by splitting each pre-activation
//! deviation into an exact part, bounded with Cauchy–Schwarz as
//! `r·‖Σ M_ij L_i‖₂`, and an uncertain part `Σ |M_ij|·U_i`. The number `C`
//! of neurons whose sign may flip gives at most `2^C` open linear regions
//! meeting the ball.
//!
//! Cost per layer is `O(m_in·m_out·input_dim)` because each exact row is a
//! vector over the input coordinates.

use crate::error::{Error, Result};
use crate::model::{dot, forward, ForwardTrace, Layer, Network};

/// Closed Euclidean ball.
#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    center: Vec<f64>,
    radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius >= 0.0) {
            return Err(Error::InvalidArgument(format!("radius must be finite and non-negative, got {radius}")));
        }
        if center.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("ball center is not finite".into()));
        }
        Ok(Ball { center, radius })
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }
}

/// Exact affine expression of a neuron in terms of the raw input.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineRow {
    pub coeffs: Vec<f64>,
    pub intercept: f64,
}

impl AffineRow {
    pub fn eval(&self, x: &[f64]) -> f64 {
        dot(&self.coeffs, x) + self.intercept
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronState {
    /// `Some` iff P = 0. Only exact neurons carry their row.
    pub exact: Option<AffineRow>,
    /// S flag.
    pub sign_may_flip: bool,
    /// U slack.
    pub slack: f64,
}

impl NeuronState {
    pub fn p_flag(&self) -> u8 {
        u8::from(self.exact.is_none())
    }

    pub fn s_flag(&self) -> u8 {
        u8::from(self.sign_may_flip)
    }
}

/// Flags for the neurons of one layer. Index 0 is the input layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationLayerState {
    pub layer_index: usize,
    pub relu: bool,
    pub neurons: Vec<NeuronState>,
}

impl PropagationLayerState {
    pub fn s_count(&self) -> usize {
        self.neurons.iter().filter(|n| n.sign_may_flip).count()
    }
}

/// Result of one bound query.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub ball: Ball,
    /// Number of neurons whose sign may flip inside the ball.
    pub c: usize,
    /// S counts per network layer (non-ReLU layers contribute 0).
    pub per_layer_s_counts: Vec<usize>,
    /// Input state followed by one state per layer, when retained.
    pub states: Option<Vec<PropagationLayerState>>,
}

impl BoundReport {
    /// `log2` of the region bound; equal to `C`.
    pub fn log2_bound(&self) -> usize {
        self.c
    }

    /// `2^C`, when it fits in a `u64` with room to spare.
    pub fn region_bound(&self) -> Option<u64> {
        (self.c <= 62).then(|| 1u64 << self.c)
    }

    /// `radius,C,s1|s2|...` without the point id.
    pub fn csv_fields(&self) -> String {
        let counts: Vec<String> = self.per_layer_s_counts.iter().map(usize::to_string).collect();
        format!("{},{},{}", self.ball.radius, self.c, counts.join("|"))
    }
}

/// The input layer is the identity map: every coordinate is exact with a
/// unit row and zero slack, whatever the radius.
pub fn init_state(net: &Network, ball: &Ball) -> Result<PropagationLayerState> {
    if ball.dim() != net.input_dim() {
        return Err(Error::InputShape { expected: net.input_dim(), actual: ball.dim() });
    }
    let n = net.input_dim();
    let neurons = (0..n)
        .map(|i| {
            let mut coeffs = vec![0.0; n];
            coeffs[i] = 1.0;
            NeuronState { exact: Some(AffineRow { coeffs, intercept: 0.0 }), sign_may_flip: false, slack: 0.0 }
        })
        .collect();
    Ok(PropagationLayerState { layer_index: 0, relu: false, neurons })
}

/// Deviation bound for one pre-activation.
#[derive(Debug, Clone, PartialEq)]
pub struct GapBound {
    /// `Σ_{P_i=0} M_ij·L_i`
    pub exact_part: Vec<f64>,
    /// `Σ_{P_i=0} M_ij·c_i` (layer bias not included)
    pub exact_intercept: f64,
    /// `Σ_{P_i=1} |M_ij|·U_i`
    pub uncertain: f64,
    /// `r·‖exact_part‖₂ + uncertain`
    pub total: f64,
}

/// Bound on `|A'_j - A_j|` over the ball for neuron `j` of `layer`, given
/// the state of the layer feeding it.
pub fn gap_bound(layer: &Layer, j: usize, prev: &PropagationLayerState, radius: f64) -> Result<GapBound> {
    if prev.neurons.len() != layer.in_width() || j >= layer.out_width() {
        return Err(Error::InvalidArgument(format!(
            "neuron {j} of a {}x{} layer against a state of width {}",
            layer.out_width(),
            layer.in_width(),
            prev.neurons.len()
        )));
    }
    let dim = prev.neurons.iter().find_map(|n| n.exact.as_ref().map(|r| r.coeffs.len())).unwrap_or(0);
    let mut exact_part = vec![0.0; dim];
    let mut exact_intercept = 0.0;
    let mut uncertain = 0.0;
    for (&m, neuron) in layer.weights().row(j).iter().zip(&prev.neurons) {
        match &neuron.exact {
            Some(row) => {
                if m != 0.0 {
                    for (acc, &l) in exact_part.iter_mut().zip(&row.coeffs) {
                        *acc += m * l;
                    }
                    exact_intercept += m * row.intercept;
                }
            }
            None => uncertain += m.abs() * neuron.slack,
        }
    }
    let norm = exact_part.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(GapBound { total: radius * norm + uncertain, exact_part, exact_intercept, uncertain })
}

/// One induction step: the state of layer `k + 1` (network layer index
/// `k`, 0-based) from the state of layer `k`.
pub fn next_round(
    net: &Network,
    ball: &Ball,
    k: usize,
    prev: &PropagationLayerState,
    center_trace: &ForwardTrace,
) -> Result<PropagationLayerState> {
    let layer = net
        .layers()
        .get(k)
        .ok_or_else(|| Error::InvalidArgument(format!("layer {k} out of range (network has {})", net.layer_count())))?;
    if prev.layer_index != k {
        return Err(Error::InvalidArgument(format!(
            "state is for layer {} but layer {k} was requested",
            prev.layer_index
        )));
    }
    let pre = &center_trace.preactivations[k];
    let r = ball.radius();
    let neurons = (0..layer.out_width())
        .map(|j| {
            let gap = gap_bound(layer, j, prev, r)?;
            let a = pre[j];
            let u = gap.total;
            let exact_row =
                |gap: GapBound| AffineRow { intercept: gap.exact_intercept + layer.bias()[j], coeffs: gap.exact_part };
            let state = if !layer.relu() {
                NeuronState { slack: u, sign_may_flip: false, exact: (gap.uncertain == 0.0).then(|| exact_row(gap)) }
            } else if (a < 0.0 && u + a < 0.0) || (a == 0.0 && u == 0.0) {
                // Certified dead. The second arm is a pre-activation that is
                // identically zero over the ball, which is constant too.
                NeuronState {
                    slack: 0.0,
                    sign_may_flip: false,
                    exact: Some(AffineRow { coeffs: vec![0.0; gap.exact_part.len()], intercept: 0.0 }),
                }
            } else if a < 0.0 {
                NeuronState { slack: u + a, sign_may_flip: true, exact: None }
            } else if u < a {
                NeuronState { slack: u, sign_may_flip: false, exact: (gap.uncertain == 0.0).then(|| exact_row(gap)) }
            } else {
                NeuronState { slack: u, sign_may_flip: true, exact: None }
            };
            Ok(state)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PropagationLayerState { layer_index: k + 1, relu: layer.relu(), neurons })
}

/// Upper bound `2^C` on the open linear regions meeting `ball`.
pub fn local_region_bound(net: &Network, ball: &Ball) -> Result<BoundReport> {
    bound_impl(net, ball, false)
}

/// Same as [`local_region_bound`] but keeps every layer state.
pub fn local_region_bound_with_states(net: &Network, ball: &Ball) -> Result<BoundReport> {
    bound_impl(net, ball, true)
}

fn bound_impl(net: &Network, ball: &Ball, retain: bool) -> Result<BoundReport> {
    let mut state = init_state(net, ball)?;
    let trace = forward(net, ball.center())?;
    let mut per_layer_s_counts = Vec::with_capacity(net.layer_count());
    let mut states = retain.then(|| vec![state.clone()]);
    for k in 0..net.layer_count() {
        state = next_round(net, ball, k, &state, &trace)?;
        per_layer_s_counts.push(if state.relu { state.s_count() } else { 0 });
        if let Some(s) = states.as_mut() {
            s.push(state.clone());
        }
    }
    Ok(BoundReport { ball: ball.clone(), c: per_layer_s_counts.iter().sum(), per_layer_s_counts, states })
}
