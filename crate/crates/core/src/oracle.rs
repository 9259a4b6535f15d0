//! Independent checks for the bound propagation: uniform sampling in a
//! ball, empirical lower bounds on the region count, per-sample condition
//! checks, and exact tracing of the network along a segment.

use std::collections::HashSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bound::{local_region_bound_with_states, Ball, BoundReport};
use crate::error::{Error, Result};
use crate::model::{forward, ActivationPattern, Network};

/// Relative tolerance of the exactness and slack checks.
pub const CHECK_TOLERANCE: f64 = 1e-6;

/// Crossings closer than this (in segment parameter) are merged.
pub const BREAKPOINT_MERGE: f64 = 1e-12;

/// `n` points uniform in `ball`: a normalized Gaussian direction scaled by
/// `radius·u^(1/dim)`.
pub fn sample_in_ball(ball: &Ball, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = ball.dim();
    (0..n)
        .map(|_| {
            if ball.radius() == 0.0 || dim == 0 {
                return ball.center().to_vec();
            }
            let mut dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let mut norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            while norm == 0.0 {
                dir = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            }
            let u: f64 = rng.random();
            let scale = ball.radius() * u.powf(1.0 / dim as f64) / norm;
            ball.center().iter().zip(&dir).map(|(c, d)| c + scale * d).collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// An exact neuron left its affine row.
    P,
    /// A sign-stable neuron changed sign.
    S,
    /// A neuron moved further than its slack.
    U,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationKind::P => "P",
            ViolationKind::S => "S",
            ViolationKind::U => "U",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub sample: usize,
    /// 1-based network layer.
    pub layer: usize,
    pub neuron: usize,
    pub kind: ViolationKind,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoundnessReport {
    pub samples_tested: usize,
    pub violations: Vec<Violation>,
    pub distinct_patterns: usize,
    pub c: usize,
}

impl SoundnessReport {
    pub fn is_sound(&self) -> bool {
        self.violations.is_empty()
    }

    /// Whether the sampled pattern count stays within `2^C`.
    pub fn within_bound(&self) -> bool {
        self.c >= 63 || self.distinct_patterns as u64 <= 1u64 << self.c
    }
}

impl fmt::Display for SoundnessReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "samples {} distinct_patterns {} C {} violations {}",
            self.samples_tested,
            self.distinct_patterns,
            self.c,
            self.violations.len()
        )?;
        for v in &self.violations {
            writeln!(f, "{} {} {} {} {:e}", v.sample, v.layer, v.neuron, v.kind, v.magnitude)?;
        }
        Ok(())
    }
}

/// Samples the ball and checks every certified fact in the propagation
/// states against the true network values.
pub fn check_soundness(net: &Network, ball: &Ball, n: usize, seed: u64) -> Result<SoundnessReport> {
    let report = local_region_bound_with_states(net, ball)?;
    check_against(net, &report, &sample_in_ball(ball, n, seed))
}

/// Checks `points` against the states retained in `report`.
pub fn check_against(net: &Network, report: &BoundReport, points: &[Vec<f64>]) -> Result<SoundnessReport> {
    let states =
        report.states.as_ref().ok_or_else(|| Error::InvalidArgument("bound report carries no layer states".into()))?;
    let center = forward(net, report.ball.center())?;
    let mut violations = Vec::new();
    let mut patterns = HashSet::new();
    for (s, x) in points.iter().enumerate() {
        let trace = forward(net, x)?;
        for (k, state) in states.iter().enumerate().skip(1) {
            let (vals, pres) = (&trace.activations[k - 1], &trace.preactivations[k - 1]);
            let (cvals, cpres) = (&center.activations[k - 1], &center.preactivations[k - 1]);
            for (j, neuron) in state.neurons.iter().enumerate() {
                let mut flag =
                    |kind, magnitude| violations.push(Violation { sample: s, layer: k, neuron: j, kind, magnitude });
                if let Some(row) = &neuron.exact {
                    let dev = (vals[j] - row.eval(x)).abs();
                    if dev > CHECK_TOLERANCE * (1.0 + vals[j].abs()) {
                        flag(ViolationKind::P, dev);
                    }
                }
                if state.relu && !neuron.sign_may_flip {
                    let same = if cpres[j] > 0.0 { pres[j] > 0.0 } else { pres[j] <= 0.0 };
                    if !same {
                        flag(ViolationKind::S, pres[j].abs());
                    }
                }
                let moved = (vals[j] - cvals[j]).abs();
                if moved > neuron.slack + CHECK_TOLERANCE * (1.0 + neuron.slack) {
                    flag(ViolationKind::U, moved - neuron.slack);
                }
            }
        }
        patterns.insert(ActivationPattern::from_trace(net, &trace, 0.0));
    }
    Ok(SoundnessReport { samples_tested: points.len(), violations, distinct_patterns: patterns.len(), c: report.c })
}

/// Distinct activation patterns among `n` uniform samples and the center.
pub fn empirical_region_lower_bound(net: &Network, ball: &Ball, n: usize, seed: u64) -> Result<usize> {
    let mut patterns = HashSet::new();
    patterns.insert(ActivationPattern::from_trace(net, &forward(net, ball.center())?, 0.0));
    for x in sample_in_ball(ball, n, seed) {
        patterns.insert(ActivationPattern::from_trace(net, &forward(net, &x)?, 0.0));
    }
    Ok(patterns.len())
}

/// Exact activation-pattern structure of `t ↦ net(a + t(b − a))` on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentTrace {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Interior breakpoints, strictly increasing in `(0, 1)`.
    pub breakpoints: Vec<f64>,
    /// One pattern per piece; `pieces.len() == breakpoints.len() + 1`.
    pub pieces: Vec<ActivationPattern>,
}

impl SegmentTrace {
    pub fn piece_count(&self) -> usize {
        self.pieces.len()
    }
}

/// Sub-interval of `[0, 1]` on which every neuron is affine in `t`:
/// value = `offset + slope·t`.
struct Piece {
    lo: f64,
    hi: f64,
    offset: Vec<f64>,
    slope: Vec<f64>,
    bits: Vec<bool>,
}

pub fn segment_pieces(net: &Network, a: &[f64], b: &[f64]) -> Result<SegmentTrace> {
    net.check_input(a)?;
    net.check_input(b)?;
    if a == b {
        return Err(Error::DegenerateSegment);
    }
    let mut pieces = vec![Piece {
        lo: 0.0,
        hi: 1.0,
        offset: a.to_vec(),
        slope: a.iter().zip(b).map(|(x, y)| y - x).collect(),
        bits: Vec::new(),
    }];
    for layer in net.layers() {
        let mut next = Vec::with_capacity(pieces.len());
        for piece in pieces {
            let offset = layer.preactivation(&piece.offset);
            let slope = layer.weights().mul_vec(&piece.slope);
            if !layer.relu() {
                next.push(Piece { offset, slope, ..piece });
                continue;
            }
            let mut cuts: Vec<f64> = offset
                .iter()
                .zip(&slope)
                .filter(|(_, &s)| s != 0.0)
                .map(|(&o, &s)| -o / s)
                .filter(|&t| t > piece.lo + BREAKPOINT_MERGE && t < piece.hi - BREAKPOINT_MERGE)
                .collect();
            cuts.sort_by(f64::total_cmp);
            cuts.dedup_by(|later, kept| *later - *kept < BREAKPOINT_MERGE);
            let bounds: Vec<f64> = std::iter::once(piece.lo).chain(cuts).chain(std::iter::once(piece.hi)).collect();
            for w in bounds.windows(2) {
                let mid = 0.5 * (w[0] + w[1]);
                let on: Vec<bool> = offset.iter().zip(&slope).map(|(o, s)| o + s * mid > 0.0).collect();
                let mask =
                    |v: &[f64]| -> Vec<f64> { v.iter().zip(&on).map(|(&x, &o)| if o { x } else { 0.0 }).collect() };
                let mut bits = piece.bits.clone();
                bits.extend(&on);
                next.push(Piece { lo: w[0], hi: w[1], offset: mask(&offset), slope: mask(&slope), bits });
            }
        }
        pieces = next;
    }
    let mut breakpoints = Vec::new();
    let mut patterns: Vec<ActivationPattern> = Vec::new();
    for piece in pieces {
        let pattern = ActivationPattern { bits: piece.bits };
        if patterns.last() != Some(&pattern) {
            if !patterns.is_empty() {
                breakpoints.push(piece.lo);
            }
            patterns.push(pattern);
        }
    }
    Ok(SegmentTrace { a: a.to_vec(), b: b.to_vec(), breakpoints, pieces: patterns })
}
