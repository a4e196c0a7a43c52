//! Local weight and decoder update rules driven by per-layer targets.
//!
//! The feedforward rule is a delta rule on the normalized presynaptic input:
//! with the squared norm convention the single-sample update lands the layer
//! exactly on its target, (W_l + dW_l) sigma(h_{l-1}) = tau_l. The scaled
//! variant multiplies each layer's step by the influence ratio
//! ||tau_L - h_L||^2 / ||tau_l - h_l||^2 so that every layer induces an output
//! change of comparable size. Decoders train on the forward trace only.

use serde::{Deserialize, Serialize};

use crate::error::{DtpError, Result};
use crate::net::{ForwardTrace, Matrix, Network, NormConvention, Vector, NORM_CLAMP};

/// Influence ratios are capped here to keep degenerate layer gaps from
/// producing unbounded steps.
pub const INFLUENCE_CAP: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    MeanSquaredError,
}

impl LossKind {
    /// L(h, y); mean squared error is the halved squared distance.
    pub fn value(self, h: &Vector, y: &Vector) -> f64 {
        match self {
            LossKind::MeanSquaredError => 0.5 * (h - y).norm_squared(),
        }
    }

    /// dL/dh.
    pub fn gradient(self, h: &Vector, y: &Vector) -> Vector {
        match self {
            LossKind::MeanSquaredError => h - y,
        }
    }
}

pub fn mse_loss(h: &Vector, y: &Vector) -> f64 {
    LossKind::MeanSquaredError.value(h, y)
}

/// Output target tau_L = h_L - beta dL/dh_L, a small loss-reducing step.
pub fn init_output_target(h_out: &Vector, y: &Vector, loss: LossKind, beta: f64) -> Vector {
    assert!(
        beta >= 0.0 && beta.is_finite(),
        "beta must be finite and >= 0"
    );
    h_out - beta * loss.gradient(h_out, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateRule {
    Dtp1,
    Dtp1Generic,
    DtpScaled,
    Decoder,
}

/// A single additive weight change. `clamped` marks deltas that were zeroed
/// because the presynaptic norm fell below [`NORM_CLAMP`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDelta {
    pub layer: usize,
    pub delta: Matrix,
    pub rule: UpdateRule,
    pub clamped: bool,
}

/// Adds the delta to the matrix it was computed for (encoder weights for the
/// feedforward rules, decoder weights for `Decoder`).
pub fn apply_delta(net: &mut Network, delta: &WeightDelta) {
    match delta.rule {
        UpdateRule::Decoder => *net.decoder_mut(delta.layer) += &delta.delta,
        _ => *net.encoder_mut(delta.layer) += &delta.delta,
    }
}

/// Targets for every activation plus the gap bookkeeping the scaled rules use.
/// `scale_factors` starts neutral (all 1) and is written by [`influence_scale`]
/// and [`normalize_target_scale`].
#[derive(Debug, Clone, PartialEq)]
pub struct TargetState {
    pub targets: Vec<Vector>,
    pub activations: Vec<Vector>,
    pub output_gap_sq: f64,
    pub layer_gap_sq: Vec<f64>,
    pub scale_factors: Vec<f64>,
}

impl TargetState {
    /// Captures targets tau_0..tau_L against the trace's activations.
    pub fn new(trace: &ForwardTrace, targets: Vec<Vector>) -> Result<Self> {
        let levels = trace.layer_count() + 1;
        if targets.len() != levels {
            return Err(DtpError::DimensionMismatch {
                context: "target count",
                expected: levels,
                got: targets.len(),
            });
        }
        let activations: Vec<Vector> = trace.activations().to_vec();
        for (t, h) in targets.iter().zip(&activations) {
            if t.len() != h.len() {
                return Err(DtpError::DimensionMismatch {
                    context: "target width",
                    expected: h.len(),
                    got: t.len(),
                });
            }
        }
        let layer_gap_sq: Vec<f64> = targets
            .iter()
            .zip(&activations)
            .map(|(t, h)| (t - h).norm_squared())
            .collect();
        let output_gap_sq = *layer_gap_sq.last().expect("at least one level");
        Ok(TargetState {
            targets,
            activations,
            output_gap_sq,
            layer_gap_sq,
            scale_factors: vec![1.0; levels],
        })
    }

    /// tau_l - h_l.
    pub fn gap(&self, l: usize) -> Vector {
        &self.targets[l] - &self.activations[l]
    }

    pub fn levels(&self) -> usize {
        self.targets.len()
    }
}

fn check_update_args(trace: &ForwardTrace, l: usize, tau_l: &Vector) -> Result<()> {
    if l == 0 || l > trace.layer_count() {
        return Err(DtpError::LayerOutOfRange {
            layer: l,
            layer_count: trace.layer_count(),
        });
    }
    if tau_l.len() != trace.activation(l).len() {
        return Err(DtpError::DimensionMismatch {
            context: "target width",
            expected: trace.activation(l).len(),
            got: tau_l.len(),
        });
    }
    Ok(())
}

/// dW_l = (tau_l - h_l) n_{l-1}^T. Under the squared convention this solves
/// the layer exactly: (W_l + dW_l) sigma(h_{l-1}) = tau_l.
pub fn dtp1_weight_update(trace: &ForwardTrace, l: usize, tau_l: &Vector) -> Result<WeightDelta> {
    check_update_args(trace, l, tau_l)?;
    let width = trace.activation(l).len();
    let cols = trace.presyn(l).len();
    if trace.is_clamped(l) {
        return Ok(WeightDelta {
            layer: l,
            delta: Matrix::zeros(width, cols),
            rule: UpdateRule::Dtp1,
            clamped: true,
        });
    }
    let gap = tau_l - trace.activation(l);
    let delta = &gap * trace.normalized_input(l).transpose();
    Ok(WeightDelta {
        layer: l,
        delta,
        rule: UpdateRule::Dtp1,
        clamped: false,
    })
}

/// The generic pseudo-inverse step dtheta = J^T (J J^T)^-1 (tau_l - h_l) for
/// J = dh_l/dW_l, specialized to the row structure of a dense layer: the Gram
/// matrix is diagonal with one 1x1 block per neuron, each equal to the squared
/// presynaptic norm. Must agree with [`dtp1_weight_update`] analytically.
pub fn dtp1_generic_update(trace: &ForwardTrace, l: usize, tau_l: &Vector) -> Result<WeightDelta> {
    check_update_args(trace, l, tau_l)?;
    let p = trace.presyn(l);
    let width = trace.activation(l).len();
    if trace.is_clamped(l) {
        return Ok(WeightDelta {
            layer: l,
            delta: Matrix::zeros(width, p.len()),
            rule: UpdateRule::Dtp1Generic,
            clamped: true,
        });
    }
    let mut delta = Matrix::zeros(width, p.len());
    for i in 0..width {
        // Row i of J is p itself, so the block for neuron i is p . p.
        let block = p.dot(p);
        let gap_i = tau_l[i] - trace.activation(l)[i];
        let coeff = gap_i / block;
        for j in 0..p.len() {
            delta[(i, j)] = coeff * p[j];
        }
    }
    Ok(WeightDelta {
        layer: l,
        delta,
        rule: UpdateRule::Dtp1Generic,
        clamped: false,
    })
}

/// Influence ratio ||tau_L - h_L||^2 / ||tau_l - h_l||^2, capped at
/// [`INFLUENCE_CAP`]; the top layer is its own reference and gets exactly 1.
/// The ratio is stored in `scale_factors[l]`.
pub fn influence_scale(state: &mut TargetState, l: usize) -> Result<f64> {
    if l >= state.levels() {
        return Err(DtpError::LayerOutOfRange {
            layer: l,
            layer_count: state.levels() - 1,
        });
    }
    let factor = if l == state.levels() - 1 {
        1.0
    } else if state.output_gap_sq < NORM_CLAMP {
        // A vanished output gap carries no signal to redistribute; without
        // this branch a rounding-level layer gap under a zero output gap
        // would hit the cap and amplify noise into real weight motion.
        0.0
    } else {
        let gap = state.layer_gap_sq[l];
        if gap < NORM_CLAMP {
            INFLUENCE_CAP
        } else {
            (state.output_gap_sq / gap).min(INFLUENCE_CAP)
        }
    };
    state.scale_factors[l] = factor;
    Ok(factor)
}

/// Influence-weighted delta rule: the DTP1 step scaled by [`influence_scale`].
pub fn dtp_scaled_update(
    trace: &ForwardTrace,
    state: &mut TargetState,
    l: usize,
) -> Result<WeightDelta> {
    let factor = influence_scale(state, l)?;
    let base = dtp1_weight_update(trace, l, &state.targets[l])?;
    Ok(WeightDelta {
        layer: l,
        delta: factor * base.delta,
        rule: UpdateRule::DtpScaled,
        clamped: base.clamped,
    })
}

/// Decoder delta rule on the forward trace: moves g_l(h_l) toward h_{l-1}.
/// The denominator follows the trace's norm convention.
pub fn decoder_update(
    net: &Network,
    trace: &ForwardTrace,
    l: usize,
    beta_dec: f64,
) -> Result<WeightDelta> {
    if l == 0 || l > trace.layer_count() {
        return Err(DtpError::LayerOutOfRange {
            layer: l,
            layer_count: trace.layer_count(),
        });
    }
    let p = net.presyn(trace.activation(l));
    let nsq = p.norm_squared();
    if nsq < NORM_CLAMP {
        return Ok(WeightDelta {
            layer: l,
            delta: Matrix::zeros(net.width(), p.len()),
            rule: UpdateRule::Decoder,
            clamped: true,
        });
    }
    let denom = match trace.convention() {
        NormConvention::Squared => nsq,
        NormConvention::Unsquared => nsq.sqrt(),
    };
    let reconstruction = net.layer_decode(l, trace.activation(l))?;
    let residual = trace.activation(l - 1) - reconstruction;
    let delta = (beta_dec / denom) * residual * p.transpose();
    Ok(WeightDelta {
        layer: l,
        delta,
        rule: UpdateRule::Decoder,
        clamped: false,
    })
}

/// Combines targets proposed for the same activation by k downstream branches,
/// weighting each by the inverse of its squared gap. Branches whose gap is
/// clamped dominate (an exactly satisfied target carries infinite weight); if
/// every gap is clamped the activation is already everyone's target and h_a is
/// returned with uniform weights.
pub fn branch_combine_targets_k(h_a: &Vector, branch_targets: &[Vector]) -> (Vector, Vec<f64>) {
    assert!(!branch_targets.is_empty(), "need at least one branch");
    let gaps: Vec<f64> = branch_targets
        .iter()
        .map(|t| (t - h_a).norm_squared())
        .collect();
    let degenerate: Vec<usize> = (0..gaps.len()).filter(|&i| gaps[i] < NORM_CLAMP).collect();
    let k = branch_targets.len();
    if degenerate.len() == k {
        return (h_a.clone(), vec![1.0 / k as f64; k]);
    }
    let weights: Vec<f64> = if degenerate.is_empty() {
        let total: f64 = gaps.iter().map(|g| 1.0 / g).sum();
        gaps.iter().map(|g| (1.0 / g) / total).collect()
    } else {
        let share = 1.0 / degenerate.len() as f64;
        (0..k)
            .map(|i| if gaps[i] < NORM_CLAMP { share } else { 0.0 })
            .collect()
    };
    let mut combined = Vector::zeros(h_a.len());
    for (w, t) in weights.iter().zip(branch_targets) {
        combined += *w * t;
    }
    (combined, weights)
}

/// Two-branch form returning gamma, the weight on the first branch.
pub fn branch_combine_targets(h_a: &Vector, tau_ba: &Vector, tau_ca: &Vector) -> (Vector, f64) {
    let (combined, weights) = branch_combine_targets_k(h_a, &[tau_ba.clone(), tau_ca.clone()]);
    (combined, weights[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityMode {
    Off,
    Uniform,
}

/// Uniform mode rescales every gap tau_l - h_l to unit norm and stores the
/// removed norm in `scale_factors[l]`, so scalar x direction reproduces the
/// original step. A zero gap stores scalar 0 and leaves the target alone.
/// Off returns the state untouched.
pub fn normalize_target_scale(mut state: TargetState, mode: StabilityMode) -> TargetState {
    match mode {
        StabilityMode::Off => state,
        StabilityMode::Uniform => {
            for l in 0..state.levels() {
                let gap = state.gap(l);
                let norm = gap.norm();
                if norm <= f64::MIN_POSITIVE {
                    state.scale_factors[l] = 0.0;
                    continue;
                }
                state.scale_factors[l] = norm;
                // Componentwise division, not reciprocal multiply: `vec / s`
                // in nalgebra scales by 1/s, which is one rounding worse and
                // breaks exact cases such as (3, 4) / 5.
                state.targets[l] = &state.activations[l] + gap.map(|e| e / norm);
                state.layer_gap_sq[l] = 1.0;
            }
            state.output_gap_sq = *state.layer_gap_sq.last().expect("non-empty");
            state
        }
    }
}
