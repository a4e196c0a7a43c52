//! Propagating targets backward through decoders, with fixed-point
//! corrections for imperfect inverses.
//!
//! The plain propagation tau_{l-1} = g_l(tau_l) is only as good as the
//! decoders. Two iterations tighten it. The decoder-input correction drives u
//! so that f_l(g_l(u)) lands on the layer target: each step subtracts the
//! residual, and when f o g deviates from the identity by a map of Lipschitz
//! constant alpha < 1 the residual norms contract geometrically at rate
//! alpha. The output-side iteration instead adjusts the proposed input target
//! u directly until g_l(f_l(u)) matches g_l(tau_l); its modulus is the
//! deviation of g o f from the identity. Both iterations report their
//! increment history so the contraction rate can be estimated, and both fail
//! with a divergence error after three consecutive growing increments.

use serde::{Deserialize, Serialize};

use crate::error::{DtpError, Result};
use crate::net::{ForwardTrace, Network, Vector};

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

/// Consecutive growing increments tolerated before declaring divergence.
const DIVERGENCE_STREAK: usize = 3;

/// A single-step growth ratio at or beyond this marks the contraction
/// estimate as infinite.
pub const ALPHA_BLOWUP_RATIO: f64 = 1.5;

fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InversionMethod {
    /// tau_{l-1} = g_l(tau_l), no correction.
    SimpleTp,
    /// Decoder-input fixed-point iteration on the reverse autoencoder.
    InputCorrection {
        #[serde(default = "default_max_iters")]
        max_iters: usize,
        #[serde(default = "default_tol")]
        tol: f64,
    },
    /// One explicit correction term, no iteration.
    OutputStep,
    /// Fixed-point iteration on the regular autoencoder.
    OutputIterative {
        #[serde(default = "default_max_iters")]
        max_iters: usize,
        #[serde(default = "default_tol")]
        tol: f64,
    },
    /// Output iteration initialized from the input-correction result.
    OutputIterativeSeeded {
        #[serde(default = "default_max_iters")]
        max_iters: usize,
        #[serde(default = "default_tol")]
        tol: f64,
    },
}

impl Default for InversionMethod {
    fn default() -> Self {
        InversionMethod::OutputIterative {
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
        }
    }
}

/// Outcome of one layer inversion. `increment_norms` has exactly
/// `iterations_used` entries; `estimated_alpha` is a best-effort geometric
/// mean of successive increment ratios (0 for an immediate exact hit,
/// infinite when any ratio reaches [`ALPHA_BLOWUP_RATIO`]).
#[derive(Debug, Clone, PartialEq)]
pub struct InversionResult {
    pub target: Vector,
    pub iterations_used: usize,
    pub increment_norms: Vec<f64>,
    pub converged: bool,
    pub estimated_alpha: f64,
}

impl InversionResult {
    fn immediate(target: Vector) -> Self {
        InversionResult {
            target,
            iterations_used: 0,
            increment_norms: Vec::new(),
            converged: true,
            estimated_alpha: 0.0,
        }
    }
}

fn alpha_from_increments(increments: &[f64]) -> f64 {
    if increments.last() == Some(&0.0) {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut count = 0usize;
    for pair in increments.windows(2) {
        let (prev, next) = (pair[0], pair[1]);
        if prev == 0.0 {
            if next > 0.0 {
                return f64::INFINITY;
            }
            continue;
        }
        let ratio = next / prev;
        if ratio >= ALPHA_BLOWUP_RATIO {
            return f64::INFINITY;
        }
        if ratio == 0.0 {
            return 0.0;
        }
        log_sum += ratio.ln();
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        (log_sum / count as f64).exp()
    }
}

/// Geometric-mean contraction rate from a recorded iteration. An exact hit
/// (final increment zero) reports 0 regardless of length; otherwise at least
/// 3 increments are required for the ratios to mean anything.
pub fn estimate_contraction_alpha(result: &InversionResult) -> Result<f64> {
    let increments = &result.increment_norms;
    if increments.last() == Some(&0.0) {
        return Ok(0.0);
    }
    if increments.len() < 3 {
        return Err(DtpError::InsufficientIterations {
            got: increments.len(),
        });
    }
    Ok(alpha_from_increments(increments))
}

struct StreakTracker {
    streak: usize,
}

impl StreakTracker {
    fn new() -> Self {
        StreakTracker { streak: 0 }
    }

    /// Records one increment; errors once growth persists for
    /// [`DIVERGENCE_STREAK`] consecutive steps.
    fn record(&mut self, increments: &[f64], layer: Option<usize>) -> Result<()> {
        let n = increments.len();
        if n >= 2 && increments[n - 1] > increments[n - 2] {
            self.streak += 1;
        } else {
            self.streak = 0;
        }
        if self.streak >= DIVERGENCE_STREAK {
            let tail = &increments[n - 1 - DIVERGENCE_STREAK..];
            let estimated_alpha = alpha_from_growth_tail(tail);
            return Err(DtpError::NonContractive {
                layer,
                estimated_alpha,
                iterations: n,
            });
        }
        Ok(())
    }
}

// Geometric mean over the growing tail; every ratio exceeds 1, so the
// reported alpha is >= 1 by construction.
fn alpha_from_growth_tail(tail: &[f64]) -> f64 {
    let mut log_sum = 0.0;
    let mut count = 0usize;
    for pair in tail.windows(2) {
        if pair[0] > 0.0 {
            log_sum += (pair[1] / pair[0]).ln();
            count += 1;
        }
    }
    if count == 0 {
        f64::INFINITY
    } else {
        (log_sum / count as f64).exp().max(1.0)
    }
}

fn ensure_finite(v: &Vector, iterations: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(DtpError::NonFiniteIteration { iterations })
    }
}

/// Decoder-input correction: starting from u = tau_y, repeatedly subtract the
/// reverse-autoencoder residual f(g(u)) - tau_y. Returns g(u) as the target
/// for the layer below.
pub fn invert_input_correction(
    encode: impl Fn(&Vector) -> Vector,
    decode: impl Fn(&Vector) -> Vector,
    tau_y: &Vector,
    max_iters: usize,
    tol: f64,
) -> Result<InversionResult> {
    invert_input_correction_tagged(encode, decode, tau_y, max_iters, tol, None)
}

fn invert_input_correction_tagged(
    encode: impl Fn(&Vector) -> Vector,
    decode: impl Fn(&Vector) -> Vector,
    tau_y: &Vector,
    max_iters: usize,
    tol: f64,
    layer: Option<usize>,
) -> Result<InversionResult> {
    let mut u = tau_y.clone();
    let mut increments = Vec::new();
    let mut tracker = StreakTracker::new();
    let mut converged = false;
    for t in 1..=max_iters {
        let residual = encode(&decode(&u)) - tau_y;
        ensure_finite(&residual, t)?;
        increments.push(residual.norm());
        tracker.record(&increments, layer)?;
        u -= &residual;
        if increments[t - 1] < tol {
            converged = true;
            break;
        }
    }
    let estimated_alpha = alpha_from_increments(&increments);
    Ok(InversionResult {
        target: decode(&u),
        iterations_used: increments.len(),
        increment_norms: increments,
        converged,
        estimated_alpha,
    })
}

/// One-shot correction: g(tau_y) + g(u) - g(f(g(u))). With `u = tau_y` this
/// is the standalone form; passing the final iterate of a prior correction
/// refines that result instead.
pub fn invert_output_step(
    encode: impl Fn(&Vector) -> Vector,
    decode: impl Fn(&Vector) -> Vector,
    tau_y: &Vector,
    u_last: &Vector,
) -> Vector {
    let anchor = decode(tau_y);
    let through = decode(&encode(&decode(u_last)));
    anchor + decode(u_last) - through
}

/// Output-side iteration u <- u + g(tau_y) - g(f(u)), initialized at
/// g(tau_y) unless an explicit start is given. The iterate itself is the
/// target for the layer below.
pub fn invert_output_iterative(
    encode: impl Fn(&Vector) -> Vector,
    decode: impl Fn(&Vector) -> Vector,
    tau_y: &Vector,
    init: Option<&Vector>,
    max_iters: usize,
    tol: f64,
) -> Result<InversionResult> {
    invert_output_iterative_tagged(encode, decode, tau_y, init, max_iters, tol, None)
}

fn invert_output_iterative_tagged(
    encode: impl Fn(&Vector) -> Vector,
    decode: impl Fn(&Vector) -> Vector,
    tau_y: &Vector,
    init: Option<&Vector>,
    max_iters: usize,
    tol: f64,
    layer: Option<usize>,
) -> Result<InversionResult> {
    let anchor = decode(tau_y);
    let mut u = init.cloned().unwrap_or_else(|| anchor.clone());
    let mut increments = Vec::new();
    let mut tracker = StreakTracker::new();
    let mut converged = false;
    for t in 1..=max_iters {
        let step = &anchor - decode(&encode(&u));
        ensure_finite(&step, t)?;
        increments.push(step.norm());
        tracker.record(&increments, layer)?;
        u += &step;
        if increments[t - 1] < tol {
            converged = true;
            break;
        }
    }
    let estimated_alpha = alpha_from_increments(&increments);
    Ok(InversionResult {
        target: u,
        iterations_used: increments.len(),
        increment_norms: increments,
        converged,
        estimated_alpha,
    })
}

/// Output iteration warm-started from the input-correction result.
pub fn invert_output_iterative_seeded(
    encode: impl Fn(&Vector) -> Vector,
    decode: impl Fn(&Vector) -> Vector,
    tau_y: &Vector,
    max_iters: usize,
    tol: f64,
) -> Result<InversionResult> {
    let seed = invert_input_correction(&encode, &decode, tau_y, max_iters, tol)?;
    invert_output_iterative(encode, decode, tau_y, Some(&seed.target), max_iters, tol)
}

/// Plain decoder propagation tau_{l-1} = g_l(tau_l), returning all levels
/// tau_0..tau_L.
pub fn propagate_targets_simple(
    net: &Network,
    trace: &ForwardTrace,
    tau_out: &Vector,
) -> Result<Vec<Vector>> {
    let layers = trace.layer_count();
    let mut targets = vec![tau_out.clone()];
    for l in (1..=layers).rev() {
        let below = net.layer_decode(l, &targets[0])?;
        targets.insert(0, below);
    }
    Ok(targets)
}

/// Targets for every level plus the per-layer iteration records that
/// produced them.
#[derive(Debug, Clone)]
pub struct TargetsOutcome {
    /// tau_0..tau_L.
    pub targets: Vec<Vector>,
    /// Entry i describes the iteration that produced tau_i, for i = 0..L-1.
    pub per_layer: Vec<InversionResult>,
    /// Relaxation sweeps consumed; 0 for the sequential methods.
    pub sweeps_used: usize,
    pub converged: bool,
}

/// Sequential top-down propagation with the chosen per-layer method.
pub fn propagate_targets(
    net: &Network,
    trace: &ForwardTrace,
    tau_out: &Vector,
    method: InversionMethod,
) -> Result<TargetsOutcome> {
    let layers = trace.layer_count();
    let mut targets = vec![tau_out.clone()];
    let mut per_layer = Vec::with_capacity(layers);
    for l in (1..=layers).rev() {
        let encode = net.encoder_map(l)?;
        let decode = net.decoder_map(l)?;
        let tau_l = &targets[0];
        let result = match method {
            InversionMethod::SimpleTp => InversionResult::immediate(decode(tau_l)),
            InversionMethod::OutputStep => {
                InversionResult::immediate(invert_output_step(&encode, &decode, tau_l, tau_l))
            }
            InversionMethod::InputCorrection { max_iters, tol } => {
                invert_input_correction_tagged(&encode, &decode, tau_l, max_iters, tol, Some(l))?
            }
            InversionMethod::OutputIterative { max_iters, tol } => invert_output_iterative_tagged(
                &encode,
                &decode,
                tau_l,
                None,
                max_iters,
                tol,
                Some(l),
            )?,
            InversionMethod::OutputIterativeSeeded { max_iters, tol } => {
                let seed = invert_input_correction_tagged(
                    &encode,
                    &decode,
                    tau_l,
                    max_iters,
                    tol,
                    Some(l),
                )?;
                invert_output_iterative_tagged(
                    &encode,
                    &decode,
                    tau_l,
                    Some(&seed.target),
                    max_iters,
                    tol,
                    Some(l),
                )?
            }
        };
        targets.insert(0, result.target.clone());
        per_layer.push(result);
    }
    per_layer.reverse();
    let converged = per_layer.iter().all(|r| r.converged);
    Ok(TargetsOutcome {
        targets,
        per_layer,
        sweeps_used: 0,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Every layer in a sweep reads the previous sweep's targets, so the
    /// per-layer updates are order-independent and may run concurrently.
    Jacobi,
    /// Layers update top-down within a sweep, each reading fresh values.
    GaussSeidel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxationOptions {
    pub max_sweeps: usize,
    pub stopping_precision: f64,
    pub mode: SweepMode,
}

impl Default for RelaxationOptions {
    fn default() -> Self {
        RelaxationOptions {
            max_sweeps: DEFAULT_MAX_ITERS,
            stopping_precision: DEFAULT_TOL,
            mode: SweepMode::Jacobi,
        }
    }
}

/// Whole-network relaxation: after the plain sequential initialization (or a
/// caller-provided one), every sweep applies
/// tau_{l-1} += g_l(tau_l) - g_l(f_l(tau_{l-1})) to all layers at once,
/// stopping when the deepest refined target moves less than the stopping
/// precision. The output target is pinned throughout.
pub fn parallel_target_relaxation(
    net: &Network,
    trace: &ForwardTrace,
    tau_out: &Vector,
    options: RelaxationOptions,
) -> Result<TargetsOutcome> {
    relax_targets_from(net, trace, tau_out, None, options)
}

/// Relaxation with an explicit initialization of tau_0..tau_L (the last entry
/// must equal the output target).
pub fn relax_targets_from(
    net: &Network,
    trace: &ForwardTrace,
    tau_out: &Vector,
    initial: Option<Vec<Vector>>,
    options: RelaxationOptions,
) -> Result<TargetsOutcome> {
    let layers = trace.layer_count();
    let mut targets = match initial {
        Some(init) => {
            if init.len() != layers + 1 {
                return Err(DtpError::DimensionMismatch {
                    context: "initial target count",
                    expected: layers + 1,
                    got: init.len(),
                });
            }
            init
        }
        None => propagate_targets_simple(net, trace, tau_out)?,
    };
    // The stop rule watches the level-1 increment: tau_1 is the deepest
    // target consumed by weight updates. The input-level target below it is
    // still refined every sweep but trails the pipeline by one sweep and is
    // not covered by the stopping guarantee. For a single-layer net tau_1 is
    // the pinned output, so the watch falls to the input level.
    let watch = if layers >= 2 { 1 } else { 0 };
    let mut increments: Vec<Vec<f64>> = vec![Vec::new(); layers];
    let mut trackers: Vec<StreakTracker> = (0..layers).map(|_| StreakTracker::new()).collect();
    let mut sweeps_used = 0;
    let mut converged = false;
    for sweep in 1..=options.max_sweeps {
        sweeps_used = sweep;
        let snapshot = match options.mode {
            SweepMode::Jacobi => Some(targets.clone()),
            SweepMode::GaussSeidel => None,
        };
        for l in (1..=layers).rev() {
            let read: &Vec<Vector> = snapshot.as_ref().unwrap_or(&targets);
            let encode = net.encoder_map(l)?;
            let decode = net.decoder_map(l)?;
            let step = decode(&read[l]) - decode(&encode(&read[l - 1]));
            ensure_finite(&step, sweep)?;
            increments[l - 1].push(step.norm());
            trackers[l - 1].record(&increments[l - 1], Some(l))?;
            targets[l - 1] = &read[l - 1] + step;
        }
        if increments[watch][sweep - 1] < options.stopping_precision {
            converged = true;
            break;
        }
    }
    let per_layer = (0..layers)
        .map(|i| {
            let last = increments[i].last().copied().unwrap_or(0.0);
            InversionResult {
                target: targets[i].clone(),
                iterations_used: increments[i].len(),
                increment_norms: increments[i].clone(),
                converged: last < options.stopping_precision,
                estimated_alpha: alpha_from_increments(&increments[i]),
            }
        })
        .collect();
    Ok(TargetsOutcome {
        targets,
        per_layer,
        sweeps_used,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{ActivationKind, Matrix};
    use crate::oracle::exact_inverse_decoders;
    use approx::assert_abs_diff_eq;

    fn vec_of(values: &[f64]) -> Vector {
        Vector::from_row_slice(values)
    }

    fn scalar_maps(w: f64, omega: f64) -> (impl Fn(&Vector) -> Vector, impl Fn(&Vector) -> Vector) {
        (move |u: &Vector| w * u, move |v: &Vector| omega * v)
    }

    #[test]
    fn simple_propagation_scalar_chain() {
        let net = Network::new(
            vec![
                Matrix::from_element(1, 1, 2.0),
                Matrix::from_element(1, 1, 3.0),
            ],
            vec![
                Matrix::from_element(1, 1, 0.5),
                Matrix::from_element(1, 1, 1.0 / 3.0),
            ],
            ActivationKind::Identity,
        )
        .unwrap();
        let trace = net.forward(&vec_of(&[1.0])).unwrap();
        let targets = propagate_targets_simple(&net, &trace, &vec_of(&[6.6])).unwrap();
        assert_abs_diff_eq!(targets[2][0], 6.6, epsilon = 1e-15);
        assert_abs_diff_eq!(targets[1][0], 2.2, epsilon = 1e-15);
        assert_abs_diff_eq!(targets[0][0], 1.1, epsilon = 1e-15);
    }

    #[test]
    fn perfect_decoders_leave_activations_fixed() {
        let net = Network::init(
            4,
            3,
            crate::net::InitScheme::default(),
            ActivationKind::Identity,
            13,
        );
        let net = exact_inverse_decoders(&net).unwrap();
        let x = vec_of(&[0.3, -0.9, 1.4, 0.2]);
        let trace = net.forward(&x).unwrap();
        let targets = propagate_targets_simple(&net, &trace, trace.output()).unwrap();
        for (l, tau) in targets.iter().enumerate() {
            assert!((tau - trace.activation(l)).norm() < 1e-10);
        }
    }

    #[test]
    fn input_correction_perfect_inverse_converges_in_one_step() {
        let (f, g) = scalar_maps(2.0, 0.5);
        let tau = vec_of(&[1.2]);
        let result = invert_input_correction(f, g, &tau, 100, 1e-9).unwrap();
        assert!(result.converged);
        assert_eq!(result.iterations_used, 1);
        assert_eq!(result.increment_norms, vec![0.0]);
        assert_eq!(result.estimated_alpha, 0.0);
        assert_abs_diff_eq!(result.target[0], 0.6, epsilon = 1e-15);
    }

    #[test]
    fn input_correction_scalar_contracts_at_exactly_one_fifth() {
        // Tolerance stays above 1e-9: iterating down to ~1e-12 increments
        // puts the later ratios inside the f64 cancellation floor and the
        // geometric-mean estimate drifts by more than 1e-6.
        let (f, g) = scalar_maps(2.0, 0.6);
        let tau = vec_of(&[1.2]);
        let result = invert_input_correction(f, g, &tau, 100, 1e-9).unwrap();
        assert!(result.converged);
        let first = &result.increment_norms[..2];
        assert_abs_diff_eq!(first[1] / first[0], 0.2, epsilon = 1e-12);
        for pair in result.increment_norms.windows(2) {
            assert_abs_diff_eq!(pair[1] / pair[0], 0.2, epsilon = 1e-6);
        }
        assert_abs_diff_eq!(result.estimated_alpha, 0.2, epsilon = 1e-6);
        // Fixed point u = 1, so the produced target is g(1) = 0.6 and the
        // layer maps it back onto tau.
        assert_abs_diff_eq!(result.target[0], 0.6, epsilon = 1e-9);
        assert_abs_diff_eq!(2.0 * result.target[0], 1.2, epsilon = 1e-9);
    }

    #[test]
    fn input_correction_diverges_on_expanding_pair() {
        let (f, g) = scalar_maps(2.0, -1.0);
        let tau = vec_of(&[1.0]);
        let err = invert_input_correction(f, g, &tau, 100, 1e-9).unwrap_err();
        match err {
            DtpError::NonContractive {
                estimated_alpha, ..
            } => assert!(estimated_alpha >= 1.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn alpha_estimate_rules() {
        let synthetic = |increments: Vec<f64>| InversionResult {
            target: vec_of(&[0.0]),
            iterations_used: increments.len(),
            increment_norms: increments,
            converged: true,
            estimated_alpha: 0.0,
        };
        // Ratios 0.1 and 0.4 average (geometrically) to 0.2.
        let r = synthetic(vec![1.0, 0.1, 0.04]);
        assert_abs_diff_eq!(
            estimate_contraction_alpha(&r).unwrap(),
            0.2,
            epsilon = 1e-12
        );
        // A single exact step reports 0 despite the short history.
        let r = synthetic(vec![0.0]);
        assert_eq!(estimate_contraction_alpha(&r).unwrap(), 0.0);
        // Short non-exact histories are refused.
        let r = synthetic(vec![0.5, 0.1]);
        assert!(matches!(
            estimate_contraction_alpha(&r),
            Err(DtpError::InsufficientIterations { got: 2 })
        ));
        // Any ratio at or beyond the blowup threshold pegs the estimate.
        let r = synthetic(vec![1.0, 0.5, 0.9]);
        assert_eq!(estimate_contraction_alpha(&r).unwrap(), f64::INFINITY);
    }

    #[test]
    fn output_step_scalar_value() {
        let (f, g) = scalar_maps(2.0, 0.4);
        let tau = vec_of(&[1.0]);
        let out = invert_output_step(&f, &g, &tau, &tau);
        assert_abs_diff_eq!(out[0], 0.48, epsilon = 1e-15);
    }

    #[test]
    fn output_iterative_scalar_fixed_point() {
        let (f, g) = scalar_maps(2.0, 0.4);
        let tau = vec_of(&[1.0]);
        let result = invert_output_iterative(&f, &g, &tau, None, 200, 1e-12).unwrap();
        assert!(result.converged);
        // Fixed point is the true inverse f^-1(tau) = 0.5 tau.
        assert_abs_diff_eq!(result.target[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(result.estimated_alpha, 0.2, epsilon = 1e-6);
        // At convergence the regular autoencoder matches the pulled target.
        let gap = (g(&f(&result.target)) - g(&tau)).norm();
        assert!(gap < 1e-9);
    }

    #[test]
    fn output_iterative_perfect_autoencoder_fixed_at_first_iterate() {
        let (f, g) = scalar_maps(2.0, 0.5);
        let tau = vec_of(&[3.0]);
        let result = invert_output_iterative(&f, &g, &tau, None, 50, 1e-12).unwrap();
        assert!(result.converged);
        assert_eq!(result.iterations_used, 1);
        assert_eq!(result.increment_norms, vec![0.0]);
        assert_abs_diff_eq!(result.target[0], 1.5, epsilon = 1e-15);
    }

    #[test]
    fn seeded_variant_equals_manual_composition() {
        let (f, g) = scalar_maps(2.0, 0.45);
        let tau = vec_of(&[1.0]);
        let seeded = invert_output_iterative_seeded(&f, &g, &tau, 100, 1e-10).unwrap();
        let ic = invert_input_correction(&f, &g, &tau, 100, 1e-10).unwrap();
        let manual = invert_output_iterative(&f, &g, &tau, Some(&ic.target), 100, 1e-10).unwrap();
        assert_eq!(seeded.target, manual.target);
        assert_eq!(seeded.increment_norms, manual.increment_norms);
    }

    #[test]
    fn relaxation_on_exact_inverses_converges_immediately() {
        let net = Network::init(
            3,
            2,
            crate::net::InitScheme::default(),
            ActivationKind::Identity,
            7,
        );
        let net = exact_inverse_decoders(&net).unwrap();
        let x = vec_of(&[1.0, -0.5, 0.25]);
        let trace = net.forward(&x).unwrap();
        let tau_out = trace.output() * 1.01;
        let outcome =
            parallel_target_relaxation(&net, &trace, &tau_out, RelaxationOptions::default())
                .unwrap();
        assert!(outcome.converged);
        assert_eq!(outcome.sweeps_used, 1);
        // The sequential initialization is already the exact inverse chain.
        let forwarded = net.forward(&outcome.targets[0]).unwrap();
        assert!((forwarded.output() - &tau_out).norm() < 1e-6);
    }

    #[test]
    fn relaxation_modes_agree_on_the_fixed_point() {
        use crate::oracle::perturb_decoders;
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;
        let base = Network::init(
            4,
            3,
            crate::net::InitScheme::default(),
            ActivationKind::Identity,
            91,
        );
        let exact = exact_inverse_decoders(&base).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(92);
        let net = perturb_decoders(&exact, 0.02, &mut rng);
        let x = vec_of(&[0.6, -0.2, 0.8, 0.1]);
        let trace = net.forward(&x).unwrap();
        let tau_out = trace.output() + vec_of(&[0.05, -0.03, 0.02, 0.04]);
        let tight = RelaxationOptions {
            max_sweeps: 500,
            stopping_precision: 1e-12,
            mode: SweepMode::Jacobi,
        };
        let jacobi = parallel_target_relaxation(&net, &trace, &tau_out, tight).unwrap();
        let gs = parallel_target_relaxation(
            &net,
            &trace,
            &tau_out,
            RelaxationOptions {
                mode: SweepMode::GaussSeidel,
                ..tight
            },
        )
        .unwrap();
        assert!(jacobi.converged && gs.converged);
        for (a, b) in jacobi.targets.iter().zip(&gs.targets) {
            assert!((a - b).norm() < 1e-9);
        }
        // Gauss-Seidel propagates fresh values within a sweep and should not
        // need more sweeps than Jacobi here.
        assert!(gs.sweeps_used <= jacobi.sweeps_used);
    }

    #[test]
    fn relaxation_reports_divergence_with_layer() {
        let net = Network::new(
            vec![
                Matrix::from_element(1, 1, 2.0),
                Matrix::from_element(1, 1, 2.0),
            ],
            vec![
                Matrix::from_element(1, 1, 0.5),
                Matrix::from_element(1, 1, -2.0),
            ],
            ActivationKind::Identity,
        )
        .unwrap();
        let trace = net.forward(&vec_of(&[1.0])).unwrap();
        let err =
            parallel_target_relaxation(&net, &trace, &vec_of(&[5.0]), RelaxationOptions::default())
                .unwrap_err();
        assert!(matches!(
            err,
            DtpError::NonContractive { layer: Some(2), .. }
        ));
    }

    #[test]
    fn sequential_dispatch_covers_every_method() {
        let net = Network::init(
            3,
            2,
            crate::net::InitScheme::default(),
            ActivationKind::Identity,
            17,
        );
        let net = exact_inverse_decoders(&net).unwrap();
        let x = vec_of(&[0.4, 0.9, -0.3]);
        let trace = net.forward(&x).unwrap();
        let tau_out = trace.output() * 1.02;
        let methods = [
            InversionMethod::SimpleTp,
            InversionMethod::OutputStep,
            InversionMethod::InputCorrection {
                max_iters: 100,
                tol: 1e-10,
            },
            InversionMethod::OutputIterative {
                max_iters: 100,
                tol: 1e-10,
            },
            InversionMethod::OutputIterativeSeeded {
                max_iters: 100,
                tol: 1e-10,
            },
        ];
        let reference = propagate_targets(&net, &trace, &tau_out, methods[0]).unwrap();
        for method in &methods[1..] {
            let outcome = propagate_targets(&net, &trace, &tau_out, *method).unwrap();
            assert!(outcome.converged);
            for (a, b) in outcome.targets.iter().zip(&reference.targets) {
                // With exact inverses every method returns the same chain.
                assert!((a - b).norm() < 1e-8, "method {method:?} disagrees");
            }
        }
    }
}
