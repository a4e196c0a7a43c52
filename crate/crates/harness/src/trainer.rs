//! Single-sample training step and the epoch loop around it.
//!
//! Phase order inside a step is load-bearing and matches the parallel
//! target-propagation scheme exactly: forward pass with presynaptic-norm
//! caching, decoder updates from the forward trace, output target
//! initialization, sequential target initialization, relaxation sweeps,
//! feedforward weight updates. Decoders train on (h_{l-1}, h_l) pairs from
//! the forward pass and never see targets; when relaxation diverges, the
//! feedforward update is skipped for the sample while the decoder update
//! stands, because better decoders are what fixes divergence.

use std::time::Instant;

use dtp_core::inversion::{
    propagate_targets, relax_targets_from, InversionMethod, RelaxationOptions, SweepMode,
    TargetsOutcome,
};
use dtp_core::updates::{
    apply_delta, decoder_update, dtp1_weight_update, influence_scale, init_output_target,
    normalize_target_scale, LossKind, StabilityMode, TargetState, WeightDelta,
};
use dtp_core::{DtpError, ForwardTrace, Network, Vector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ScalingRule, TrainConfig};
use crate::dataset::Dataset;
use crate::error::Result;
use crate::metrics::MetricsRecord;

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub record: MetricsRecord,
    /// False when relaxation diverged and the feedforward update was skipped.
    pub applied: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbortInfo {
    pub epoch: usize,
    pub sample: usize,
    pub consecutive: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<MetricsRecord>,
    /// Set when the consecutive-failure budget ran out; the net keeps the
    /// updates applied up to that point.
    pub aborted: Option<AbortInfo>,
    pub divergences: usize,
}

/// Targets per the configured method. The default output-iterative method is
/// the full relaxation scheme (sequential initialization plus Jacobi sweeps
/// under the config's sweep budget); the seeded variant warm-starts the
/// sweeps from converged input corrections; the remaining methods are purely
/// sequential and use no sweeps.
fn compute_targets(
    net: &Network,
    trace: &ForwardTrace,
    tau_out: &Vector,
    config: &TrainConfig,
) -> dtp_core::Result<TargetsOutcome> {
    let relaxation = RelaxationOptions {
        max_sweeps: config.max_sweeps,
        stopping_precision: config.stopping_precision,
        mode: SweepMode::Jacobi,
    };
    match config.inversion {
        InversionMethod::SimpleTp
        | InversionMethod::OutputStep
        | InversionMethod::InputCorrection { .. } => {
            propagate_targets(net, trace, tau_out, config.inversion)
        }
        InversionMethod::OutputIterative { .. } => {
            relax_targets_from(net, trace, tau_out, None, relaxation)
        }
        InversionMethod::OutputIterativeSeeded { max_iters, tol } => {
            let seeded = propagate_targets(
                net,
                trace,
                tau_out,
                InversionMethod::InputCorrection { max_iters, tol },
            )?;
            relax_targets_from(net, trace, tau_out, Some(seeded.targets), relaxation)
        }
    }
}

fn is_relaxation_failure(err: &DtpError) -> bool {
    matches!(
        err,
        DtpError::NonContractive { .. } | DtpError::NonFiniteIteration { .. }
    )
}

fn failure_iterations(err: &DtpError) -> usize {
    match err {
        DtpError::NonContractive { iterations, .. }
        | DtpError::NonFiniteIteration { iterations } => *iterations,
        _ => 0,
    }
}

pub fn train_step(
    net: &mut Network,
    x: &Vector,
    y: &Vector,
    config: &TrainConfig,
) -> Result<StepOutcome> {
    train_step_at(net, x, y, config, 0, 0)
}

fn train_step_at(
    net: &mut Network,
    x: &Vector,
    y: &Vector,
    config: &TrainConfig,
    epoch: usize,
    sample: usize,
) -> Result<StepOutcome> {
    let start = Instant::now();
    let layers = net.layer_count();
    let trace = net.forward_with(x, config.norm_convention)?;
    let loss = LossKind::MeanSquaredError.value(trace.output(), y);

    for l in 1..=layers {
        let delta = decoder_update(net, &trace, l, config.decoder_lr)?;
        apply_delta(net, &delta);
    }

    let tau_out = init_output_target(trace.output(), y, LossKind::MeanSquaredError, config.beta);

    let targets = match compute_targets(net, &trace, &tau_out, config) {
        Ok(outcome) => outcome,
        Err(err) if is_relaxation_failure(&err) => {
            let record = MetricsRecord {
                epoch,
                sample,
                loss,
                layer_gaps: Vec::new(),
                influence: Vec::new(),
                alphas: Vec::new(),
                sweeps: failure_iterations(&err),
                diverged: true,
                wall_time: start.elapsed().as_secs_f64(),
            };
            return Ok(StepOutcome {
                record,
                applied: false,
            });
        }
        Err(err) => return Err(err.into()),
    };

    let mut state = TargetState::new(&trace, targets.targets)?;
    let mut layer_gaps = Vec::with_capacity(layers);
    let mut influence = Vec::with_capacity(layers);
    for l in 1..=layers {
        influence.push(influence_scale(&mut state, l)?);
        layer_gaps.push(state.gap(l).norm());
    }
    let alphas = targets
        .per_layer
        .iter()
        .map(|r| r.estimated_alpha.is_finite().then_some(r.estimated_alpha))
        .collect();
    let sweeps = if targets.sweeps_used > 0 {
        targets.sweeps_used
    } else {
        targets
            .per_layer
            .iter()
            .map(|r| r.iterations_used)
            .max()
            .unwrap_or(0)
    };

    // Uniform stability factors each step into scalar x unit direction; the
    // scalar is reapplied below so the applied delta agrees with Off mode to
    // rounding.
    let work = normalize_target_scale(state, config.stability_mode);
    for l in 1..=layers {
        let base = dtp1_weight_update(&trace, l, &work.targets[l])?;
        let mut scale = match config.scaling {
            ScalingRule::Dtp1 => 1.0,
            ScalingRule::DtpScaled => influence[l - 1],
        };
        if config.stability_mode == StabilityMode::Uniform {
            scale *= work.scale_factors[l];
        }
        let delta = WeightDelta {
            layer: base.layer,
            delta: scale * base.delta,
            rule: base.rule,
            clamped: base.clamped,
        };
        apply_delta(net, &delta);
    }

    let record = MetricsRecord {
        epoch,
        sample,
        loss,
        layer_gaps,
        influence,
        alphas,
        sweeps,
        diverged: false,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok(StepOutcome {
        record,
        applied: true,
    })
}

/// Mean per-sample loss over the dataset with the current weights.
pub fn evaluate_mse(net: &Network, dataset: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in dataset.inputs.iter().zip(&dataset.labels) {
        let trace = net.forward(x)?;
        total += LossKind::MeanSquaredError.value(trace.output(), y);
    }
    Ok(total / dataset.len() as f64)
}

/// Seeded epoch loop: shuffled sample order per epoch, one metrics record per
/// step at the configured granularity, abort after the consecutive-failure
/// budget is reached.
pub fn train(net: &mut Network, dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    // Distinct stream from weight initialization so reusing the seed for both
    // cannot correlate the shuffle with the initial weights.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut records = Vec::new();
    let mut consecutive = 0usize;
    let mut divergences = 0usize;
    let mut step_index = 0usize;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        for &i in &order {
            let outcome = train_step_at(
                net,
                &dataset.inputs[i],
                &dataset.labels[i],
                config,
                epoch,
                i,
            )?;
            if outcome.applied {
                consecutive = 0;
            } else {
                consecutive += 1;
                divergences += 1;
            }
            if step_index.is_multiple_of(config.log_every) {
                records.push(outcome.record);
            }
            step_index += 1;
            if consecutive >= config.max_consecutive_failures {
                return Ok(TrainOutcome {
                    records,
                    aborted: Some(AbortInfo {
                        epoch,
                        sample: i,
                        consecutive,
                    }),
                    divergences,
                });
            }
        }
    }
    Ok(TrainOutcome {
        records,
        aborted: None,
        divergences,
    })
}
