//! Experiment entry points shared by the CLI and the tests. Each command
//! writes a machine-readable JSON-lines file plus a human-readable summary
//! whose bytes depend only on (config, seed). Wall-clock timing goes to
//! stderr, never into the files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dtp_core::inversion::{invert_input_correction, propagate_targets, InversionMethod};
use dtp_core::oracle::smooth::SmoothChain;
use dtp_core::oracle::{
    backprop_gradients, cosine_similarity, exact_inverse_decoders, gauss_newton_direction,
    layer_jacobians, perturb_decoders, reverse_autoencoder_deviation,
};
use dtp_core::updates::{init_output_target, LossKind};
use dtp_core::{ActivationKind, InitScheme, Network, Vector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::config::TrainConfig;
use crate::dataset::make_dataset;
use crate::error::{HarnessError, Result};
use crate::metrics::write_jsonl;
use crate::netio::save_network;
use crate::trainer::{evaluate_mse, train};
use crate::verify::run_suite;

/// What a command produced; `failures` drives the process exit code.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub failures: usize,
    pub summary: String,
}

impl ExperimentReport {
    pub fn ok(&self) -> bool {
        self.failures == 0
    }
}

/// metrics.jsonl -> metrics.summary.txt, next to the metrics file.
pub fn summary_path(out: &Path) -> PathBuf {
    out.with_extension("summary.txt")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn gaussian_vector(d: usize, rng: &mut ChaCha8Rng) -> Vector {
    Vector::from_fn(d, |_, _| StandardNormal.sample(rng))
}

pub fn run_train(
    config: &TrainConfig,
    out: &Path,
    save_net: Option<&Path>,
) -> Result<ExperimentReport> {
    let started = Instant::now();
    let spec = config.require_dataset()?;
    let dataset = make_dataset(spec, config.seed)?;
    let mut net = Network::init(
        dataset.width(),
        config.layers,
        config.init,
        config.activation,
        config.seed,
    );

    let initial_mse = evaluate_mse(&net, &dataset)?;
    let outcome = train(&mut net, &dataset, config)?;
    let final_mse = evaluate_mse(&net, &dataset)?;

    write_jsonl(&outcome.records, out)?;
    if let Some(path) = save_net {
        save_network(&net, path)?;
    }

    let mut summary = String::new();
    let _ = writeln!(summary, "train summary");
    let _ = writeln!(summary, "dataset: {}", serde_json::to_string(spec)?);
    let _ = writeln!(
        summary,
        "network: width {} layers {} activation {}",
        dataset.width(),
        config.layers,
        activation_label(config.activation),
    );
    let _ = writeln!(
        summary,
        "epochs: {} samples: {} records: {}",
        config.epochs,
        dataset.len(),
        outcome.records.len()
    );
    let _ = writeln!(summary, "initial mse: {initial_mse:.12e}");
    let _ = writeln!(summary, "final mse:   {final_mse:.12e}");
    let _ = writeln!(summary, "ratio:       {:.6e}", final_mse / initial_mse);
    let _ = writeln!(summary, "divergences: {}", outcome.divergences);
    match outcome.aborted {
        Some(info) => {
            let _ = writeln!(
                summary,
                "aborted: epoch {} sample {} after {} consecutive failures",
                info.epoch, info.sample, info.consecutive
            );
        }
        None => {
            let _ = writeln!(summary, "aborted: no");
        }
    }
    write_text(&summary_path(out), &summary)?;
    eprintln!(
        "train finished in {:.3}s (metrics: {})",
        started.elapsed().as_secs_f64(),
        out.display()
    );
    let failures = usize::from(outcome.aborted.is_some());
    Ok(ExperimentReport { failures, summary })
}

fn activation_label(activation: ActivationKind) -> String {
    match activation {
        ActivationKind::Identity => "identity".to_string(),
        ActivationKind::LeakyRelu { slope } => format!("leaky_relu({slope})"),
    }
}

pub fn run_verify(seed: u64, out: &Path) -> Result<ExperimentReport> {
    let started = Instant::now();
    let checks = run_suite(seed)?;

    let mut lines = Vec::new();
    for check in &checks {
        lines.push(serde_json::to_string(check)?);
    }
    write_text(out, &(lines.join("\n") + "\n"))?;

    let mut summary = String::new();
    let _ = writeln!(summary, "verify summary (seed {seed})");
    let _ = writeln!(
        summary,
        "{:<38} {:>12} {:>12} {:>7}",
        "identity", "max_error", "tolerance", "status"
    );
    for check in &checks {
        let _ = writeln!(
            summary,
            "{:<38} {:>12.3e} {:>12.1e} {:>7}",
            check.name,
            check.max_error,
            check.tolerance,
            if check.pass { "pass" } else { "FAIL" }
        );
    }
    let failures = checks.iter().filter(|c| !c.pass).count();
    let _ = writeln!(
        summary,
        "result: {}/{} identities hold",
        checks.len() - failures,
        checks.len()
    );
    write_text(&summary_path(out), &summary)?;
    eprintln!(
        "verify finished in {:.3}s ({} checks, {} failures)",
        started.elapsed().as_secs_f64(),
        checks.len(),
        failures
    );
    Ok(ExperimentReport { failures, summary })
}

#[derive(Debug, Clone, Serialize)]
struct AlphaCase {
    case: String,
    alpha_hat: Option<f64>,
    oracle_alpha: f64,
    max_late_ratio: f64,
    iterations: usize,
    within_bound: bool,
}

/// Contraction-rate study: the scalar closed-form layer plus perturbed linear
/// layers at increasing decoder noise, each compared with the spectral-norm
/// oracle. Fails when the scalar case misses 0.2 by more than 1e-6 or any
/// measured late ratio exceeds the oracle bound by more than 0.05.
pub fn run_alpha_study(config: &TrainConfig, out: &Path) -> Result<ExperimentReport> {
    let started = Instant::now();
    let mut cases = Vec::new();

    let f = |u: &Vector| 2.0 * u;
    let g = |v: &Vector| 0.6 * v;
    let tau = Vector::from_element(1, 1.2);
    let scalar = invert_input_correction(f, g, &tau, 100, 1e-9)?;
    cases.push(AlphaCase {
        case: "scalar_closed_form".to_string(),
        alpha_hat: Some(scalar.estimated_alpha),
        oracle_alpha: 0.2,
        max_late_ratio: max_late_ratio(&scalar.increment_norms),
        iterations: scalar.iterations_used,
        within_bound: (scalar.estimated_alpha - 0.2).abs() <= 1e-6,
    });

    let d = 6;
    for (label, eta) in [("mild", 0.01), ("moderate", 0.05), ("strong", 0.1)] {
        for instance in 0..3u64 {
            let seed = config.seed.wrapping_add(instance);
            let base = Network::init(d, 1, InitScheme::default(), ActivationKind::Identity, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa1fa);
            let net = perturb_decoders(&base, eta, &mut rng);
            let oracle = reverse_autoencoder_deviation(&net, 1)?;
            let encode = net.encoder_map(1)?;
            let decode = net.decoder_map(1)?;
            let tau = gaussian_vector(d, &mut rng);
            let result = invert_input_correction(encode, decode, &tau, 200, 1e-10)?;
            let max_ratio = max_late_ratio(&result.increment_norms);
            let alpha_hat = result
                .estimated_alpha
                .is_finite()
                .then_some(result.estimated_alpha);
            cases.push(AlphaCase {
                case: format!("perturbed_{label}_{instance}"),
                alpha_hat,
                oracle_alpha: oracle,
                max_late_ratio: max_ratio,
                iterations: result.iterations_used,
                within_bound: max_ratio <= oracle + 0.05,
            });
        }
    }

    let mut lines = Vec::new();
    for case in &cases {
        lines.push(serde_json::to_string(case)?);
    }
    write_text(out, &(lines.join("\n") + "\n"))?;

    let mut summary = String::new();
    let _ = writeln!(summary, "alpha study (seed {})", config.seed);
    let _ = writeln!(
        summary,
        "{:<26} {:>12} {:>12} {:>14} {:>6} {:>7}",
        "case", "alpha_hat", "oracle", "max_late_ratio", "iters", "status"
    );
    for case in &cases {
        let alpha = match case.alpha_hat {
            Some(a) => format!("{a:.6}"),
            None => "inf".to_string(),
        };
        let _ = writeln!(
            summary,
            "{:<26} {:>12} {:>12.6} {:>14.6} {:>6} {:>7}",
            case.case,
            alpha,
            case.oracle_alpha,
            case.max_late_ratio,
            case.iterations,
            if case.within_bound { "pass" } else { "FAIL" }
        );
    }
    let failures = cases.iter().filter(|c| !c.within_bound).count();
    let _ = writeln!(
        summary,
        "result: {}/{} cases in bound",
        cases.len() - failures,
        cases.len()
    );
    write_text(&summary_path(out), &summary)?;
    eprintln!(
        "alpha-study finished in {:.3}s",
        started.elapsed().as_secs_f64()
    );
    Ok(ExperimentReport { failures, summary })
}

/// Largest ratio of successive increments after the first pair (the regime
/// where the contraction bound applies).
fn max_late_ratio(increments: &[f64]) -> f64 {
    increments
        .windows(2)
        .skip(1)
        .filter(|pair| pair[0] > 1e-11)
        .map(|pair| pair[1] / pair[0])
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
struct GnRow {
    section: &'static str,
    beta: f64,
    layer: usize,
    cosine: f64,
    rel_err: f64,
}

/// Target-gap vs Gauss-Newton comparison across beta. The linear section uses
/// exact inverse decoders, where the two directions agree to rounding at any
/// beta; the smooth section has genuine curvature, so its relative error must
/// shrink as beta does.
pub fn run_gn_compare(config: &TrainConfig, out: &Path) -> Result<ExperimentReport> {
    let started = Instant::now();
    let betas = [1e-2, 1e-3, 1e-4];
    let d = 4;
    let layers = 3;
    let mut rows: Vec<GnRow> = Vec::new();
    let mut failures = 0usize;

    let base = Network::init(
        d,
        layers,
        InitScheme::default(),
        ActivationKind::Identity,
        config.seed,
    );
    let net = exact_inverse_decoders(&base)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6e);
    let x = gaussian_vector(d, &mut rng);
    let y = gaussian_vector(d, &mut rng);
    let trace = net.forward(&x)?;
    let grads = backprop_gradients(&net, &trace, &y, LossKind::MeanSquaredError)?;
    let stack = layer_jacobians(&net, &trace);
    for &beta in &betas {
        let tau_out = init_output_target(trace.output(), &y, LossKind::MeanSquaredError, beta);
        let outcome = propagate_targets(&net, &trace, &tau_out, InversionMethod::SimpleTp)?;
        for l in 0..layers {
            let gap = &outcome.targets[l] - trace.activation(l);
            let gn = gauss_newton_direction(stack.jacobian(l), grads.activation(l), beta, 0.0)?;
            let cosine = cosine_similarity(&gap, &gn);
            let rel_err = (&gap - &gn).norm() / gn.norm();
            if beta <= 1e-3 && cosine < 0.999 {
                failures += 1;
            }
            rows.push(GnRow {
                section: "linear",
                beta,
                layer: l,
                cosine,
                rel_err,
            });
        }
    }

    let chain = SmoothChain::seeded(d, layers, config.seed);
    let x = gaussian_vector(d, &mut rng) * 0.5;
    let levels = chain.forward(&x);
    let output = levels.last().expect("nonempty").clone();
    let y = &output + gaussian_vector(d, &mut rng);
    for &beta in &betas {
        let tau_out = &output - beta * (&output - &y);
        let targets = chain.exact_targets(&tau_out)?;
        for l in 0..layers {
            let jac = chain.jacobian(&levels, l);
            let grad = jac.transpose() * (&output - &y);
            let gn = gauss_newton_direction(&jac, &grad, beta, 0.0)?;
            let gap = &targets[l] - &levels[l];
            rows.push(GnRow {
                section: "smooth",
                beta,
                layer: l,
                cosine: cosine_similarity(&gap, &gn),
                rel_err: (&gap - &gn).norm() / gn.norm(),
            });
        }
    }
    // Per smooth layer, the error column must decrease with beta.
    for l in 0..layers {
        let errs: Vec<f64> = rows
            .iter()
            .filter(|r| r.section == "smooth" && r.layer == l)
            .map(|r| r.rel_err)
            .collect();
        if !(errs[0] > errs[1] && errs[1] > errs[2]) {
            failures += 1;
        }
    }

    let mut lines = Vec::new();
    for row in &rows {
        lines.push(serde_json::to_string(row)?);
    }
    write_text(out, &(lines.join("\n") + "\n"))?;

    let mut summary = String::new();
    let _ = writeln!(summary, "gauss-newton comparison (seed {})", config.seed);
    for section in ["linear", "smooth"] {
        let _ = writeln!(summary, "[{section}]");
        let _ = writeln!(
            summary,
            "{:>8} {:>6} {:>18} {:>14}",
            "beta", "layer", "cosine", "rel_err"
        );
        for row in rows.iter().filter(|r| r.section == section) {
            let _ = writeln!(
                summary,
                "{:>8.0e} {:>6} {:>18.12} {:>14.6e}",
                row.beta, row.layer, row.cosine, row.rel_err
            );
        }
    }
    let _ = writeln!(
        summary,
        "result: {}",
        if failures == 0 {
            "alignment holds and smooth error decreases with beta"
        } else {
            "FAIL"
        }
    );
    write_text(&summary_path(out), &summary)?;
    eprintln!(
        "gn-compare finished in {:.3}s",
        started.elapsed().as_secs_f64()
    );
    Ok(ExperimentReport { failures, summary })
}
