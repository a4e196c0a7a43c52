//! Ground-truth machinery: exact gradients and Jacobians by the chain rule,
//! finite-difference checks, a strict linear solver, exact inverse decoders,
//! and reference constructions used to validate the propagation and update
//! rules. Nothing here is approximate by design; routines fail loudly instead
//! of regularizing.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{DtpError, Result};
use crate::net::{ActivationKind, ForwardTrace, Matrix, Network, Vector};
use crate::updates::LossKind;

/// Central finite-difference step used by the default checks.
pub const FD_STEP: f64 = 1e-5;

/// Relative threshold below which a singular value counts as zero.
const SINGULARITY_RTOL: f64 = 1e-12;

fn singular_value_range(a: &Matrix) -> (f64, f64) {
    let svals = a.clone().svd(false, false).singular_values;
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for s in svals.iter() {
        lo = lo.min(*s);
        hi = hi.max(*s);
    }
    (lo, hi)
}

/// Largest singular value.
pub fn spectral_norm(a: &Matrix) -> f64 {
    singular_value_range(a).1
}

/// Ratio of the largest to the smallest singular value; infinite when the
/// smallest is exactly zero.
pub fn condition_number(a: &Matrix) -> f64 {
    let (lo, hi) = singular_value_range(a);
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Solves A x = b by pivoted elimination, refusing near-singular systems.
pub fn linear_solve(a: &Matrix, b: &Vector) -> Result<Vector> {
    let (lo, hi) = singular_value_range(a);
    if lo <= hi * SINGULARITY_RTOL || hi == 0.0 {
        return Err(DtpError::SingularSystem { smallest: lo });
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or(DtpError::SingularSystem { smallest: lo })
}

/// Exact loss gradients for every activation and weight matrix.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// dL/dh_l for l = 0..=L.
    pub activations: Vec<Vector>,
    /// dL/dW_l for l = 1..=L (index l-1).
    pub weights: Vec<Matrix>,
}

impl Gradients {
    pub fn activation(&self, l: usize) -> &Vector {
        &self.activations[l]
    }

    pub fn weight(&self, l: usize) -> &Matrix {
        &self.weights[l - 1]
    }
}

/// Reverse-mode gradients through the recorded trace.
pub fn backprop_gradients(
    net: &Network,
    trace: &ForwardTrace,
    y: &Vector,
    loss: LossKind,
) -> Result<Gradients> {
    let layers = trace.layer_count();
    let d = net.width();
    if y.len() != d {
        return Err(DtpError::DimensionMismatch {
            context: "label width",
            expected: d,
            got: y.len(),
        });
    }
    let mut activations = vec![Vector::zeros(d); layers + 1];
    let mut weights = Vec::with_capacity(layers);
    activations[layers] = loss.gradient(trace.output(), y);
    for l in (1..=layers).rev() {
        // dL/dW_l = (dL/dh_l) sigma(h_{l-1})^T.
        weights.push(&activations[l] * trace.presyn(l).transpose());
        // dL/dh_{l-1} = sigma'(h_{l-1}) o (W_l[:, :d]^T dL/dh_l).
        let w_core = net.encoder(l).view((0, 0), (d, d));
        let back = w_core.transpose() * &activations[l];
        let sig_prime = net.activation().derivative(trace.activation(l - 1));
        activations[l - 1] = back.component_mul(&sig_prime);
    }
    weights.reverse();
    Ok(Gradients {
        activations,
        weights,
    })
}

/// Jacobians of the network output with respect to every activation.
#[derive(Debug, Clone)]
pub struct JacobianStack {
    /// J_l = dh_L/dh_l for l = 0..=L; J_L is the identity.
    pub jacobians: Vec<Matrix>,
    /// Per-layer factors f'_l(h_{l-1}) = W_l diag(sigma'(h_{l-1})), index l-1.
    pub factors: Vec<Matrix>,
}

impl JacobianStack {
    pub fn jacobian(&self, l: usize) -> &Matrix {
        &self.jacobians[l]
    }

    pub fn factor(&self, l: usize) -> &Matrix {
        &self.factors[l - 1]
    }
}

pub fn layer_jacobians(net: &Network, trace: &ForwardTrace) -> JacobianStack {
    let layers = trace.layer_count();
    let d = net.width();
    let mut factors = Vec::with_capacity(layers);
    for l in 1..=layers {
        let sig_prime = net.activation().derivative(trace.activation(l - 1));
        let w_core = net.encoder(l).view((0, 0), (d, d));
        let mut f = w_core.clone_owned();
        for j in 0..d {
            let scale = sig_prime[j];
            for i in 0..d {
                f[(i, j)] *= scale;
            }
        }
        factors.push(f);
    }
    let mut jacobians = vec![Matrix::identity(d, d); layers + 1];
    for l in (0..layers).rev() {
        jacobians[l] = &jacobians[l + 1] * &factors[l];
    }
    JacobianStack { jacobians, factors }
}

/// Solves (J^T J + damping I) v = -beta grad: the Gauss-Newton step the
/// per-layer targets are compared against.
pub fn gauss_newton_direction(
    jacobian: &Matrix,
    grad: &Vector,
    beta: f64,
    damping: f64,
) -> Result<Vector> {
    let d = jacobian.ncols();
    let mut system = jacobian.transpose() * jacobian;
    for i in 0..d {
        system[(i, i)] += damping;
    }
    linear_solve(&system, &(-beta * grad))
}

/// The output change J J^T gap that an SGD step with matched step size
/// induces, for contrast with the target-propagation direction.
pub fn sgd_output_effect(jacobian: &Matrix, output_gap: &Vector) -> Vector {
    jacobian * (jacobian.transpose() * output_gap)
}

/// Copy of the network with every decoder replaced by the exact inverse
/// W_l^-1. Only meaningful for identity activations and square weights.
pub fn exact_inverse_decoders(net: &Network) -> Result<Network> {
    if net.activation() != ActivationKind::Identity {
        return Err(DtpError::Unsupported(
            "exact inverse decoders require the identity activation".into(),
        ));
    }
    if net.has_bias() {
        return Err(DtpError::Unsupported(
            "exact inverse decoders require square weights (no bias column)".into(),
        ));
    }
    let mut encoders = Vec::with_capacity(net.layer_count());
    let mut decoders = Vec::with_capacity(net.layer_count());
    for l in 1..=net.layer_count() {
        let w = net.encoder(l);
        let condition = condition_number(w);
        // NaN condition numbers (all-zero weights) must also refuse.
        if condition.is_nan() || condition >= 1e8 {
            return Err(DtpError::NearSingularWeight {
                layer: l,
                condition,
            });
        }
        let inv = w
            .clone()
            .try_inverse()
            .ok_or(DtpError::NearSingularWeight {
                layer: l,
                condition,
            })?;
        encoders.push(w.clone());
        decoders.push(inv);
    }
    Network::new(encoders, decoders, ActivationKind::Identity)
}

/// Runs layers l+1..=L starting from activation level l.
pub fn forward_from(net: &Network, l: usize, u: &Vector) -> Result<Vector> {
    if l > net.layer_count() {
        return Err(DtpError::LayerOutOfRange {
            layer: l,
            layer_count: net.layer_count(),
        });
    }
    let mut h = u.clone();
    for k in (l + 1)..=net.layer_count() {
        h = net.layer_encode(k, &h)?;
    }
    Ok(h)
}

/// Central finite difference of the loss with respect to every entry of W_l.
pub fn fd_loss_grad_weights(
    net: &Network,
    x: &Vector,
    y: &Vector,
    loss: LossKind,
    l: usize,
    step: f64,
) -> Result<Matrix> {
    let rows = net.encoder(l).nrows();
    let cols = net.encoder(l).ncols();
    let mut grad = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let mut plus = net.clone();
            plus.encoder_mut(l)[(i, j)] += step;
            let mut minus = net.clone();
            minus.encoder_mut(l)[(i, j)] -= step;
            let lp = loss.value(plus.forward(x)?.output(), y);
            let lm = loss.value(minus.forward(x)?.output(), y);
            grad[(i, j)] = (lp - lm) / (2.0 * step);
        }
    }
    Ok(grad)
}

/// Central finite difference of dh_L/dh_l around the given activation.
pub fn fd_jacobian(net: &Network, l: usize, at: &Vector, step: f64) -> Result<Matrix> {
    let d = at.len();
    let mut jac = Matrix::zeros(net.width(), d);
    for j in 0..d {
        let mut plus = at.clone();
        plus[j] += step;
        let mut minus = at.clone();
        minus[j] -= step;
        let hp = forward_from(net, l, &plus)?;
        let hm = forward_from(net, l, &minus)?;
        let column = (hp - hm) / (2.0 * step);
        jac.set_column(j, &column);
    }
    Ok(jac)
}

/// The dtp update computed the long way: build the full d x (d p) Jacobian of
/// the layer output in its weights, form the Gram system, solve it, and fold
/// the flat step back into matrix shape. Cross-checks the per-neuron shortcut.
pub fn dense_dtp1_update(trace: &ForwardTrace, l: usize, tau_l: &Vector) -> Result<Matrix> {
    if l == 0 || l > trace.layer_count() {
        return Err(DtpError::LayerOutOfRange {
            layer: l,
            layer_count: trace.layer_count(),
        });
    }
    let p = trace.presyn(l);
    let d = trace.activation(l).len();
    let cols = p.len();
    let mut jac = Matrix::zeros(d, d * cols);
    for i in 0..d {
        for j in 0..cols {
            jac[(i, i * cols + j)] = p[j];
        }
    }
    let gram = &jac * jac.transpose();
    let gap = tau_l - trace.activation(l);
    let solved = linear_solve(&gram, &gap)?;
    let theta = jac.transpose() * solved;
    let mut delta = Matrix::zeros(d, cols);
    for i in 0..d {
        for j in 0..cols {
            delta[(i, j)] = theta[i * cols + j];
        }
    }
    Ok(delta)
}

pub fn cosine_similarity(a: &Vector, b: &Vector) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(b) / (na * nb)
    }
}

/// Copy of the network with Gaussian noise of scale `eta` added to every
/// decoder, for building imperfect-inverse instances.
pub fn perturb_decoders(net: &Network, eta: f64, rng: &mut ChaCha8Rng) -> Network {
    let mut encoders = Vec::with_capacity(net.layer_count());
    let mut decoders = Vec::with_capacity(net.layer_count());
    for l in 1..=net.layer_count() {
        encoders.push(net.encoder(l).clone());
        let noise = Matrix::from_fn(net.decoder(l).nrows(), net.decoder(l).ncols(), |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            eta * z
        });
        decoders.push(net.decoder(l) + noise);
    }
    Network::new(encoders, decoders, net.activation()).expect("shapes preserved")
}

/// Lipschitz constant of f_l(g_l(.)) - id for identity-activation layers:
/// the spectral norm of W_l Omega_l - I. This is the contraction modulus of
/// the decoder-input correction iteration.
pub fn reverse_autoencoder_deviation(net: &Network, l: usize) -> Result<f64> {
    deviation(net, l, true)
}

/// Same for g_l(f_l(.)) - id (spectral norm of Omega_l W_l - I), the modulus
/// of the output-side iteration.
pub fn regular_autoencoder_deviation(net: &Network, l: usize) -> Result<f64> {
    deviation(net, l, false)
}

fn deviation(net: &Network, l: usize, encoder_first: bool) -> Result<f64> {
    if net.activation() != ActivationKind::Identity || net.has_bias() {
        return Err(DtpError::Unsupported(
            "autoencoder deviation is linear-only (identity activation, square weights)".into(),
        ));
    }
    if l == 0 || l > net.layer_count() {
        return Err(DtpError::LayerOutOfRange {
            layer: l,
            layer_count: net.layer_count(),
        });
    }
    let product = if encoder_first {
        net.encoder(l) * net.decoder(l)
    } else {
        net.decoder(l) * net.encoder(l)
    };
    let d = product.nrows();
    Ok(spectral_norm(&(product - Matrix::identity(d, d))))
}

/// Smallest distance of any hidden pre-activation from the activation kink;
/// infinite for identity activations. Finite-difference checks are only
/// trustworthy when this clears the step size comfortably.
pub fn kink_margin(net: &Network, trace: &ForwardTrace) -> f64 {
    if net.activation() == ActivationKind::Identity {
        return f64::INFINITY;
    }
    let mut margin = f64::INFINITY;
    for l in 0..trace.layer_count() {
        for v in trace.activation(l).iter() {
            margin = margin.min(v.abs());
        }
    }
    margin
}

pub mod smooth {
    //! Smooth invertible reference chains: layer l computes v = W_l sinh(u),
    //! inverted in closed form by u = asinh(W_l^-1 v). On linear networks the
    //! exact-inverse target gap and the Gauss-Newton direction agree to
    //! rounding at any step size, which leaves nothing to measure; these
    //! chains have genuine curvature, so the first-order remainder between the
    //! two directions is visible and scales with the output step.

    use super::linear_solve;
    use crate::error::Result;
    use crate::net::{random_orthogonal, Matrix, Vector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[derive(Debug, Clone)]
    pub struct SmoothChain {
        weights: Vec<Matrix>,
    }

    impl SmoothChain {
        /// Seeded chain with weights 0.9 x orthogonal, which keeps iterates in
        /// the gentle part of sinh for inputs of modest size.
        pub fn seeded(width: usize, layers: usize, seed: u64) -> Self {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let weights = (0..layers)
                .map(|_| 0.9 * random_orthogonal(width, &mut rng))
                .collect();
            SmoothChain { weights }
        }

        pub fn layer_count(&self) -> usize {
            self.weights.len()
        }

        pub fn width(&self) -> usize {
            self.weights[0].nrows()
        }

        pub fn weight(&self, l: usize) -> &Matrix {
            &self.weights[l - 1]
        }

        /// All activation levels h_0..h_L.
        pub fn forward(&self, x: &Vector) -> Vec<Vector> {
            let mut levels = vec![x.clone()];
            for w in &self.weights {
                let prev = levels.last().expect("non-empty");
                levels.push(w * prev.map(f64::sinh));
            }
            levels
        }

        /// Exact inverse propagation of an output target through every layer.
        pub fn exact_targets(&self, tau_out: &Vector) -> Result<Vec<Vector>> {
            let mut targets = vec![tau_out.clone()];
            for w in self.weights.iter().rev() {
                let pulled = linear_solve(w, &targets[0])?;
                targets.insert(0, pulled.map(f64::asinh));
            }
            Ok(targets)
        }

        /// dh_L/dh_l at the recorded levels.
        pub fn jacobian(&self, levels: &[Vector], l: usize) -> Matrix {
            let d = self.width();
            let mut jac = Matrix::identity(d, d);
            for k in ((l + 1)..=self.layer_count()).rev() {
                let mut factor = self.weights[k - 1].clone();
                let scales = levels[k - 1].map(f64::cosh);
                for j in 0..d {
                    for i in 0..d {
                        factor[(i, j)] *= scales[j];
                    }
                }
                jac *= factor;
            }
            jac
        }
    }
}
