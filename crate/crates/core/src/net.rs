//! Equal-width feedforward networks with per-layer decoders.
//!
//! A network holds L encoder matrices W_l and L decoder matrices Omega_l, all
//! d x d (d x (d+1) when the bias column is enabled). Layer l computes
//! h_l = W_l sigma(h_{l-1}); the decoder for layer l computes
//! g_l(v) = Omega_l sigma(v) and is trained to approximate the layer inverse.
//! A forward pass caches everything the update rules need: activations,
//! presynaptic vectors sigma(h_{l-1}), their squared norms, and the normalized
//! inputs n_{l-1} used by the delta-rule style updates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DtpError, Result};

pub type Vector = nalgebra::DVector<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;

/// Squared presynaptic norms below this are treated as degenerate: the
/// normalized input is zeroed and the corresponding updates are skipped.
pub const NORM_CLAMP: f64 = 1e-12;

/// Elementwise activation. `Identity` behaves as `LeakyRelu` with slope 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Identity,
    LeakyRelu { slope: f64 },
}

impl ActivationKind {
    /// Leaky rectifier with the given negative-side slope, which must lie in (0, 1].
    pub fn leaky_relu(slope: f64) -> Self {
        assert!(
            slope > 0.0 && slope <= 1.0,
            "leaky relu slope must be in (0, 1], got {slope}"
        );
        ActivationKind::LeakyRelu { slope }
    }

    fn slope(self) -> f64 {
        match self {
            ActivationKind::Identity => 1.0,
            ActivationKind::LeakyRelu { slope } => slope,
        }
    }

    pub fn apply_scalar(self, u: f64) -> f64 {
        if u >= 0.0 {
            u
        } else {
            self.slope() * u
        }
    }

    /// Pointwise derivative; the kink at zero takes the right derivative 1.
    pub fn derivative_scalar(self, u: f64) -> f64 {
        if u >= 0.0 {
            1.0
        } else {
            self.slope()
        }
    }

    pub fn apply(self, v: &Vector) -> Vector {
        v.map(|u| self.apply_scalar(u))
    }

    pub fn derivative(self, v: &Vector) -> Vector {
        v.map(|u| self.derivative_scalar(u))
    }
}

/// Which power of the presynaptic norm divides the normalized input n_{l-1}.
///
/// `Squared` (n = p / ||p||^2) makes the delta-rule update an exact per-sample
/// solve; `Unsquared` (n = p / ||p||) is the variant some derivations write and
/// is kept behind this flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormConvention {
    Squared,
    Unsquared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderInit {
    /// Orthogonal matrices: every singular value is 1.
    Orthogonal,
    /// Independent N(0, 1/d) entries.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderInit {
    /// Omega_l = W_l^T (the exact inverse when W_l is orthogonal and the
    /// activation path stays linear).
    Transpose,
    /// Decoders drawn independently with the encoder scheme.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitScheme {
    pub encoder: EncoderInit,
    pub decoder: DecoderInit,
    /// Append a constant-1 element to every presynaptic vector, widening the
    /// weight matrices to d x (d+1). Off by default; the square-inverse theory
    /// assumes d x d.
    pub bias: bool,
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme {
            encoder: EncoderInit::Orthogonal,
            decoder: DecoderInit::Transpose,
            bias: false,
        }
    }
}

/// Haar-distributed orthogonal d x d matrix (QR of a Gaussian draw with the
/// sign of R's diagonal folded into Q).
pub fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let gauss = Matrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let qr = gauss.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

fn random_gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let std = 1.0 / (rows as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    })
}

fn draw_encoder(d: usize, scheme: InitScheme, rng: &mut ChaCha8Rng) -> Matrix {
    let cols = d + scheme.bias as usize;
    match scheme.encoder {
        EncoderInit::Orthogonal => {
            let q = random_orthogonal(d, rng);
            if scheme.bias {
                let mut w = Matrix::zeros(d, cols);
                w.view_mut((0, 0), (d, d)).copy_from(&q);
                w
            } else {
                q
            }
        }
        EncoderInit::Gaussian => random_gaussian(d, cols, rng),
    }
}

fn transpose_decoder(w: &Matrix) -> Matrix {
    let d = w.nrows();
    let cols = w.ncols();
    let mut omega = Matrix::zeros(d, cols);
    omega
        .view_mut((0, 0), (d, d))
        .copy_from(&w.view((0, 0), (d, d)).transpose());
    omega
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    width: usize,
    bias: bool,
    activation: ActivationKind,
    encoders: Vec<Matrix>,
    decoders: Vec<Matrix>,
}

impl Network {
    /// Builds a network from explicit weights. Widths are inferred: every
    /// matrix must be d x d, or uniformly d x (d+1) for bias-augmented layers.
    pub fn new(
        encoders: Vec<Matrix>,
        decoders: Vec<Matrix>,
        activation: ActivationKind,
    ) -> Result<Self> {
        if encoders.is_empty() {
            return Err(DtpError::Unsupported(
                "a network needs at least one layer".into(),
            ));
        }
        if encoders.len() != decoders.len() {
            return Err(DtpError::DimensionMismatch {
                context: "decoder count",
                expected: encoders.len(),
                got: decoders.len(),
            });
        }
        let width = encoders[0].nrows();
        let cols = encoders[0].ncols();
        let bias = match cols.checked_sub(width) {
            Some(0) => false,
            Some(1) => true,
            _ => {
                return Err(DtpError::DimensionMismatch {
                    context: "weight columns",
                    expected: width,
                    got: cols,
                })
            }
        };
        for (layer, m) in encoders.iter().chain(decoders.iter()).enumerate() {
            if m.nrows() != width || m.ncols() != cols {
                return Err(DtpError::DimensionMismatch {
                    context: "weight shape",
                    expected: width,
                    got: m.nrows(),
                });
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(DtpError::NonFinite {
                    layer: layer % encoders.len() + 1,
                });
            }
        }
        Ok(Network {
            width,
            bias,
            activation,
            encoders,
            decoders,
        })
    }

    /// Seeded initialization of `layers` layers of width `width`.
    /// The same (width, layers, scheme, seed) always yields bitwise-identical
    /// weights.
    pub fn init(
        width: usize,
        layers: usize,
        scheme: InitScheme,
        activation: ActivationKind,
        seed: u64,
    ) -> Network {
        assert!(width > 0 && layers > 0, "network must be non-degenerate");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoders = Vec::with_capacity(layers);
        let mut decoders = Vec::with_capacity(layers);
        for _ in 0..layers {
            let w = draw_encoder(width, scheme, &mut rng);
            let omega = match scheme.decoder {
                DecoderInit::Transpose => transpose_decoder(&w),
                DecoderInit::Random => draw_encoder(width, scheme, &mut rng),
            };
            encoders.push(w);
            decoders.push(omega);
        }
        Network {
            width,
            bias: scheme.bias,
            activation,
            encoders,
            decoders,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn layer_count(&self) -> usize {
        self.encoders.len()
    }

    pub fn activation(&self) -> ActivationKind {
        self.activation
    }

    pub fn has_bias(&self) -> bool {
        self.bias
    }

    fn check_layer(&self, l: usize) -> Result<()> {
        if l == 0 || l > self.layer_count() {
            Err(DtpError::LayerOutOfRange {
                layer: l,
                layer_count: self.layer_count(),
            })
        } else {
            Ok(())
        }
    }

    /// Encoder weights W_l, 1-based.
    pub fn encoder(&self, l: usize) -> &Matrix {
        assert!(l >= 1 && l <= self.layer_count(), "layer {l} out of range");
        &self.encoders[l - 1]
    }

    /// Decoder weights Omega_l, 1-based.
    pub fn decoder(&self, l: usize) -> &Matrix {
        assert!(l >= 1 && l <= self.layer_count(), "layer {l} out of range");
        &self.decoders[l - 1]
    }

    pub fn encoder_mut(&mut self, l: usize) -> &mut Matrix {
        assert!(l >= 1 && l <= self.layer_count(), "layer {l} out of range");
        &mut self.encoders[l - 1]
    }

    pub fn decoder_mut(&mut self, l: usize) -> &mut Matrix {
        assert!(l >= 1 && l <= self.layer_count(), "layer {l} out of range");
        &mut self.decoders[l - 1]
    }

    /// Presynaptic vector: sigma(u), with the constant-1 element appended when
    /// the bias column is enabled.
    pub fn presyn(&self, u: &Vector) -> Vector {
        let s = self.activation.apply(u);
        if self.bias {
            let mut p = Vector::zeros(self.width + 1);
            p.rows_mut(0, self.width).copy_from(&s);
            p[self.width] = 1.0;
            p
        } else {
            s
        }
    }

    /// f_l(u) = W_l sigma(u).
    pub fn layer_encode(&self, l: usize, u: &Vector) -> Result<Vector> {
        self.check_layer(l)?;
        self.check_width(u)?;
        Ok(&self.encoders[l - 1] * self.presyn(u))
    }

    /// g_l(v) = Omega_l sigma(v).
    pub fn layer_decode(&self, l: usize, v: &Vector) -> Result<Vector> {
        self.check_layer(l)?;
        self.check_width(v)?;
        Ok(&self.decoders[l - 1] * self.presyn(v))
    }

    /// Infallible closure form of `layer_encode` with the index checked once.
    pub fn encoder_map(&self, l: usize) -> Result<impl Fn(&Vector) -> Vector + '_> {
        self.check_layer(l)?;
        let w = &self.encoders[l - 1];
        Ok(move |u: &Vector| w * self.presyn(u))
    }

    pub fn decoder_map(&self, l: usize) -> Result<impl Fn(&Vector) -> Vector + '_> {
        self.check_layer(l)?;
        let omega = &self.decoders[l - 1];
        Ok(move |v: &Vector| omega * self.presyn(v))
    }

    fn check_width(&self, v: &Vector) -> Result<()> {
        if v.len() != self.width {
            Err(DtpError::DimensionMismatch {
                context: "vector width",
                expected: self.width,
                got: v.len(),
            })
        } else {
            Ok(())
        }
    }

    /// Full forward pass caching normalized inputs under the squared convention.
    pub fn forward(&self, x: &Vector) -> Result<ForwardTrace> {
        self.forward_with(x, NormConvention::Squared)
    }

    pub fn forward_with(&self, x: &Vector, convention: NormConvention) -> Result<ForwardTrace> {
        self.check_width(x)?;
        let layers = self.layer_count();
        let mut activations = Vec::with_capacity(layers + 1);
        let mut presyn = Vec::with_capacity(layers);
        let mut normalized = Vec::with_capacity(layers);
        let mut norms_sq = Vec::with_capacity(layers);
        activations.push(x.clone());
        for l in 1..=layers {
            let p = self.presyn(&activations[l - 1]);
            let nsq = p.norm_squared();
            let n = if nsq < NORM_CLAMP {
                Vector::zeros(p.len())
            } else {
                match convention {
                    NormConvention::Squared => &p / nsq,
                    NormConvention::Unsquared => &p / nsq.sqrt(),
                }
            };
            let h = &self.encoders[l - 1] * &p;
            if h.iter().any(|v| !v.is_finite()) {
                return Err(DtpError::NonFinite { layer: l });
            }
            presyn.push(p);
            normalized.push(n);
            norms_sq.push(nsq);
            activations.push(h);
        }
        Ok(ForwardTrace {
            activations,
            presyn,
            normalized,
            norms_sq,
            convention,
        })
    }
}

/// Everything a forward pass caches. Layer arguments to the accessors are
/// 1-based: `presyn(l)` is the vector that feeds layer l, i.e. sigma(h_{l-1}).
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    activations: Vec<Vector>,
    presyn: Vec<Vector>,
    normalized: Vec<Vector>,
    norms_sq: Vec<f64>,
    convention: NormConvention,
}

impl ForwardTrace {
    pub fn layer_count(&self) -> usize {
        self.presyn.len()
    }

    pub fn convention(&self) -> NormConvention {
        self.convention
    }

    /// h_l for l in 0..=L.
    pub fn activation(&self, l: usize) -> &Vector {
        &self.activations[l]
    }

    pub fn activations(&self) -> &[Vector] {
        &self.activations
    }

    pub fn output(&self) -> &Vector {
        self.activations.last().expect("trace is never empty")
    }

    /// sigma(h_{l-1}) (bias-augmented when enabled) for l in 1..=L.
    pub fn presyn(&self, l: usize) -> &Vector {
        &self.presyn[l - 1]
    }

    /// n_{l-1}, the normalized input feeding layer l; zero when clamped.
    pub fn normalized_input(&self, l: usize) -> &Vector {
        &self.normalized[l - 1]
    }

    /// ||sigma(h_{l-1})||^2 for l in 1..=L.
    pub fn input_norm_sq(&self, l: usize) -> f64 {
        self.norms_sq[l - 1]
    }

    /// True when the presynaptic norm feeding layer l fell below the clamp.
    pub fn is_clamped(&self, l: usize) -> bool {
        self.norms_sq[l - 1] < NORM_CLAMP
    }
}
