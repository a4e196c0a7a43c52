//! Differential target propagation for equal-width feedforward networks.
//!
//! Instead of backpropagating gradients, each layer receives a target: the
//! output target is a small loss-reducing step, and per-layer decoders pull it
//! back through the network, optionally refined by fixed-point iterations that
//! correct for imperfect inverses. Weight updates are local delta rules that
//! move each layer's activation toward its target.
//!
//! The crate is organized around four pieces:
//!
//! * [`net`]: networks, activations, and cached forward traces;
//! * [`inversion`]: target propagation and the iterative inverse corrections;
//! * [`updates`]: the local weight and decoder update rules;
//! * [`oracle`]: exact gradients, Jacobians, and reference solvers used to
//!   validate everything else.

pub mod error;
pub mod inversion;
pub mod net;
pub mod oracle;
pub mod updates;

pub use error::{DtpError, Result};
pub use net::{
    ActivationKind, DecoderInit, EncoderInit, ForwardTrace, InitScheme, Matrix, Network,
    NormConvention, Vector, NORM_CLAMP,
};
