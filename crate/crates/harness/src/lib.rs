//! Reproducible experiment harness around `dtp_core`: seeded config-driven
//! training with JSON-lines metrics, whole-network save/load as decimal text,
//! a self-check suite of numerical identities, and two study commands that
//! compare measured behaviour against closed-form oracles.

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod netio;
pub mod trainer;
pub mod verify;
