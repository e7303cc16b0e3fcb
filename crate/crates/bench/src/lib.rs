//! Experiment harness around `bregopt`: config-file driven solver sweeps on
//! matrix-factorization instances, compared against the closed-form
//! matrix-PCA oracle, with CSV traces and a deterministic JSON summary.

pub mod config;
pub mod experiment;
