//! File formats, dataset profiles, the ablation harness and the command
//! line for `quasitrack-core`.

pub mod ablate;
pub mod app;
pub mod formats;
pub mod gradcheck;
pub mod profiles;
