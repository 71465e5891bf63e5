//! Batch frontend for `rotext-core`: tensor files, run manifests, ICDAR
//! line formats and the subcommands of the `rotext` binary.

pub mod commands;
pub mod error;
pub mod icdar;
pub mod manifest;
pub mod tensor;

pub use commands::{cmd_eval, cmd_gen_targets, cmd_infer, cmd_loss_check, TargetOptions};
pub use error::{CliError, Result};
pub use manifest::{ConfigOverrides, RunManifest};
pub use tensor::Tensor;
