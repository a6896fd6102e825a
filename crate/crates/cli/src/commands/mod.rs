mod ablate;
mod eval;
mod gradcheck;
mod train;
mod visualize;

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use hmr_core::config::RunConfig;
use hmr_core::training::Checkpoint;

pub use ablate::{suite_variants, AblationRow, ABLATION_HEADER};

use crate::{Cli, Command};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => train::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Gradcheck(a) => gradcheck::run(a),
        Command::Ablate(a) => ablate::run(a),
        Command::Visualize(a) => visualize::run(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(hmr_core::Error::from).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(hmr_core::Error::from).with_context(|| format!("writing {}", path.display()))
}
