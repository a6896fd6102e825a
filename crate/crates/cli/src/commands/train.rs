use hmr_core::numeric::RngSeed;
use hmr_core::training::{self, write_loss_csv};

use super::{create_dir, load_config, write};
use crate::manifest::RunManifest;
use crate::TrainArgs;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_FILE: &str = "loss.csv";

pub fn run(args: &TrainArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(steps) = args.steps {
        cfg.train.steps = steps;
    }
    cfg.validate()?;
    create_dir(&args.out)?;

    let outcome = training::train(&cfg, RngSeed(args.seed))?;
    write(&args.out.join(CHECKPOINT_FILE), outcome.checkpoint.to_bytes()?)?;
    let mut csv = Vec::new();
    write_loss_csv(&mut csv, &outcome.curve)?;
    write(&args.out.join(LOSS_FILE), csv)?;

    let mut manifest = RunManifest::new("train", Some(&cfg), args.seed);
    if let Some(p) = &args.config {
        manifest.input("config", p);
    }
    manifest.output(CHECKPOINT_FILE);
    manifest.output(LOSS_FILE);
    manifest.write(&args.out)?;

    let first = outcome.curve[0].loss.total;
    let last = outcome.curve[outcome.curve.len() - 1].loss.total;
    println!("steps {}  initial loss {first:.6e}  final loss {last:.6e}  ratio {:.4e}", cfg.train.steps, last / first);
    Ok(())
}
