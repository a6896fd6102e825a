use hmr_core::body::make_synthetic_template;
use hmr_core::eval::{all_joints, evaluate};
use hmr_core::numeric::RngSeed;
use hmr_core::training::synthetic_task;

use super::{create_dir, load_checkpoint, load_config, write};
use crate::features::FeatureFile;
use crate::manifest::RunManifest;
use crate::EvalArgs;

pub const REPORT_FILE: &str = "eval.json";
pub const SAMPLES_FILE: &str = "eval.csv";

pub fn run(args: &EvalArgs) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let cfg = match &args.config {
        Some(p) => load_config(Some(p))?,
        None => ckpt.config.clone(),
    };
    let (template, samples) = match &args.features {
        Some(path) => {
            let template = make_synthetic_template(RngSeed(cfg.data.template_seed), cfg.data.num_vertices)?.prepared();
            let samples = FeatureFile::load(path)?.labelled(&template)?;
            (template, samples)
        }
        None => synthetic_task(&cfg, RngSeed(args.seed))?,
    };
    let joints = args.joints.clone().unwrap_or_else(all_joints);
    let report = evaluate(&ckpt.model, &samples, &template, &joints)?;

    create_dir(&args.out)?;
    write(&args.out.join(REPORT_FILE), report.to_json()? + "\n")?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    write(&args.out.join(SAMPLES_FILE), csv)?;

    let mut manifest = RunManifest::new("eval", Some(&cfg), args.seed);
    manifest.input("checkpoint", &args.checkpoint);
    if let Some(p) = &args.config {
        manifest.input("config", p);
    }
    if let Some(p) = &args.features {
        manifest.input("features", p);
    }
    manifest.output(REPORT_FILE);
    manifest.output(SAMPLES_FILE);
    manifest.write(&args.out)?;

    println!(
        "MPJPE {:.3} mm  PA-MPJPE {:.3} mm  PVE {:.3} mm  ({} samples)",
        report.mpjpe_mm,
        report.pa_mpjpe_mm,
        report.pve_mm,
        report.per_sample.len()
    );
    Ok(())
}
