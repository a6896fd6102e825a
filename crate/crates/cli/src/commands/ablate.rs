use std::fmt::Write as _;

use hmr_core::config::RunConfig;
use hmr_core::decoder::{AttentionKind, PeType, QueryMode};
use hmr_core::eval::{all_joints, evaluate, EvalReport};
use hmr_core::numeric::RngSeed;
use hmr_core::training::{self, synthetic_task, write_loss_csv};
use hmr_core::Error;

use super::{create_dir, load_config, write};
use crate::manifest::RunManifest;
use crate::{AblateArgs, Suite};

pub const ABLATION_HEADER: &str = "variant,attention,query_mode,num_heads,num_groups,offset_range,pe_type,\
status,initial_loss,final_loss,mpjpe_mm,pa_mpjpe_mm,pve_mm";

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Table2 => "table2",
            Suite::Table3 => "table3",
            Suite::Table4 => "table4",
        }
    }
}

/// Named configurations of a suite, all derived from `base`.
pub fn suite_variants(suite: Suite, base: &RunConfig) -> Vec<(String, RunConfig)> {
    let with = |f: &dyn Fn(&mut RunConfig)| {
        let mut cfg = base.clone();
        f(&mut cfg);
        cfg
    };
    match suite {
        Suite::Table2 => [
            ("Reg-S", AttentionKind::Regular, QueryMode::Single),
            ("Reg-M", AttentionKind::Regular, QueryMode::Multi),
            ("Def-S", AttentionKind::Deformable, QueryMode::Single),
            ("Def-M", AttentionKind::Deformable, QueryMode::Multi),
        ]
        .into_iter()
        .map(|(name, attention, mode)| {
            (name.to_string(), with(&|c| {
                c.decoder.attention = attention;
                c.decoder.query_mode = mode;
            }))
        })
        .collect(),
        Suite::Table3 => [(16, 1.0), (16, 2.0), (8, 1.0), (8, 2.0)]
            .into_iter()
            .map(|(heads, range)| {
                let name = format!("heads{heads}-groups{}-range{range}", heads / 2);
                (name, with(&|c| {
                    c.decoder.attention = AttentionKind::Deformable;
                    c.decoder.query_mode = QueryMode::Multi;
                    c.decoder.num_heads = heads;
                    c.decoder.num_groups = heads / 2;
                    c.decoder.offset_range = range;
                }))
            })
            .collect(),
        Suite::Table4 => [PeType::None, PeType::Absolute, PeType::Relative]
            .into_iter()
            .map(|pe| {
                (pe.to_string(), with(&|c| {
                    c.decoder.attention = AttentionKind::Deformable;
                    c.decoder.query_mode = QueryMode::Multi;
                    c.decoder.pe_type = pe;
                }))
            })
            .collect(),
    }
}

/// Outcome of one variant; `result` is `None` when training diverged.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub name: String,
    pub config: RunConfig,
    pub result: Option<(f64, f64, EvalReport)>,
}

impl AblationRow {
    pub fn csv_line(&self) -> String {
        let d = &self.config.decoder;
        let mut line = format!(
            "{},{},{},{},{},{},{}",
            self.name, d.attention, d.query_mode, d.num_heads, d.num_groups, d.offset_range, d.pe_type
        );
        match &self.result {
            Some((first, last, r)) => {
                let _ = write!(line, ",ok,{first:e},{last:e},{},{},{}", r.mpjpe_mm, r.pa_mpjpe_mm, r.pve_mm);
            }
            None => line.push_str(",failed,,,,,"),
        }
        line
    }
}

fn run_variant(name: &str, cfg: &RunConfig, seed: u64) -> anyhow::Result<(AblationRow, Option<Vec<u8>>)> {
    let row = |result| AblationRow { name: name.to_string(), config: cfg.clone(), result };
    let outcome = match training::train(cfg, RngSeed(seed)) {
        Ok(o) => o,
        Err(e @ (Error::Divergence { .. } | Error::Numeric(_))) => {
            eprintln!("warning: variant {name} failed: {e}");
            return Ok((row(None), None));
        }
        Err(e) => return Err(e.into()),
    };
    let (template, data) = synthetic_task(cfg, RngSeed(seed))?;
    let report = evaluate(&outcome.checkpoint.model, &data, &template, &all_joints())?;
    let first = outcome.curve[0].loss.total;
    let last = outcome.curve[outcome.curve.len() - 1].loss.total;
    let mut csv = Vec::new();
    write_loss_csv(&mut csv, &outcome.curve)?;
    Ok((row(Some((first, last, report))), Some(csv)))
}

pub fn run(args: &AblateArgs) -> anyhow::Result<()> {
    let mut base = load_config(args.config.as_deref())?;
    if let Some(steps) = args.steps {
        base.train.steps = steps;
    }
    let variants = suite_variants(args.suite, &base);
    for (name, cfg) in &variants {
        cfg.validate().map_err(|e| anyhow::Error::from(e).context(format!("variant {name}")))?;
    }
    create_dir(&args.out)?;

    let mut manifest = RunManifest::new("ablate", Some(&base), args.seed);
    if let Some(p) = &args.config {
        manifest.input("config", p);
    }
    let mut table = format!("{ABLATION_HEADER}\n");
    println!("{ABLATION_HEADER}");
    for (name, cfg) in &variants {
        let (row, curve) = run_variant(name, cfg, args.seed)?;
        if let Some(csv) = curve {
            let file = format!("{name}.loss.csv");
            write(&args.out.join(&file), csv)?;
            manifest.output(file);
        }
        let line = row.csv_line();
        println!("{line}");
        table.push_str(&line);
        table.push('\n');
    }
    let file = format!("{}.csv", args.suite.name());
    write(&args.out.join(&file), table)?;
    manifest.output(file);
    manifest.write(&args.out)
}
