use std::fmt::Write as _;

use hmr_core::gradsuite::{run_suite, GRADCHECK_TOLERANCE};
use hmr_core::numeric::{GradCheckOptions, RngSeed};

use super::{create_dir, write};
use crate::manifest::RunManifest;
use crate::{CheckFailed, GradcheckArgs};

pub const TABLE_FILE: &str = "gradcheck.csv";

pub fn run(args: &GradcheckArgs) -> anyhow::Result<()> {
    let opts = GradCheckOptions { corrupt: args.corrupt, ..GradCheckOptions::default() };
    let rows = run_suite(RngSeed(args.seed), &opts)?;

    let mut csv = String::from("op,max_rel_error,checked,status\n");
    println!("{:<28} {:>12} {:>8}  status", "op", "max rel err", "checked");
    for row in &rows {
        let status = if row.passed() { "pass" } else { "FAIL" };
        println!("{:<28} {:>12.3e} {:>8}  {status}", row.name, row.report.max_rel_error, row.report.checked);
        let _ = writeln!(csv, "{},{:e},{},{status}", row.name, row.report.max_rel_error, row.report.checked);
    }
    if let Some(out) = &args.out {
        create_dir(out)?;
        write(&out.join(TABLE_FILE), &csv)?;
        let mut manifest = RunManifest::new("gradcheck", None, args.seed);
        manifest.output(TABLE_FILE);
        manifest.write(out)?;
    }

    let failed = rows.iter().filter(|r| !r.passed()).count();
    let worst = rows
        .iter()
        .max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error))
        .expect("suite has rows");
    if failed > 0 {
        return Err(CheckFailed(format!(
            "{failed} of {} gradient checks failed; worst {} at {:.3e} (tolerance {GRADCHECK_TOLERANCE:e})",
            rows.len(),
            worst.name,
            worst.report.max_rel_error
        ))
        .into());
    }
    println!("all {} rows pass; worst {} at {:.3e}", rows.len(), worst.name, worst.report.max_rel_error);
    Ok(())
}
