use hmr_core::gradsuite::{run_suite, GRADCHECK_TOLERANCE};
use hmr_core::numeric::{GradCheckOptions, RngSeed};

#[test]
fn every_row_passes() {
    let rows = run_suite(RngSeed(5), &GradCheckOptions::default()).unwrap();
    for r in &rows {
        println!("{:<28} {:.3e} ({} entries)", r.name, r.report.max_rel_error, r.report.checked);
    }
    let failed: Vec<_> = rows.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
    assert!(failed.is_empty(), "rows above {GRADCHECK_TOLERANCE}: {failed:?}");
}
