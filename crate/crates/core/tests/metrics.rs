use hmr_core::config::RunConfig;
use hmr_core::eval::{
    all_joints, evaluate, evaluate_predictions, mpjpe, pa_mpjpe, procrustes_align, procrustes_transform, pve,
    EvalReport,
};
use hmr_core::numeric::rng::normal;
use hmr_core::numeric::{RngSeed, Tensor};
use hmr_core::training::{synthetic_task, Model};
use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;

fn points(v: &[f64]) -> Tensor {
    Tensor::new(&[v.len() / 3, 3], v.to_vec()).unwrap()
}

fn transform(p: &Tensor, s: f64, r: &Matrix3<f64>, t: Vector3<f64>) -> Tensor {
    let mut out = p.clone();
    for c in out.data_mut().chunks_mut(3) {
        let y = r * Vector3::new(c[0], c[1], c[2]) * s + t;
        c.copy_from_slice(y.as_slice());
    }
    out
}

fn sq_residual(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum()
}

fn centered(p: &Tensor) -> Vec<Vector3<f64>> {
    let v: Vec<Vector3<f64>> = p.data().chunks(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect();
    let mu = v.iter().sum::<Vector3<f64>>() / v.len() as f64;
    v.iter().map(|x| x - mu).collect()
}

fn rotation_strategy() -> impl Strategy<Value = Matrix3<f64>> {
    (-3.1f64..3.1, -1.5f64..1.5, -3.1f64..3.1).prop_map(|(a, b, c)| Rotation3::from_euler_angles(a, b, c).into_inner())
}

fn cloud(j: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-1.0f64..1.0, j * 3).prop_map(|v| points(&v))
}

fn spread(p: &Tensor) -> f64 {
    centered(p).iter().map(|v| v.norm_squared()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn similarity_is_recovered(pred in cloud(8), r in rotation_strategy(), s in 0.2f64..3.0,
                               t in prop::array::uniform3(-2.0f64..2.0)) {
        prop_assume!(spread(&pred) > 0.1);
        let gt = transform(&pred, s, &r, Vector3::from(t));
        let fit = procrustes_transform(&pred, &gt).unwrap();
        prop_assert!(sq_residual(&fit.apply(&pred), &gt).sqrt() <= 1e-9);
        prop_assert!((fit.scale - s).abs() < 1e-9);
        prop_assert!((fit.rotation - r).abs().max() < 1e-9);
    }

    #[test]
    fn alignment_is_optimal_idempotent_and_proper(pred in cloud(6), gt in cloud(6)) {
        prop_assume!(spread(&pred) > 0.05);
        let fit = procrustes_transform(&pred, &gt).unwrap();
        prop_assert!((fit.rotation.determinant() - 1.0).abs() <= 1e-10);
        let once = procrustes_align(&pred, &gt).unwrap();
        let twice = procrustes_align(&once, &gt).unwrap();
        prop_assert!(once.max_abs_diff(&twice) <= 1e-9);
        prop_assert!(pa_mpjpe(&pred, &gt).unwrap() <= mpjpe(&pred, &gt).unwrap() + 1e-9);
    }

    #[test]
    fn errors_ignore_common_rotation_and_order(pred in cloud(10), gt in cloud(10), r in rotation_strategy(),
                                               perm in Just((0..10).collect::<Vec<usize>>()).prop_shuffle()) {
        let base = mpjpe(&pred, &gt).unwrap();
        let (rp, rg) = (transform(&pred, 1.0, &r, Vector3::zeros()), transform(&gt, 1.0, &r, Vector3::zeros()));
        prop_assert!((mpjpe(&rp, &rg).unwrap() - base).abs() < 1e-9);
        prop_assert!((pve(&rp, &rg).unwrap() - base).abs() < 1e-9);
        let shuffle = |p: &Tensor| Tensor::from_fn(p.shape(), |i| p.data()[perm[i / 3] * 3 + i % 3]);
        prop_assert!((mpjpe(&shuffle(&pred), &shuffle(&gt)).unwrap() - base).abs() < 1e-9);
    }
}

/// Least-squares residual over scale and translation for a fixed rotation.
fn residual_for(r: &Matrix3<f64>, p: &[Vector3<f64>], g: &[Vector3<f64>]) -> f64 {
    let pp: f64 = p.iter().map(|v| v.norm_squared()).sum();
    let gg: f64 = g.iter().map(|v| v.norm_squared()).sum();
    let cross: f64 = p.iter().zip(g).map(|(a, b)| b.dot(&(r * a))).sum();
    gg - cross.max(0.0).powi(2) / pp
}

#[test]
fn grid_search_agrees_on_four_points() {
    let step = 5f64.to_radians();
    let mut grid = Vec::new();
    for a in 0..72 {
        for b in 0..=36 {
            for c in 0..72 {
                let (a, b, c) = (a as f64 * step, b as f64 * step - std::f64::consts::FRAC_PI_2, c as f64 * step);
                grid.push(Rotation3::from_euler_angles(a, b, c).into_inner());
            }
        }
    }
    // Nearest grid point is at most half a step away in each angle.
    let max_angle = 3.0 * step / 2.0;
    let mut rng = RngSeed(41).rng();
    for _ in 0..5 {
        let pred = normal(&mut rng, &[4, 3], 0.5);
        let gt = normal(&mut rng, &[4, 3], 0.5);
        let fit = procrustes_transform(&pred, &gt).unwrap();
        let best = sq_residual(&fit.apply(&pred), &gt);
        let (p, g) = (centered(&pred), centered(&gt));
        let searched = grid.iter().map(|r| residual_for(r, &p, &g)).fold(f64::INFINITY, f64::min);
        assert!(best <= searched + 1e-12, "closed form {best} worse than grid {searched}");
        let lever = fit.scale * max_angle * spread(&pred).sqrt();
        let bound = (best.sqrt() + lever).powi(2);
        assert!(searched <= bound, "grid {searched} beyond resolution bound {bound} (closed form {best})");
    }
}

#[test]
fn root_offset_of_ten_millimeters() {
    let gt = normal(&mut RngSeed(3).rng(), &[24, 3], 0.3);
    let pred = Tensor::from_fn(gt.shape(), |i| gt.data()[i] + if i % 3 == 1 { 0.01 } else { 0.0 });
    assert!((mpjpe(&pred, &gt).unwrap() - 10.0).abs() < 1e-9);
}

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.decoder.num_layers = 1;
    cfg.data.num_samples = 4;
    cfg
}

#[test]
fn oracle_predictions_score_zero() {
    let cfg = small_config();
    let (template, data) = synthetic_task(&cfg, RngSeed(2)).unwrap();
    let preds: Vec<_> = data.iter().map(|s| s.params.clone()).collect();
    let report = evaluate_predictions(&preds, &data, &template, &all_joints()).unwrap();
    assert_eq!(report.mpjpe_mm, 0.0);
    assert_eq!(report.pve_mm, 0.0);
    assert!(report.pa_mpjpe_mm < 1e-9);
}

#[test]
fn model_report_is_consistent() {
    let cfg = small_config();
    let (template, data) = synthetic_task(&cfg, RngSeed(4)).unwrap();
    let model = Model::new(&cfg.decoder, RngSeed(4)).unwrap();
    let report = evaluate(&model, &data, &template, &all_joints()).unwrap();
    assert_eq!(report.per_sample.len(), 4);
    for s in &report.per_sample {
        assert!(s.pa_mpjpe_mm <= s.mpjpe_mm);
        assert!(s.mpjpe_mm > 0.0 && s.pve_mm > 0.0);
    }
    assert_eq!(evaluate(&model, &data, &template, &all_joints()).unwrap(), report);

    let parsed: EvalReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert_eq!(parsed, report);
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().next(), Some("sample,mpjpe_mm,pa_mpjpe_mm,pve_mm"));
    assert_eq!(text.lines().count(), 5);

    let subset = evaluate(&model, &data, &template, &[0, 1, 2, 5]).unwrap();
    assert_eq!(subset.joints, [0, 1, 2, 5]);
    assert_eq!(subset.pve_mm, report.pve_mm);
}

#[test]
fn mismatched_context_is_a_config_error() {
    let cfg = small_config();
    let (template, data) = synthetic_task(&cfg, RngSeed(4)).unwrap();
    let mut other = cfg.decoder.clone();
    other.context_width = 6;
    let model = Model::new(&other, RngSeed(4)).unwrap();
    let err = evaluate(&model, &data, &template, &all_joints()).unwrap_err();
    assert!(matches!(err, hmr_core::Error::Config(_)), "{err}");
}
