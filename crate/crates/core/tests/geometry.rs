use hmr_core::body::rotation::matrix_to_rot6d;
use hmr_core::body::{
    make_synthetic_template, pose_bodies, project_points, rot6d_to_matrix, PreparedTemplate, SmplParams,
};
use hmr_core::numeric::norm::softmax;
use hmr_core::numeric::rng::normal;
use hmr_core::numeric::sample::bilinear_sample;
use hmr_core::numeric::{RngSeed, Tensor};
use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;

fn det3(m: &[f64]) -> f64 {
    m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) + m[2] * (m[3] * m[7] - m[4] * m[6])
}

fn orthonormality_error(m: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for a in 0..3 {
        for b in 0..3 {
            let dot: f64 = (0..3).map(|r| m[r * 3 + a] * m[r * 3 + b]).sum();
            let target = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((dot - target).abs());
        }
    }
    worst
}

#[test]
fn rotation_suite() {
    let inputs = normal(&mut RngSeed(31).rng(), &[100_000, 6], 1.0);
    let mats = rot6d_to_matrix(&inputs).unwrap();
    assert_eq!(mats.shape(), [100_000, 3, 3]);
    for m in mats.data().chunks(9) {
        assert!(orthonormality_error(m) <= 1e-10);
        assert!((det3(m) - 1.0).abs() <= 1e-10);
    }
    let id = rot6d_to_matrix(&Tensor::new(&[6], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap()).unwrap();
    assert_eq!(id.data(), [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
}

/// Map with value `a + by·row + bx·col` on every node.
fn linear_field(h: usize, w: usize, a: f64, by: f64, bx: f64) -> Tensor {
    Tensor::from_fn(&[1, 1, h, w], |i| a + by * (i / w) as f64 + bx * (i % w) as f64)
}

#[test]
fn linear_field_is_reproduced_between_nodes() {
    let (h, w) = (5, 7);
    let map = linear_field(h, w, 0.3, -1.25, 0.75);
    let mut rng = RngSeed(8).rng();
    let idx = Tensor::from_fn(&[1, 2, 40, 40], |i| {
        let extent = if i < 1600 { h } else { w };
        use rand::Rng;
        rng.random_range(0.0..(extent - 1) as f64)
    });
    let pos = Tensor::from_fn(idx.shape(), |i| {
        let extent = if i < 1600 { h } else { w } as f64;
        idx.data()[i] / extent * 2.0 - 1.0
    });
    let out = bilinear_sample(&map, &pos).unwrap();
    for s in 0..1600 {
        let (iy, ix) = (idx.data()[s], idx.data()[1600 + s]);
        let expected = 0.3 - 1.25 * iy + 0.75 * ix;
        assert!((out.data()[s] - expected).abs() <= 1e-12, "{} vs {expected}", out.data()[s]);
    }
}

#[test]
fn nodes_return_map_values_exactly() {
    let (h, w) = (3, 4);
    let map = normal(&mut RngSeed(2).rng(), &[2, 3, h, w], 1.0);
    let grid = hmr_core::decoder::make_reference_grid(h, w, 2).unwrap();
    assert_eq!(bilinear_sample(&map, &grid).unwrap().data(), map.data());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rotation_is_proper(v in prop::array::uniform6(-10.0f64..10.0)) {
        let a = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let cross = Vector3::new(v[0], v[1], v[2]).cross(&Vector3::new(v[3], v[4], v[5])).norm();
        prop_assume!(a > 1e-3 && cross > 1e-3);
        let m = rot6d_to_matrix(&Tensor::new(&[6], v.to_vec()).unwrap()).unwrap();
        prop_assert!(orthonormality_error(m.data()) <= 1e-10);
        prop_assert!((det3(m.data()) - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn bilinear_stays_within_map_range(
        values in prop::collection::vec(-5.0f64..5.0, 12),
        py in -1.5f64..1.5,
        px in -1.5f64..1.5,
    ) {
        let map = Tensor::new(&[1, 1, 3, 4], values.clone()).unwrap();
        let pos = Tensor::new(&[1, 2, 1, 1], vec![py, px]).unwrap();
        let v = bilinear_sample(&map, &pos).unwrap().item();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
    }

    #[test]
    fn constant_map_gives_constant_samples(c in -3.0f64..3.0, py in -2.0f64..2.0, px in -2.0f64..2.0) {
        let map = Tensor::full(&[1, 2, 4, 3], c);
        let pos = Tensor::new(&[1, 2, 1, 1], vec![py, px]).unwrap();
        for v in bilinear_sample(&map, &pos).unwrap().data() {
            prop_assert!((v - c).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(x in prop::collection::vec(-30.0f64..30.0, 1..12), shift in -50.0f64..50.0) {
        let t = Tensor::new(&[1, x.len()], x.clone()).unwrap();
        let s = softmax(&t, 1).unwrap();
        prop_assert!((s.sum() - 1.0).abs() < 1e-12);
        prop_assert!(s.data().iter().all(|&p| p > 0.0));
        let shifted = Tensor::from_fn(t.shape(), |i| x[i] + shift);
        prop_assert!(softmax(&shifted, 1).unwrap().max_abs_diff(&s) < 1e-12);
    }
}

fn template() -> PreparedTemplate {
    make_synthetic_template(RngSeed(7), 96).unwrap().prepared()
}

fn rotate_about(points: &Tensor, r: &Matrix3<f64>, origin: Vector3<f64>) -> Tensor {
    let mut out = points.clone();
    for c in out.data_mut().chunks_mut(3) {
        let y = r * (Vector3::new(c[0], c[1], c[2]) - origin) + origin;
        c.copy_from_slice(y.as_slice());
    }
    out
}

#[test]
fn rest_pose_gives_the_template() {
    let t = template();
    let body = &pose_bodies(&[SmplParams::rest()], &t).unwrap()[0];
    assert_eq!(body.vertices.data(), t.vertices.data());
}

#[test]
fn root_rotation_moves_the_body_rigidly() {
    let t = template();
    let rest = pose_bodies(&[SmplParams::rest()], &t).unwrap().remove(0);
    let r = Rotation3::from_euler_angles(0.4, -1.1, 2.3).into_inner();
    let mut params = SmplParams::rest();
    let m: [f64; 9] = std::array::from_fn(|i| r[(i / 3, i % 3)]);
    let six = matrix_to_rot6d(&m);
    params.pose.data_mut()[..6].copy_from_slice(&six);
    let posed = pose_bodies(&[params], &t).unwrap().remove(0);
    let root = Vector3::new(rest.joints3d.data()[0], rest.joints3d.data()[1], rest.joints3d.data()[2]);
    assert!(posed.vertices.max_abs_diff(&rotate_about(&rest.vertices, &r, root)) < 1e-12);
    assert!(posed.joints3d.max_abs_diff(&rotate_about(&rest.joints3d, &r, root)) < 1e-12);
}

#[test]
fn shape_coefficients_act_linearly() {
    let t = template();
    let n = t.vertices.shape()[0];
    let base = pose_bodies(&[SmplParams::rest()], &t).unwrap().remove(0);
    for k in [0, 4, 9] {
        let eps = 0.37;
        let mut params = SmplParams::rest();
        params.shape.data_mut()[k] = eps;
        let moved = pose_bodies(&[params], &t).unwrap().remove(0);
        let dirs = &t.shape_dirs_t.data()[k * n * 3..(k + 1) * n * 3];
        for i in 0..n * 3 {
            let delta = moved.vertices.data()[i] - base.vertices.data()[i];
            assert!((delta - eps * dirs[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn weak_perspective_projection() {
    let p = Tensor::new(&[1, 3], vec![0.5, 0.5, 9.0]).unwrap();
    assert_eq!(project_points(&p, [2.0, 1.0, -1.0]).unwrap().data(), [2.0, 0.0]);
    assert_eq!(project_points(&p, [1.0, 0.0, 0.0]).unwrap().data(), [0.5, 0.5]);
    let pts = normal(&mut RngSeed(3).rng(), &[24, 3], 0.5);
    let scaled = pts.map(|v| v * 4.0);
    let a = project_points(&pts, [1.2, 0.1, 0.3]).unwrap();
    let b = project_points(&scaled, [0.3, 0.1, 0.3]).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-12);
}
