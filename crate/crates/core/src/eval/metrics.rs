//! Position error metrics in millimeters for inputs in meters, and a
//! closed-form similarity Procrustes aligner.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

const METERS_TO_MM: f64 = 1000.0;

/// Point sets whose spread is below this (in squared meters) cannot be aligned.
pub const DEGENERATE_SPREAD: f64 = 1e-20;

fn check_points(name: &str, pred: &Tensor, gt: &Tensor) -> Result<usize> {
    let (ps, gs) = (pred.shape(), gt.shape());
    if ps.len() != 2 || ps[1] != 3 || ps != gs || ps[0] == 0 {
        return Err(Error::dim(format!("{name}: prediction {ps:?} vs ground truth {gs:?}, expected matching [J,3]")));
    }
    Ok(ps[0])
}

fn mean_distance_mm(pred: &Tensor, gt: &Tensor) -> f64 {
    let n = pred.shape()[0];
    let total: f64 = pred
        .data()
        .chunks(3)
        .zip(gt.data().chunks(3))
        .map(|(p, g)| ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2) + (p[2] - g[2]).powi(2)).sqrt())
        .sum();
    total / n as f64 * METERS_TO_MM
}

/// Mean Euclidean joint distance. Inputs are expected to be root-aligned already.
pub fn mpjpe(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    check_points("mpjpe", pred, gt)?;
    Ok(mean_distance_mm(pred, gt))
}

/// Mean Euclidean vertex distance.
pub fn pve(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    check_points("pve", pred, gt)?;
    Ok(mean_distance_mm(pred, gt))
}

/// Translates `points` so that `origin` sits at zero.
pub fn translate(points: &Tensor, origin: [f64; 3]) -> Tensor {
    Tensor::from_fn(points.shape(), |i| points.data()[i] - origin[i % 3])
}

pub fn point(points: &Tensor, j: usize) -> [f64; 3] {
    let d = &points.data()[j * 3..j * 3 + 3];
    [d[0], d[1], d[2]]
}

/// `scale · rotation · x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, points: &Tensor) -> Tensor {
        let mut out = points.clone();
        for c in out.data_mut().chunks_mut(3) {
            let y = self.rotation * Vector3::new(c[0], c[1], c[2]) * self.scale + self.translation;
            c.copy_from_slice(y.as_slice());
        }
        out
    }
}

fn to_vectors(t: &Tensor) -> Vec<Vector3<f64>> {
    t.data().chunks(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect()
}

/// Least-squares similarity transform taking `pred` onto `gt`, with a proper rotation.
pub fn procrustes_transform(pred: &Tensor, gt: &Tensor) -> Result<Similarity> {
    let j = check_points("procrustes_align", pred, gt)?;
    if j < 3 {
        return Err(Error::dim(format!("procrustes_align needs at least 3 points, got {j}")));
    }
    let (x, y) = (to_vectors(pred), to_vectors(gt));
    let mu_x = x.iter().sum::<Vector3<f64>>() / j as f64;
    let mu_y = y.iter().sum::<Vector3<f64>>() / j as f64;
    let var_x: f64 = x.iter().map(|p| (p - mu_x).norm_squared()).sum();
    if !(var_x > DEGENERATE_SPREAD) {
        return Err(Error::numeric("procrustes_align: predicted points are coincident"));
    }
    let mut cov = Matrix3::zeros();
    for (p, g) in x.iter().zip(&y) {
        cov += (g - mu_y) * (p - mu_x).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = if (u * v_t).determinant() < 0.0 { -1.0 } else { 1.0 };
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = u * fix * v_t;
    let sv = svd.singular_values;
    let scale = (sv[0] + sv[1] + d * sv[2]) / var_x;
    let translation = mu_y - rotation * mu_x * scale;
    Ok(Similarity { scale, rotation, translation })
}

/// `pred` after the optimal similarity alignment onto `gt`.
pub fn procrustes_align(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    Ok(procrustes_transform(pred, gt)?.apply(pred))
}

/// MPJPE after Procrustes alignment.
pub fn pa_mpjpe(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    mpjpe(&procrustes_align(pred, gt)?, gt)
}
