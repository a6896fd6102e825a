//! SMPL-form body template: rest vertices, shape blendshapes, joint regressor,
//! skinning weights and kinematic tree.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::linalg::permute;
use crate::numeric::rng::{normal, RngSeed};
use crate::numeric::Tensor;

pub const NUM_JOINTS: usize = 24;
pub const NUM_BETAS: usize = 10;

/// Tolerance on row sums of the regressor and skinning weights.
pub const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct BodyTemplate {
    /// `[N, 3]`, meters.
    pub template_vertices: Tensor,
    /// `[N, 3, 10]`
    pub shape_dirs: Tensor,
    /// `[24, N]`, rows on the simplex.
    pub joint_regressor: Tensor,
    /// `[N, 24]`, rows on the simplex.
    pub skin_weights: Tensor,
    /// `parents[0]` is the root; every other entry is smaller than its index.
    pub parents: Vec<Option<usize>>,
}

fn check_simplex_rows(name: &str, t: &Tensor) -> Result<()> {
    let n = t.shape()[1];
    for (r, row) in t.data().chunks(n).enumerate() {
        if row.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::param(format!("{name} row {r} has a negative or non-finite entry")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::param(format!("{name} row {r} sums to {s}")));
        }
    }
    Ok(())
}

impl BodyTemplate {
    pub fn num_vertices(&self) -> usize {
        self.template_vertices.shape()[0]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.template_vertices.shape().first().copied().unwrap_or(0);
        let expect = |name: &str, t: &Tensor, shape: &[usize]| -> Result<()> {
            if t.shape() != shape {
                return Err(Error::dim(format!("{name}: expected {shape:?}, found {:?}", t.shape())));
            }
            if !t.all_finite() {
                return Err(Error::param(format!("{name}: non-finite entries")));
            }
            Ok(())
        };
        expect("template_vertices", &self.template_vertices, &[n, 3])?;
        expect("shape_dirs", &self.shape_dirs, &[n, 3, NUM_BETAS])?;
        expect("joint_regressor", &self.joint_regressor, &[NUM_JOINTS, n])?;
        expect("skin_weights", &self.skin_weights, &[n, NUM_JOINTS])?;
        check_simplex_rows("joint_regressor", &self.joint_regressor)?;
        check_simplex_rows("skin_weights", &self.skin_weights)?;
        if self.parents.len() != NUM_JOINTS || self.parents[0].is_some() {
            return Err(Error::param("parents must have 24 entries with joint 0 as root"));
        }
        for (j, p) in self.parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < j => {}
                _ => return Err(Error::param(format!("joint {j} has invalid parent {p:?}"))),
            }
        }
        Ok(())
    }

    /// Rest-pose joints `[24, 3]` of the unshaped template.
    pub fn rest_joints(&self) -> Tensor {
        let n = self.num_vertices();
        let mut out = vec![0.0; NUM_JOINTS * 3];
        for j in 0..NUM_JOINTS {
            for v in 0..n {
                let w = self.joint_regressor.data()[j * n + v];
                for a in 0..3 {
                    out[j * 3 + a] += w * self.template_vertices.data()[v * 3 + a];
                }
            }
        }
        Tensor::from_parts(vec![NUM_JOINTS, 3], out)
    }

    /// Arrays laid out for the batched skinning pass.
    pub fn prepared(&self) -> PreparedTemplate {
        let n = self.num_vertices();
        let dirs = self.shape_dirs.reshape(&[n * 3, NUM_BETAS]).expect("validated shape");
        PreparedTemplate {
            vertices: self.template_vertices.clone(),
            shape_dirs_t: permute(&dirs, &[1, 0]).expect("2-d"),
            regressor_t: permute(&self.joint_regressor, &[1, 0]).expect("2-d"),
            skin_weights_t: permute(&self.skin_weights, &[1, 0]).expect("2-d"),
            parents: self.parents.clone(),
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = TemplateFile {
            num_vertices: self.num_vertices(),
            template_vertices: self.template_vertices.data().to_vec(),
            shape_dirs: self.shape_dirs.data().to_vec(),
            joint_regressor: self.joint_regressor.data().to_vec(),
            skin_weights: self.skin_weights.data().to_vec(),
            parents: self.parents.iter().map(|p| p.map_or(-1, |p| p as i64)).collect(),
        };
        std::fs::write(path, serde_json::to_vec(&file)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file: TemplateFile = serde_json::from_slice(&std::fs::read(path)?)?;
        let n = file.num_vertices;
        let parents = file
            .parents
            .iter()
            .map(|&p| if p < 0 { None } else { Some(p as usize) })
            .collect();
        let t = BodyTemplate {
            template_vertices: Tensor::new(&[n, 3], file.template_vertices)?,
            shape_dirs: Tensor::new(&[n, 3, NUM_BETAS], file.shape_dirs)?,
            joint_regressor: Tensor::new(&[NUM_JOINTS, n], file.joint_regressor)?,
            skin_weights: Tensor::new(&[n, NUM_JOINTS], file.skin_weights)?,
            parents,
        };
        t.validate()?;
        Ok(t)
    }
}

/// On-disk JSON layout: flat row-major arrays plus the vertex count.
#[derive(Serialize, Deserialize)]
struct TemplateFile {
    num_vertices: usize,
    template_vertices: Vec<f64>,
    shape_dirs: Vec<f64>,
    joint_regressor: Vec<f64>,
    skin_weights: Vec<f64>,
    /// -1 marks the root.
    parents: Vec<i64>,
}

#[derive(Debug, Clone)]
pub struct PreparedTemplate {
    /// `[N, 3]`
    pub vertices: Tensor,
    /// `[10, N·3]`
    pub shape_dirs_t: Tensor,
    /// `[N, 24]`
    pub regressor_t: Tensor,
    /// `[24, N]`
    pub skin_weights_t: Tensor,
    pub parents: Vec<Option<usize>>,
}

/// Balanced binary kinematic tree: `parents[j] = (j − 1) / 2`.
pub fn balanced_tree() -> Vec<Option<usize>> {
    (0..NUM_JOINTS).map(|j| (j > 0).then(|| (j - 1) / 2)).collect()
}

fn normalized_gaussian_row(dists2: impl Iterator<Item = f64>, sigma: f64) -> Vec<f64> {
    let logits: Vec<f64> = dists2.map(|d| -d / (2.0 * sigma * sigma)).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

const BONE_MIN: f64 = 0.08;
const BONE_MAX: f64 = 0.15;
const VERTEX_SPREAD: f64 = 0.03;
const SKIN_SIGMA: f64 = 0.05;
const REGRESSOR_SIGMA: f64 = 0.03;
const SHAPE_DIR_STD: f64 = 0.01;

/// Deterministic synthetic template with `num_vertices` vertices.
///
/// Joints hang off a balanced tree with random bone directions; vertices
/// scatter around their joints (vertex `v` belongs to joint `v mod 24`); skinning
/// weights and the regressor are Gaussian-kernel rows normalized to sum to 1.
pub fn make_synthetic_template(seed: RngSeed, num_vertices: usize) -> Result<BodyTemplate> {
    if num_vertices < NUM_JOINTS {
        return Err(Error::param(format!(
            "synthetic template needs at least {NUM_JOINTS} vertices, got {num_vertices}"
        )));
    }
    let mut rng = seed.rng();
    let parents = balanced_tree();
    let mut joints = vec![[0.0f64; 3]; NUM_JOINTS];
    joints[0] = [0.0, 0.1, 0.0];
    for j in 1..NUM_JOINTS {
        let p = parents[j].unwrap();
        let mut dir = [0.0; 3];
        loop {
            for d in &mut dir {
                *d = rng.random_range(-1.0..1.0);
            }
            let n2: f64 = dir.iter().map(|d| d * d).sum();
            if n2 > 1e-2 && n2 <= 1.0 {
                let len = rng.random_range(BONE_MIN..BONE_MAX) / n2.sqrt();
                for a in 0..3 {
                    joints[j][a] = joints[p][a] + dir[a] * len;
                }
                break;
            }
        }
    }
    let jitter = normal(&mut rng, &[num_vertices, 3], VERTEX_SPREAD);
    let verts: Vec<f64> = (0..num_vertices)
        .flat_map(|v| {
            let j = joints[v % NUM_JOINTS];
            let jt = &jitter.data()[v * 3..v * 3 + 3];
            [j[0] + jt[0], j[1] + jt[1], j[2] + jt[2]]
        })
        .collect();
    let skin: Vec<f64> = (0..num_vertices)
        .flat_map(|v| normalized_gaussian_row(joints.iter().map(|j| dist2(&verts[v * 3..v * 3 + 3], j)), SKIN_SIGMA))
        .collect();
    let regressor: Vec<f64> = joints
        .iter()
        .flat_map(|j| {
            normalized_gaussian_row((0..num_vertices).map(|v| dist2(&verts[v * 3..v * 3 + 3], j)), REGRESSOR_SIGMA)
        })
        .collect();
    let template = BodyTemplate {
        template_vertices: Tensor::from_parts(vec![num_vertices, 3], verts),
        shape_dirs: normal(&mut rng, &[num_vertices, 3, NUM_BETAS], SHAPE_DIR_STD),
        joint_regressor: Tensor::from_parts(vec![NUM_JOINTS, num_vertices], regressor),
        skin_weights: Tensor::from_parts(vec![num_vertices, NUM_JOINTS], skin),
        parents,
    };
    template.validate()?;
    Ok(template)
}
