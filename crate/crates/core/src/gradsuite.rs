//! Finite-difference check of every differentiable op, the body model, one
//! full decoder layer and the prediction loss.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::body::{lbs_forward, make_synthetic_template, project_weak_perspective, IDENTITY_6D};
use crate::decoder::{AttentionKind, CrossAttention, DecoderConfig, FeedForward, PeType, SelfAttention};
use crate::error::Result;
use crate::numeric::rng::uniform;
use crate::numeric::{grad_check, Bound, Conv2dSpec, GradCheckOptions, GradCheckReport, ParamStore, RngSeed, Tape, Tensor, Var};
use crate::training::{total_loss, BodyVars, LossWeights, MeanParams, RegressionHeads};

/// Relative error every row must stay below.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckRow {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl GradCheckRow {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < GRADCHECK_TOLERANCE
    }
}

/// Configuration of the decoder-layer row.
pub fn layer_config(pe_type: PeType) -> DecoderConfig {
    DecoderConfig {
        model_dim: 8,
        num_heads: 2,
        num_groups: 1,
        offset_range: 1.0,
        num_layers: 1,
        attention: AttentionKind::Deformable,
        context_channels: 4,
        context_height: 2,
        context_width: 2,
        pe_type,
        ..DecoderConfig::default()
    }
}

/// Scalar `Σ x ⊙ R` for a fixed random `R`, so no gradient entry cancels by symmetry.
fn weigh(tape: &mut Tape, x: Var, salt: u64) -> Result<Var> {
    let mut rng = RngSeed(salt).derive("weigh").rng();
    let r = tape.constant(uniform(&mut rng, tape.shape(x), 1.0));
    let y = tape.mul(x, r)?;
    Ok(tape.sum(y))
}

fn rand(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    uniform(rng, shape, 1.0)
}

/// Normalized positions whose continuous indices stay at least 0.05 away
/// from grid nodes, where bilinear interpolation has kinks.
fn off_node_positions(rng: &mut ChaCha8Rng, shape: &[usize], extent: [usize; 2]) -> Tensor {
    let plane: usize = shape[2..].iter().product();
    Tensor::from_fn(shape, |i| {
        let e = extent[(i / plane) % 2] as f64;
        loop {
            let idx: f64 = rng.random_range(0.0..e - 1.0);
            if (idx - idx.round()).abs() > 0.05 {
                return 2.0 * idx / e - 1.0;
            }
        }
    })
}

fn near_identity_pose(rng: &mut ChaCha8Rng, batch: usize) -> Tensor {
    let noise = uniform(rng, &[batch, 24, 6], 0.2);
    Tensor::from_fn(&[batch, 24, 6], |i| IDENTITY_6D[i % 6] + noise.data()[i])
}

type Closure = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

struct Case {
    name: &'static str,
    f: Closure,
    params: Vec<Tensor>,
}

fn case(name: &'static str, params: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> Case {
    Case { name, f: Box::new(f), params }
}

fn decoder_layer_case(name: &'static str, pe: PeType, rng: &mut ChaCha8Rng) -> Case {
    let cfg = layer_config(pe);
    let mut store = ParamStore::new();
    let sa = SelfAttention::new(&mut store, rng, "sa", &cfg);
    let ca = CrossAttention::new(&mut store, rng, "ca", &cfg);
    let ffn = FeedForward::new(&mut store, rng, "ffn", &cfg);
    let n = store.len();
    let mut params = store.values().to_vec();
    params.push(rand(rng, &[2, cfg.num_queries(), cfg.model_dim]));
    params.push(rand(rng, &cfg.context_shape(2)));
    case(name, params, move |t, v| {
        let p = Bound::from_vars(v[..n].to_vec());
        let y = sa.forward(t, &p, v[n])?;
        let y = ca.forward(t, &p, y, v[n + 1], None)?;
        let y = ffn.forward(t, &p, y)?;
        weigh(t, y, 23)
    })
}

fn cases(seed: RngSeed) -> Result<Vec<Case>> {
    let mut rng = seed.derive("gradsuite").rng();
    let r = &mut rng;
    let template = make_synthetic_template(seed.derive("gradsuite-template"), 30)?.prepared();
    let lbs_template = template.clone();

    let bilinear_map = rand(r, &[2, 3, 4, 5]);
    let bilinear_pos = off_node_positions(r, &[2, 2, 3, 3], [4, 5]);
    let (map_c, pos_c) = (bilinear_map.clone(), bilinear_pos.clone());

    let mut head_store = ParamStore::new();
    let head_cfg = layer_config(PeType::Relative);
    let heads = RegressionHeads::new(&mut head_store, r, &head_cfg);
    // Heads start near zero; use full-scale weights so every path matters.
    let head_params: Vec<Tensor> = head_store.values().iter().map(|t| rand(r, t.shape()).map(|x| 0.3 * x)).collect();
    let nh = head_params.len();
    let mut loss_params = head_params;
    loss_params.push(rand(r, &[2, head_cfg.num_queries(), head_cfg.model_dim]));
    let target_pose = near_identity_pose(r, 2);
    let target_shape = uniform(r, &[2, 10], 0.5);
    let target_cam = Tensor::from_fn(&[2, 3], |i| if i % 3 == 0 { 1.1 } else { 0.05 });

    Ok(vec![
        case("add", vec![rand(r, &[3, 4]), rand(r, &[3, 4])], |t, v| {
            let y = t.add(v[0], v[1])?;
            weigh(t, y, 1)
        }),
        case("sub", vec![rand(r, &[3, 4]), rand(r, &[3, 4])], |t, v| {
            let y = t.sub(v[0], v[1])?;
            weigh(t, y, 2)
        }),
        case("mul", vec![rand(r, &[3, 4]), rand(r, &[3, 4])], |t, v| {
            let y = t.mul(v[0], v[1])?;
            weigh(t, y, 3)
        }),
        case("scale", vec![rand(r, &[5])], |t, v| {
            let y = t.scale(v[0], -2.5);
            weigh(t, y, 4)
        }),
        case("add_broadcast", vec![rand(r, &[2, 3, 4]), rand(r, &[3, 4])], |t, v| {
            let y = t.add_broadcast(v[0], v[1])?;
            weigh(t, y, 5)
        }),
        case("linear", vec![rand(r, &[2, 3, 5]), rand(r, &[5, 4]), rand(r, &[4])], |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            weigh(t, y, 6)
        }),
        case("bmm", vec![rand(r, &[2, 3, 4]), rand(r, &[2, 4, 5])], |t, v| {
            let y = t.bmm(v[0], v[1])?;
            weigh(t, y, 7)
        }),
        case("permute_reshape", vec![rand(r, &[2, 3, 4])], |t, v| {
            let y = t.permute(v[0], &[2, 0, 1])?;
            let y = t.reshape(y, &[8, 3])?;
            weigh(t, y, 8)
        }),
        case("concat", vec![rand(r, &[2, 3]), rand(r, &[2, 2])], |t, v| {
            let y = t.concat(&[v[0], v[1]], 1)?;
            weigh(t, y, 9)
        }),
        case("slice", vec![rand(r, &[4, 5])], |t, v| {
            let y = t.slice(v[0], 1, 1, 3)?;
            weigh(t, y, 10)
        }),
        case("gather_rows", vec![rand(r, &[3, 4])], |t, v| {
            let y = t.gather_rows(v[0], &[2, 0, 2, 1])?;
            weigh(t, y, 11)
        }),
        case("layer_norm", vec![rand(r, &[3, 5]), rand(r, &[5]), rand(r, &[5])], |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
            weigh(t, y, 12)
        }),
        case("gelu", vec![uniform(r, &[10], 3.0)], |t, v| {
            let y = t.gelu(v[0]);
            weigh(t, y, 13)
        }),
        case("tanh", vec![uniform(r, &[10], 3.0)], |t, v| {
            let y = t.tanh(v[0]);
            weigh(t, y, 14)
        }),
        case("softplus", vec![uniform(r, &[10], 3.0)], |t, v| {
            let y = t.softplus(v[0]);
            weigh(t, y, 15)
        }),
        case("softmax", vec![uniform(r, &[3, 4, 2], 2.0)], |t, v| {
            let y = t.softmax(v[0], 1)?;
            weigh(t, y, 16)
        }),
        case("conv2d_grouped", vec![rand(r, &[2, 4, 5, 5]), rand(r, &[6, 2, 3, 3]), rand(r, &[6])], |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), Conv2dSpec { groups: 2, stride: 1, padding: 1 })?;
            weigh(t, y, 17)
        }),
        case("conv2d_strided", vec![rand(r, &[1, 3, 6, 5]), rand(r, &[2, 3, 3, 2])], |t, v| {
            let y = t.conv2d(v[0], v[1], None, Conv2dSpec { groups: 1, stride: 2, padding: 0 })?;
            weigh(t, y, 18)
        }),
        case("bilinear_sample_features", vec![bilinear_map], move |t, v| {
            let pos = t.constant(pos_c.clone());
            let y = t.bilinear_sample(v[0], pos)?;
            weigh(t, y, 19)
        }),
        case("bilinear_sample_positions", vec![bilinear_pos], move |t, v| {
            let map = t.constant(map_c.clone());
            let y = t.bilinear_sample(map, v[0])?;
            weigh(t, y, 20)
        }),
        case("rot6d_to_matrix", vec![rand(r, &[5, 6])], |t, v| {
            let y = t.rot6d_to_matrix(v[0])?;
            weigh(t, y, 21)
        }),
        case("sum_mean_mse", vec![rand(r, &[3, 4]), rand(r, &[3, 4])], |t, v| {
            let a = t.sum(v[0]);
            let b = t.mean(v[1]);
            let c = t.mse(v[0], v[1])?;
            let y = t.add(a, b)?;
            t.add(y, c)
        }),
        case("project_weak_perspective", vec![rand(r, &[2, 5, 3]), rand(r, &[2, 3])], |t, v| {
            let y = project_weak_perspective(t, v[0], v[1])?;
            weigh(t, y, 22)
        }),
        case("lbs_forward", vec![near_identity_pose(r, 2), uniform(r, &[2, 10], 1.0)], move |t, v| {
            let m = lbs_forward(t, &lbs_template, v[0], v[1])?;
            let a = weigh(t, m.vertices, 24)?;
            let b = weigh(t, m.joints3d, 25)?;
            t.add(a, b)
        }),
        decoder_layer_case("decoder_layer", PeType::Relative, r),
        decoder_layer_case("decoder_layer_absolute_pe", PeType::Absolute, r),
        case("prediction_loss", loss_params, move |t, v| {
            let p = Bound::from_vars(v[..nh].to_vec());
            let pred = heads.predict(t, &p, v[nh], &MeanParams::default())?;
            let mesh = lbs_forward(t, &template, pred.pose, pred.shape)?;
            let j2d = project_weak_perspective(t, mesh.joints3d, pred.camera)?;
            let tp = t.constant(target_pose.clone());
            let ts = t.constant(target_shape.clone());
            let tc = t.constant(target_cam.clone());
            let tm = lbs_forward(t, &template, tp, ts)?;
            let tj2d = project_weak_perspective(t, tm.joints3d, tc)?;
            let pred = BodyVars { pose: pred.pose, shape: pred.shape, joints3d: mesh.joints3d, joints2d: j2d, vertices: mesh.vertices };
            let target = BodyVars { pose: tp, shape: ts, joints3d: tm.joints3d, joints2d: tj2d, vertices: tm.vertices };
            Ok(total_loss(t, &pred, &target, &LossWeights::default())?.total)
        }),
    ])
}

/// Runs every row. Errors only on malformed cases; failing rows are reported, not raised.
pub fn run_suite(seed: RngSeed, opts: &GradCheckOptions) -> Result<Vec<GradCheckRow>> {
    cases(seed)?
        .into_iter()
        .map(|c| Ok(GradCheckRow { name: c.name, report: grad_check(&c.f, &c.params, opts)? }))
        .collect()
}
