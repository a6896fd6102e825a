use hmr_core::body::{pose_bodies, SmplParams};
use hmr_core::config::RunConfig;
use hmr_core::decoder::QueryMode;
use hmr_core::numeric::rng::normal;
use hmr_core::numeric::{RngSeed, Tape, Tensor};
use hmr_core::training::data::stack_contexts;
use hmr_core::training::{
    synth_dataset, synthetic_task, total_loss, train, train_model, write_loss_csv, BodyVars, Checkpoint,
    ContextEncoder, DataConfig, LossWeights, Model, TrainConfig,
};
use hmr_core::Error;

fn small(num_layers: usize, samples: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.decoder.num_layers = num_layers;
    cfg.data.num_samples = samples;
    cfg
}

#[test]
fn zero_heads_predict_the_mean() {
    for mode in [QueryMode::Multi, QueryMode::Single] {
        let mut cfg = small(1, 3);
        cfg.decoder.query_mode = mode;
        let (_, data) = synthetic_task(&cfg, RngSeed(1)).unwrap();
        let mut model = Model::new(&cfg.decoder, RngSeed(1)).unwrap();
        model.zero_heads();
        let refs: Vec<_> = data.iter().collect();
        let (preds, _) = model.predict(&stack_contexts(&refs).unwrap()).unwrap();
        assert_eq!(preds.len(), 3);
        for p in &preds {
            assert_eq!(p.pose, model.means.pose);
            assert_eq!(p.shape, model.means.shape);
            assert_eq!(p.camera, model.means.camera);
        }
    }
}

#[test]
fn prediction_shapes_for_both_query_modes() {
    for mode in [QueryMode::Multi, QueryMode::Single] {
        let mut cfg = small(1, 2);
        cfg.decoder.query_mode = mode;
        let model = Model::new(&cfg.decoder, RngSeed(2)).unwrap();
        let context = normal(&mut RngSeed(3).rng(), &cfg.decoder.context_shape(2), 1.0);
        let mut tape = Tape::new();
        let p = model.store.bind(&mut tape);
        let ctx = tape.constant(context);
        let pred = model.forward(&mut tape, &p, ctx, None).unwrap();
        assert_eq!(tape.shape(pred.pose), [2, 24, 6]);
        assert_eq!(tape.shape(pred.shape), [2, 10]);
        assert_eq!(tape.shape(pred.camera), [2, 3]);
        assert!(tape.value(pred.camera).data().chunks(3).all(|c| c[0] > 0.0));
    }
}

fn body_from(tape: &mut Tape, s: &hmr_core::training::SyntheticSample, param: bool) -> BodyVars {
    let mut leaf = |t: Tensor| if param { tape.param(t) } else { tape.constant(t) };
    let n = s.vertices.shape()[0];
    BodyVars {
        pose: leaf(s.params.pose.reshape(&[1, 24, 6]).unwrap()),
        shape: leaf(s.params.shape.reshape(&[1, 10]).unwrap()),
        joints3d: leaf(s.joints3d.reshape(&[1, 24, 3]).unwrap()),
        joints2d: leaf(s.joints2d.reshape(&[1, 24, 2]).unwrap()),
        vertices: leaf(s.vertices.reshape(&[1, n, 3]).unwrap()),
    }
}

#[test]
fn loss_closed_forms() {
    let cfg = small(1, 1);
    let (_, data) = synthetic_task(&cfg, RngSeed(5)).unwrap();
    let w = LossWeights::default();

    let mut tape = Tape::new();
    let a = body_from(&mut tape, &data[0], false);
    let b = body_from(&mut tape, &data[0], false);
    assert_eq!(total_loss(&mut tape, &a, &b, &w).unwrap().values(&tape).total, 0.0);

    let mut shifted = data[0].clone();
    shifted.vertices = shifted.vertices.map(|v| v + 0.1);
    let mut tape = Tape::new();
    let a = body_from(&mut tape, &shifted, false);
    let b = body_from(&mut tape, &data[0], false);
    let v = total_loss(&mut tape, &a, &b, &w).unwrap().values(&tape);
    assert!((v.total - 0.6).abs() < 1e-12, "{}", v.total);
    assert_eq!(v.pose + v.shape + v.joints3d + v.joints2d, 0.0);

    let grad_for = |mesh: f64| {
        let mut tape = Tape::new();
        let a = body_from(&mut tape, &shifted, true);
        let b = body_from(&mut tape, &data[0], false);
        let terms = total_loss(&mut tape, &a, &b, &LossWeights { mesh, ..w }).unwrap();
        tape.backward(terms.total).unwrap().get(a.vertices).unwrap().clone()
    };
    let (g1, g2) = (grad_for(60.0), grad_for(120.0));
    assert_eq!(g1.map(|x| 2.0 * x).data(), g2.data());
}

#[test]
fn loss_rejects_mismatched_terms() {
    let cfg = small(1, 1);
    let (_, data) = synthetic_task(&cfg, RngSeed(5)).unwrap();
    let mut tape = Tape::new();
    let a = body_from(&mut tape, &data[0], false);
    let mut b = body_from(&mut tape, &data[0], false);
    b.joints2d = tape.constant(Tensor::zeros(&[1, 23, 2]));
    let err = total_loss(&mut tape, &a, &b, &LossWeights::default()).unwrap_err();
    assert!(matches!(&err, Error::Dimension(m) if m.contains("joints2d")), "{err}");
}

#[test]
fn dataset_is_deterministic_and_consistent() {
    let cfg = small(1, 6);
    let (template, a) = synthetic_task(&cfg, RngSeed(9)).unwrap();
    let (_, b) = synthetic_task(&cfg, RngSeed(9)).unwrap();
    assert_eq!(a, b);
    let (_, c) = synthetic_task(&cfg, RngSeed(10)).unwrap();
    assert_ne!(a, c);
    let params: Vec<SmplParams> = a.iter().map(|s| s.params.clone()).collect();
    for (s, body) in a.iter().zip(pose_bodies(&params, &template).unwrap()) {
        s.params.validate().unwrap();
        assert_eq!(s.joints3d, body.joints3d);
        assert_eq!(s.vertices, body.vertices);
        assert_eq!(s.joints2d, body.joints2d);
        assert_eq!(s.context.shape(), [32, 8, 8]);
    }
}

#[test]
fn rest_sample_gives_bias_and_rest_mesh() {
    let cfg = small(1, 2);
    let data_cfg = DataConfig {
        pose_noise: 0.0,
        shape_noise: 0.0,
        camera_jitter: 0.0,
        context_noise: 0.0,
        ..cfg.data.clone()
    };
    let (template, _) = synthetic_task(&cfg, RngSeed(0)).unwrap();
    let samples = synth_dataset(RngSeed(4), 2, &cfg.decoder, &data_cfg, &template).unwrap();
    let encoder = ContextEncoder::new(RngSeed(data_cfg.encoder_seed), &cfg.decoder, &data_cfg);
    for s in &samples {
        assert_eq!(s.params, SmplParams::rest());
        assert_eq!(&s.context, encoder.bias());
        assert_eq!(s.vertices, template.vertices);
    }
}

#[test]
fn zero_steps_keep_the_initialization() {
    let mut cfg = small(1, 4);
    cfg.train.steps = 0;
    let out = train(&cfg, RngSeed(6)).unwrap();
    assert_eq!(out.curve.len(), 1);
    let fresh = Model::new(&cfg.decoder, RngSeed(6)).unwrap();
    assert_eq!(out.checkpoint.model.store.values(), fresh.store.values());
}

#[test]
fn runs_are_deterministic() {
    let mut cfg = small(1, 4);
    cfg.train.steps = 5;
    cfg.train.batch_size = 2;
    let a = train(&cfg, RngSeed(7)).unwrap();
    let b = train(&cfg, RngSeed(7)).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.checkpoint.to_bytes().unwrap(), b.checkpoint.to_bytes().unwrap());
    let (mut csv_a, mut csv_b) = (Vec::new(), Vec::new());
    write_loss_csv(&mut csv_a, &a.curve).unwrap();
    write_loss_csv(&mut csv_b, &b.curve).unwrap();
    assert_eq!(csv_a, csv_b);
    let text = String::from_utf8(csv_a).unwrap();
    assert_eq!(text.lines().next(), Some("step,pose,shape,joints3d,joints2d,vertices,total"));
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn checkpoint_round_trip() {
    let mut cfg = small(2, 3);
    cfg.train.steps = 2;
    let out = train(&cfg, RngSeed(8)).unwrap();
    let bytes = out.checkpoint.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.config, cfg);
    assert_eq!(back.model.store.values(), out.checkpoint.model.store.values());
    assert_eq!(back.model.means, out.checkpoint.model.means);
    assert_eq!(back.to_bytes().unwrap(), bytes);

    let mut truncated = bytes.clone();
    truncated.pop();
    assert!(Checkpoint::from_bytes(&truncated).is_err());
    let mut extended = bytes.clone();
    extended.push(0);
    assert!(Checkpoint::from_bytes(&extended).is_err());
    assert!(Checkpoint::from_bytes(b"not a checkpoint").is_err());

    let dir = tempdir();
    let path = dir.join("model.ckpt");
    out.checkpoint.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(Checkpoint::load(&path).unwrap().to_bytes().unwrap(), bytes);
    std::fs::remove_dir_all(&dir).unwrap();
}

fn tempdir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("hmr-core-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn context_receives_no_gradient() {
    let cfg = small(1, 2);
    let model = Model::new(&cfg.decoder, RngSeed(2)).unwrap();
    let (template, data) = synthetic_task(&cfg, RngSeed(2)).unwrap();
    let refs: Vec<_> = data.iter().collect();
    let mut tape = Tape::new();
    let p = model.store.bind(&mut tape);
    let ctx = tape.constant(stack_contexts(&refs).unwrap());
    let body = model.forward_body(&mut tape, &p, ctx, &template).unwrap();
    let loss = tape.mean(body.vertices);
    let grads = tape.backward(loss).unwrap();
    assert!(grads.get(ctx).is_none());
    assert!(p.vars().iter().any(|&v| grads.get(v).is_some()));
}

#[test]
fn non_finite_context_is_a_divergence() {
    let cfg = small(1, 2);
    let (template, mut data) = synthetic_task(&cfg, RngSeed(3)).unwrap();
    data[1].context.data_mut()[5] = f64::NAN;
    let mut model = Model::new(&cfg.decoder, RngSeed(3)).unwrap();
    let train_cfg = TrainConfig { steps: 3, batch_size: 2, ..TrainConfig::default() };
    let err = train_model(&mut model, &data, &template, &train_cfg).unwrap_err();
    assert!(matches!(err, Error::Divergence { step: 0, .. }), "{err}");
}

#[test]
fn overfit_run_gains_tenfold_in_300_steps() {
    let mut cfg = small(2, 8);
    cfg.train.steps = 300;
    let out = train(&cfg, RngSeed(0)).unwrap();
    let first = out.curve[0].loss.total;
    let last = out.curve.last().unwrap().loss.total;
    assert!(last * 10.0 <= first, "loss {first} -> {last}");
}
