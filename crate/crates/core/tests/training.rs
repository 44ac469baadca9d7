//! Where gradients flow for each objective, and how the trainer treats them.

use setcon::datasets::{gridworld_sequence, GridWorldConfig};
use setcon::diffcore::{Graph, ParameterTree};
use setcon::evaluation::{init_decoder, DecoderConfig};
use setcon::harness::{train, DataSource, ExperimentConfig, TrainOptions};
use setcon::model::{batch_frames, forward_sequence, init_params, ModelConfig};
use setcon::objectives::{reconstruction_loss, setcon_loss, slotwise_loss, ContrastiveConfig};

#[derive(Clone, Copy)]
enum Objective {
    Setcon,
    Slotwise,
    Reconstruction,
}

/// Gradient trees for the model and decoder under one objective.
fn gradients(which: Objective) -> (ParameterTree<f64>, ParameterTree<f64>) {
    let cfg = ModelConfig::default();
    let dec_cfg = DecoderConfig::default();
    let model = init_params::<f64>(&cfg, 5, 5, 1).unwrap();
    let decoder = init_decoder::<f64>(&dec_cfg, cfg.slot_dim, 2).unwrap();
    let gw = GridWorldConfig::default();
    let seqs: Vec<_> = (0..2).map(|s| gridworld_sequence(s, &gw).unwrap()).collect();
    let refs: Vec<_> = seqs.iter().collect();
    let frames = batch_frames::<f64>(&refs).unwrap();

    let mut g = Graph::new();
    let p = model.bind(&mut g);
    let d = decoder.bind(&mut g);
    let x = g.constant(frames);
    let out = forward_sequence(&mut g, &p, &cfg, x, 0).unwrap();
    let con = ContrastiveConfig::default();
    let loss = match which {
        Objective::Setcon => setcon_loss(&mut g, out.zs, out.zp, &con),
        Objective::Slotwise => slotwise_loss(&mut g, out.slots, out.preds, &con),
        Objective::Reconstruction => reconstruction_loss(&mut g, &d, &dec_cfg, &out, x),
    }
    .unwrap();
    let grads = g.backward(loss).unwrap();
    (
        model.gradients(&p, &grads).unwrap(),
        decoder.gradients(&d, &grads).unwrap(),
    )
}

fn touched(tree: &ParameterTree<f64>, prefix: &str) -> bool {
    tree.iter()
        .filter(|(n, _)| n.starts_with(prefix))
        .any(|(_, p)| p.tensor.data().iter().any(|&v| v != 0.0))
}

#[test]
fn setcon_trains_encoder_transition_and_set_encoder_but_not_the_probe() {
    let (m, d) = gradients(Objective::Setcon);
    for prefix in ["backbone.", "slots.", "transition.", "set."] {
        assert!(touched(&m, prefix), "{prefix}");
    }
    assert!(!touched(&d, ""));
}

#[test]
fn slotwise_never_reaches_the_set_encoder() {
    let (m, d) = gradients(Objective::Slotwise);
    assert!(touched(&m, "backbone.") && touched(&m, "transition."));
    assert!(!touched(&m, "set."));
    assert!(!touched(&d, ""));
}

#[test]
fn reconstruction_reaches_encoder_and_decoder() {
    let (m, d) = gradients(Objective::Reconstruction);
    assert!(touched(&m, "backbone.") && touched(&m, "slots.") && touched(&m, "transition."));
    assert!(!touched(&m, "set."));
    assert!(touched(&d, ""));
}

fn tiny(loss: &str) -> ExperimentConfig {
    ExperimentConfig::resolve(
        None,
        &[
            format!("loss.kind={loss}"),
            "train.steps=8".into(),
            "train.batch_size=4".into(),
            "data.eval_sequences=4".into(),
        ],
    )
    .unwrap()
}

#[test]
fn every_objective_logs_probe_error_each_step() {
    for loss in ["setcon", "slotwise", "reconstruction"] {
        let cfg = tiny(loss);
        let data = DataSource::prepare(&cfg).unwrap();
        let out = train::<f32>(&cfg, &data, &TrainOptions::default()).unwrap();
        assert_eq!(out.state.step, 8, "{loss}");
        let (s, p) = out.state.window_mse();
        assert!(s.is_finite() && p.is_finite() && s > 0.0 && p > 0.0, "{loss}: {s} {p}");
    }
}

#[test]
fn a_stopped_run_resumes_where_it_left_off() {
    let cfg = tiny("setcon");
    let data = DataSource::prepare(&cfg).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let opts = TrainOptions {
        out: Some(tmp.path().to_path_buf()),
        stop_after: Some(3),
        ..TrainOptions::default()
    };
    assert_eq!(train::<f32>(&cfg, &data, &opts).unwrap().state.step, 3);
    let opts = TrainOptions {
        out: Some(tmp.path().to_path_buf()),
        resume: Some(tmp.path().join("checkpoint")),
        ..TrainOptions::default()
    };
    assert_eq!(train::<f32>(&cfg, &data, &opts).unwrap().state.step, 8);
}
