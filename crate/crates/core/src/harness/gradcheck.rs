//! Finite-difference gradient suite: every tape primitive on random shapes
//! and values, the layer compositions, and the three training objectives
//! end to end on a micro-batch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{gridworld_sequence, GridWorldConfig, VideoSequence};
use crate::diffcore::nn::{dense, gru_cell, layer_norm, mlp};
use crate::diffcore::{grad_check_tree, Bound, Graph, ParameterTree, Role, Tensor, Var};
use crate::error::Result;
use crate::evaluation::{init_decoder, DecoderConfig};
use crate::model::{batch_frames, forward_sequence, init_params, Encoder, ModelConfig, SlotInit};
use crate::objectives::{reconstruction_loss, setcon_loss, slotwise_loss, ContrastiveConfig, Denominator};

/// Relative tolerance of the suite.
pub const GRADCHECK_TOL: f64 = 1e-4;
/// Central-difference step.
pub const GRADCHECK_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub instances: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

type Objective = Box<dyn Fn(&mut Graph<f64>, &Bound) -> Result<Var>>;

/// One randomized instance: inputs to differentiate and a scalar objective.
struct Instance {
    params: ParameterTree<f64>,
    objective: Objective,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Values bounded away from zero so that kinks stay out of the stencil.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn dims(rng: &mut ChaCha8Rng, rank: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.gen_range(1..=4)).collect()
}

fn tree(inputs: Vec<(&str, Tensor<f64>)>) -> ParameterTree<f64> {
    let mut t = ParameterTree::new();
    for (name, v) in inputs {
        t.insert(name, Role::Weight, v).expect("distinct names");
    }
    t
}

/// `Σ y ⊙ w` for a fixed random `w`, so every output coordinate matters.
fn project(g: &mut Graph<f64>, y: Var, w: &Tensor<f64>) -> Result<Var> {
    let w = g.constant(w.clone());
    let yw = g.mul(y, w)?;
    Ok(g.sum(yw))
}

/// An instance whose output shape is known up front.
fn with_projection(
    rng: &mut ChaCha8Rng,
    inputs: Vec<(&str, Tensor<f64>)>,
    out_shape: &[usize],
    f: impl Fn(&mut Graph<f64>, &Bound) -> Result<Var> + 'static,
) -> Instance {
    let w = uniform(rng, out_shape, -1.0, 1.0);
    Instance {
        params: tree(inputs),
        objective: Box::new(move |g, b| {
            let y = f(g, b)?;
            project(g, y, &w)
        }),
    }
}

fn unary(rng: &mut ChaCha8Rng, x: Tensor<f64>, f: impl Fn(&mut Graph<f64>, Var) -> Var + 'static) -> Instance {
    let shape = x.shape().to_vec();
    with_projection(rng, vec![("x", x)], &shape, move |g, b| Ok(f(g, b.get("x")?)))
}

type Generator = fn(&mut ChaCha8Rng) -> Instance;

fn primitives() -> Vec<(&'static str, Generator)> {
    vec![
        ("matmul", |r| {
            let (lead, c, o) = (dims(r, 2), r.gen_range(1..=4), r.gen_range(1..=4));
            let xs = [lead.clone(), vec![c]].concat();
            let out = [lead, vec![o]].concat();
            let (x, w) = (uniform(r, &xs, -1.0, 1.0), uniform(r, &[c, o], -1.0, 1.0));
            with_projection(r, vec![("x", x), ("w", w)], &out, |g, b| {
                g.matmul(b.get("x")?, b.get("w")?)
            })
        }),
        ("add_bias", |r| {
            let s = dims(r, 3);
            let (x, c) = (uniform(r, &s, -1.0, 1.0), uniform(r, &s[2..], -1.0, 1.0));
            with_projection(r, vec![("x", x), ("b", c)], &s, |g, b| {
                g.add_bias(b.get("x")?, b.get("b")?)
            })
        }),
        ("bmm", |r| {
            let (batch, m, k, n) = (
                r.gen_range(1..=3),
                r.gen_range(1..=4),
                r.gen_range(1..=4),
                r.gen_range(1..=4),
            );
            let (ta, tb) = (r.gen_bool(0.5), r.gen_bool(0.5));
            let ash = if ta { [batch, k, m] } else { [batch, m, k] };
            let bsh = if tb { [batch, n, k] } else { [batch, k, n] };
            let (a, c) = (uniform(r, &ash, -1.0, 1.0), uniform(r, &bsh, -1.0, 1.0));
            with_projection(r, vec![("a", a), ("b", c)], &[batch, m, n], move |g, b| {
                g.bmm(b.get("a")?, b.get("b")?, ta, tb)
            })
        }),
        ("add", |r| binary(r, |g, a, b| g.add(a, b))),
        ("sub", |r| binary(r, |g, a, b| g.sub(a, b))),
        ("mul", |r| binary(r, |g, a, b| g.mul(a, b))),
        ("scale", |r| {
            let c = r.gen_range(-2.0..2.0);
            let s = dims(r, 2);
            let x = uniform(r, &s, -1.0, 1.0);
            unary(r, x, move |g, x| g.scale(x, c))
        }),
        ("add_scalar", |r| {
            let c = r.gen_range(-2.0..2.0);
            let s = dims(r, 2);
            let x = uniform(r, &s, -1.0, 1.0);
            unary(r, x, move |g, x| g.add_scalar(x, c))
        }),
        ("relu", |r| {
            let s = dims(r, 2);
            let x = away_from_zero(r, &s);
            unary(r, x, |g, x| g.relu(x))
        }),
        ("sigmoid", |r| {
            let s = dims(r, 2);
            let x = uniform(r, &s, -3.0, 3.0);
            unary(r, x, |g, x| g.sigmoid(x))
        }),
        ("tanh", |r| {
            let s = dims(r, 2);
            let x = uniform(r, &s, -3.0, 3.0);
            unary(r, x, |g, x| g.tanh(x))
        }),
        ("exp", |r| {
            let s = dims(r, 2);
            let x = uniform(r, &s, -2.0, 2.0);
            unary(r, x, |g, x| g.exp(x))
        }),
        ("square", |r| {
            let s = dims(r, 2);
            let x = uniform(r, &s, -2.0, 2.0);
            unary(r, x, |g, x| g.square(x))
        }),
        ("neg", |r| {
            let s = dims(r, 2);
            let x = uniform(r, &s, -2.0, 2.0);
            unary(r, x, |g, x| g.neg(x))
        }),
        ("scale_rows", |r| {
            let s = dims(r, 3);
            let (x, c) = (uniform(r, &s, -1.0, 1.0), uniform(r, &s[..2], -1.0, 1.0));
            with_projection(r, vec![("x", x), ("s", c)], &s, |g, b| {
                g.scale_rows(b.get("x")?, b.get("s")?)
            })
        }),
        ("layer_norm", |r| {
            let mut s = dims(r, 2);
            s[1] += 1;
            let x = uniform(r, &s, -2.0, 2.0);
            let (gain, off) = (uniform(r, &s[1..], 0.5, 1.5), uniform(r, &s[1..], -0.5, 0.5));
            with_projection(r, vec![("x", x), ("gain", gain), ("offset", off)], &s, |g, b| {
                g.layer_norm(b.get("x")?, b.get("gain")?, b.get("offset")?, 1e-6)
            })
        }),
        ("softmax", |r| {
            let s = dims(r, 3);
            let axis = r.gen_range(0..3);
            let x = uniform(r, &s, -2.0, 2.0);
            with_projection(r, vec![("x", x)], &s, move |g, b| g.softmax(b.get("x")?, axis))
        }),
        ("normalize", |r| {
            let s = dims(r, 3);
            let axis = r.gen_range(0..3);
            let x = uniform(r, &s, 0.2, 1.5);
            with_projection(r, vec![("x", x)], &s, move |g, b| g.normalize(b.get("x")?, axis, 1e-8))
        }),
        ("logsumexp", |r| {
            let s = dims(r, 3);
            let axis = r.gen_range(0..3);
            let mut out = s.clone();
            out.remove(axis);
            let x = uniform(r, &s, -2.0, 2.0);
            with_projection(r, vec![("x", x)], &out, move |g, b| g.logsumexp(b.get("x")?, axis))
        }),
        ("sum_axis", |r| {
            let s = dims(r, 3);
            let axis = r.gen_range(0..3);
            let mut out = s.clone();
            out.remove(axis);
            let x = uniform(r, &s, -2.0, 2.0);
            with_projection(r, vec![("x", x)], &out, move |g, b| g.sum_axis(b.get("x")?, axis))
        }),
        ("sum", |r| {
            let s = dims(r, 3);
            let x = uniform(r, &s, -2.0, 2.0);
            with_projection(r, vec![("x", x)], &[], |g, b| Ok(g.sum(b.get("x")?)))
        }),
        ("mean", |r| {
            let s = dims(r, 3);
            let x = uniform(r, &s, -2.0, 2.0);
            with_projection(r, vec![("x", x)], &[], |g, b| Ok(g.mean(b.get("x")?)))
        }),
        ("concat", |r| {
            let s = dims(r, 3);
            let axis = r.gen_range(0..3);
            let mut s2 = s.clone();
            s2[axis] = r.gen_range(1..=3);
            let mut out = s.clone();
            out[axis] += s2[axis];
            let (a, c) = (uniform(r, &s, -1.0, 1.0), uniform(r, &s2, -1.0, 1.0));
            with_projection(r, vec![("a", a), ("b", c)], &out, move |g, b| {
                g.concat(&[b.get("a")?, b.get("b")?], axis)
            })
        }),
        ("slice", |r| {
            let s = dims(r, 3);
            let axis = r.gen_range(0..3);
            let start = r.gen_range(0..s[axis]);
            let end = r.gen_range(start + 1..=s[axis]);
            let mut out = s.clone();
            out[axis] = end - start;
            let x = uniform(r, &s, -1.0, 1.0);
            with_projection(r, vec![("x", x)], &out, move |g, b| {
                g.slice(b.get("x")?, axis, start, end)
            })
        }),
        ("select", |r| {
            let s = dims(r, 3);
            let axis = r.gen_range(0..3);
            let idx: Vec<usize> = (0..r.gen_range(1..=5)).map(|_| r.gen_range(0..s[axis])).collect();
            let mut out = s.clone();
            out[axis] = idx.len();
            let x = uniform(r, &s, -1.0, 1.0);
            with_projection(r, vec![("x", x)], &out, move |g, b| g.select(b.get("x")?, axis, &idx))
        }),
        ("repeat", |r| {
            let s = dims(r, 2);
            let axis = r.gen_range(0..=2);
            let n = r.gen_range(1..=3);
            let mut out = s.clone();
            out.insert(axis, n);
            let x = uniform(r, &s, -1.0, 1.0);
            with_projection(r, vec![("x", x)], &out, move |g, b| g.repeat(b.get("x")?, axis, n))
        }),
        ("permute", |r| {
            let s = dims(r, 3);
            let mut perm = vec![0, 1, 2];
            rand::seq::SliceRandom::shuffle(&mut perm[..], r);
            let out: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
            let x = uniform(r, &s, -1.0, 1.0);
            with_projection(r, vec![("x", x)], &out, move |g, b| g.permute(b.get("x")?, &perm))
        }),
        ("reshape", |r| {
            let s = dims(r, 3);
            let out = vec![s[0] * s[1], s[2]];
            let x = uniform(r, &s, -1.0, 1.0);
            with_projection(r, vec![("x", x)], &out.clone(), move |g, b| {
                g.reshape(b.get("x")?, &out)
            })
        }),
        ("gather_flat", |r| {
            let s = dims(r, 2);
            let n = s[0] * s[1];
            let idx: Vec<usize> = (0..r.gen_range(1..=6)).map(|_| r.gen_range(0..n)).collect();
            let x = uniform(r, &s, -1.0, 1.0);
            with_projection(r, vec![("x", x)], &[idx.len()], move |g, b| {
                g.gather_flat(b.get("x")?, &idx)
            })
        }),
        ("nn.dense", |r| {
            let (n, c, o) = (r.gen_range(1..=4), r.gen_range(1..=4), r.gen_range(1..=4));
            let mut p = ParameterTree::new();
            p.init_dense("d", c, o, r.gen_bool(0.5), r).expect("fresh tree");
            p.insert("x", Role::Weight, uniform(r, &[n, c], -1.0, 1.0))
                .expect("fresh name");
            layer_instance(r, p, &[n, o], |g, b| dense(g, b, "d", b.get("x")?))
        }),
        ("nn.mlp", |r| {
            let (n, c, h, o) = (
                r.gen_range(1..=3),
                r.gen_range(1..=4),
                r.gen_range(1..=5),
                r.gen_range(1..=4),
            );
            let mut p = ParameterTree::new();
            p.init_mlp("m", c, h, o, r).expect("fresh tree");
            p.insert("x", Role::Weight, uniform(r, &[n, c], -1.0, 1.0))
                .expect("fresh name");
            layer_instance(r, p, &[n, o], |g, b| mlp(g, b, "m", b.get("x")?))
        }),
        ("nn.layer_norm", |r| {
            let (n, c) = (r.gen_range(1..=3), r.gen_range(2..=6));
            let mut p = ParameterTree::new();
            p.init_layer_norm("ln", c).expect("fresh tree");
            p.insert("x", Role::Weight, uniform(r, &[n, c], -2.0, 2.0))
                .expect("fresh name");
            layer_instance(r, p, &[n, c], |g, b| layer_norm(g, b, "ln", b.get("x")?))
        }),
        ("nn.gru_cell", |r| {
            let (n, i, h) = (r.gen_range(1..=3), r.gen_range(1..=4), r.gen_range(1..=4));
            let mut p = ParameterTree::new();
            p.init_gru("gru", i, h, r).expect("fresh tree");
            p.insert("h", Role::Weight, uniform(r, &[n, h], -1.0, 1.0))
                .expect("fresh name");
            p.insert("x", Role::Weight, uniform(r, &[n, i], -1.0, 1.0))
                .expect("fresh name");
            layer_instance(r, p, &[n, h], |g, b| gru_cell(g, b, "gru", b.get("h")?, b.get("x")?))
        }),
    ]
}

fn binary(rng: &mut ChaCha8Rng, f: fn(&mut Graph<f64>, Var, Var) -> Result<Var>) -> Instance {
    let s = dims(rng, 3);
    let (a, c) = (uniform(rng, &s, -1.0, 1.0), uniform(rng, &s, -1.0, 1.0));
    with_projection(rng, vec![("a", a), ("b", c)], &s, move |g, b| {
        f(g, b.get("a")?, b.get("b")?)
    })
}

fn layer_instance(
    rng: &mut ChaCha8Rng,
    params: ParameterTree<f64>,
    out_shape: &[usize],
    f: impl Fn(&mut Graph<f64>, &Bound) -> Result<Var> + 'static,
) -> Instance {
    let w = uniform(rng, out_shape, -1.0, 1.0);
    Instance {
        params,
        objective: Box::new(move |g, b| {
            let y = f(g, b)?;
            project(g, y, &w)
        }),
    }
}

/// Names of the primitive and layer checks, in suite order.
pub fn primitive_names() -> Vec<&'static str> {
    primitives().into_iter().map(|(n, _)| n).collect()
}

/// Check `instances` random instances of every primitive and layer.
pub fn check_primitives(instances: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for (pi, (name, generate)) in primitives().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((pi as u64) << 32));
        let mut worst = 0.0f64;
        for _ in 0..instances {
            let inst = generate(&mut rng);
            let report = grad_check_tree(|g, b| (inst.objective)(g, b), &inst.params, GRADCHECK_EPS)?;
            worst = worst.max(report.max_rel_error);
        }
        out.push(CheckOutcome {
            name: name.to_string(),
            instances,
            max_rel_error: worst,
            passed: worst <= GRADCHECK_TOL,
        });
    }
    Ok(out)
}

/// Objectives checked end to end.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EndToEnd {
    Setcon,
    Slotwise,
    Reconstruction,
    /// SetCon through the FM-MLP encoder.
    SetconFmMlp,
    /// SetCon with per-step random slot initialization.
    SetconRandomInit,
}

impl EndToEnd {
    pub const CORE: [EndToEnd; 3] = [EndToEnd::Setcon, EndToEnd::Slotwise, EndToEnd::Reconstruction];
    pub const ALL: [EndToEnd; 5] = [
        EndToEnd::Setcon,
        EndToEnd::Slotwise,
        EndToEnd::Reconstruction,
        EndToEnd::SetconFmMlp,
        EndToEnd::SetconRandomInit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EndToEnd::Setcon => "end_to_end.setcon",
            EndToEnd::Slotwise => "end_to_end.slotwise",
            EndToEnd::Reconstruction => "end_to_end.reconstruction",
            EndToEnd::SetconFmMlp => "end_to_end.setcon_fm_mlp",
            EndToEnd::SetconRandomInit => "end_to_end.setcon_random_init",
        }
    }
}

/// Micro-batch: two 3-frame 5×5 GridWorld sequences.
pub fn micro_batch(seed: u64) -> Result<Vec<VideoSequence>> {
    let cfg = GridWorldConfig {
        num_frames: 3,
        ..GridWorldConfig::default()
    };
    (0..2).map(|i| gridworld_sequence(seed + i, &cfg)).collect()
}

/// Check one full objective with respect to every model (and, for the
/// reconstruction loss, decoder) parameter.
pub fn check_end_to_end(which: EndToEnd, seed: u64) -> Result<CheckOutcome> {
    let batch = micro_batch(seed)?;
    let refs: Vec<&VideoSequence> = batch.iter().collect();
    let frames = batch_frames::<f64>(&refs)?;
    let mut cfg = ModelConfig::default();
    match which {
        EndToEnd::SetconFmMlp => cfg.encoder = Encoder::FmMlp,
        EndToEnd::SetconRandomInit => cfg.slot_init = SlotInit::Random,
        _ => {}
    }
    let mut params = ParameterTree::new();
    params.extend_prefixed("model/", &init_params::<f64>(&cfg, 5, 5, seed)?)?;
    let dec_cfg = DecoderConfig::default();
    if which == EndToEnd::Reconstruction {
        params.extend_prefixed("decoder/", &init_decoder::<f64>(&dec_cfg, cfg.slot_dim, seed + 1)?)?;
    }
    let con = ContrastiveConfig {
        tau: 0.5,
        denominator: Denominator::Literal,
    };
    let report = grad_check_tree(
        |g, b| {
            let x = g.constant(frames.clone());
            let out = forward_sequence(g, &b.scoped("model/"), &cfg, x, seed)?;
            match which {
                EndToEnd::Slotwise => slotwise_loss(g, out.slots, out.preds, &con),
                EndToEnd::Reconstruction => reconstruction_loss(g, &b.scoped("decoder/"), &dec_cfg, &out, x),
                _ => setcon_loss(g, out.zs, out.zp, &con),
            }
        },
        &params,
        GRADCHECK_EPS,
    )?;
    Ok(CheckOutcome {
        name: which.name().to_string(),
        instances: 1,
        max_rel_error: report.max_rel_error,
        passed: report.max_rel_error <= GRADCHECK_TOL,
    })
}

/// Primitives plus the chosen end-to-end objectives.
pub fn gradcheck_suite(instances: usize, end_to_end: &[EndToEnd], seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = check_primitives(instances, seed)?;
    for &which in end_to_end {
        out.push(check_end_to_end(which, seed)?);
    }
    Ok(out)
}
