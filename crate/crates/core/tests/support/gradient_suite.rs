//! Analytic gradients of every taped op, the losses and the full model
//! against central finite differences in f64. Shared by the `gradients` and
//! `acceptance` test targets.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skinaux_core::model::{build_model, forward, FusionMode, ModelBundle, ModelConfig, ParamVars};
use skinaux_core::tensor::gradcheck::{central_difference, relative_error};
use skinaux_core::tensor::{Tape, Tensor, Var};
use skinaux_core::training::{final_loss, one_hot, sr_loss, weighted_ce, CeForm, LossConfig};
use skinaux_core::Result;

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-3;

type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero so ReLU kinks stay outside the stencil.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Reduces a non-scalar output to a scalar with fixed pseudo-random weights,
/// so every output element contributes a distinct amount.
fn project(tape: &mut Tape<f64>, out: Var) -> Result<Var> {
    if tape.value(out).numel() == 1 {
        return Ok(out);
    }
    let shape = tape.shape(out).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(0xfeed);
    let w = uniform(&mut rng, &shape, -1.0, 1.0);
    let w = tape.constant(w)?;
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

fn evaluate(inputs: &[Tensor<f64>], build: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.constant(t.clone()).unwrap())
        .collect();
    let out = build(&mut tape, &vars).unwrap();
    let loss = project(&mut tape, out).unwrap();
    tape.value(loss).data()[0]
}

/// Max relative error over all inputs; `grad_of` marks which inputs are
/// differentiated.
fn check(inputs: Vec<Tensor<f64>>, grad_of: &[bool], build: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .zip(grad_of)
        .map(|(t, &g)| {
            if g {
                tape.param(t)
            } else {
                tape.constant(t.clone())
            }
            .unwrap()
        })
        .collect();
    let out = build(&mut tape, &vars).unwrap();
    let loss = project(&mut tape, out).unwrap();
    tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        if !grad_of[i] {
            continue;
        }
        let analytic = tape
            .grad(vars[i])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; t.numel()]);
        let numeric = central_difference(t.data(), EPS, |x| {
            let mut probe = inputs.clone();
            probe[i] = Tensor::from_vec(t.shape(), x.to_vec()).unwrap();
            evaluate(&probe, build)
        });
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

type MakeInputs = fn(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Vec<bool>);

struct Case {
    name: &'static str,
    make: MakeInputs,
    build: Box<Build>,
}

fn all(n: usize) -> Vec<bool> {
    vec![true; n]
}

fn op_cases() -> Vec<Case> {
    vec![
        Case {
            name: "add",
            make: |r| {
                (
                    vec![
                        uniform(r, &[3, 4], -1.0, 1.0),
                        uniform(r, &[3, 4], -1.0, 1.0),
                    ],
                    all(2),
                )
            },
            build: Box::new(|t, v| t.add(v[0], v[1])),
        },
        Case {
            name: "sub",
            make: |r| {
                (
                    vec![
                        uniform(r, &[2, 5], -1.0, 1.0),
                        uniform(r, &[2, 5], -1.0, 1.0),
                    ],
                    all(2),
                )
            },
            build: Box::new(|t, v| t.sub(v[0], v[1])),
        },
        Case {
            name: "mul",
            make: |r| {
                (
                    vec![
                        uniform(r, &[4, 3], -1.0, 1.0),
                        uniform(r, &[4, 3], -1.0, 1.0),
                    ],
                    all(2),
                )
            },
            build: Box::new(|t, v| t.mul(v[0], v[1])),
        },
        Case {
            name: "mul_self",
            make: |r| (vec![uniform(r, &[6], -2.0, 2.0)], all(1)),
            build: Box::new(|t, v| t.mul(v[0], v[0])),
        },
        Case {
            name: "scale",
            make: |r| (vec![uniform(r, &[3, 3], -1.0, 1.0)], all(1)),
            build: Box::new(|t, v| t.scale(v[0], -2.5)),
        },
        Case {
            name: "add_scalar",
            make: |r| (vec![uniform(r, &[5], -1.0, 1.0)], all(1)),
            build: Box::new(|t, v| t.add_scalar(v[0], 0.75)),
        },
        Case {
            name: "relu",
            make: |r| (vec![off_zero(r, &[4, 4])], all(1)),
            build: Box::new(|t, v| t.relu(v[0])),
        },
        Case {
            name: "sigmoid",
            make: |r| (vec![uniform(r, &[3, 5], -4.0, 4.0)], all(1)),
            build: Box::new(|t, v| t.sigmoid(v[0])),
        },
        Case {
            name: "log_clamped",
            make: |r| (vec![uniform(r, &[7], 0.2, 2.0)], all(1)),
            build: Box::new(|t, v| t.log_clamped(v[0], 1e-12)),
        },
        Case {
            name: "linear",
            make: |r| {
                let x = uniform(r, &[3, 5], -1.0, 1.0);
                let w = uniform(r, &[5, 4], -1.0, 1.0);
                let b = uniform(r, &[4], -1.0, 1.0);
                (vec![x, w, b], all(3))
            },
            build: Box::new(|t, v| t.linear(v[0], v[1], v[2])),
        },
        Case {
            name: "conv2d_s1_p1",
            make: |r| {
                let x = uniform(r, &[2, 2, 5, 5], -1.0, 1.0);
                let w = uniform(r, &[3, 2, 3, 3], -1.0, 1.0);
                let b = uniform(r, &[3], -1.0, 1.0);
                (vec![x, w, b], all(3))
            },
            build: Box::new(|t, v| t.conv2d(v[0], v[1], v[2], 1, 1)),
        },
        Case {
            name: "conv2d_s2_p1",
            make: |r| {
                let x = uniform(r, &[1, 3, 6, 6], -1.0, 1.0);
                let w = uniform(r, &[2, 3, 3, 3], -1.0, 1.0);
                let b = uniform(r, &[2], -1.0, 1.0);
                (vec![x, w, b], all(3))
            },
            build: Box::new(|t, v| t.conv2d(v[0], v[1], v[2], 2, 1)),
        },
        Case {
            name: "conv2d_1x1",
            make: |r| {
                let x = uniform(r, &[2, 3, 3, 3], -1.0, 1.0);
                let w = uniform(r, &[4, 3, 1, 1], -1.0, 1.0);
                let b = uniform(r, &[4], -1.0, 1.0);
                (vec![x, w, b], all(3))
            },
            build: Box::new(|t, v| t.conv2d(v[0], v[1], v[2], 1, 0)),
        },
        Case {
            name: "adaptive_avg_pool_global",
            make: |r| (vec![uniform(r, &[2, 3, 4, 4], -1.0, 1.0)], all(1)),
            build: Box::new(|t, v| t.adaptive_avg_pool(v[0], 1, 1)),
        },
        Case {
            name: "adaptive_avg_pool_uneven",
            make: |r| (vec![uniform(r, &[1, 2, 5, 7], -1.0, 1.0)], all(1)),
            build: Box::new(|t, v| t.adaptive_avg_pool(v[0], 2, 3)),
        },
        Case {
            name: "nearest_upsample",
            make: |r| (vec![uniform(r, &[1, 2, 3, 3], -1.0, 1.0)], all(1)),
            build: Box::new(|t, v| t.nearest_upsample(v[0], 2)),
        },
        Case {
            name: "softmax",
            make: |r| (vec![uniform(r, &[3, 5], -3.0, 3.0)], all(1)),
            build: Box::new(|t, v| t.softmax(v[0])),
        },
        Case {
            name: "sum",
            make: |r| (vec![uniform(r, &[2, 3, 2], -1.0, 1.0)], all(1)),
            build: Box::new(|t, v| t.sum(v[0])),
        },
        Case {
            name: "mean",
            make: |r| (vec![uniform(r, &[4, 3], -1.0, 1.0)], all(1)),
            build: Box::new(|t, v| t.mean(v[0])),
        },
        Case {
            name: "concat_cols",
            make: |r| {
                (
                    vec![
                        uniform(r, &[3, 2], -1.0, 1.0),
                        uniform(r, &[3, 4], -1.0, 1.0),
                    ],
                    all(2),
                )
            },
            build: Box::new(|t, v| t.concat_cols(v[0], v[1])),
        },
        Case {
            name: "reshape",
            make: |r| (vec![uniform(r, &[2, 6], -1.0, 1.0)], all(1)),
            build: Box::new(|t, v| t.reshape(v[0], &[3, 4])),
        },
        Case {
            name: "weighted_ce_as_written",
            make: |r| {
                (
                    vec![
                        uniform(r, &[4, 3], -2.0, 2.0),
                        one_hot(&[0, 2, 1, 2], 3).unwrap(),
                    ],
                    vec![true, false],
                )
            },
            build: Box::new(|t, v| {
                let p = t.softmax(v[0])?;
                weighted_ce(t, p, v[1], &[0.5, 1.5, 2.0], CeForm::AsWritten)
            }),
        },
        Case {
            name: "weighted_ce_categorical",
            make: |r| {
                (
                    vec![
                        uniform(r, &[4, 3], -2.0, 2.0),
                        one_hot(&[1, 1, 0, 2], 3).unwrap(),
                    ],
                    vec![true, false],
                )
            },
            build: Box::new(|t, v| {
                let p = t.softmax(v[0])?;
                weighted_ce(t, p, v[1], &[1.0, 0.7, 3.0], CeForm::Categorical)
            }),
        },
        Case {
            name: "sr_loss",
            make: |r| {
                (
                    vec![
                        uniform(r, &[1, 3, 4, 4], 0.0, 1.0),
                        uniform(r, &[1, 3, 4, 4], 0.0, 1.0),
                    ],
                    all(2),
                )
            },
            build: Box::new(|t, v| sr_loss(t, v[0], v[1])),
        },
        Case {
            name: "final_loss",
            make: |r| {
                let logits = uniform(r, &[2, 3], -1.0, 1.0);
                let y = one_hot(&[2, 0], 3).unwrap();
                let pred = uniform(r, &[2, 8], 0.0, 1.0);
                let target = uniform(r, &[2, 8], 0.0, 1.0);
                (
                    vec![logits, y, pred, target],
                    vec![true, false, true, false],
                )
            },
            build: Box::new(|t, v| {
                let p = t.softmax(v[0])?;
                let ce = weighted_ce(t, p, v[1], &[1.0, 1.0, 1.0], CeForm::AsWritten)?;
                let sr = sr_loss(t, v[3], v[2])?;
                final_loss(t, ce, sr, &LossConfig::default())
            }),
        },
    ]
}

fn tiny_model(mode: FusionMode, seed: u64) -> ModelConfig {
    ModelConfig {
        input_size: 8,
        encoder_channels: vec![3, 4],
        fusion_dim: 6,
        meta_input_dim: 4,
        meta_dims: vec![5, 4, 5, 6],
        classifier_hidden: 5,
        n_classes: 3,
        sr_factor: 2,
        fusion_mode: mode,
        seed,
    }
}

type Batch = (Tensor<f64>, Tensor<f64>, Tensor<f64>, Tensor<f64>);

fn model_loss(bundle: &ModelBundle<f64>, tape: &mut Tape<f64>, data: &Batch) -> (Var, ParamVars) {
    let vars = bundle.bind(tape).unwrap();
    let x = tape.constant(data.0.clone()).unwrap();
    let m = tape.constant(data.1.clone()).unwrap();
    let y = tape.constant(data.2.clone()).unwrap();
    let t = tape.constant(data.3.clone()).unwrap();
    let out = forward(bundle, tape, &vars, x, m, true).unwrap();
    let p = tape.softmax(out.logits).unwrap();
    let ce = weighted_ce(tape, p, y, &[0.8, 1.0, 1.3], CeForm::AsWritten).unwrap();
    let sr = sr_loss(tape, t, out.sr_pred.unwrap()).unwrap();
    (
        final_loss(tape, ce, sr, &LossConfig::default()).unwrap(),
        vars,
    )
}

/// Every parameter of the full model, classification plus SR loss. Returns
/// the worst relative error, or a description of the first failure.
fn check_model(mode: FusionMode, seed: u64) -> Result<f64, String> {
    let cfg = tiny_model(mode, seed);
    let mut bundle = build_model::<f64>(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // biases start at zero; perturb them so the check is not degenerate
    let biases: Vec<String> = bundle
        .params()
        .iter()
        .map(|(n, _)| n.clone())
        .filter(|n| n.ends_with(".bias"))
        .collect();
    for name in biases {
        for v in bundle.param_mut(&name).unwrap().data_mut() {
            *v = rng.random_range(-0.1..0.1);
        }
    }
    let data = (
        uniform(&mut rng, &[2, 3, 8, 8], 0.0, 1.0),
        uniform(&mut rng, &[2, 4], 0.0, 1.0),
        one_hot(&[1, 2], 3).unwrap(),
        uniform(&mut rng, &[2, 3, 16, 16], 0.0, 1.0),
    );

    let mut tape = Tape::new();
    let (loss, vars) = model_loss(&bundle, &mut tape, &data);
    tape.backward(loss).unwrap();
    bundle.load_grads(&tape, &vars).unwrap();

    let names: Vec<String> = bundle.params().iter().map(|(n, _)| n.clone()).collect();
    let (mut checked, mut kinked, mut worst) = (0usize, 0usize, 0.0f64);
    for name in names {
        let p = bundle.param(&name).unwrap();
        let analytic = p.grad().unwrap().to_vec();
        let (shape, x0) = (p.shape().to_vec(), p.data().to_vec());
        let mut probe = bundle.clone();
        let mut loss_at = |x: &[f64]| {
            *probe.param_mut(&name).unwrap() = Tensor::from_vec(&shape, x.to_vec()).unwrap();
            let mut tape = Tape::new();
            let (l, _) = model_loss(&probe, &mut tape, &data);
            tape.value(l).data()[0]
        };
        let steps: Vec<Vec<f64>> = [EPS, EPS / 4.0, EPS / 16.0, EPS / 64.0]
            .iter()
            .map(|&h| central_difference(&x0, h, &mut loss_at))
            .collect();
        for i in 0..analytic.len() {
            // On smooth stretches successive step sizes agree to O(h²); a ReLU
            // kink inside the stencil pulls them apart, so refine until two
            // consecutive estimates agree.
            let numeric = steps
                .windows(2)
                .find(|w| relative_error(&[w[0][i]], &[w[1][i]]) < TOL / 10.0)
                .map(|w| w[1][i]);
            let Some(numeric) = numeric else {
                kinked += 1;
                continue;
            };
            checked += 1;
            let err = relative_error(&[analytic[i]], &[numeric]);
            if err >= TOL {
                return Err(format!(
                    "{mode:?} seed {seed}: `{name}`[{i}] analytic {} numeric {numeric} (rel {err:.3e})",
                    analytic[i]
                ));
            }
            worst = worst.max(err);
        }
    }
    if kinked * 100 > checked {
        return Err(format!(
            "{mode:?} seed {seed}: {kinked} non-smooth entries of {checked}"
        ));
    }
    Ok(worst)
}

pub struct Summary {
    pub cases: usize,
    pub max_rel_err: f64,
    pub failures: Vec<String>,
    pub elapsed: Duration,
}

/// Runs every op case under four seeds and the full model under each fusion
/// mode and two seeds.
pub fn run() -> Summary {
    let start = Instant::now();
    let (mut cases, mut max_rel_err, mut failures) = (0, 0.0f64, Vec::new());
    for case in op_cases() {
        for seed in 0..4u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 1000 + cases as u64);
            let (inputs, grad_of) = (case.make)(&mut rng);
            let err = check(inputs, &grad_of, case.build.as_ref());
            if err >= TOL {
                failures.push(format!(
                    "{} seed {seed}: relative error {err:.3e}",
                    case.name
                ));
            }
            max_rel_err = max_rel_err.max(err);
            cases += 1;
        }
    }
    for mode in [
        FusionMode::Multiply,
        FusionMode::Concat,
        FusionMode::ImageOnly,
    ] {
        for seed in 0..2 {
            match check_model(mode, seed) {
                Ok(err) => max_rel_err = max_rel_err.max(err),
                Err(msg) => failures.push(msg),
            }
            cases += 1;
        }
    }
    Summary {
        cases,
        max_rel_err,
        failures,
        elapsed: start.elapsed(),
    }
}
