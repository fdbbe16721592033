//! Acceptance suite: every criterion runs in order and prints one line.
//!
//! `TBD_ACCEPTANCE=1,2,3` restricts a run to the listed criteria. The
//! training criteria generate their own data and train with one worker
//! thread, so elapsed wall time bounds CPU time from above.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tbd_core::autodiff::gradcheck::{check_gradients, weighted_sum, GradCheck, FD_STEP, REL_FLOOR};
use tbd_core::autodiff::{ConvSpec, Tape, Var};
use tbd_core::error::TensorError;
use tbd_core::interp::{
    attention_precision_recall, encode_overlay_ppm, encode_pgm, entanglement_report, quantize, Colormap, Scope,
};
use tbd_core::program::{compile, parse_program, random_program};
use tbd_core::scene::{
    enumerate_small_scenes, generate_dataset, oracle_equivalence, read_dataset, Condition, Dataset, DatasetConfig,
};
use tbd_core::trainer::{
    compile_all, finetune, load_checkpoint, register_tokens, save_checkpoint, Checkpoint, TrainConfig, Trainer,
};
use tbd_core::zoo::{
    run_and, run_attention, run_classifier, run_compare, run_or, run_query, run_relate, run_same, run_stem, BankId,
    BankRegistry, ModelConfig, ModuleCtx, ModuleKind,
};
use tbd_core::Tensor;

// ---------------------------------------------------------------------------
// Experiment settings shared by the training criteria.

/// Scenes and questions of the CLEVR-mini training set.
const TRAIN_SCENES: usize = 2000;
const QUESTIONS_PER_SCENE: usize = 10;
const VAL_SCENES: usize = 200;
const HELDOUT_SCENES: usize = 1000;
const LAMBDA: f64 = 2.5e-7;
const LEARNING_RATE: f64 = 1e-3;
const BATCH_SIZE: usize = 32;
const PATIENCE: usize = 3;
/// Wall-clock budget of every training run.
const BUDGET: Duration = Duration::from_secs(30 * 60);
const FINETUNE_EPOCHS: usize = 4;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------------------
// Criterion 1: gradients.

const INSTANCES: usize = 20;
const GRAD_TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Uniform in `[-1, 1]` but at least 1e-3 from zero, away from ReLU kinks.
fn rand_signed(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    rand_tensor(rng, shape, -1.0, 1.0).map(|v| if v.abs() >= 1e-3 { v } else { v.signum() * 1e-3 + v })
}

/// A single-channel mask in `(0, 0.6)` with one clear maximum.
fn rand_mask(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let mut m = rand_tensor(rng, &[1, rows, cols], 0.01, 0.6);
    let k = rng.random_range(0..rows * cols);
    m.data_mut()[k] = 0.9;
    m
}

fn op_checks(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Vec<GradCheck>)> {
    type Op = Box<dyn Fn(&mut Tape, &[Var], u64) -> Result<Var, TensorError>>;
    let conv = |spec: ConvSpec| -> Op {
        Box::new(move |t: &mut Tape, v: &[Var], s| {
            let y = t.conv2d(v[0], v[1], v[2], spec)?;
            weighted_sum(t, y, s)
        })
    };
    let ops: Vec<(&'static str, Vec<Vec<usize>>, Op)> = vec![
        ("conv2d 3x3", vec![vec![2, 6, 6], vec![3, 2, 3, 3], vec![3]], conv(ConvSpec::same(3, 1))),
        ("conv2d dilated", vec![vec![2, 6, 6], vec![3, 2, 3, 3], vec![3]], conv(ConvSpec::same(3, 2))),
        ("conv2d strided", vec![vec![2, 6, 6], vec![3, 2, 3, 3], vec![3]], conv(ConvSpec::strided(2, 1))),
        ("conv2d 1x1", vec![vec![2, 5, 5], vec![3, 2, 1, 1], vec![3]], conv(ConvSpec::same(1, 1))),
        ("relu", vec![vec![2, 3, 3]], Box::new(|t, v, s| { let y = t.relu(v[0]); weighted_sum(t, y, s) })),
        ("sigmoid", vec![vec![2, 3, 3]], Box::new(|t, v, s| { let y = t.sigmoid(v[0]); weighted_sum(t, y, s) })),
        ("mul", vec![vec![3, 4, 4], vec![1, 4, 4]], Box::new(|t, v, s| { let y = t.mul(v[0], v[1])?; weighted_sum(t, y, s) })),
        ("min", vec![vec![1, 4, 4], vec![1, 4, 4]], Box::new(|t, v, s| { let y = t.min(v[0], v[1])?; weighted_sum(t, y, s) })),
        ("max", vec![vec![1, 4, 4], vec![1, 4, 4]], Box::new(|t, v, s| { let y = t.max(v[0], v[1])?; weighted_sum(t, y, s) })),
        ("add", vec![vec![2, 3], vec![2, 3]], Box::new(|t, v, s| { let y = t.add(v[0], v[1])?; weighted_sum(t, y, s) })),
        ("scale", vec![vec![5]], Box::new(|t, v, s| { let y = t.scale(v[0], -1.7); weighted_sum(t, y, s) })),
        ("sum", vec![vec![2, 4]], Box::new(|t, v, _| Ok(t.sum(v[0])))),
        ("concat_channels", vec![vec![2, 3, 3], vec![1, 3, 3]], Box::new(|t, v, s| { let y = t.concat_channels(v[0], v[1])?; weighted_sum(t, y, s) })),
        ("maxpool2d", vec![vec![2, 4, 6]], Box::new(|t, v, s| { let y = t.maxpool2d(v[0], 2, 2)?; weighted_sum(t, y, s) })),
        ("linear", vec![vec![5], vec![3, 5], vec![3]], Box::new(|t, v, s| { let y = t.linear(v[0], v[1], v[2])?; weighted_sum(t, y, s) })),
        ("reshape", vec![vec![2, 2, 2]], Box::new(|t, v, s| { let y = t.reshape(v[0], vec![8])?; weighted_sum(t, y, s) })),
        ("softmax_cross_entropy", vec![vec![7]], Box::new(|t, v, s| t.softmax_cross_entropy(v[0], s as usize % 7))),
        ("l1_mass", vec![vec![1, 3, 3]], Box::new(|t, v, _| Ok(t.l1_mass(v[0])))),
        ("gather_position", vec![vec![3, 3, 4]], Box::new(|t, v, s| { let y = t.gather_position(v[0], 1, 2)?; weighted_sum(t, y, s) })),
    ];
    ops.into_iter()
        .map(|(name, shapes, f)| {
            let checks = (0..INSTANCES as u64)
                .map(|s| {
                    let inputs: Vec<Tensor> = shapes
                        .iter()
                        .map(|sh| if name == "l1_mass" { rand_tensor(rng, sh, 0.01, 1.0) } else { rand_signed(rng, sh) })
                        .collect();
                    check_gradients(&inputs, |t, v| f(t, v, s)).unwrap()
                })
                .collect();
            (name, checks)
        })
        .collect()
}

fn tiny_model(seed: u64) -> ModelConfig {
    ModelConfig {
        d: 3,
        resolution: 4,
        cin: 2,
        answers: 3,
        classifier_hidden: 5,
        seed,
    }
}

fn module_registry(seed: u64) -> BankRegistry {
    let mut reg = BankRegistry::new(tiny_model(seed)).unwrap();
    for (t, k) in [
        ("attention[red]", ModuleKind::Attention),
        ("relate[left]", ModuleKind::Relate),
        ("same[color]", ModuleKind::Same),
        ("query_shape", ModuleKind::Query),
        ("compare_size", ModuleKind::Compare),
    ] {
        reg.get_or_create(t, k);
    }
    // Nonzero biases so their gradients are exercised.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for i in 0..reg.len() {
        let bank = reg.bank_mut(BankId(i));
        for (name, p) in bank.names.iter().zip(bank.params.iter_mut()) {
            if name.ends_with(".b") {
                p.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
            }
        }
    }
    reg
}

/// Largest relative error of parameter gradients of `loss` against central
/// differences, over every parameter entry that `loss` reaches.
fn param_check<F>(reg: &mut BankRegistry, loss: F) -> f64
where
    F: Fn(&mut Tape, &BankRegistry) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let l = loss(&mut tape, reg).unwrap();
    tape.backward(l).unwrap();
    let grads = tape.param_grads();
    let value = |reg: &BankRegistry| {
        let mut t = Tape::new();
        let l = loss(&mut t, reg).unwrap();
        t.value(l).data()[0]
    };
    let mut worst = 0.0f64;
    for (key, g) in &grads {
        for j in 0..g.numel() {
            let id = BankId(key.bank);
            let orig = reg.bank(id).params[key.slot].data()[j];
            reg.bank_mut(id).params[key.slot].data_mut()[j] = orig + FD_STEP;
            let up = value(reg);
            reg.bank_mut(id).params[key.slot].data_mut()[j] = orig - FD_STEP;
            let down = value(reg);
            reg.bank_mut(id).params[key.slot].data_mut()[j] = orig;
            let num = (up - down) / (2.0 * FD_STEP);
            let a = g.data()[j];
            worst = worst.max((a - num).abs() / a.abs().max(num.abs()).max(REL_FLOOR));
        }
    }
    worst
}

fn module_checks() -> Vec<(&'static str, f64)> {
    type Unary = fn(&mut Tape, ModuleCtx, Var, Var) -> Result<Var, tbd_core::error::ModuleError>;
    let mut worst: BTreeMap<&'static str, f64> = BTreeMap::new();
    let mut note = |name: &'static str, e: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(e);
    };
    for inst in 0..INSTANCES as u64 {
        let mut reg = module_registry(100 + inst);
        let mut rng = ChaCha8Rng::seed_from_u64(200 + inst);
        let feat = rand_tensor(&mut rng, &[3, 4, 4], 0.0, 1.0);
        let other = rand_tensor(&mut rng, &[3, 4, 4], 0.0, 1.0);
        let mask = rand_mask(&mut rng, 4, 4);
        let image = rand_tensor(&mut rng, &[2, 16, 16], 0.0, 1.0);
        let unary: [(&'static str, &str, Unary); 4] = [
            ("Attention", "attention[red]", run_attention),
            ("Relate", "relate[left]", run_relate),
            ("Same", "same[color]", run_same),
            ("Query", "query_shape", run_query),
        ];
        for (name, token, f) in unary {
            let id = reg.lookup(token).unwrap();
            let run = |t: &mut Tape, reg: &BankRegistry, x: Var, m: Var| -> Result<Var, TensorError> {
                let y = f(t, ModuleCtx::new(reg, id), x, m).map_err(|e| e.source)?;
                weighted_sum(t, y, inst)
            };
            let c = check_gradients(&[feat.clone(), mask.clone()], |t, v| run(t, &reg, v[0], v[1])).unwrap();
            note(name, c.max_rel_error);
            let p = param_check(&mut reg, |t, reg| {
                let x = t.constant(feat.clone());
                let m = t.constant(mask.clone());
                run(t, reg, x, m)
            });
            note(name, p);
        }
        let cmp = reg.lookup("compare_size").unwrap();
        let run_cmp = |t: &mut Tape, reg: &BankRegistry, a: Var, b: Var| -> Result<Var, TensorError> {
            let y = run_compare(t, ModuleCtx::new(reg, cmp), a, b).map_err(|e| e.source)?;
            weighted_sum(t, y, inst)
        };
        let c = check_gradients(&[feat.clone(), other.clone()], |t, v| run_cmp(t, &reg, v[0], v[1])).unwrap();
        note("Compare", c.max_rel_error);
        note(
            "Compare",
            param_check(&mut reg, |t, reg| {
                let a = t.constant(feat.clone());
                let b = t.constant(other.clone());
                run_cmp(t, reg, a, b)
            }),
        );
        let stem = reg.stem();
        let run_st = |t: &mut Tape, reg: &BankRegistry, x: Var| -> Result<Var, TensorError> {
            let y = run_stem(t, ModuleCtx::new(reg, stem), x).map_err(|e| e.source)?;
            weighted_sum(t, y, inst)
        };
        note("stem", check_gradients(std::slice::from_ref(&image), |t, v| run_st(t, &reg, v[0])).unwrap().max_rel_error);
        note(
            "stem",
            param_check(&mut reg, |t, reg| {
                let x = t.constant(image.clone());
                run_st(t, reg, x)
            }),
        );
        let cls = reg.classifier();
        let label = inst as usize % 3;
        let run_cls = |t: &mut Tape, reg: &BankRegistry, x: Var| -> Result<Var, TensorError> {
            let y = run_classifier(t, ModuleCtx::new(reg, cls), x).map_err(|e| e.source)?;
            t.softmax_cross_entropy(y, label)
        };
        note("classifier", check_gradients(std::slice::from_ref(&other), |t, v| run_cls(t, &reg, v[0])).unwrap().max_rel_error);
        note(
            "classifier",
            param_check(&mut reg, |t, reg| {
                let x = t.constant(other.clone());
                run_cls(t, reg, x)
            }),
        );
        // No forced maximum here: ties would make min and max kinked.
        let m2 = rand_tensor(&mut rng, &[1, 4, 4], 0.0, 1.0);
        for (name, f) in [("And", run_and as fn(&mut Tape, Var, Var) -> _), ("Or", run_or)] {
            let c = check_gradients(&[mask.clone(), m2.clone()], |t, v| {
                let y = f(t, v[0], v[1]).map_err(|e| e.source)?;
                weighted_sum(t, y, inst)
            })
            .unwrap();
            note(name, c.max_rel_error);
        }
    }
    worst.into_iter().collect()
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for (name, checks) in op_checks(&mut rng) {
        let w = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
        worst = worst.max(w);
        if checks.len() < INSTANCES || w >= GRAD_TOL {
            failures.push(format!("{name} {w:.2e}"));
        }
    }
    for (name, w) in module_checks() {
        worst = worst.max(w);
        if w >= GRAD_TOL {
            failures.push(format!("{name} {w:.2e}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 120.0;
    outcome(
        pass,
        format!("19 ops and 9 modules x {INSTANCES} instances, worst rel error {worst:.2e}, {secs:.1}s; failures: {failures:?}"),
    )
}

// ---------------------------------------------------------------------------
// Criterion 2: set operations.

fn criterion_set_ops() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bad = 0;
    let mut lattice_bad = 0;
    for _ in 0..1000 {
        let a = rand_tensor(&mut rng, &[1, 14, 14], 0.0, 1.0);
        let b = rand_tensor(&mut rng, &[1, 14, 14], 0.0, 1.0);
        let c = rand_tensor(&mut rng, &[1, 14, 14], 0.0, 1.0);
        let mut t = Tape::new();
        let (va, vb, vc) = (t.constant(a.clone()), t.constant(b.clone()), t.constant(c.clone()));
        let and = run_and(&mut t, va, vb).unwrap();
        let or = run_or(&mut t, va, vb).unwrap();
        for i in 0..a.numel() {
            let (x, y) = (a.data()[i], b.data()[i]);
            if t.value(and).data()[i].to_bits() != x.min(y).to_bits() || t.value(or).data()[i].to_bits() != x.max(y).to_bits() {
                bad += 1;
            }
        }
        // Lattice identities, compared bitwise.
        let same = |t: &Tape, p: Var, q: Var| {
            t.value(p).data().iter().zip(t.value(q).data()).all(|(x, y)| x.to_bits() == y.to_bits())
        };
        let ba = run_and(&mut t, vb, va).unwrap();
        let bo = run_or(&mut t, vb, va).unwrap();
        let aa = run_and(&mut t, va, va).unwrap();
        let ao = run_or(&mut t, va, va).unwrap();
        let absorb1 = run_or(&mut t, va, and).unwrap();
        let a_or_b = or;
        let absorb2 = run_and(&mut t, va, a_or_b).unwrap();
        let bc = run_and(&mut t, vb, vc).unwrap();
        let assoc_l = run_and(&mut t, va, bc).unwrap();
        let assoc_r = run_and(&mut t, and, vc).unwrap();
        let b_or_c = run_or(&mut t, vb, vc).unwrap();
        let dist_l = run_and(&mut t, va, b_or_c).unwrap();
        let ac = run_and(&mut t, va, vc).unwrap();
        let dist_r = run_or(&mut t, and, ac).unwrap();
        let ok = same(&t, and, ba)
            && same(&t, or, bo)
            && same(&t, aa, va)
            && same(&t, ao, va)
            && same(&t, absorb1, va)
            && same(&t, absorb2, va)
            && same(&t, assoc_l, assoc_r)
            && same(&t, dist_l, dist_r);
        if !ok {
            lattice_bad += 1;
        }
    }
    outcome(
        bad == 0 && lattice_bad == 0,
        format!("1000 pairs: {bad} elementwise mismatches, {lattice_bad} lattice identity failures"),
    )
}

// ---------------------------------------------------------------------------
// Criterion 3: oracle equivalence.

fn criterion_oracle() -> Outcome {
    let start = Instant::now();
    let scenes = enumerate_small_scenes(3, 3);
    let r = oracle_equivalence(4, &scenes);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        r.mismatches == 0 && r.cases > 0 && secs < 300.0,
        format!(
            "{} scenes (up to attribute renaming) x {} programs = {} cases, {} mismatches, {secs:.0}s",
            r.scenes, r.programs, r.cases, r.mismatches
        ),
    )
}

// ---------------------------------------------------------------------------
// Training helpers.

fn data(scenes: usize, seed: u64, resolution: usize, condition: Condition, adjacent: bool) -> Dataset {
    generate_dataset(&DatasetConfig {
        scenes,
        questions_per_scene: QUESTIONS_PER_SCENE,
        seed,
        resolution,
        condition,
        adjacent_pair: adjacent,
        ..DatasetConfig::default()
    })
    .unwrap()
}

fn config(resolution: usize, lambda: f64, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.model.resolution = resolution;
    c.model.seed = seed;
    c.optim.lr = LEARNING_RATE;
    c.train.lambda_attn = lambda;
    c.train.batch_size = BATCH_SIZE;
    c.train.seed = seed;
    c.train.threads = 1;
    c
}

struct Run {
    best: Checkpoint,
    epochs: usize,
    val: Vec<f64>,
    secs: f64,
}

/// Trains with early stopping on `val`. An epoch only counts if it
/// finishes inside the budget.
fn fit(label: &str, cfg: TrainConfig, train: &Dataset, val: &Dataset) -> Run {
    let start = Instant::now();
    let train_p = compile_all(train).unwrap();
    let val_p = compile_all(val).unwrap();
    let mut t = Trainer::new(cfg).unwrap();
    register_tokens(&mut t.registry, &train_p);
    register_tokens(&mut t.registry, &val_p);
    let mut best = t.checkpoint();
    let mut history = Vec::new();
    let mut since = 0;
    let mut counted = start.elapsed();
    loop {
        let mut next = t.clone();
        let rec = next.train_epoch(train, &train_p).unwrap();
        let acc = next.evaluate(val, &val_p).unwrap().accuracy;
        let elapsed = start.elapsed();
        if elapsed > BUDGET {
            eprintln!("  [{label}] epoch {} finished after the budget ({:.0}s); not counted", next.epoch, elapsed.as_secs_f64());
            break;
        }
        t = next;
        counted = elapsed;
        eprintln!(
            "  [{label}] epoch {} train loss {:.4} val {:.4} ({:.0}s)",
            t.epoch,
            rec.loss.unwrap_or(f64::NAN),
            acc,
            elapsed.as_secs_f64()
        );
        history.push(acc);
        if acc > t.best_val_accuracy {
            t.best_val_accuracy = acc;
            best = t.checkpoint();
            since = 0;
        } else {
            since += 1;
            if since >= PATIENCE {
                break;
            }
        }
    }
    best.best_val_accuracy = t.best_val_accuracy;
    Run {
        epochs: t.epoch,
        best,
        val: history,
        secs: counted.as_secs_f64(),
    }
}

fn accuracy(reg: &BankRegistry, ds: &Dataset) -> tbd_core::trainer::EvalReport {
    tbd_core::trainer::evaluate(reg, ds).unwrap()
}

/// Datasets and models shared between criteria.
#[derive(Default)]
struct Shared {
    mini: Option<(Dataset, Dataset)>,
    unregularized: Option<Run>,
}

impl Shared {
    fn mini(&mut self) -> &(Dataset, Dataset) {
        self.mini.get_or_insert_with(|| {
            (
                data(TRAIN_SCENES, 1, 14, Condition::Unconstrained, false),
                data(VAL_SCENES, 2, 14, Condition::Unconstrained, false),
            )
        })
    }

    fn unregularized(&mut self) -> &Run {
        if self.unregularized.is_none() {
            let (train, val) = self.mini();
            let run = fit("R14 lambda=0", config(14, 0.0, 0), train, val);
            self.unregularized = Some(run);
        }
        self.unregularized.as_ref().unwrap()
    }
}

// ---------------------------------------------------------------------------
// Criterion 4: end-to-end learning.

fn criterion_learning(shared: &mut Shared) -> Outcome {
    let (run_best, epochs, secs, history) = {
        let r = shared.unregularized();
        (r.best.clone(), r.epochs, r.secs, r.val.clone())
    };
    let val = &shared.mini().1;
    let report = accuracy(&run_best.registry, val);
    let families: Vec<String> = report.families.iter().map(|(k, f)| format!("{k} {:.3}", f.accuracy)).collect();
    let pass = report.accuracy >= 0.95 && report.families.values().all(|f| f.accuracy >= 0.85) && secs <= BUDGET.as_secs_f64();
    outcome(
        pass,
        format!(
            "val accuracy {:.4} after {epochs} epochs in {:.1} min (history {history:.3?}); families: {}",
            report.accuracy,
            secs / 60.0,
            families.join(", ")
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 5: regularization shrinks background attention.

fn criterion_regularization(shared: &mut Shared) -> Outcome {
    let base = shared.unregularized().best.clone();
    let (train, val) = shared.mini();
    let reg = fit("R14 lambda=2.5e-7", config(14, LAMBDA, 0), train, val);
    let bg = |c: &Checkpoint| attention_precision_recall(&c.registry, val, 0.5, Scope::Attention).unwrap().mean_background_mass;
    let (bg0, bg1) = (bg(&base), bg(&reg.best));
    let (acc0, acc1) = (accuracy(&base.registry, val).accuracy, accuracy(&reg.best.registry, val).accuracy);
    let drop = 1.0 - bg1 / bg0;
    outcome(
        drop >= 0.5 && (acc1 - acc0).abs() <= 0.01,
        format!(
            "background mass {bg0:.3} -> {bg1:.3} (drop {:.1}%), val accuracy {acc0:.4} -> {acc1:.4}",
            100.0 * drop
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 6: attention precision and recall.

fn criterion_interpretability(shared: &mut Shared) -> Outcome {
    let base = shared.unregularized().best.clone();
    let train28 = data(TRAIN_SCENES, 1, 28, Condition::Unconstrained, false);
    let val28 = data(VAL_SCENES, 2, 28, Condition::Unconstrained, false);
    let run = fit("R28 lambda=2.5e-7", config(28, LAMBDA, 0), &train28, &val28);
    drop((train28, val28));
    let held28 = data(HELDOUT_SCENES, 3, 28, Condition::Unconstrained, false);
    let r = attention_precision_recall(&run.best.registry, &held28, 0.5, Scope::Attention).unwrap();
    drop(held28);
    let held14 = data(HELDOUT_SCENES, 3, 14, Condition::Unconstrained, false);
    let u = attention_precision_recall(&base.registry, &held14, 0.5, Scope::Attention).unwrap();
    let pass = r.micro.precision >= 0.90 && r.micro.recall >= 0.90 && u.micro.precision < u.micro.foreground_precision;
    outcome(
        pass,
        format!(
            "regularized R28: precision {:.3} recall {:.3} ({} nodes, {} epochs); unregularized R14: precision {:.3} < foreground-only {:.3}",
            r.micro.precision,
            r.micro.recall,
            r.nodes.len(),
            run.epochs,
            u.micro.precision,
            u.micro.foreground_precision
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 7: resolution helps on adjacent pairs.

fn criterion_resolution() -> Outcome {
    let mut acc = Vec::new();
    for r in [14, 28] {
        let train = data(TRAIN_SCENES, 4, r, Condition::Unconstrained, true);
        let val = data(VAL_SCENES, 5, r, Condition::Unconstrained, true);
        let run = fit(&format!("adjacent R{r}"), config(r, LAMBDA, 0), &train, &val);
        acc.push(accuracy(&run.best.registry, &val).accuracy);
    }
    outcome(
        acc[1] - acc[0] >= 0.01,
        format!("adjacent-pair val accuracy: R14 {:.4}, R28 {:.4} (gain {:.2} points)", acc[0], acc[1], 100.0 * (acc[1] - acc[0])),
    )
}

// ---------------------------------------------------------------------------
// Criterion 8: compositional generalization split.

fn criterion_cogent() -> Outcome {
    let train_a = data(TRAIN_SCENES, 6, 14, Condition::A, false);
    let val_a = data(VAL_SCENES, 7, 14, Condition::A, false);
    let val_b = data(VAL_SCENES, 8, 14, Condition::B, false);
    let train_b = data(TRAIN_SCENES / 10, 9, 14, Condition::B, false);
    let probe = generate_dataset(&tbd_core::interp::probe_config(VAL_SCENES, 10, 14)).unwrap();
    let run = fit("CoGenT A", config(14, 0.0, 0), &train_a, &val_a);
    drop(train_a);
    let before = run.best.registry.clone();
    let mut ckpt = run.best;
    ckpt.config.train.max_epochs = FINETUNE_EPOCHS;
    let r = finetune(ckpt, FINETUNE_EPOCHS, &train_b, &val_a, &val_b, &mut std::io::sink()).unwrap();
    let ent = entanglement_report(&[("A", &before), ("fine-tuned", &r.outcome.best.registry)], &probe).unwrap();
    let p = |c: tbd_core::interp::Cell| c.probability.unwrap_or(f64::NAN);
    let (s0, s1) = (&ent.stages[0], &ent.stages[1]);
    let gap = r.before_a.accuracy - r.before_b.accuracy;
    let gain = r.after_b.accuracy - r.before_b.accuracy;
    let a_shift = (r.after_a.accuracy - r.before_a.accuracy).abs();
    let shape_up = p(s1.shape_b) > p(s0.shape_b);
    let color_gap = (p(s0.color_a) - p(s0.color_b)).abs();
    let pass = gap >= 0.10 && gain >= 0.10 && a_shift <= 0.05 && shape_up && color_gap < 0.10;
    outcome(
        pass,
        format!(
            "A {:.3} / B {:.3} before, A {:.3} / B {:.3} after; shape on B-only {:.3} -> {:.3}, color A/B before {:.3}/{:.3}",
            r.before_a.accuracy,
            r.before_b.accuracy,
            r.after_a.accuracy,
            r.after_b.accuracy,
            p(s0.shape_b),
            p(s1.shape_b),
            p(s0.color_a),
            p(s0.color_b)
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 9: determinism.

fn tbd(cwd: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_tbd"))
        .current_dir(cwd)
        .args(args)
        .env("TBD_NUM_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success(), "tbd {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let e = e.unwrap();
        let name = e.file_name().into_string().unwrap();
        if e.file_type().unwrap().is_dir() {
            for (k, v) in dir_bytes(&e.path()) {
                out.insert(format!("{name}/{k}"), v);
            }
        } else {
            out.insert(name, fs::read(e.path()).unwrap());
        }
    }
    out
}

fn criterion_determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("c.toml");
    fs::write(
        &cfg,
        "[data]\nscenes = 30\nquestions_per_scene = 5\n[model]\nd = 16\nclassifier_hidden = 64\n[train]\nmax_epochs = 1\nbatch_size = 16\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let mut trees = Vec::new();
    for k in 0..2 {
        // Same relative paths in both runs, since checkpoints record them.
        let d = root.path().join(format!("run{k}"));
        fs::create_dir(&d).unwrap();
        tbd(&d, &["gen-data", "--config", c, "--seed", "3", "--out", "train"]);
        tbd(&d, &["gen-data", "--config", c, "--seed", "4", "--out", "val"]);
        tbd(&d, &["train", "--config", c, "--seed", "3", "--data", "train", "--val", "val", "--out", "model"]);
        tbd(&d, &["eval", "--checkpoint", "model/best", "--data", "val", "--out", "eval"]);
        trees.push(dir_bytes(&d));
    }
    let differing: Vec<&String> = trees[0].keys().filter(|k| trees[1].get(*k) != trees[0].get(*k)).collect();
    let identical = trees[0].len() == trees[1].len() && differing.is_empty();
    // Bitwise checkpoint round trip.
    let model = root.path().join("run0/model/best");
    let ck = load_checkpoint(&model).unwrap();
    let again = root.path().join("again");
    save_checkpoint(&ck, &again).unwrap();
    let back = load_checkpoint(&again).unwrap();
    let bitwise = ck.registry.banks().iter().zip(back.registry.banks()).all(|(a, b)| {
        a.params.iter().zip(&b.params).all(|(x, y)| {
            x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits())
        })
    }) && dir_bytes(&model) == dir_bytes(&again);
    outcome(
        identical && bitwise,
        format!(
            "{} files compared across two pipeline runs, differing: {differing:?}; checkpoint round trip bitwise: {bitwise}",
            trees[0].len()
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 10: formats.

/// Minimal manifest/blob reader written against the documented layout.
fn read_blob(dir: &Path, stem: &str) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let manifest = fs::read_to_string(dir.join(format!("{stem}.manifest"))).unwrap();
    let blob = fs::read(dir.join(format!("{stem}.bin"))).unwrap();
    let mut lines = manifest.lines();
    assert_eq!(lines.next(), Some("tbd-params 1"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            let dims: Vec<usize> = f[1].split(',').map(|d| d.parse().unwrap()).collect();
            let (off, len): (usize, usize) = (f[2].parse().unwrap(), f[3].parse().unwrap());
            let vals = blob[off..off + len].chunks(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            (f[0].to_string(), dims, vals)
        })
        .collect()
}

fn criterion_formats() -> Outcome {
    let mut problems = Vec::new();
    // Masks through an independent image decoder.
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let ds = data(3, 11, 14, Condition::Unconstrained, false);
    let cmap = Colormap::viridis();
    for k in 0..50 {
        let mask = rand_tensor(&mut rng, &[1, 14, 14], 0.0, 1.0);
        let pgm = encode_pgm(mask.data(), 14, 14);
        let g = image::load_from_memory_with_format(&pgm, image::ImageFormat::Pnm).unwrap().into_luma8();
        let want: Vec<u8> = mask.data().iter().map(|&v| quantize(v)).collect();
        if g.dimensions() != (14, 14) || g.into_raw() != want {
            problems.push(format!("pgm {k}"));
        }
        let ppm = encode_overlay_ppm(mask.data(), 14, 14, &ds.renderings[k % 3].image, &cmap);
        let c = image::load_from_memory_with_format(&ppm, image::ImageFormat::Pnm).unwrap().into_rgb8();
        if c.dimensions() != (56, 56) {
            problems.push(format!("ppm {k}"));
        }
    }
    // Dataset files through generic JSON and a hand-written blob reader.
    let dir = tempfile::tempdir().unwrap();
    ds.write(dir.path()).unwrap();
    let header: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("header.json")).unwrap()).unwrap();
    let samples: Vec<serde_json::Value> = fs::read_to_string(dir.path().join("samples.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    if header["samples"].as_u64() != Some(samples.len() as u64) || header["rows"].as_u64() != Some(14) {
        problems.push("header counts".into());
    }
    let labels = header["labels"].as_array().unwrap();
    for s in &samples {
        let label = s["label"].as_u64().unwrap() as usize;
        if labels[label].as_str() != s["answer"].as_str() || compile(s["program"].as_str().unwrap()).is_err() {
            problems.push(format!("sample {}", s["id"]));
        }
    }
    let blobs = read_blob(dir.path(), "images");
    if blobs.len() != 2 * ds.scenes.len() {
        problems.push("image count".into());
    }
    for (i, r) in ds.renderings.iter().enumerate() {
        let (_, dims, vals) = &blobs[2 * i];
        if dims.as_slice() != r.image.shape() || vals.as_slice() != r.image.data() {
            problems.push(format!("image {i}"));
        }
    }
    if read_dataset(dir.path()).unwrap() != ds {
        problems.push("dataset round trip".into());
    }
    // Parser round trip.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut parse_bad = 0;
    for _ in 0..10_000 {
        let depth = rng.random_range(2..=6);
        let p = random_program(&mut rng, depth);
        let text = p.to_string();
        match parse_program(&text) {
            Ok(tree) if &tree == p.root() && tree.to_string() == text => {}
            _ => parse_bad += 1,
        }
    }
    if parse_bad > 0 {
        problems.push(format!("{parse_bad} parser round-trip failures"));
    }
    outcome(
        problems.is_empty(),
        format!("50 P5 + 50 P6 masks, {} samples, 10000 programs; problems: {problems:?}", samples.len()),
    )
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("TBD_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let mut shared = Shared::default();
    let criteria: Vec<(usize, &str, Box<dyn FnMut(&mut Shared) -> Outcome>)> = vec![
        (1, "gradient suite", Box::new(|_| criterion_gradients())),
        (2, "set-op exactness", Box::new(|_| criterion_set_ops())),
        (3, "oracle equivalence", Box::new(|_| criterion_oracle())),
        (4, "end-to-end learning", Box::new(criterion_learning)),
        (5, "regularization effect", Box::new(criterion_regularization)),
        (6, "interpretability metric", Box::new(criterion_interpretability)),
        (7, "resolution effect", Box::new(|_| criterion_resolution())),
        (8, "compositional split", Box::new(|_| criterion_cogent())),
        (9, "determinism", Box::new(|_| criterion_determinism())),
        (10, "format conformance", Box::new(|_| criterion_formats())),
    ];
    let mut failed = 0;
    for (n, name, mut run) in criteria {
        if !wanted(n) {
            continue;
        }
        let start = Instant::now();
        let o = run(&mut shared);
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {name}: {verdict} ({:.0}s) {}", start.elapsed().as_secs_f64(), o.detail);
        failed += !o.pass as usize;
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
