//! Training, evaluation and fine-tuning of module networks on datasets.
//!
//! A batch is a run of samples in (shuffled) scene order. Samples of one
//! scene share a tape, so the stem and identical subprograms run once per
//! scene; per-sample losses are summed and divided by the batch size.

mod checkpoint;

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::optim::AdamConfig;
use crate::autodiff::{ParamKey, Tape};
use crate::error::Error;
use crate::program::{assemble_frozen, compile, execute, CheckedProgram, Token};
use crate::scene::{Condition, Dataset};
use crate::tensor::Tensor;
use crate::vocab::NUM_ANSWERS;
use crate::zoo::{BankRegistry, GradAccumulator, ModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    /// Weight of the L1 penalty on learned attention masks.
    pub lambda_attn: f64,
    /// Samples per optimizer step.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a new best validation accuracy before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Worker threads for one batch; 0 reads `TBD_NUM_THREADS` (default 1).
    pub threads: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            lambda_attn: 2.5e-7,
            batch_size: 32,
            max_epochs: 20,
            patience: 5,
            seed: 0,
            threads: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub optim: AdamConfig,
    pub train: TrainParams,
    pub data: DataPaths,
}

impl TrainConfig {
    /// Rejects invalid settings; returns warnings for unusual ones.
    pub fn validate(&self) -> Result<Vec<String>, Error> {
        self.model.validate()?;
        let t = &self.train;
        if !(t.lambda_attn >= 0.0 && t.lambda_attn.is_finite()) {
            return Err(Error::Config(format!("lambda_attn must be finite and >= 0, got {}", t.lambda_attn)));
        }
        if t.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let o = &self.optim;
        if !(o.lr > 0.0 && o.lr.is_finite()) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || o.eps <= 0.0 {
            return Err(Error::Config("optimizer settings out of range".into()));
        }
        let mut warnings = Vec::new();
        if ![14, 28].contains(&self.model.resolution) {
            warnings.push(format!("resolution {} is outside the reference settings 14 and 28", self.model.resolution));
        }
        Ok(warnings)
    }

    fn threads(&self) -> usize {
        match self.train.threads {
            0 => std::env::var("TBD_NUM_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
                .filter(|&n: &usize| n > 0)
                .unwrap_or(1),
            n => n,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FamilyScore {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

impl FamilyScore {
    fn add(&mut self, ok: bool) {
        self.total += 1;
        self.correct += ok as usize;
        self.accuracy = self.correct as f64 / self.total as f64;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    /// Keyed by family name.
    pub families: BTreeMap<String, FamilyScore>,
}

/// Scores predicted labels against the dataset's answers.
pub fn score(ds: &Dataset, predictions: &[usize]) -> EvalReport {
    assert_eq!(predictions.len(), ds.samples.len(), "one prediction per sample");
    let mut overall = FamilyScore::default();
    let mut families: BTreeMap<String, FamilyScore> = BTreeMap::new();
    for (s, &p) in ds.samples.iter().zip(predictions) {
        let ok = p == s.label;
        overall.add(ok);
        families.entry(s.family.name().to_string()).or_default().add(ok);
    }
    EvalReport {
        correct: overall.correct,
        total: overall.total,
        accuracy: overall.accuracy,
        families,
    }
}

/// Checks that a dataset matches a model's input and answer layout.
pub fn check_compatible(model: &ModelConfig, ds: &Dataset) -> Result<(), Error> {
    let h = &ds.header;
    if h.rows != model.resolution || h.cols != model.resolution {
        return Err(Error::Dataset(format!(
            "dataset resolution {}x{} does not match model resolution {}",
            h.rows, h.cols, model.resolution
        )));
    }
    if h.cin != model.cin {
        return Err(Error::Dataset(format!("dataset has {} input channels, model expects {}", h.cin, model.cin)));
    }
    if h.labels.len() != model.answers || model.answers != NUM_ANSWERS {
        return Err(Error::Dataset(format!(
            "answer vocabulary of {} labels does not match model's {}",
            h.labels.len(),
            model.answers
        )));
    }
    Ok(())
}

/// Parses every sample's program once.
pub fn compile_all(ds: &Dataset) -> Result<Vec<CheckedProgram>, Error> {
    ds.samples.iter().map(|s| compile(&s.program)).collect()
}

/// Creates banks for every token used by `programs`.
pub fn register_tokens(registry: &mut BankRegistry, programs: &[CheckedProgram]) {
    for p in programs {
        for (_, n) in p.root().preorder() {
            let t = n.token;
            if t.has_bank() {
                registry.get_or_create(&t.to_string(), t.module().expect("banked token"));
            }
        }
    }
}

/// Outcome of running some samples of one scene on a tape.
struct SceneRun {
    grads: Vec<(ParamKey, Tensor)>,
    /// Per sample: total loss (cross-entropy plus penalty) and prediction.
    losses: Vec<f64>,
    predictions: Vec<usize>,
    attention_mass: f64,
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Forward (and optionally backward) pass over some samples of one scene.
fn run_scene(
    registry: &BankRegistry,
    ds: &Dataset,
    programs: &[CheckedProgram],
    samples: &[usize],
    lambda: f64,
    scale: Option<f64>,
) -> Result<SceneRun, Error> {
    let scene = ds.samples[samples[0]].scene;
    let mut tape = Tape::new();
    let image = tape.constant(ds.renderings[scene].image.clone());
    let graph = assemble_frozen(samples.iter().map(|&i| &programs[i]), registry)?;
    let exec = execute(&graph, registry, &mut tape, image)?;
    let mut losses = Vec::with_capacity(samples.len());
    let mut predictions = Vec::with_capacity(samples.len());
    let mut total = None;
    let mut attention_mass = 0.0;
    for (p, &i) in samples.iter().enumerate() {
        let sample = &ds.samples[i];
        let logits = exec.logits[p];
        predictions.push(argmax(tape.value(logits).data()));
        let mut loss = tape.softmax_cross_entropy(logits, sample.label)?;
        if lambda > 0.0 {
            for n in graph.learned_mask_nodes(p) {
                let l1 = tape.l1_mass(exec.values[n]);
                attention_mass += tape.value(l1).data()[0];
                let weighted = tape.scale(l1, lambda);
                loss = tape.add(loss, weighted)?;
            }
        }
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                sample: sample.id.clone(),
            });
        }
        losses.push(value);
        total = Some(match total {
            None => loss,
            Some(t) => tape.add(t, loss)?,
        });
    }
    let grads = match (scale, total) {
        (Some(s), Some(t)) => {
            let scaled = tape.scale(t, s);
            tape.backward(scaled)?;
            tape.param_grads()
        }
        _ => Vec::new(),
    };
    Ok(SceneRun {
        grads,
        losses,
        predictions,
        attention_mass,
    })
}

/// Splits a run of sample ids into per-scene groups, preserving order.
fn group_by_scene(ds: &Dataset, ids: &[usize]) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for &i in ids {
        match out.last_mut() {
            Some(g) if ds.samples[g[0]].scene == ds.samples[i].scene => g.push(i),
            _ => out.push(vec![i]),
        }
    }
    out
}

/// Runs `groups` on up to `threads` workers; results come back in order.
fn run_groups(
    registry: &BankRegistry,
    ds: &Dataset,
    programs: &[CheckedProgram],
    groups: &[Vec<usize>],
    lambda: f64,
    scale: Option<f64>,
    threads: usize,
) -> Vec<Result<SceneRun, Error>> {
    if threads <= 1 || groups.len() <= 1 {
        return groups
            .iter()
            .map(|g| run_scene(registry, ds, programs, g, lambda, scale))
            .collect();
    }
    let chunk = groups.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = groups
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|g| run_scene(registry, ds, programs, g, lambda, scale))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// Predicted label for every sample of `ds`.
pub fn predict(registry: &BankRegistry, ds: &Dataset, programs: &[CheckedProgram], threads: usize) -> Result<Vec<usize>, Error> {
    let groups: Vec<Vec<usize>> = ds.by_scene().into_iter().filter(|g| !g.is_empty()).collect();
    let mut predictions = vec![0; ds.samples.len()];
    for (g, run) in groups.iter().zip(run_groups(registry, ds, programs, &groups, 0.0, None, threads)) {
        let run = run?;
        for (&i, p) in g.iter().zip(run.predictions) {
            predictions[i] = p;
        }
    }
    Ok(predictions)
}

/// Accuracy overall and per family.
pub fn evaluate(registry: &BankRegistry, ds: &Dataset) -> Result<EvalReport, Error> {
    check_compatible(&registry.config, ds)?;
    let programs = compile_all(ds)?;
    let threads = TrainConfig::default().threads();
    Ok(score(ds, &predict(registry, ds, &programs, threads)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub loss: f64,
    pub correct: usize,
    pub samples: usize,
    /// Summed L1 mass of learned masks (only tracked when the penalty is on).
    pub attention_mass: f64,
    /// Predicted label per sample, in batch order.
    pub predictions: Vec<usize>,
}

/// One metrics line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: Option<f64>,
    pub accuracy: f64,
    pub families: BTreeMap<String, f64>,
}

impl EpochRecord {
    fn from_report(epoch: usize, split: &str, loss: Option<f64>, r: &EvalReport) -> Self {
        Self {
            epoch,
            split: split.to_string(),
            loss,
            accuracy: r.accuracy,
            families: r.families.iter().map(|(k, v)| (k.clone(), v.accuracy)).collect(),
        }
    }
}

/// Model state during training.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub registry: BankRegistry,
    pub epoch: usize,
    pub steps: u64,
    pub best_val_accuracy: f64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, Error> {
        config.validate()?;
        // The inventory is closed, so every bank exists from the start and
        // a checkpoint can run any dataset.
        let mut registry = BankRegistry::new(config.model.clone())?;
        for t in Token::inventory().into_iter().filter(|t| t.has_bank()) {
            registry.get_or_create(&t.to_string(), t.module().expect("banked token"));
        }
        Ok(Self {
            config,
            registry,
            epoch: 0,
            steps: 0,
            best_val_accuracy: f64::NEG_INFINITY,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Self {
        Self {
            config: ckpt.config,
            registry: ckpt.registry,
            epoch: ckpt.epoch,
            steps: ckpt.steps,
            best_val_accuracy: ckpt.best_val_accuracy,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            registry: self.registry.clone(),
            epoch: self.epoch,
            steps: self.steps,
            best_val_accuracy: self.best_val_accuracy,
        }
    }

    /// One optimizer step on the given samples (dataset indices).
    pub fn step(&mut self, ds: &Dataset, programs: &[CheckedProgram], batch: &[usize]) -> Result<StepStats, Error> {
        let groups = group_by_scene(ds, batch);
        let lambda = self.config.train.lambda_attn;
        let scale = 1.0 / batch.len() as f64;
        let runs = run_groups(&self.registry, ds, programs, &groups, lambda, Some(scale), self.config.threads());
        let mut acc = GradAccumulator::new();
        let mut stats = StepStats {
            loss: 0.0,
            correct: 0,
            samples: 0,
            attention_mass: 0.0,
            predictions: Vec::with_capacity(batch.len()),
        };
        for (g, run) in groups.iter().zip(runs) {
            let run = run?;
            for (key, grad) in &run.grads {
                acc.add(*key, grad.data());
            }
            for ((&i, l), p) in g.iter().zip(&run.losses).zip(&run.predictions) {
                stats.loss += l;
                stats.correct += (*p == ds.samples[i].label) as usize;
                stats.samples += 1;
                stats.predictions.push(*p);
            }
            stats.attention_mass += run.attention_mass;
        }
        if !acc.is_finite() {
            let id = ds.samples[batch[0]].id.clone();
            return Err(Error::NonFiniteLoss { sample: id });
        }
        self.registry.apply(&acc, &self.config.optim);
        self.steps += 1;
        Ok(stats)
    }

    /// Sample order of one epoch: scenes shuffled, samples kept per scene.
    fn epoch_order(&self, ds: &Dataset) -> Vec<usize> {
        let mut groups = ds.by_scene();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.train.seed ^ (self.epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        groups.shuffle(&mut rng);
        groups.concat()
    }

    /// One pass over `ds` in a seeded scene order.
    pub fn train_epoch(&mut self, ds: &Dataset, programs: &[CheckedProgram]) -> Result<EpochRecord, Error> {
        let order = self.epoch_order(ds);
        let mut loss = 0.0;
        let mut predictions = vec![0; ds.samples.len()];
        for batch in order.chunks(self.config.train.batch_size) {
            let stats = self.step(ds, programs, batch)?;
            loss += stats.loss;
            for (&i, &p) in batch.iter().zip(&stats.predictions) {
                predictions[i] = p;
            }
        }
        self.epoch += 1;
        let report = score(ds, &predictions);
        Ok(EpochRecord::from_report(self.epoch, "train", Some(loss / order.len().max(1) as f64), &report))
    }

    pub fn evaluate(&self, ds: &Dataset, programs: &[CheckedProgram]) -> Result<EvalReport, Error> {
        Ok(score(ds, &predict(&self.registry, ds, programs, self.config.threads())?))
    }
}

fn emit(sink: &mut dyn Write, record: &EpochRecord) -> Result<(), Error> {
    let line = serde_json::to_string(record).expect("serializable");
    writeln!(sink, "{line}").map_err(|e| Error::Dataset(format!("writing metrics: {e}")))
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// State at the best validation epoch.
    pub best: Checkpoint,
    /// State after the last epoch run.
    pub last: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Trains with early stopping on validation accuracy. Each epoch writes a
/// `train` and a `val` line of JSON to `sink`.
pub fn fit(mut trainer: Trainer, train_ds: &Dataset, val_ds: &Dataset, sink: &mut dyn Write) -> Result<TrainOutcome, Error> {
    check_compatible(&trainer.config.model, train_ds)?;
    check_compatible(&trainer.config.model, val_ds)?;
    let train_programs = compile_all(train_ds)?;
    let val_programs = compile_all(val_ds)?;
    register_tokens(&mut trainer.registry, &train_programs);
    register_tokens(&mut trainer.registry, &val_programs);
    let mut history = Vec::new();
    let mut best = trainer.checkpoint();
    let mut since_best = 0;
    for _ in 0..trainer.config.train.max_epochs {
        let rec = trainer.train_epoch(train_ds, &train_programs)?;
        emit(sink, &rec)?;
        history.push(rec);
        let val = trainer.evaluate(val_ds, &val_programs)?;
        let rec = EpochRecord::from_report(trainer.epoch, "val", None, &val);
        emit(sink, &rec)?;
        history.push(rec);
        if val.accuracy > trainer.best_val_accuracy {
            trainer.best_val_accuracy = val.accuracy;
            best = trainer.checkpoint();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= trainer.config.train.patience {
                break;
            }
        }
    }
    best.best_val_accuracy = trainer.best_val_accuracy;
    Ok(TrainOutcome {
        best,
        last: trainer.checkpoint(),
        history,
    })
}

/// Fresh model trained on `train_ds`.
pub fn train(config: TrainConfig, train_ds: &Dataset, val_ds: &Dataset, sink: &mut dyn Write) -> Result<TrainOutcome, Error> {
    fit(Trainer::new(config)?, train_ds, val_ds, sink)
}

#[derive(Clone, Debug)]
pub struct FinetuneReport {
    pub before_a: EvalReport,
    pub before_b: EvalReport,
    pub after_a: EvalReport,
    pub after_b: EvalReport,
    pub outcome: TrainOutcome,
}

fn require_condition(ds: &Dataset, want: Condition, role: &str) -> Result<(), Error> {
    if ds.header.condition != want {
        return Err(Error::Dataset(format!(
            "{role} must be condition {}, header says {}",
            want.name(),
            ds.header.condition.name()
        )));
    }
    Ok(())
}

/// Continues training a condition-A model on a condition-B set, reporting
/// accuracy on both conditions before and after. Early stopping watches
/// the B validation set. `epochs` of 0 leaves the model untouched.
pub fn finetune(
    ckpt: Checkpoint,
    epochs: usize,
    b_train: &Dataset,
    val_a: &Dataset,
    val_b: &Dataset,
    sink: &mut dyn Write,
) -> Result<FinetuneReport, Error> {
    require_condition(b_train, Condition::B, "fine-tuning set")?;
    require_condition(val_a, Condition::A, "first validation set")?;
    require_condition(val_b, Condition::B, "second validation set")?;
    let mut trainer = Trainer::from_checkpoint(ckpt);
    trainer.config.train.max_epochs = epochs;
    // Best-so-far is tracked on B from here on.
    trainer.best_val_accuracy = f64::NEG_INFINITY;
    let a_programs = compile_all(val_a)?;
    let b_programs = compile_all(val_b)?;
    register_tokens(&mut trainer.registry, &a_programs);
    register_tokens(&mut trainer.registry, &b_programs);
    let before_a = trainer.evaluate(val_a, &a_programs)?;
    let before_b = trainer.evaluate(val_b, &b_programs)?;
    let outcome = if epochs == 0 {
        let mut c = trainer.checkpoint();
        c.best_val_accuracy = before_b.accuracy;
        TrainOutcome {
            best: c.clone(),
            last: c,
            history: Vec::new(),
        }
    } else {
        fit(trainer, b_train, val_b, sink)?
    };
    let after = &outcome.best.registry;
    let after_a = score(val_a, &predict(after, val_a, &a_programs, outcome.best.config.threads())?);
    let after_b = score(val_b, &predict(after, val_b, &b_programs, outcome.best.config.threads())?);
    Ok(FinetuneReport {
        before_a,
        before_b,
        after_a,
        after_b,
        outcome,
    })
}
