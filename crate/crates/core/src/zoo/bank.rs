use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::init::init_kaiming;
use crate::autodiff::optim::{AdamConfig, AdamState};
use crate::autodiff::{ParamKey, Tape, Var};
use crate::error::Error;
use crate::tensor::Tensor;

use super::ModuleKind;

/// Architecture hyperparameters shared by every module of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Channel width of stem features and encodings.
    pub d: usize,
    /// Feature-map rows and columns (`R = C`).
    pub resolution: usize,
    /// Channels of the rendered input image (`cin x 4R x 4C`).
    pub cin: usize,
    /// Size of the answer vocabulary.
    pub answers: usize,
    /// Width of the classifier's hidden fully-connected layer.
    pub classifier_hidden: usize,
    /// Base seed for parameter initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            resolution: 14,
            cin: 4,
            answers: 26,
            classifier_hidden: 1024,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.d == 0 || self.cin == 0 || self.classifier_hidden == 0 {
            return Err(Error::Config("d, cin and classifier_hidden must be positive".into()));
        }
        if self.resolution < 2 || !self.resolution.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "resolution {} must be even for the classifier's first pool",
                self.resolution
            )));
        }
        if self.answers < 2 {
            return Err(Error::Config("need at least two answers".into()));
        }
        Ok(())
    }

    /// Spatial extent after the classifier's pooling stages: one 2x2 pool,
    /// then a second one only when the extent is still even.
    pub fn classifier_pooled_extent(&self) -> (usize, bool) {
        let after_first = self.resolution / 2;
        if after_first.is_multiple_of(2) {
            (after_first / 2, true)
        } else {
            (after_first, false)
        }
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.cin, 4 * self.resolution, 4 * self.resolution]
    }
}

/// Named parameter slot: `(name, shape, fan_in)`.
type Slot = (&'static str, Vec<usize>, usize);

fn conv3(name: &'static str, cout: usize, cin: usize) -> [Slot; 2] {
    [(name, vec![cout, cin, 3, 3], cin * 9), (bias_name(name), vec![cout], 0)]
}

fn conv1(name: &'static str, cout: usize, cin: usize) -> [Slot; 2] {
    [(name, vec![cout, cin, 1, 1], cin), (bias_name(name), vec![cout], 0)]
}

fn bias_name(weight: &'static str) -> &'static str {
    match weight {
        "stem.conv1.w" => "stem.conv1.b",
        "stem.conv2.w" => "stem.conv2.b",
        "conv1.w" => "conv1.b",
        "conv2.w" => "conv2.b",
        "conv3.w" => "conv3.b",
        "conv4.w" => "conv4.b",
        "conv5.w" => "conv5.b",
        "proj.w" => "proj.b",
        "fc1.w" => "fc1.b",
        "fc2.w" => "fc2.b",
        other => panic!("no bias name for {other}"),
    }
}

fn layout(kind: ModuleKind, cfg: &ModelConfig) -> Vec<Slot> {
    let d = cfg.d;
    let mut slots = Vec::new();
    match kind {
        ModuleKind::Stem => {
            slots.extend(conv3("stem.conv1.w", d, cfg.cin));
            slots.extend(conv3("stem.conv2.w", d, d));
        }
        ModuleKind::Attention => {
            slots.extend(conv3("conv1.w", d, d));
            slots.extend(conv3("conv2.w", d, d));
            slots.extend(conv1("proj.w", 1, d));
        }
        ModuleKind::Relate => {
            for name in ["conv1.w", "conv2.w", "conv3.w", "conv4.w", "conv5.w"] {
                slots.extend(conv3(name, d, d));
            }
            slots.extend(conv1("proj.w", 1, d));
        }
        ModuleKind::Same => slots.extend(conv1("proj.w", 1, d + 1)),
        ModuleKind::Query => {
            slots.extend(conv3("conv1.w", d, d));
            slots.extend(conv3("conv2.w", d, d));
        }
        ModuleKind::Compare => {
            slots.extend(conv1("proj.w", d, 2 * d));
            slots.extend(conv3("conv1.w", d, d));
            slots.extend(conv3("conv2.w", d, d));
        }
        ModuleKind::Classifier => {
            let (pooled, _) = cfg.classifier_pooled_extent();
            let flat = d * pooled * pooled;
            let h = cfg.classifier_hidden;
            slots.extend(conv3("conv1.w", d, d));
            slots.extend(conv3("conv2.w", d, d));
            slots.push(("fc1.w", vec![h, flat], flat));
            slots.push(("fc1.b", vec![h], 0));
            slots.push(("fc2.w", vec![cfg.answers, h], h));
            slots.push(("fc2.b", vec![cfg.answers], 0));
        }
        ModuleKind::And | ModuleKind::Or => {}
    }
    slots
}

/// 64-bit FNV-1a, stable across platforms and releases.
fn stable_hash(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Parameters and optimizer state for one module token such as `attention[red]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBank {
    pub token: String,
    pub kind: ModuleKind,
    pub names: Vec<String>,
    pub params: Vec<Tensor>,
    pub adam: Vec<AdamState>,
}

impl ParamBank {
    /// Fresh bank: He-initialized filters and zero biases, seeded from the
    /// token so initialization does not depend on creation order.
    pub fn new(token: &str, kind: ModuleKind, cfg: &ModelConfig) -> Self {
        let base = cfg.seed ^ stable_hash(token.as_bytes());
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (slot, (name, shape, fan_in)) in layout(kind, cfg).into_iter().enumerate() {
            let t = if fan_in == 0 {
                Tensor::zeros(&shape)
            } else {
                init_kaiming(&shape, fan_in, base.wrapping_add(slot as u64))
            };
            names.push(name.to_string());
            params.push(t);
        }
        let adam = params.iter().map(|p| AdamState::new(p.numel())).collect();
        Self {
            token: token.to_string(),
            kind,
            names,
            params,
            adam,
        }
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BankId(pub usize);

/// Every parameter bank of a model, one per distinct module token.
#[derive(Clone, Debug, PartialEq)]
pub struct BankRegistry {
    pub config: ModelConfig,
    banks: Vec<ParamBank>,
    index: BTreeMap<String, BankId>,
}

pub const STEM_TOKEN: &str = "stem";
pub const CLASSIFIER_TOKEN: &str = "classifier";

impl BankRegistry {
    pub fn new(config: ModelConfig) -> Result<Self, Error> {
        config.validate()?;
        let mut reg = Self {
            config,
            banks: Vec::new(),
            index: BTreeMap::new(),
        };
        reg.get_or_create(STEM_TOKEN, ModuleKind::Stem);
        reg.get_or_create(CLASSIFIER_TOKEN, ModuleKind::Classifier);
        Ok(reg)
    }

    /// Rebuilds a registry from already-populated banks (checkpoint loading).
    pub fn from_banks(config: ModelConfig, banks: Vec<ParamBank>) -> Result<Self, Error> {
        config.validate()?;
        let mut index = BTreeMap::new();
        for (i, b) in banks.iter().enumerate() {
            if index.insert(b.token.clone(), BankId(i)).is_some() {
                return Err(Error::Config(format!("duplicate bank `{}`", b.token)));
            }
        }
        for required in [STEM_TOKEN, CLASSIFIER_TOKEN] {
            if !index.contains_key(required) {
                return Err(Error::Config(format!("missing `{required}` bank")));
            }
        }
        Ok(Self {
            config,
            banks,
            index,
        })
    }

    /// Bank for `token`, created with fresh parameters on first use.
    pub fn get_or_create(&mut self, token: &str, kind: ModuleKind) -> BankId {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = BankId(self.banks.len());
        self.banks.push(ParamBank::new(token, kind, &self.config));
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn lookup(&self, token: &str) -> Option<BankId> {
        self.index.get(token).copied()
    }

    pub fn bank(&self, id: BankId) -> &ParamBank {
        &self.banks[id.0]
    }

    pub fn bank_mut(&mut self, id: BankId) -> &mut ParamBank {
        &mut self.banks[id.0]
    }

    pub fn banks(&self) -> &[ParamBank] {
        &self.banks
    }

    pub fn len(&self) -> usize {
        self.banks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.banks.is_empty()
    }

    pub fn stem(&self) -> BankId {
        self.index[STEM_TOKEN]
    }

    pub fn classifier(&self) -> BankId {
        self.index[CLASSIFIER_TOKEN]
    }

    /// Records parameter `slot` of bank `id` on the tape.
    pub fn param(&self, tape: &mut Tape, id: BankId, slot: usize) -> Var {
        tape.param(
            ParamKey {
                bank: id.0,
                slot,
            },
            &self.banks[id.0].params[slot],
        )
    }

    /// One Adam step on every parameter that received a gradient.
    pub fn apply(&mut self, grads: &GradAccumulator, cfg: &AdamConfig) {
        for (key, g) in &grads.sums {
            let bank = &mut self.banks[key.bank];
            bank.adam[key.slot].step(&mut bank.params[key.slot], g, cfg);
        }
    }
}

/// Sums parameter gradients from several tapes in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradAccumulator {
    sums: BTreeMap<ParamKey, Vec<f64>>,
}

impl GradAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_tape(&mut self, tape: &Tape) {
        for (key, g) in tape.param_grads() {
            self.add(key, g.data());
        }
    }

    pub fn add(&mut self, key: ParamKey, g: &[f64]) {
        match self.sums.get_mut(&key) {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => {
                self.sums.insert(key, g.to_vec());
            }
        }
    }

    pub fn get(&self, key: ParamKey) -> Option<&[f64]> {
        self.sums.get(&key).map(Vec::as_slice)
    }

    pub fn keys(&self) -> impl Iterator<Item = ParamKey> + '_ {
        self.sums.keys().copied()
    }

    pub fn is_finite(&self) -> bool {
        self.sums.values().all(|g| g.iter().all(|v| v.is_finite()))
    }
}
