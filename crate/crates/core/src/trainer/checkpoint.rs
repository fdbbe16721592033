//! Checkpoint directories.
//!
//! ```text
//! checkpoint.json   version, config, counters, bank list with Adam step counts
//! params.manifest   parameter tensors, named `<token>/<slot name>`
//! params.bin
//! adam.manifest     first and second moments, `<token>/<slot name>.m|.v`
//! adam.bin
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::optim::AdamState;
use crate::autodiff::params_io::{read_params, write_params};
use crate::error::{Error, FormatError};
use crate::tensor::Tensor;
use crate::zoo::{BankRegistry, ModelConfig, ModuleKind, ParamBank};

use super::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub registry: BankRegistry,
    pub epoch: usize,
    pub steps: u64,
    pub best_val_accuracy: f64,
}

#[derive(Serialize, Deserialize)]
struct BankEntry {
    token: String,
    kind: ModuleKind,
    slots: Vec<String>,
    adam_steps: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    config: TrainConfig,
    epoch: usize,
    steps: u64,
    /// `null` before any validation pass.
    best_val_accuracy: Option<f64>,
    banks: Vec<BankEntry>,
}

pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    let banks = ckpt.registry.banks();
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        config: ckpt.config.clone(),
        epoch: ckpt.epoch,
        steps: ckpt.steps,
        best_val_accuracy: ckpt.best_val_accuracy.is_finite().then_some(ckpt.best_val_accuracy),
        banks: banks
            .iter()
            .map(|b| BankEntry {
                token: b.token.clone(),
                kind: b.kind,
                slots: b.names.clone(),
                adam_steps: b.adam.iter().map(|a| a.t).collect(),
            })
            .collect(),
    };
    let mut params = Vec::new();
    let mut moments = Vec::new();
    for b in banks {
        for ((name, p), a) in b.names.iter().zip(&b.params).zip(&b.adam) {
            let key = format!("{}/{name}", b.token);
            params.push((key.clone(), p.clone()));
            let shape = p.shape().to_vec();
            moments.push((format!("{key}.m"), Tensor::new(shape.clone(), a.m.clone()).expect("moment shape")));
            moments.push((format!("{key}.v"), Tensor::new(shape, a.v.clone()).expect("moment shape")));
        }
    }
    write_params(dir, "params", params.iter().map(|(n, t)| (n.as_str(), t)))?;
    write_params(dir, "adam", moments.iter().map(|(n, t)| (n.as_str(), t)))?;
    let path = dir.join("checkpoint.json");
    let text = serde_json::to_string_pretty(&manifest).expect("serializable") + "\n";
    fs::write(&path, text).map_err(|e| FormatError::io(&path, e))?;
    Ok(())
}

fn next_named(
    it: &mut impl Iterator<Item = (String, Tensor)>,
    want: &str,
    what: &str,
) -> Result<Tensor, FormatError> {
    match it.next() {
        Some((name, t)) if name == want => Ok(t),
        Some((name, _)) => Err(FormatError::Inconsistent(format!("{what}: expected `{want}`, found `{name}`"))),
        None => Err(FormatError::Inconsistent(format!("{what}: `{want}` is missing"))),
    }
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint, Error> {
    let path = dir.join("checkpoint.json");
    let text = fs::read_to_string(&path).map_err(|e| FormatError::io(&path, e))?;
    // Read the version on its own first so a future layout reports as a
    // version problem rather than a parse failure.
    #[derive(Deserialize)]
    struct VersionOnly {
        version: u32,
    }
    let v: VersionOnly = serde_json::from_str(&text).map_err(|e| FormatError::Malformed {
        what: "checkpoint manifest",
        detail: e.to_string(),
    })?;
    if v.version != CHECKPOINT_VERSION {
        return Err(FormatError::Version {
            found: v.version,
            expected: CHECKPOINT_VERSION,
        }
        .into());
    }
    let m: Manifest = serde_json::from_str(&text).map_err(|e| FormatError::Malformed {
        what: "checkpoint manifest",
        detail: e.to_string(),
    })?;
    m.config.model.validate()?;
    let mut params = read_params(dir, "params")?.into_iter();
    let mut moments = read_params(dir, "adam")?.into_iter();
    let mut banks = Vec::with_capacity(m.banks.len());
    for entry in &m.banks {
        let fresh = ParamBank::new(&entry.token, entry.kind, &m.config.model);
        if fresh.names != entry.slots || entry.adam_steps.len() != entry.slots.len() {
            return Err(FormatError::Incompatible(format!(
                "bank `{}` lists slots {:?}, a {:?} bank has {:?}",
                entry.token, entry.slots, entry.kind, fresh.names
            ))
            .into());
        }
        let mut bank = fresh;
        for (k, name) in entry.slots.iter().enumerate() {
            let key = format!("{}/{name}", entry.token);
            let p = next_named(&mut params, &key, "params")?;
            if p.shape() != bank.params[k].shape() {
                return Err(FormatError::Incompatible(format!(
                    "`{key}` has shape {:?}, config implies {:?}",
                    p.shape(),
                    bank.params[k].shape()
                ))
                .into());
            }
            let mom = next_named(&mut moments, &format!("{key}.m"), "adam")?;
            let vel = next_named(&mut moments, &format!("{key}.v"), "adam")?;
            if mom.shape() != p.shape() || vel.shape() != p.shape() {
                return Err(FormatError::Inconsistent(format!("moments of `{key}` do not match its shape")).into());
            }
            bank.params[k] = p;
            bank.adam[k] = AdamState {
                m: mom.into_data(),
                v: vel.into_data(),
                t: entry.adam_steps[k],
            };
        }
        banks.push(bank);
    }
    if let Some((name, _)) = params.next() {
        return Err(FormatError::Inconsistent(format!("params: unexpected tensor `{name}`")).into());
    }
    if let Some((name, _)) = moments.next() {
        return Err(FormatError::Inconsistent(format!("adam: unexpected tensor `{name}`")).into());
    }
    let registry = BankRegistry::from_banks(m.config.model.clone(), banks)?;
    Ok(Checkpoint {
        config: m.config,
        registry,
        epoch: m.epoch,
        steps: m.steps,
        best_val_accuracy: m.best_val_accuracy.unwrap_or(f64::NEG_INFINITY),
    })
}

/// Loads a checkpoint and rejects it unless its architecture equals `model`.
pub fn load_checkpoint_for(dir: &Path, model: &ModelConfig) -> Result<Checkpoint, Error> {
    let ckpt = load_checkpoint(dir)?;
    let have = &ckpt.config.model;
    let mismatch = [
        ("d", have.d, model.d),
        ("resolution", have.resolution, model.resolution),
        ("cin", have.cin, model.cin),
        ("answers", have.answers, model.answers),
        ("classifier_hidden", have.classifier_hidden, model.classifier_hidden),
    ]
    .into_iter()
    .find(|(_, a, b)| a != b);
    if let Some((field, a, b)) = mismatch {
        return Err(FormatError::Incompatible(format!("checkpoint has {field}={a}, expected {field}={b}")).into());
    }
    Ok(ckpt)
}
