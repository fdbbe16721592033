//! Shape and color recognition split by attribute combination.
//!
//! A probe question queries the shape or color of a single object. The
//! object's (shape, color) pair is legal under condition A only, under B
//! only, or under both (spheres); the last kind says nothing about the
//! split and is left out.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::program::{compile, QueryKind, Token};
use crate::scene::{Condition, Dataset, DatasetConfig, Template};
use crate::trainer::{check_compatible, compile_all, predict};
use crate::vocab::Attribute;
use crate::zoo::BankRegistry;

/// Attribute asked about and the condition owning the object's combination.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProbeTarget {
    pub attribute: Attribute,
    pub condition: Condition,
}

/// Classifies a sample as a shape or color probe, if it is one.
pub fn probe_target(ds: &Dataset, index: usize) -> Option<ProbeTarget> {
    let sample = &ds.samples[index];
    let program = compile(&sample.program).ok()?;
    let root = program.root();
    let attribute = match root.token {
        Token::Query(QueryKind::Attr(a @ (Attribute::Shape | Attribute::Color))) => a,
        _ => return None,
    };
    // Pre-order position 1 is the queried set.
    let ids = sample.truth_sets.get(1)?.as_ref()?;
    let [id] = ids.as_slice() else { return None };
    let obj = &ds.scenes[sample.scene].objects[*id];
    let condition = match (Condition::A.allows(obj.shape, obj.color), Condition::B.allows(obj.shape, obj.color)) {
        (true, false) => Condition::A,
        (false, true) => Condition::B,
        _ => return None,
    };
    Some(ProbeTarget { attribute, condition })
}

/// Dataset settings for a probe set: unconstrained scenes, attribute queries.
pub fn probe_config(scenes: usize, seed: u64, resolution: usize) -> DatasetConfig {
    DatasetConfig {
        scenes,
        seed,
        resolution,
        condition: Condition::Unconstrained,
        templates: vec![Template::QueryAttr, Template::QueryAttrRelate],
        ..DatasetConfig::default()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub correct: usize,
    pub total: usize,
    /// `None` when the cell has no questions.
    pub probability: Option<f64>,
}

impl Cell {
    fn add(&mut self, ok: bool) {
        self.total += 1;
        self.correct += ok as usize;
        self.probability = Some(self.correct as f64 / self.total as f64);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub shape_a: Cell,
    pub shape_b: Cell,
    pub color_a: Cell,
    pub color_b: Cell,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntanglementReport {
    pub stages: Vec<StageReport>,
    /// Samples that are not shape or color probes on a split-specific object.
    pub excluded: usize,
}

/// Tallies one stage's predictions over the probe samples of `ds`.
pub fn entanglement_from_predictions(ds: &Dataset, stage: &str, predictions: &[usize]) -> (StageReport, usize) {
    let mut r = StageReport {
        stage: stage.to_string(),
        shape_a: Cell::default(),
        shape_b: Cell::default(),
        color_a: Cell::default(),
        color_b: Cell::default(),
    };
    let mut excluded = 0;
    for (i, &p) in predictions.iter().enumerate() {
        let Some(t) = probe_target(ds, i) else {
            excluded += 1;
            continue;
        };
        let cell = match (t.attribute, t.condition) {
            (Attribute::Shape, Condition::A) => &mut r.shape_a,
            (Attribute::Shape, _) => &mut r.shape_b,
            (_, Condition::A) => &mut r.color_a,
            _ => &mut r.color_b,
        };
        cell.add(p == ds.samples[i].label);
    }
    (r, excluded)
}

/// Shape and color accuracy per condition for each named model.
pub fn entanglement_report(stages: &[(&str, &BankRegistry)], probe: &Dataset) -> Result<EntanglementReport, Error> {
    let programs = compile_all(probe)?;
    let mut out = EntanglementReport {
        stages: Vec::new(),
        excluded: 0,
    };
    for &(name, registry) in stages {
        check_compatible(&registry.config, probe)?;
        let preds = predict(registry, probe, &programs, 1)?;
        let (stage, excluded) = entanglement_from_predictions(probe, name, &preds);
        out.stages.push(stage);
        out.excluded = excluded;
    }
    Ok(out)
}
