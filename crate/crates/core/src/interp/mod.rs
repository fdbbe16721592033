//! Scoring, export and probing of intermediate attention masks.
//!
//! A mask is scored by splitting it into attended regions and asking
//! whether each region's center of mass falls on an object that belongs to
//! the node's ground-truth set (precision), and whether every such object
//! is hit by some region (recall).
//!
//! Conventions:
//! * a node with no attended region has precision 1; its recall is 0 when
//!   the truth set is nonempty;
//! * a node whose truth set is empty has recall 1 and adds nothing to the
//!   micro-averaged recall;
//! * the foreground-only precision ignores regions centered on background.

mod components;
mod entangle;
mod pnm;

pub use components::{attended_components, Component};
pub use entangle::{entanglement_from_predictions, entanglement_report, probe_config, probe_target, Cell, EntanglementReport, ProbeTarget, StageReport};
pub use pnm::{dump_mask, encode_overlay_ppm, encode_pgm, quantize, Colormap};

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::Error;
use crate::program::{assemble_frozen, compile, execute, CheckedProgram, Token};
use crate::scene::{Dataset, Rendering};
use crate::zoo::{BankRegistry, ValueKind};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Which mask-emitting nodes are scored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    /// Attention modules only.
    #[default]
    Attention,
    /// Attention, Relate and Same.
    LearnedMasks,
}

impl Scope {
    pub fn includes(self, token: Token) -> bool {
        match self {
            Scope::Attention => matches!(token, Token::Attention(_)),
            Scope::LearnedMasks => token.module().is_some_and(|m| m.emits_learned_mask()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeScore {
    pub sample: String,
    /// Pre-order position in the sample's program.
    pub node: usize,
    pub token: String,
    pub components: usize,
    /// Components centered on a ground-truth object.
    pub hits: usize,
    /// Components centered on any object.
    pub foreground: usize,
    pub truth: usize,
    /// Ground-truth objects containing some component's center.
    pub found: usize,
    pub precision: f64,
    pub recall: f64,
    pub foreground_precision: f64,
    /// Sum of mask values over cells outside every object.
    pub background_mass: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Average {
    pub precision: f64,
    pub recall: f64,
    pub foreground_precision: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionEval {
    pub threshold: f64,
    pub scope: Scope,
    pub nodes: Vec<NodeScore>,
    /// Pooled over all scored nodes.
    pub micro: Average,
    /// Mean of per-node values.
    #[serde(rename = "macro")]
    pub macro_avg: Average,
    /// Samples whose ground truth did not cover their scored nodes.
    pub skipped_samples: usize,
    /// Scored nodes without any attended component.
    pub empty_masks: usize,
    pub mean_background_mass: f64,
}

fn ratio(num: usize, den: usize, vacuous: f64) -> f64 {
    if den == 0 {
        vacuous
    } else {
        num as f64 / den as f64
    }
}

/// Scores one `rows x cols` mask against the objects in `truth`.
pub fn score_node(mask: &[f64], rendering: &Rendering, truth: &[usize], threshold: f64) -> NodeScore {
    let s = rendering.segmentation.shape();
    let (rows, cols) = (s[1], s[2]);
    let comps = attended_components(mask, rows, cols, threshold);
    let centers: Vec<usize> = comps.iter().map(|c| c.center_cell(rows, cols)).collect();
    let inside = |object: usize, cell: usize| rendering.mask(object)[cell] > 0.0;
    let hits = centers.iter().filter(|&&c| truth.iter().any(|&o| inside(o, c))).count();
    let foreground = centers.iter().filter(|&&c| (0..s[0]).any(|o| inside(o, c))).count();
    let found = truth.iter().filter(|&&o| centers.iter().any(|&c| inside(o, c))).count();
    let background_mass = rendering
        .background()
        .iter()
        .zip(mask)
        .filter(|(bg, _)| **bg)
        .map(|(_, v)| v)
        .sum();
    NodeScore {
        sample: String::new(),
        node: 0,
        token: String::new(),
        components: comps.len(),
        hits,
        foreground,
        truth: truth.len(),
        found,
        precision: ratio(hits, comps.len(), 1.0),
        recall: ratio(found, truth.len(), 1.0),
        foreground_precision: ratio(hits, foreground, 1.0),
        background_mass,
    }
}

/// Per sample, the mask of every set-valued program node in pre-order.
pub type NodeMasks = Vec<Vec<Option<Vec<f64>>>>;

/// Runs the model on samples of one scene and collects their masks.
pub fn model_masks(registry: &BankRegistry, ds: &Dataset, programs: &[CheckedProgram], samples: &[usize]) -> Result<NodeMasks, Error> {
    let scene = ds.samples[samples[0]].scene;
    let mut tape = Tape::new();
    let image = tape.constant(ds.renderings[scene].image.clone());
    let graph = assemble_frozen(samples.iter().map(|&i| &programs[i]), registry)?;
    let exec = execute(&graph, registry, &mut tape, image)?;
    Ok((0..samples.len())
        .map(|p| {
            graph.node_maps[p]
                .iter()
                .map(|&g| (graph.nodes[g].kind == ValueKind::Attention).then(|| tape.value(exec.values[g]).data().to_vec()))
                .collect()
        })
        .collect())
}

/// Scores masks from any source. `masks` receives the sample ids of one
/// scene at a time.
pub fn score_masks<F>(ds: &Dataset, threshold: f64, scope: Scope, mut masks: F) -> Result<AttentionEval, Error>
where
    F: FnMut(&[usize]) -> Result<NodeMasks, Error>,
{
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let mut nodes = Vec::new();
    let mut skipped = 0;
    for group in ds.by_scene() {
        if group.is_empty() {
            continue;
        }
        let masks = masks(&group)?;
        for (&i, sample_masks) in group.iter().zip(masks) {
            let sample = &ds.samples[i];
            let program = compile(&sample.program)?;
            let tokens: Vec<Token> = program.root().preorder().into_iter().map(|(_, n)| n.token).collect();
            let scored: Vec<usize> = (0..tokens.len()).filter(|&k| scope.includes(tokens[k])).collect();
            let complete = sample.truth_sets.len() == tokens.len()
                && scored.iter().all(|&k| sample.truth_sets[k].is_some() && sample_masks.get(k).is_some_and(|m| m.is_some()));
            if !complete {
                skipped += 1;
                continue;
            }
            for k in scored {
                let truth = sample.truth_sets[k].as_deref().expect("checked above");
                let mask = sample_masks[k].as_deref().expect("checked above");
                let mut s = score_node(mask, &ds.renderings[sample.scene], truth, threshold);
                s.sample = sample.id.clone();
                s.node = k;
                s.token = tokens[k].to_string();
                nodes.push(s);
            }
        }
    }
    let sum = |f: fn(&NodeScore) -> usize| nodes.iter().map(f).sum::<usize>();
    let micro = Average {
        precision: ratio(sum(|n| n.hits), sum(|n| n.components), 1.0),
        recall: ratio(sum(|n| n.found), sum(|n| n.truth), 1.0),
        foreground_precision: ratio(sum(|n| n.hits), sum(|n| n.foreground), 1.0),
    };
    let mean = |f: fn(&NodeScore) -> f64| {
        if nodes.is_empty() {
            0.0
        } else {
            nodes.iter().map(f).sum::<f64>() / nodes.len() as f64
        }
    };
    let macro_avg = Average {
        precision: mean(|n| n.precision),
        recall: mean(|n| n.recall),
        foreground_precision: mean(|n| n.foreground_precision),
    };
    let mean_background_mass = mean(|n| n.background_mass);
    Ok(AttentionEval {
        threshold,
        scope,
        empty_masks: nodes.iter().filter(|n| n.components == 0).count(),
        nodes,
        micro,
        macro_avg,
        skipped_samples: skipped,
        mean_background_mass,
    })
}

/// Precision and recall of a model's masks on `ds`.
pub fn attention_precision_recall(registry: &BankRegistry, ds: &Dataset, threshold: f64, scope: Scope) -> Result<AttentionEval, Error> {
    crate::trainer::check_compatible(&registry.config, ds)?;
    let programs = crate::trainer::compile_all(ds)?;
    score_masks(ds, threshold, scope, |samples| model_masks(registry, ds, &programs, samples))
}

impl AttentionEval {
    /// One JSON line per node, then a summary line.
    pub fn write_jsonl(&self, sink: &mut dyn Write) -> std::io::Result<()> {
        for n in &self.nodes {
            writeln!(sink, "{}", serde_json::to_string(n).expect("serializable"))?;
        }
        let summary = serde_json::json!({
            "summary": true,
            "threshold": self.threshold,
            "scope": self.scope,
            "scored_nodes": self.nodes.len(),
            "skipped_samples": self.skipped_samples,
            "empty_masks": self.empty_masks,
            "micro": self.micro,
            "macro": self.macro_avg,
            "mean_background_mass": self.mean_background_mass,
        });
        writeln!(sink, "{summary}")
    }
}

/// File-name-safe form of a token: `attention[red]` becomes `attention-red`.
fn file_token(token: &str) -> String {
    token.replace('[', "-").replace(']', "")
}

/// Writes every set-valued mask of sample `index` as a P5 file, and as a P6
/// overlay when `overlay` is set. Returns the written paths.
pub fn dump_sample_masks(registry: &BankRegistry, ds: &Dataset, index: usize, dir: &Path, overlay: bool) -> Result<Vec<PathBuf>, Error> {
    crate::trainer::check_compatible(&registry.config, ds)?;
    let sample = &ds.samples[index];
    let program = compile(&sample.program)?;
    let mut tape = Tape::new();
    let rendering = &ds.renderings[sample.scene];
    let image = tape.constant(rendering.image.clone());
    let graph = assemble_frozen([&program], registry)?;
    let exec = execute(&graph, registry, &mut tape, image)?;
    let s = rendering.segmentation.shape();
    let (rows, cols) = (s[1], s[2]);
    std::fs::create_dir_all(dir).map_err(|e| crate::error::FormatError::io(dir, e))?;
    let cmap = Colormap::viridis();
    let mut written = Vec::new();
    for (k, (_, node)) in program.root().preorder().into_iter().enumerate() {
        let g = graph.node_maps[0][k];
        if graph.nodes[g].kind != ValueKind::Attention {
            continue;
        }
        let mask = tape.value(exec.values[g]).data();
        let stem = format!("{}_{k:02}_{}", sample.id, file_token(&node.token.to_string()));
        let pgm = dir.join(format!("{stem}.pgm"));
        dump_mask(mask, rows, cols, &pgm, None)?;
        written.push(pgm);
        if overlay {
            let ppm = dir.join(format!("{stem}.ppm"));
            dump_mask(mask, rows, cols, &ppm, Some((&rendering.image, &cmap)))?;
            written.push(ppm);
        }
    }
    Ok(written)
}
