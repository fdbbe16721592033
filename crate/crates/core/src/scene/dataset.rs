//! On-disk datasets.
//!
//! A dataset directory holds `header.json`, `scenes.jsonl`, `samples.jsonl`
//! and the rendered tensors as `images.manifest` + `images.bin` (one
//! `scene<i>.image` and one `scene<i>.seg` entry per scene).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::params_io::{read_params, write_params};
use crate::error::{Error, FormatError, SceneError};
use crate::program::compile;
use crate::vocab::{answer_labels, Answer, Attribute};

use super::render::{render_scene, Rendering, CIN};
use super::templates::{generate_question, Family, Template, TEMPLATES};
use super::{generate_scene, Condition, Scene, SceneConfig, DEFAULT_GRID, MAX_OBJECTS, MIN_OBJECTS};

pub const DATASET_VERSION: u32 = 1;

/// Attempts per question before giving up on a scene slot.
const MAX_TRIES: usize = 200;
/// Largest allowed lead of one yes/no answer over the other within a family.
const BINARY_SLACK: i64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub scenes: usize,
    pub questions_per_scene: usize,
    pub seed: u64,
    pub resolution: usize,
    pub grid: usize,
    pub condition: Condition,
    pub adjacent_pair: bool,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Restricts generation to these templates; empty means all.
    #[serde(default)]
    pub templates: Vec<Template>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            scenes: 100,
            questions_per_scene: 10,
            seed: 0,
            resolution: 14,
            grid: DEFAULT_GRID,
            condition: Condition::Unconstrained,
            adjacent_pair: false,
            min_objects: MIN_OBJECTS,
            max_objects: MAX_OBJECTS,
            templates: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub scene: usize,
    pub template: Template,
    pub family: Family,
    pub program: String,
    pub question: String,
    pub answer: String,
    pub label: usize,
    /// Object ids per program node in pre-order; `null` for encodings.
    pub truth_sets: Vec<Option<Vec<usize>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub labels: Vec<String>,
    pub vocabularies: BTreeMap<String, Vec<String>>,
    pub templates: Vec<Template>,
    pub rows: usize,
    pub cols: usize,
    pub cin: usize,
    pub grid: usize,
    pub condition: Condition,
    pub seed: u64,
    pub scenes: usize,
    pub samples: usize,
    /// family -> answer -> count
    pub answer_distribution: BTreeMap<String, BTreeMap<String, usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub scenes: Vec<Scene>,
    pub samples: Vec<Sample>,
    pub renderings: Vec<Rendering>,
}

fn header_for(cfg: &DatasetConfig, scenes: usize, samples: &[Sample]) -> DatasetHeader {
    let mut vocabularies = BTreeMap::new();
    for a in Attribute::ALL {
        vocabularies.insert(a.name().to_string(), a.values().iter().map(|v| v.to_string()).collect());
    }
    let mut dist: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for s in samples {
        *dist
            .entry(s.family.name().to_string())
            .or_default()
            .entry(s.answer.clone())
            .or_default() += 1;
    }
    DatasetHeader {
        version: DATASET_VERSION,
        labels: answer_labels(),
        vocabularies,
        templates: active_templates(cfg),
        rows: cfg.resolution,
        cols: cfg.resolution,
        cin: CIN,
        grid: cfg.grid,
        condition: cfg.condition,
        seed: cfg.seed,
        scenes,
        samples: samples.len(),
        answer_distribution: dist,
    }
}

fn active_templates(cfg: &DatasetConfig) -> Vec<Template> {
    if cfg.templates.is_empty() {
        TEMPLATES.to_vec()
    } else {
        cfg.templates.clone()
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.min_objects > self.max_objects {
            return fail(format!("min_objects {} exceeds max_objects {}", self.min_objects, self.max_objects));
        }
        if self.grid == 0 || self.max_objects > self.grid * self.grid {
            return fail(format!("{} objects do not fit a {}x{} grid", self.max_objects, self.grid, self.grid));
        }
        if self.resolution < 2 || !self.resolution.is_multiple_of(2) {
            return fail(format!("resolution {} must be even and at least 2", self.resolution));
        }
        if self.questions_per_scene == 0 {
            return fail("questions_per_scene must be positive".into());
        }
        Ok(())
    }
}

/// Builds a dataset in memory. Deterministic in the config.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset, Error> {
    cfg.validate()?;
    let templates = active_templates(cfg);
    let scene_cfg = SceneConfig {
        grid: cfg.grid,
        condition: cfg.condition,
        adjacent_pair: cfg.adjacent_pair,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut scenes = Vec::with_capacity(cfg.scenes);
    let mut samples = Vec::with_capacity(cfg.scenes * cfg.questions_per_scene);
    // Running yes-minus-no balance per family.
    let mut balance: BTreeMap<Family, i64> = BTreeMap::new();
    for i in 0..cfg.scenes {
        let n = rng.random_range(cfg.min_objects..=cfg.max_objects);
        let scene = generate_scene(rng.random(), n, scene_cfg)?;
        for k in 0..cfg.questions_per_scene {
            let mut found = None;
            for _ in 0..MAX_TRIES {
                let template = templates[rng.random_range(0..templates.len())];
                let q = match generate_question(&scene, template, rng.random()) {
                    Ok(q) => q,
                    Err(SceneError::Uninstantiable { .. }) => continue,
                    Err(e) => return Err(e.into()),
                };
                let family = template.family();
                let lean = match q.answer {
                    Answer::Yes => 1,
                    Answer::No => -1,
                    _ => 0,
                };
                let b = balance.entry(family).or_default();
                if lean != 0 && (*b * lean) >= BINARY_SLACK {
                    continue;
                }
                *b += lean;
                found = Some(q);
                break;
            }
            let q = found.ok_or_else(|| Error::Dataset(format!("scene {i}: no template instantiable")))?;
            samples.push(Sample {
                id: format!("s{i}-q{k}"),
                scene: i,
                template: q.template,
                family: q.template.family(),
                program: q.program.to_string(),
                question: q.text,
                answer: q.answer.to_string(),
                label: q.answer.label().expect("generator keeps labels in range"),
                truth_sets: q.truth_sets,
            });
        }
        scenes.push(scene);
    }
    let renderings = scenes
        .iter()
        .map(|s| render_scene(s, cfg.resolution, cfg.resolution))
        .collect();
    Ok(Dataset {
        header: header_for(cfg, scenes.len(), &samples),
        scenes,
        samples,
        renderings,
    })
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("serializable"));
        out.push('\n');
    }
    out
}

fn write_file(path: &Path, content: &[u8]) -> Result<(), FormatError> {
    fs::write(path, content).map_err(|e| FormatError::io(path, e))
}

impl Dataset {
    pub fn write(&self, dir: &Path) -> Result<(), Error> {
        fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
        let header = serde_json::to_string_pretty(&self.header).expect("serializable") + "\n";
        write_file(&dir.join("header.json"), header.as_bytes())?;
        write_file(&dir.join("scenes.jsonl"), jsonl(&self.scenes).as_bytes())?;
        write_file(&dir.join("samples.jsonl"), jsonl(&self.samples).as_bytes())?;
        let names: Vec<(String, String)> = (0..self.scenes.len())
            .map(|i| (format!("scene{i}.image"), format!("scene{i}.seg")))
            .collect();
        let entries = self.renderings.iter().zip(&names).flat_map(|(r, (a, b))| {
            [(a.as_str(), &r.image), (b.as_str(), &r.segmentation)]
        });
        write_params(dir, "images", entries)?;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.header.rows
    }

    /// Samples grouped by scene index, in file order.
    pub fn by_scene(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.scenes.len()];
        for (i, s) in self.samples.iter().enumerate() {
            out[s.scene].push(i);
        }
        out
    }
}

/// Generates and writes a dataset; returns it for further use.
pub fn build_dataset(cfg: &DatasetConfig, dir: &Path) -> Result<Dataset, Error> {
    let ds = generate_dataset(cfg)?;
    ds.write(dir)?;
    Ok(ds)
}

fn malformed(what: &'static str, detail: impl ToString) -> Error {
    FormatError::Malformed {
        what,
        detail: detail.to_string(),
    }
    .into()
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path, what: &'static str) -> Result<Vec<T>, Error> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| malformed(what, format!("line {}: {e}", n + 1))))
        .collect()
}

/// Reads a dataset directory, validating it against its header.
pub fn read_dataset(dir: &Path) -> Result<Dataset, Error> {
    let hpath = dir.join("header.json");
    let htext = fs::read_to_string(&hpath).map_err(|e| FormatError::io(&hpath, e))?;
    let header: DatasetHeader = serde_json::from_str(&htext).map_err(|e| malformed("dataset header", e))?;
    if header.version != DATASET_VERSION {
        return Err(FormatError::Version {
            found: header.version,
            expected: DATASET_VERSION,
        }
        .into());
    }
    if header.labels != answer_labels() {
        return Err(FormatError::Incompatible("answer labels differ from this build".into()).into());
    }
    let scenes: Vec<Scene> = read_jsonl(&dir.join("scenes.jsonl"), "scene line")?;
    let samples: Vec<Sample> = read_jsonl(&dir.join("samples.jsonl"), "sample line")?;
    if scenes.len() != header.scenes || samples.len() != header.samples {
        return Err(FormatError::Inconsistent(format!(
            "header declares {} scenes and {} samples, files hold {} and {}",
            header.scenes,
            header.samples,
            scenes.len(),
            samples.len()
        ))
        .into());
    }
    for s in &samples {
        if s.scene >= scenes.len() {
            return Err(FormatError::Inconsistent(format!("sample {} names missing scene {}", s.id, s.scene)).into());
        }
        compile(&s.program)?;
        if header.labels.get(s.label) != Some(&s.answer) {
            return Err(FormatError::Inconsistent(format!("sample {}: label {} is not `{}`", s.id, s.label, s.answer)).into());
        }
    }
    let mut tensors = read_params(dir, "images")?.into_iter();
    let mut renderings = Vec::with_capacity(scenes.len());
    for i in 0..scenes.len() {
        let (Some((a, image)), Some((b, segmentation))) = (tensors.next(), tensors.next()) else {
            return Err(FormatError::Inconsistent(format!("images end before scene {i}")).into());
        };
        if a != format!("scene{i}.image") || b != format!("scene{i}.seg") {
            return Err(FormatError::Inconsistent(format!("expected scene{i} tensors, found `{a}`, `{b}`")).into());
        }
        let want = [CIN, 4 * header.rows, 4 * header.cols];
        if image.shape() != want {
            return Err(FormatError::Inconsistent(format!("scene{i}.image has shape {:?}, expected {want:?}", image.shape())).into());
        }
        renderings.push(Rendering { image, segmentation });
    }
    if tensors.next().is_some() {
        return Err(FormatError::Inconsistent("images hold more scenes than the header".into()).into());
    }
    Ok(Dataset {
        header,
        scenes,
        samples,
        renderings,
    })
}
