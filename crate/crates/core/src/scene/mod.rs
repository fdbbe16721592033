//! Synthetic grid scenes, their renderings, question templates and the
//! symbolic answer oracle.

mod brute;
mod dataset;
mod exhaustive;
mod oracle;
mod render;
mod templates;

pub use brute::{brute_execute, brute_term, BruteValue};
pub use dataset::{build_dataset, generate_dataset, read_dataset, Dataset, DatasetConfig, DatasetHeader, Sample, DATASET_VERSION};
pub use exhaustive::{enumerate_small_scenes, oracle_equivalence, OracleReport};
pub use oracle::{apply_token, evaluate_tree, symbolic_execute, Enc, NodeValue, ObjSet, SymbolicRun};
pub use render::{render_scene, Rendering, CIN};
pub use templates::{generate_question, Family, Question, Template, TEMPLATES};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SceneError;
use crate::vocab::{AttrValue, Attribute};

pub const MIN_OBJECTS: usize = 3;
pub const MAX_OBJECTS: usize = 8;
pub const DEFAULT_GRID: usize = 4;
/// Largest jitter of an object's center from its cell center, in cell units.
pub const MAX_JITTER: f64 = 0.08;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: usize,
    pub row: usize,
    pub col: usize,
    /// Center offset from the cell center, in cell units.
    pub dx: f64,
    pub dy: f64,
    #[serde(with = "value_name::color")]
    pub color: usize,
    #[serde(with = "value_name::shape")]
    pub shape: usize,
    #[serde(with = "value_name::size")]
    pub size: usize,
    #[serde(with = "value_name::material")]
    pub material: usize,
}

mod value_name {
    macro_rules! by_name {
        ($m:ident, $attr:expr) => {
            pub mod $m {
                use serde::{Deserialize, Deserializer, Serializer};

                pub fn serialize<S: Serializer>(v: &usize, s: S) -> Result<S::Ok, S::Error> {
                    s.serialize_str($attr.values()[*v])
                }

                pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<usize, D::Error> {
                    let name = String::deserialize(d)?;
                    $attr
                        .values()
                        .iter()
                        .position(|v| *v == name)
                        .ok_or_else(|| serde::de::Error::custom(format!("unknown {} `{name}`", $attr.name())))
                }
            }
        };
    }
    by_name!(color, crate::vocab::Attribute::Color);
    by_name!(shape, crate::vocab::Attribute::Shape);
    by_name!(size, crate::vocab::Attribute::Size);
    by_name!(material, crate::vocab::Attribute::Material);
}

impl SceneObject {
    pub fn value(&self, attr: Attribute) -> AttrValue {
        let index = match attr {
            Attribute::Color => self.color,
            Attribute::Shape => self.shape,
            Attribute::Size => self.size,
            Attribute::Material => self.material,
        };
        AttrValue { attr, index }
    }

    pub fn has(&self, v: AttrValue) -> bool {
        self.value(v.attr) == v
    }

    pub fn cell(&self) -> (usize, usize) {
        (self.row, self.col)
    }

    pub fn describe(&self) -> String {
        format!(
            "{} {} {} {}",
            self.value(Attribute::Size),
            self.value(Attribute::Color),
            self.value(Attribute::Material),
            self.value(Attribute::Shape)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    pub grid: usize,
    pub objects: Vec<SceneObject>,
}

/// Color palettes of the compositional-generalization split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    #[default]
    #[serde(rename = "all")]
    Unconstrained,
    A,
    B,
}

const PALETTE_1: [usize; 4] = [0, 1, 2, 3]; // gray blue brown yellow
const PALETTE_2: [usize; 4] = [4, 5, 6, 7]; // red green purple cyan
const CUBE: usize = 0;
const CYLINDER: usize = 2;

impl Condition {
    /// Colors a shape may take. Spheres are never constrained.
    pub fn allowed_colors(self, shape: usize) -> Vec<usize> {
        let (cube, cyl) = match self {
            Condition::Unconstrained => return (0..8).collect(),
            Condition::A => (PALETTE_1, PALETTE_2),
            Condition::B => (PALETTE_2, PALETTE_1),
        };
        match shape {
            CUBE => cube.to_vec(),
            CYLINDER => cyl.to_vec(),
            _ => (0..8).collect(),
        }
    }

    pub fn allows(self, shape: usize, color: usize) -> bool {
        self.allowed_colors(shape).contains(&color)
    }

    pub fn name(self) -> &'static str {
        match self {
            Condition::Unconstrained => "all",
            Condition::A => "A",
            Condition::B => "B",
        }
    }
}

/// Attribute constraints of one split condition.
pub fn cogent_split(condition: Condition) -> Vec<(AttrValue, Vec<AttrValue>)> {
    (0..3)
        .map(|shape| {
            let colors = condition
                .allowed_colors(shape)
                .into_iter()
                .map(|c| AttrValue::new(Attribute::Color, c))
                .collect();
            (AttrValue::new(Attribute::Shape, shape), colors)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub grid: usize,
    pub condition: Condition,
    /// Forces at least one pair of objects into 4-adjacent cells.
    pub adjacent_pair: bool,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            grid: DEFAULT_GRID,
            condition: Condition::Unconstrained,
            adjacent_pair: false,
        }
    }
}

fn random_attributes(rng: &mut ChaCha8Rng, condition: Condition) -> [usize; 4] {
    let shape = rng.random_range(0..3);
    let colors = condition.allowed_colors(shape);
    let color = colors[rng.random_range(0..colors.len())];
    [color, shape, rng.random_range(0..2), rng.random_range(0..2)]
}

/// Deterministic scene with `n_objects` objects in distinct grid cells.
pub fn generate_scene(seed: u64, n_objects: usize, cfg: SceneConfig) -> Result<Scene, SceneError> {
    let cells = cfg.grid * cfg.grid;
    if !(MIN_OBJECTS..=MAX_OBJECTS).contains(&n_objects) || n_objects > cells {
        return Err(SceneError::Infeasible {
            objects: n_objects,
            cells,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = if cfg.adjacent_pair && cfg.grid >= 2 {
        // Seed pair first, then fill the rest.
        let first = rng.random_range(0..cells);
        let (r, c) = (first / cfg.grid, first % cfg.grid);
        let mut nbrs = Vec::new();
        if r > 0 {
            nbrs.push(first - cfg.grid);
        }
        if r + 1 < cfg.grid {
            nbrs.push(first + cfg.grid);
        }
        if c > 0 {
            nbrs.push(first - 1);
        }
        if c + 1 < cfg.grid {
            nbrs.push(first + 1);
        }
        let second = nbrs[rng.random_range(0..nbrs.len())];
        let rest: Vec<usize> = (0..cells).filter(|&x| x != first && x != second).collect();
        let mut out = vec![first, second];
        out.extend(sample(&mut rng, rest.len(), n_objects - 2).into_iter().map(|i| rest[i]));
        out
    } else {
        sample(&mut rng, cells, n_objects).into_vec()
    };
    chosen.sort_unstable();
    let objects = chosen
        .into_iter()
        .enumerate()
        .map(|(id, cell)| {
            let [color, shape, size, material] = random_attributes(&mut rng, cfg.condition);
            let dx = rng.random_range(-MAX_JITTER..=MAX_JITTER);
            let dy = rng.random_range(-MAX_JITTER..=MAX_JITTER);
            SceneObject {
                id,
                row: cell / cfg.grid,
                col: cell % cfg.grid,
                dx,
                dy,
                color,
                shape,
                size,
                material,
            }
        })
        .collect();
    Ok(Scene {
        seed,
        grid: cfg.grid,
        objects,
    })
}

impl Scene {
    /// Ids of objects strictly in direction `dir` of object `reference`.
    pub fn related(&self, reference: usize, dir: crate::vocab::Direction) -> Vec<usize> {
        let r = self.objects[reference].cell();
        self.objects.iter().filter(|o| dir.holds(o.cell(), r)).map(|o| o.id).collect()
    }

    pub fn satisfies(&self, condition: Condition) -> bool {
        self.objects.iter().all(|o| condition.allows(o.shape, o.color))
    }
}


#[cfg(test)]
mod tests;
