//! Closed vocabularies: object attributes, spatial directions and answers.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const COLORS: [&str; 8] = ["gray", "blue", "brown", "yellow", "red", "green", "purple", "cyan"];
pub const SHAPES: [&str; 3] = ["cube", "sphere", "cylinder"];
pub const SIZES: [&str; 2] = ["large", "small"];
pub const MATERIALS: [&str; 2] = ["metal", "rubber"];

/// Largest count the answer vocabulary can express.
pub const MAX_COUNT: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Color,
    Shape,
    Size,
    Material,
}

impl Attribute {
    pub const ALL: [Attribute; 4] = [Attribute::Color, Attribute::Shape, Attribute::Size, Attribute::Material];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Color => "color",
            Attribute::Shape => "shape",
            Attribute::Size => "size",
            Attribute::Material => "material",
        }
    }

    pub fn values(self) -> &'static [&'static str] {
        match self {
            Attribute::Color => &COLORS,
            Attribute::Shape => &SHAPES,
            Attribute::Size => &SIZES,
            Attribute::Material => &MATERIALS,
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

/// One attribute value, e.g. `red` is `(Color, 4)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttrValue {
    pub attr: Attribute,
    pub index: usize,
}

impl AttrValue {
    pub fn new(attr: Attribute, index: usize) -> Self {
        assert!(index < attr.values().len(), "{index} out of range for {}", attr.name());
        Self { attr, index }
    }

    pub fn name(self) -> &'static str {
        self.attr.values()[self.index]
    }

    /// Value names are unique across attributes, so a bare name suffices.
    pub fn from_name(s: &str) -> Option<Self> {
        Attribute::ALL.into_iter().find_map(|attr| {
            attr.values().iter().position(|v| *v == s).map(|index| Self { attr, index })
        })
    }

    /// All 15 values in attribute order.
    pub fn all() -> impl Iterator<Item = AttrValue> {
        Attribute::ALL
            .into_iter()
            .flat_map(|attr| (0..attr.values().len()).map(move |index| AttrValue { attr, index }))
    }
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Directions on the object grid: left/right follow columns, front/behind
/// follow rows (row 0 is the back).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
    Front,
    Behind,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Left, Direction::Right, Direction::Front, Direction::Behind];

    pub fn name(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Front => "front",
            Direction::Behind => "behind",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.name() == s)
    }

    /// Whether a cell at `(row, col)` lies strictly in this direction of `(ref_row, ref_col)`.
    pub fn holds(self, (row, col): (usize, usize), (ref_row, ref_col): (usize, usize)) -> bool {
        match self {
            Direction::Left => col < ref_col,
            Direction::Right => col > ref_col,
            Direction::Front => row > ref_row,
            Direction::Behind => row < ref_row,
        }
    }
}

/// Answer labels in fixed order: yes, no, counts 0..=8, then every attribute
/// value in attribute order. 26 labels in total.
pub fn answer_labels() -> Vec<String> {
    let mut out = vec!["yes".to_string(), "no".to_string()];
    out.extend((0..=MAX_COUNT).map(|n| n.to_string()));
    out.extend(AttrValue::all().map(|v| v.name().to_string()));
    out
}

pub const NUM_ANSWERS: usize = 2 + MAX_COUNT + 1 + 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Answer {
    Yes,
    No,
    Count(usize),
    Value(AttrValue),
}

impl Answer {
    pub fn from_bool(b: bool) -> Self {
        if b {
            Answer::Yes
        } else {
            Answer::No
        }
    }

    /// Position in [`answer_labels`]; `None` for counts above [`MAX_COUNT`].
    pub fn label(self) -> Option<usize> {
        match self {
            Answer::Yes => Some(0),
            Answer::No => Some(1),
            Answer::Count(n) if n <= MAX_COUNT => Some(2 + n),
            Answer::Count(_) => None,
            Answer::Value(v) => {
                let offset: usize = Attribute::ALL
                    .iter()
                    .take_while(|a| **a != v.attr)
                    .map(|a| a.values().len())
                    .sum();
                Some(2 + MAX_COUNT + 1 + offset + v.index)
            }
        }
    }

    pub fn from_label(label: usize) -> Option<Self> {
        match label {
            0 => Some(Answer::Yes),
            1 => Some(Answer::No),
            l if l < 2 + MAX_COUNT + 1 => Some(Answer::Count(l - 2)),
            l => AttrValue::all().nth(l - (2 + MAX_COUNT + 1)).map(Answer::Value),
        }
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Answer::Yes => f.write_str("yes"),
            Answer::No => f.write_str("no"),
            Answer::Count(n) => write!(f, "{n}"),
            Answer::Value(v) => f.write_str(v.name()),
        }
    }
}
