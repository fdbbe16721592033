//! A second evaluator written directly from the set definitions: sets are
//! membership vectors, values are compared by name, and relations are read
//! straight off grid coordinates. It shares no evaluation code with the
//! symbolic executor and exists to cross-check it.

use crate::program::{CheckedProgram, CompareKind, ProgramNode, QueryKind, Token};
use crate::vocab::{Attribute, Direction, COLORS, MATERIALS, SHAPES, SIZES};

use super::{Scene, SceneObject};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum BruteValue {
    Undefined,
    /// `members[i]` is true when object `i` belongs to the set.
    Members(Vec<bool>),
    /// Attribute name and value name of a queried property.
    Property(&'static str, &'static str),
    Number(usize),
    Truth(bool),
}

impl BruteValue {
    /// Answer text in the same spelling as the answer vocabulary.
    pub fn answer_text(&self) -> Option<String> {
        match self {
            BruteValue::Property(_, v) => Some(v.to_string()),
            BruteValue::Number(n) => Some(n.to_string()),
            BruteValue::Truth(true) => Some("yes".into()),
            BruteValue::Truth(false) => Some("no".into()),
            _ => None,
        }
    }

    pub fn member_ids(&self) -> Option<Vec<usize>> {
        match self {
            BruteValue::Members(m) => Some(m.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()),
            _ => None,
        }
    }
}

fn property(o: &SceneObject, attr: Attribute) -> (&'static str, &'static str) {
    match attr {
        Attribute::Color => ("color", COLORS[o.color]),
        Attribute::Shape => ("shape", SHAPES[o.shape]),
        Attribute::Size => ("size", SIZES[o.size]),
        Attribute::Material => ("material", MATERIALS[o.material]),
    }
}

/// The only member of a set, if it has exactly one.
fn the_member(m: &[bool]) -> Option<usize> {
    let ids: Vec<usize> = (0..m.len()).filter(|&i| m[i]).collect();
    match ids[..] {
        [only] => Some(only),
        _ => None,
    }
}

fn beyond(dir: Direction, o: &SceneObject, r: &SceneObject) -> bool {
    match dir {
        Direction::Right => o.col > r.col,
        Direction::Left => o.col < r.col,
        Direction::Front => o.row > r.row,
        Direction::Behind => o.row < r.row,
    }
}

/// Applies one token to evaluated children.
pub fn brute_term(token: Token, children: &[&BruteValue], scene: &Scene) -> BruteValue {
    use BruteValue::*;
    let objs = &scene.objects;
    let members = |k: usize| match children[k] {
        Members(m) => Some(m),
        _ => None,
    };
    match token {
        Token::Scene => Members(vec![true; objs.len()]),
        Token::Unique => match members(0) {
            Some(m) if the_member(m).is_some() => Members(m.clone()),
            _ => Undefined,
        },
        Token::And | Token::Or => match (members(0), members(1)) {
            (Some(a), Some(b)) => Members(
                (0..objs.len())
                    .map(|i| if token == Token::And { a[i] && b[i] } else { a[i] || b[i] })
                    .collect(),
            ),
            _ => Undefined,
        },
        Token::Attention(v) => match members(0) {
            Some(m) => Members(
                objs.iter()
                    .enumerate()
                    .map(|(i, o)| m[i] && property(o, v.attr).1 == v.name())
                    .collect(),
            ),
            None => Undefined,
        },
        Token::Relate(dir) => match members(0).and_then(|m| the_member(m)) {
            Some(r) => Members(objs.iter().map(|o| beyond(dir, o, &objs[r])).collect()),
            None => Undefined,
        },
        Token::Same(attr) => match members(0).and_then(|m| the_member(m)) {
            Some(r) => Members(
                objs.iter()
                    .enumerate()
                    .map(|(i, o)| i != r && property(o, attr) == property(&objs[r], attr))
                    .collect(),
            ),
            None => Undefined,
        },
        Token::Query(q) => match (q, members(0)) {
            (_, None) => Undefined,
            (QueryKind::Exist, Some(m)) => Truth(m.iter().any(|&b| b)),
            (QueryKind::Count, Some(m)) => Number(m.iter().filter(|&&b| b).count()),
            (QueryKind::Attr(a), Some(m)) => match the_member(m) {
                Some(i) => {
                    let (attr, value) = property(&objs[i], a);
                    Property(attr, value)
                }
                None => Undefined,
            },
        },
        Token::Compare(c) => match (c, children[0], children[1]) {
            (CompareKind::Attr(a), Property(ka, va), Property(kb, vb)) if *ka == a.name() && *kb == a.name() => {
                Truth(va == vb)
            }
            (CompareKind::IntegerEqual, Number(x), Number(y)) => Truth(x == y),
            (CompareKind::Greater, Number(x), Number(y)) => Truth(x > y),
            (CompareKind::Less, Number(x), Number(y)) => Truth(x < y),
            _ => Undefined,
        },
    }
}

fn eval(n: &ProgramNode, scene: &Scene, out: &mut Vec<BruteValue>) -> BruteValue {
    let slot = out.len();
    out.push(BruteValue::Undefined);
    let children: Vec<BruteValue> = n.children.iter().map(|c| eval(c, scene, out)).collect();
    let refs: Vec<&BruteValue> = children.iter().collect();
    let v = brute_term(n.token, &refs, scene);
    out[slot] = v.clone();
    v
}

/// Root value and every node's value in pre-order.
pub fn brute_execute(program: &CheckedProgram, scene: &Scene) -> (BruteValue, Vec<BruteValue>) {
    let mut nodes = Vec::new();
    let root = eval(program.root(), scene, &mut nodes);
    (root, nodes)
}
