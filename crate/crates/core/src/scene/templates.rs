//! Question templates. Each one draws a program for a given scene and is
//! rejected (to be resampled by the caller) when the scene cannot support it.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SceneError;
use crate::program::{type_check, CheckedProgram, CompareKind, ProgramNode, QueryKind, Token};
use crate::vocab::{Answer, AttrValue, Attribute, Direction};

use super::oracle::{evaluate_tree, symbolic_execute, NodeValue};
use super::Scene;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Count,
    Exist,
    CompareNumbers,
    QueryAttribute,
    CompareAttribute,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Count,
        Family::Exist,
        Family::CompareNumbers,
        Family::QueryAttribute,
        Family::CompareAttribute,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Count => "count",
            Family::Exist => "exist",
            Family::CompareNumbers => "compare-numbers",
            Family::QueryAttribute => "query-attribute",
            Family::CompareAttribute => "compare-attribute",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    CountFilter,
    CountAnd,
    CountOr,
    CountSame,
    CountRelate,
    ExistFilter,
    ExistRelate,
    ExistSame,
    QueryAttr,
    QueryAttrRelate,
    CompareInteger,
    CompareAttr,
}

pub const TEMPLATES: [Template; 12] = [
    Template::CountFilter,
    Template::CountAnd,
    Template::CountOr,
    Template::CountSame,
    Template::CountRelate,
    Template::ExistFilter,
    Template::ExistRelate,
    Template::ExistSame,
    Template::QueryAttr,
    Template::QueryAttrRelate,
    Template::CompareInteger,
    Template::CompareAttr,
];

impl Template {
    pub fn family(self) -> Family {
        use Template::*;
        match self {
            CountFilter | CountAnd | CountOr | CountSame | CountRelate => Family::Count,
            ExistFilter | ExistRelate | ExistSame => Family::Exist,
            QueryAttr | QueryAttrRelate => Family::QueryAttribute,
            CompareInteger => Family::CompareNumbers,
            CompareAttr => Family::CompareAttribute,
        }
    }

    pub fn name(self) -> &'static str {
        use Template::*;
        match self {
            CountFilter => "count_filter",
            CountAnd => "count_and",
            CountOr => "count_or",
            CountSame => "count_same",
            CountRelate => "count_relate",
            ExistFilter => "exist_filter",
            ExistRelate => "exist_relate",
            ExistSame => "exist_same",
            QueryAttr => "query_attr",
            QueryAttrRelate => "query_attr_relate",
            CompareInteger => "compare_integer",
            CompareAttr => "compare_attr",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        TEMPLATES.into_iter().find(|t| t.name() == s)
    }
}

/// A generated question before it is tied to a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Question {
    pub template: Template,
    pub program: CheckedProgram,
    pub text: String,
    pub answer: Answer,
    /// Object ids of every set-valued node, in pre-order.
    pub truth_sets: Vec<Option<Vec<usize>>>,
}

/// A noun phrase under construction: filters over some base set.
struct Phrase {
    node: ProgramNode,
    words: Vec<&'static str>,
}

fn filtered(base: ProgramNode, values: &[AttrValue]) -> Phrase {
    let mut node = base;
    for &v in values {
        node = ProgramNode::unary(Token::Attention(v), node);
    }
    Phrase {
        node,
        words: values.iter().map(|v| v.name()).collect(),
    }
}

impl Phrase {
    fn text(&self) -> String {
        if self.words.is_empty() {
            "objects".into()
        } else {
            format!("{} things", self.words.join(" "))
        }
    }
}

/// Filters that single out `target` among `pool`, never using `exclude`.
fn describe(
    rng: &mut ChaCha8Rng,
    scene: &Scene,
    target: usize,
    pool: &[usize],
    exclude: Option<Attribute>,
) -> Option<Vec<AttrValue>> {
    let mut attrs: Vec<Attribute> = Attribute::ALL.into_iter().filter(|a| Some(*a) != exclude).collect();
    attrs.shuffle(rng);
    let t = &scene.objects[target];
    let mut left: Vec<usize> = pool.to_vec();
    let mut out = Vec::new();
    for a in attrs {
        if left.len() == 1 {
            break;
        }
        let v = t.value(a);
        let next: Vec<usize> = left.iter().copied().filter(|&i| scene.objects[i].has(v)).collect();
        if next.len() < left.len() {
            out.push(v);
            left = next;
        }
    }
    // With nothing to distinguish, still name the object once.
    if out.is_empty() {
        let a = Attribute::ALL.into_iter().filter(|a| Some(*a) != exclude).nth(rng.random_range(0..3))?;
        out.push(t.value(a));
    }
    (left == [target]).then_some(out)
}

/// One or two filter values, usually taken from an object in the scene.
fn random_filters(rng: &mut ChaCha8Rng, scene: &Scene) -> Vec<AttrValue> {
    let k = rng.random_range(1..=2);
    let mut attrs = Attribute::ALL.to_vec();
    attrs.shuffle(rng);
    let source = (rng.random_bool(0.75)).then(|| &scene.objects[rng.random_range(0..scene.objects.len())]);
    let mut out: Vec<AttrValue> = attrs[..k]
        .iter()
        .map(|&a| match source {
            Some(o) => o.value(a),
            None => AttrValue::new(a, rng.random_range(0..a.values().len())),
        })
        .collect();
    out.sort();
    out
}

fn scene_node() -> ProgramNode {
    ProgramNode::scene()
}

fn unique_of(scene: &Scene, rng: &mut ChaCha8Rng, target: usize, exclude: Option<Attribute>) -> Option<Phrase> {
    let all: Vec<usize> = (0..scene.objects.len()).collect();
    let values = describe(rng, scene, target, &all, exclude)?;
    let mut p = filtered(scene_node(), &values);
    p.node = ProgramNode::unary(Token::Unique, p.node);
    Some(p)
}

fn pick_attr(rng: &mut ChaCha8Rng) -> Attribute {
    Attribute::ALL[rng.random_range(0..4)]
}

fn draw(template: Template, scene: &Scene, rng: &mut ChaCha8Rng) -> Option<(ProgramNode, String)> {
    use Template::*;
    let n = scene.objects.len();
    let q = |k: QueryKind, child: ProgramNode| ProgramNode::unary(Token::Query(k), child);
    Some(match template {
        CountFilter => {
            let p = filtered(scene_node(), &random_filters(rng, scene));
            let text = format!("How many {} are there?", p.text());
            (q(QueryKind::Count, p.node), text)
        }
        CountAnd | CountOr => {
            let a = filtered(scene_node(), &random_filters(rng, scene));
            let b = filtered(scene_node(), &random_filters(rng, scene));
            if a.node == b.node {
                return None;
            }
            let (tok, word) = if template == CountAnd { (Token::And, "and also") } else { (Token::Or, "or") };
            let text = format!("How many things are {} {word} {}?", a.text(), b.text());
            (q(QueryKind::Count, ProgramNode::binary(tok, a.node, b.node)), text)
        }
        CountSame | ExistSame => {
            let attr = pick_attr(rng);
            let target = rng.random_range(0..n);
            let r = unique_of(scene, rng, target, Some(attr))?;
            let same = ProgramNode::unary(Token::Same(attr), r.node.clone());
            if template == CountSame {
                let text = format!("How many other things have the same {} as the {}?", attr.name(), r.text());
                (q(QueryKind::Count, same), text)
            } else {
                let text = format!("Is there anything else with the same {} as the {}?", attr.name(), r.text());
                (q(QueryKind::Exist, same), text)
            }
        }
        CountRelate | ExistRelate => {
            let dir = Direction::ALL[rng.random_range(0..4)];
            let target = rng.random_range(0..n);
            let r = unique_of(scene, rng, target, None)?;
            let related = ProgramNode::unary(Token::Relate(dir), r.node.clone());
            let values = if rng.random_bool(0.5) { random_filters(rng, scene) } else { Vec::new() };
            let p = filtered(related, &values);
            let (kind, lead) = if template == CountRelate {
                (QueryKind::Count, "How many")
            } else {
                (QueryKind::Exist, "Are there any")
            };
            let text = format!("{lead} {} are {} of the {}?", p.text(), dir.name(), r.text());
            (q(kind, p.node), text)
        }
        ExistFilter => {
            let p = filtered(scene_node(), &random_filters(rng, scene));
            let text = format!("Are there any {}?", p.text());
            (q(QueryKind::Exist, p.node), text)
        }
        QueryAttr => {
            let attr = pick_attr(rng);
            let target = rng.random_range(0..n);
            let r = unique_of(scene, rng, target, Some(attr))?;
            let text = format!("What is the {} of the {}?", attr.name(), r.text());
            (q(QueryKind::Attr(attr), r.node), text)
        }
        QueryAttrRelate => {
            let attr = pick_attr(rng);
            let dir = Direction::ALL[rng.random_range(0..4)];
            let target = rng.random_range(0..n);
            let r = unique_of(scene, rng, target, None)?;
            let pool = scene.related(scene_ref(scene, &r.node)?, dir);
            let &picked = pool.get(rng.random_range(0..pool.len().max(1)))?;
            let values = describe(rng, scene, picked, &pool, Some(attr))?;
            let mut p = filtered(ProgramNode::unary(Token::Relate(dir), r.node.clone()), &values);
            p.node = ProgramNode::unary(Token::Unique, p.node);
            let text = format!("What is the {} of the {} {} of the {}?", attr.name(), p.text(), dir.name(), r.text());
            (q(QueryKind::Attr(attr), p.node), text)
        }
        CompareInteger => {
            let a = filtered(scene_node(), &random_filters(rng, scene));
            let b = filtered(scene_node(), &random_filters(rng, scene));
            if a.node == b.node {
                return None;
            }
            let (kind, word) = [
                (CompareKind::IntegerEqual, "the same number of"),
                (CompareKind::Greater, "more"),
                (CompareKind::Less, "fewer"),
            ][rng.random_range(0..3)];
            let text = format!("Are there {word} {} than {}?", a.text(), b.text());
            let node = ProgramNode::binary(
                Token::Compare(kind),
                q(QueryKind::Count, a.node),
                q(QueryKind::Count, b.node),
            );
            (node, text)
        }
        CompareAttr => {
            if n < 2 {
                return None;
            }
            let attr = pick_attr(rng);
            let i = rng.random_range(0..n);
            let j = (i + rng.random_range(1..n)) % n;
            let a = unique_of(scene, rng, i, Some(attr))?;
            let b = unique_of(scene, rng, j, Some(attr))?;
            let text = format!("Does the {} have the same {} as the {}?", a.text(), attr.name(), b.text());
            let node = ProgramNode::binary(
                Token::Compare(CompareKind::Attr(attr)),
                q(QueryKind::Attr(attr), a.node),
                q(QueryKind::Attr(attr), b.node),
            );
            (node, text)
        }
    })
}

/// The single object a `unique(...)` phrase refers to.
fn scene_ref(scene: &Scene, node: &ProgramNode) -> Option<usize> {
    let set = evaluate_tree(node, scene).objects()?;
    (set.count_ones() == 1).then(|| set.trailing_zeros() as usize)
}

/// Draws a question from `template` on `scene`. Deterministic in `seed`.
pub fn generate_question(scene: &Scene, template: Template, seed: u64) -> Result<Question, SceneError> {
    let reject = || SceneError::Uninstantiable {
        template: template.name().to_string(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (node, text) = draw(template, scene, &mut rng).ok_or_else(reject)?;
    let program = type_check(&node).map_err(|e| SceneError::Execution {
        token: e.token.clone(),
        reason: e.to_string(),
    })?;
    let run = symbolic_execute(&program, scene);
    let answer = run.answer.ok_or_else(reject)?;
    answer.label().ok_or_else(reject)?;
    // Every unique node must hold a singleton; undefined nodes anywhere reject.
    for ((_, n), v) in program.root().preorder().iter().zip(&run.nodes) {
        let ok = match (n.token, v) {
            (Token::Unique, NodeValue::Objects(Some(s))) => s.count_ones() == 1,
            (_, NodeValue::Objects(s)) => s.is_some(),
            (_, NodeValue::Encoding(e)) => e.is_some(),
        };
        if !ok {
            return Err(reject());
        }
    }
    Ok(Question {
        template,
        truth_sets: run.truth_sets(),
        program,
        text,
        answer,
    })
}
