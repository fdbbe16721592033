use crate::program::{CheckedProgram, CompareKind, ProgramNode, QueryKind, Token};
use crate::vocab::{Answer, AttrValue};

use super::Scene;

/// Set of object ids as a bitmask (scenes hold at most 16 objects).
pub type ObjSet = u32;

/// Content of an encoding, as far as the symbolic executor is concerned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Enc {
    Value(AttrValue),
    Count(usize),
    Bool(bool),
}

impl Enc {
    pub fn answer(self) -> Answer {
        match self {
            Enc::Value(v) => Answer::Value(v),
            Enc::Count(n) => Answer::Count(n),
            Enc::Bool(b) => Answer::from_bool(b),
        }
    }
}

/// Value of one program node; `None` marks an undefined result, such as
/// `unique` over a set that is not a singleton.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeValue {
    Objects(Option<ObjSet>),
    Encoding(Option<Enc>),
}

impl NodeValue {
    pub fn objects(self) -> Option<ObjSet> {
        match self {
            NodeValue::Objects(s) => s,
            NodeValue::Encoding(_) => None,
        }
    }

    pub fn encoding(self) -> Option<Enc> {
        match self {
            NodeValue::Encoding(e) => e,
            NodeValue::Objects(_) => None,
        }
    }
}

fn singleton(s: ObjSet) -> Option<usize> {
    (s.count_ones() == 1).then(|| s.trailing_zeros() as usize)
}

fn set_of(ids: impl IntoIterator<Item = usize>) -> ObjSet {
    ids.into_iter().fold(0, |acc, i| acc | (1 << i))
}

/// Applies one token to already-evaluated children.
pub fn apply_token(token: Token, children: &[NodeValue], scene: &Scene) -> NodeValue {
    let obj = |k: usize| children[k].objects();
    let enc = |k: usize| children[k].encoding();
    match token {
        Token::Scene => NodeValue::Objects(Some(set_of(0..scene.objects.len()))),
        Token::Unique => NodeValue::Objects(obj(0).filter(|s| s.count_ones() == 1)),
        Token::And => NodeValue::Objects(obj(0).zip(obj(1)).map(|(a, b)| a & b)),
        Token::Or => NodeValue::Objects(obj(0).zip(obj(1)).map(|(a, b)| a | b)),
        Token::Attention(v) => NodeValue::Objects(
            obj(0).map(|s| s & set_of(scene.objects.iter().filter(|o| o.has(v)).map(|o| o.id))),
        ),
        Token::Relate(dir) => NodeValue::Objects(
            obj(0).and_then(singleton).map(|r| set_of(scene.related(r, dir))),
        ),
        Token::Same(attr) => NodeValue::Objects(obj(0).and_then(singleton).map(|r| {
            let want = scene.objects[r].value(attr);
            set_of(scene.objects.iter().filter(|o| o.id != r && o.has(want)).map(|o| o.id))
        })),
        Token::Query(q) => NodeValue::Encoding(obj(0).and_then(|s| match q {
            QueryKind::Exist => Some(Enc::Bool(s != 0)),
            QueryKind::Count => Some(Enc::Count(s.count_ones() as usize)),
            QueryKind::Attr(a) => singleton(s).map(|i| Enc::Value(scene.objects[i].value(a))),
        })),
        Token::Compare(c) => NodeValue::Encoding(enc(0).zip(enc(1)).and_then(|(x, y)| match (c, x, y) {
            (CompareKind::Attr(a), Enc::Value(u), Enc::Value(v)) if u.attr == a && v.attr == a => {
                Some(Enc::Bool(u == v))
            }
            (CompareKind::IntegerEqual, Enc::Count(m), Enc::Count(n)) => Some(Enc::Bool(m == n)),
            (CompareKind::Greater, Enc::Count(m), Enc::Count(n)) => Some(Enc::Bool(m > n)),
            (CompareKind::Less, Enc::Count(m), Enc::Count(n)) => Some(Enc::Bool(m < n)),
            _ => None,
        })),
    }
}

/// Result of running a program symbolically on a scene.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolicRun {
    /// `None` when the program is undefined on the scene.
    pub answer: Option<Answer>,
    /// Every node's value in pre-order.
    pub nodes: Vec<NodeValue>,
}

impl SymbolicRun {
    /// Object ids of every attention-kind node in pre-order (`None` for
    /// encodings and undefined nodes).
    pub fn truth_sets(&self) -> Vec<Option<Vec<usize>>> {
        self.nodes
            .iter()
            .map(|v| {
                v.objects()
                    .map(|s| (0..32).filter(|i| s & (1 << i) != 0).collect())
            })
            .collect()
    }
}

fn walk(n: &ProgramNode, scene: &Scene, out: &mut Vec<NodeValue>) -> NodeValue {
    let slot = out.len();
    out.push(NodeValue::Objects(None));
    let children: Vec<NodeValue> = n.children.iter().map(|c| walk(c, scene, out)).collect();
    let v = apply_token(n.token, &children, scene);
    out[slot] = v;
    v
}

/// Value of an unchecked subtree, e.g. a set-valued phrase.
pub fn evaluate_tree(node: &ProgramNode, scene: &Scene) -> NodeValue {
    walk(node, scene, &mut Vec::new())
}

pub fn symbolic_execute(program: &CheckedProgram, scene: &Scene) -> SymbolicRun {
    let mut nodes = Vec::new();
    let root = walk(program.root(), scene, &mut nodes);
    SymbolicRun {
        answer: root.encoding().map(Enc::answer),
        nodes,
    }
}
