//! Functional reasoning programs: syntax, typing and compilation to module graphs.
//!
//! ```text
//! call  := token '(' call (',' call)* ')' | 'scene'
//! token := name | name '[' arg ']'
//! ```
//!
//! For example `query_color(unique(attention[cube](scene)))`.

mod enumerate;
mod graph;
mod parse;

pub use enumerate::{enumerate_programs, random_program, ProgramSpace};
pub use graph::{assemble, assemble_frozen, assemble_many, execute, Execution, GraphNode, ProgramGraph, TraceEntry};
pub use parse::parse_program;

use std::fmt;

use crate::error::TypeError;
use crate::vocab::{AttrValue, Attribute, Direction};
use crate::zoo::{ModuleKind, ValueKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QueryKind {
    Attr(Attribute),
    Exist,
    Count,
}

impl QueryKind {
    pub const ALL: [QueryKind; 6] = [
        QueryKind::Attr(Attribute::Color),
        QueryKind::Attr(Attribute::Shape),
        QueryKind::Attr(Attribute::Size),
        QueryKind::Attr(Attribute::Material),
        QueryKind::Exist,
        QueryKind::Count,
    ];

    fn suffix(self) -> &'static str {
        match self {
            QueryKind::Attr(a) => a.name(),
            QueryKind::Exist => "exist",
            QueryKind::Count => "count",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CompareKind {
    Attr(Attribute),
    IntegerEqual,
    Greater,
    Less,
}

impl CompareKind {
    pub const ALL: [CompareKind; 7] = [
        CompareKind::Attr(Attribute::Color),
        CompareKind::Attr(Attribute::Shape),
        CompareKind::Attr(Attribute::Size),
        CompareKind::Attr(Attribute::Material),
        CompareKind::IntegerEqual,
        CompareKind::Greater,
        CompareKind::Less,
    ];

    fn suffix(self) -> &'static str {
        match self {
            CompareKind::Attr(a) => a.name(),
            CompareKind::IntegerEqual => "integer-equal",
            CompareKind::Greater => "greater",
            CompareKind::Less => "less",
        }
    }
}

/// One program token. The inventory is closed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Token {
    Scene,
    Unique,
    And,
    Or,
    Attention(AttrValue),
    Relate(Direction),
    Same(Attribute),
    Query(QueryKind),
    Compare(CompareKind),
}

impl Token {
    /// Every token, in a fixed order.
    pub fn inventory() -> Vec<Token> {
        let mut out = vec![Token::Scene, Token::Unique, Token::And, Token::Or];
        out.extend(AttrValue::all().map(Token::Attention));
        out.extend(Direction::ALL.map(Token::Relate));
        out.extend(Attribute::ALL.map(Token::Same));
        out.extend(QueryKind::ALL.map(Token::Query));
        out.extend(CompareKind::ALL.map(Token::Compare));
        out
    }

    pub fn arity(self) -> usize {
        match self {
            Token::Scene => 0,
            Token::And | Token::Or | Token::Compare(_) => 2,
            _ => 1,
        }
    }

    pub fn output(self) -> ValueKind {
        match self {
            Token::Query(_) | Token::Compare(_) => ValueKind::Encoding,
            _ => ValueKind::Attention,
        }
    }

    /// Expected kind of every child.
    pub fn inputs(self) -> &'static [ValueKind] {
        use ValueKind::*;
        match self {
            Token::Scene => &[],
            Token::Compare(_) => &[Encoding, Encoding],
            Token::And | Token::Or => &[Attention, Attention],
            _ => &[Attention],
        }
    }

    /// Module realizing this token; `scene` and `unique` need none.
    pub fn module(self) -> Option<ModuleKind> {
        match self {
            Token::Scene | Token::Unique => None,
            Token::And => Some(ModuleKind::And),
            Token::Or => Some(ModuleKind::Or),
            Token::Attention(_) => Some(ModuleKind::Attention),
            Token::Relate(_) => Some(ModuleKind::Relate),
            Token::Same(_) => Some(ModuleKind::Same),
            Token::Query(_) => Some(ModuleKind::Query),
            Token::Compare(_) => Some(ModuleKind::Compare),
        }
    }

    /// Whether this token owns a parameter bank.
    pub fn has_bank(self) -> bool {
        self.module().is_some_and(ModuleKind::has_parameters)
    }

    pub fn from_parts(name: &str, arg: Option<&str>) -> Option<Token> {
        let tok = match (name, arg) {
            ("scene", None) => Token::Scene,
            ("unique", None) => Token::Unique,
            ("and", None) => Token::And,
            ("or", None) => Token::Or,
            ("attention", Some(a)) => Token::Attention(AttrValue::from_name(a)?),
            ("relate", Some(a)) => Token::Relate(Direction::from_name(a)?),
            ("same", Some(a)) => Token::Same(Attribute::from_name(a)?),
            (n, None) => {
                if let Some(s) = n.strip_prefix("query_") {
                    Token::Query(*QueryKind::ALL.iter().find(|q| q.suffix() == s)?)
                } else {
                    let s = n.strip_prefix("compare_")?;
                    Token::Compare(*CompareKind::ALL.iter().find(|c| c.suffix() == s)?)
                }
            }
            _ => return None,
        };
        Some(tok)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Scene => f.write_str("scene"),
            Token::Unique => f.write_str("unique"),
            Token::And => f.write_str("and"),
            Token::Or => f.write_str("or"),
            Token::Attention(v) => write!(f, "attention[{}]", v.name()),
            Token::Relate(d) => write!(f, "relate[{}]", d.name()),
            Token::Same(a) => write!(f, "same[{}]", a.name()),
            Token::Query(q) => write!(f, "query_{}", q.suffix()),
            Token::Compare(c) => write!(f, "compare_{}", c.suffix()),
        }
    }
}

/// A parsed program tree. Arity always matches the token.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ProgramNode {
    pub token: Token,
    pub children: Vec<ProgramNode>,
}

impl ProgramNode {
    pub fn new(token: Token, children: Vec<ProgramNode>) -> Self {
        assert_eq!(children.len(), token.arity(), "arity of {token}");
        Self { token, children }
    }

    pub fn scene() -> Self {
        Self::new(Token::Scene, Vec::new())
    }

    pub fn unary(token: Token, child: ProgramNode) -> Self {
        Self::new(token, vec![child])
    }

    pub fn binary(token: Token, a: ProgramNode, b: ProgramNode) -> Self {
        Self::new(token, vec![a, b])
    }

    /// Longest root-to-leaf path, counted in nodes.
    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(ProgramNode::depth).max().unwrap_or(0)
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(ProgramNode::size).sum::<usize>()
    }

    /// Nodes in pre-order with their child-index paths from the root.
    pub fn preorder(&self) -> Vec<(Vec<usize>, &ProgramNode)> {
        fn walk<'a>(n: &'a ProgramNode, path: &mut Vec<usize>, out: &mut Vec<(Vec<usize>, &'a ProgramNode)>) {
            out.push((path.clone(), n));
            for (i, c) in n.children.iter().enumerate() {
                path.push(i);
                walk(c, path, out);
                path.pop();
            }
        }
        let mut out = Vec::new();
        walk(self, &mut Vec::new(), &mut out);
        out
    }
}

/// Canonical serialization: no whitespace except one space after each comma.
impl fmt::Display for ProgramNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.token)?;
        if self.children.is_empty() {
            return Ok(());
        }
        f.write_str("(")?;
        for (i, c) in self.children.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str(")")
    }
}

/// A program whose every node has been checked against module signatures
/// and whose root yields an encoding.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CheckedProgram {
    root: ProgramNode,
}

impl CheckedProgram {
    pub fn root(&self) -> &ProgramNode {
        &self.root
    }

    pub fn into_root(self) -> ProgramNode {
        self.root
    }

    /// Output kind of every node in pre-order.
    pub fn kinds(&self) -> Vec<ValueKind> {
        self.root.preorder().into_iter().map(|(_, n)| n.token.output()).collect()
    }
}

impl fmt::Display for CheckedProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

pub fn type_check(tree: &ProgramNode) -> Result<CheckedProgram, TypeError> {
    fn check(n: &ProgramNode, path: &mut Vec<usize>) -> Result<ValueKind, TypeError> {
        let expected = n.token.inputs();
        for (i, (child, want)) in n.children.iter().zip(expected).enumerate() {
            path.push(i);
            let got = check(child, path)?;
            path.pop();
            if got != *want {
                return Err(TypeError {
                    token: n.token.to_string(),
                    path: path.clone(),
                    message: format!("argument {} is {got:?}, expected {want:?}", i + 1),
                });
            }
        }
        Ok(n.token.output())
    }
    let root_kind = check(tree, &mut Vec::new())?;
    if root_kind != ValueKind::Encoding {
        return Err(TypeError {
            token: tree.token.to_string(),
            path: Vec::new(),
            message: format!("program root yields {root_kind:?}; the classifier needs an Encoding"),
        });
    }
    Ok(CheckedProgram { root: tree.clone() })
}

/// Parses and type-checks in one step.
pub fn compile(text: &str) -> crate::Result<CheckedProgram> {
    Ok(type_check(&parse_program(text)?)?)
}
