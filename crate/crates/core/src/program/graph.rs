use std::collections::HashMap;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, FormatError, ModuleError};
use crate::tensor::Tensor;
use crate::zoo::{
    run_and, run_attention, run_classifier, run_compare, run_or, run_query, run_relate, run_same,
    run_stem, BankId, BankRegistry, ModuleCtx, ValueKind,
};

use super::{CheckedProgram, ProgramNode, Token};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphNode {
    pub token: Token,
    /// Indices of earlier nodes.
    pub inputs: Vec<usize>,
    pub bank: Option<BankId>,
    pub kind: ValueKind,
}

/// Module invocations of one or more programs in topological order.
/// Identical subprograms share a node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProgramGraph {
    pub nodes: Vec<GraphNode>,
    /// Final node of each program; each feeds the classifier.
    pub roots: Vec<usize>,
    /// For each program, the graph node of every tree node in pre-order.
    pub node_maps: Vec<Vec<usize>>,
}

impl ProgramGraph {
    /// Distinct learned-mask nodes (Attention, Relate, Same) used by program `p`.
    pub fn learned_mask_nodes(&self, p: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.node_maps[p]
            .iter()
            .copied()
            .filter(|&i| self.nodes[i].token.module().is_some_and(|m| m.emits_learned_mask()))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn num_programs(&self) -> usize {
        self.roots.len()
    }
}

enum Banks<'r> {
    Create(&'r mut BankRegistry),
    Lookup(&'r BankRegistry),
}

struct Builder<'r> {
    registry: Banks<'r>,
    missing: Option<String>,
    nodes: Vec<GraphNode>,
    index: HashMap<(Token, Vec<usize>), usize>,
}

impl Builder<'_> {
    fn add(&mut self, n: &ProgramNode, map: &mut Vec<usize>) -> usize {
        let slot = map.len();
        map.push(usize::MAX);
        let inputs: Vec<usize> = n.children.iter().map(|c| self.add(c, map)).collect();
        let key = (n.token, inputs);
        let id = match self.index.get(&key) {
            Some(&id) => id,
            None => {
                let bank = if n.token.has_bank() {
                    let kind = n.token.module().expect("banked tokens have modules");
                    let name = n.token.to_string();
                    match &mut self.registry {
                        Banks::Create(r) => Some(r.get_or_create(&name, kind)),
                        Banks::Lookup(r) => {
                            let found = r.lookup(&name);
                            if found.is_none() && self.missing.is_none() {
                                self.missing = Some(name);
                            }
                            found
                        }
                    }
                } else {
                    None
                };
                let id = self.nodes.len();
                self.nodes.push(GraphNode {
                    token: n.token,
                    inputs: key.1.clone(),
                    bank,
                    kind: n.token.output(),
                });
                self.index.insert(key, id);
                id
            }
        };
        map[slot] = id;
        id
    }
}

/// Compiles several checked programs into one graph over `registry`,
/// creating banks for tokens seen for the first time.
pub fn assemble_many<'a>(
    programs: impl IntoIterator<Item = &'a CheckedProgram>,
    registry: &mut BankRegistry,
) -> ProgramGraph {
    build(programs, Banks::Create(registry)).0
}

/// Like [`assemble_many`] but never creates banks; fails on a token the
/// registry has not seen.
pub fn assemble_frozen<'a>(
    programs: impl IntoIterator<Item = &'a CheckedProgram>,
    registry: &BankRegistry,
) -> Result<ProgramGraph, Error> {
    match build(programs, Banks::Lookup(registry)) {
        (g, None) => Ok(g),
        (_, Some(token)) => Err(FormatError::Incompatible(format!("no parameter bank for `{token}`")).into()),
    }
}

fn build<'a>(programs: impl IntoIterator<Item = &'a CheckedProgram>, registry: Banks) -> (ProgramGraph, Option<String>) {
    let mut b = Builder {
        registry,
        missing: None,
        nodes: Vec::new(),
        index: HashMap::new(),
    };
    let mut roots = Vec::new();
    let mut node_maps = Vec::new();
    for p in programs {
        let mut map = Vec::new();
        roots.push(b.add(p.root(), &mut map));
        node_maps.push(map);
    }
    let graph = ProgramGraph {
        nodes: b.nodes,
        roots,
        node_maps,
    };
    (graph, b.missing)
}

pub fn assemble(program: &CheckedProgram, registry: &mut BankRegistry) -> ProgramGraph {
    assemble_many([program], registry)
}

/// Values produced while running a graph on one image.
#[derive(Clone, Debug)]
pub struct Execution {
    pub image: Var,
    pub stem: Var,
    /// Output of every graph node.
    pub values: Vec<Var>,
    /// Classifier logits per program.
    pub logits: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    /// Graph node, or `None` for the stem and classifier.
    pub node: Option<usize>,
    pub token: String,
    pub kind: ValueKind,
    pub value: Tensor,
}

impl Execution {
    /// Stem output, every node output and the logits, in evaluation order.
    pub fn trace(&self, graph: &ProgramGraph, tape: &Tape) -> Vec<TraceEntry> {
        let mut out = vec![TraceEntry {
            node: None,
            token: "stem".into(),
            kind: ValueKind::Stem,
            value: tape.value(self.stem).clone(),
        }];
        for (i, (n, v)) in graph.nodes.iter().zip(&self.values).enumerate() {
            out.push(TraceEntry {
                node: Some(i),
                token: n.token.to_string(),
                kind: n.kind,
                value: tape.value(*v).clone(),
            });
        }
        for l in &self.logits {
            out.push(TraceEntry {
                node: None,
                token: "classifier".into(),
                kind: ValueKind::Logits,
                value: tape.value(*l).clone(),
            });
        }
        out
    }
}

/// Runs every node of `graph` on `image`, computing the stem once.
pub fn execute(graph: &ProgramGraph, registry: &BankRegistry, tape: &mut Tape, image: Var) -> Result<Execution, Error> {
    let stem = run_stem(tape, ModuleCtx::new(registry, registry.stem()), image)?;
    let (_, rows, cols) = tape.value(stem).chw()?;
    let mut values: Vec<Var> = Vec::with_capacity(graph.nodes.len());
    let mut ones = None;
    for (id, n) in graph.nodes.iter().enumerate() {
        let arg = |k: usize| values[n.inputs[k]];
        let ctx = || ModuleCtx::new(registry, n.bank.expect("banked node"));
        let out: Result<Var, ModuleError> = match n.token {
            Token::Scene => {
                Ok(*ones.get_or_insert_with(|| tape.constant(Tensor::ones(&[1, rows, cols]))))
            }
            Token::Unique => Ok(arg(0)),
            Token::And => run_and(tape, arg(0), arg(1)),
            Token::Or => run_or(tape, arg(0), arg(1)),
            Token::Attention(_) => run_attention(tape, ctx(), stem, arg(0)),
            Token::Relate(_) => run_relate(tape, ctx(), stem, arg(0)),
            Token::Same(_) => run_same(tape, ctx(), stem, arg(0)),
            Token::Query(_) => run_query(tape, ctx(), stem, arg(0)),
            Token::Compare(_) => run_compare(tape, ctx(), arg(0), arg(1)),
        };
        let v = out.map_err(|mut e| {
            e.token = format!("{} (node {id})", e.token);
            e
        })?;
        values.push(v);
    }
    let mut logits = Vec::with_capacity(graph.roots.len());
    for &r in &graph.roots {
        logits.push(run_classifier(tape, ModuleCtx::new(registry, registry.classifier()), values[r])?);
    }
    Ok(Execution {
        image,
        stem,
        values,
        logits,
    })
}
