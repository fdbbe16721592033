//! Exhaustive cross-check of the symbolic executor against the brute-force
//! evaluator on every small scene and every program up to a depth.
//!
//! Scenes are enumerated up to a renaming of attribute values: for each
//! attribute, objects receive values by a restricted growth string, so two
//! labelings that differ only by a permutation of (say) colors are visited
//! once. Both evaluators commute with such renamings (tested separately), so
//! agreement on the representatives implies agreement everywhere.
//!
//! Programs are walked as a shared term table. Both evaluators are pure in
//! (token, child values, scene), so each distinct combination is evaluated
//! once per scene; the root comparisons, which make up most of the space, are
//! tallied by value class instead of one by one.

use std::collections::HashMap;

use crate::program::{enumerate_programs, ProgramSpace, Token};
use crate::vocab::Attribute;

use super::brute::{brute_term, BruteValue};
use super::oracle::{apply_token, Enc, NodeValue};
use super::{Scene, SceneObject};

/// Restricted growth strings of length `n` using at most `blocks` blocks.
fn growth_strings(n: usize, blocks: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(n);
    fn rec(n: usize, blocks: usize, used: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for v in 0..=used.min(blocks - 1) {
            cur.push(v);
            rec(n, blocks, used.max(v + 1), cur, out);
            cur.pop();
        }
    }
    rec(n, blocks, 0, &mut cur, &mut out);
    out
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Every scene with at most `max_objects` objects on a `grid`×`grid` board,
/// one per class of attribute renamings.
pub fn enumerate_small_scenes(grid: usize, max_objects: usize) -> Vec<Scene> {
    let mut scenes = Vec::new();
    for n in 0..=max_objects.min(grid * grid) {
        let labelings: Vec<Vec<Vec<usize>>> = Attribute::ALL
            .iter()
            .map(|a| growth_strings(n, a.values().len()))
            .collect();
        for cells in combinations(grid * grid, n) {
            for c in &labelings[0] {
                for s in &labelings[1] {
                    for z in &labelings[2] {
                        for m in &labelings[3] {
                            let objects = cells
                                .iter()
                                .enumerate()
                                .map(|(id, &cell)| SceneObject {
                                    id,
                                    row: cell / grid,
                                    col: cell % grid,
                                    dx: 0.0,
                                    dy: 0.0,
                                    color: c[id],
                                    shape: s[id],
                                    size: z[id],
                                    material: m[id],
                                })
                                .collect();
                            scenes.push(Scene {
                                seed: scenes.len() as u64,
                                grid,
                                objects,
                            });
                        }
                    }
                }
            }
        }
    }
    scenes
}

/// Whether the two evaluators produced the same value.
pub(crate) fn agree(sym: NodeValue, brute: &BruteValue) -> bool {
    match (sym, brute) {
        (NodeValue::Objects(None), BruteValue::Undefined) | (NodeValue::Encoding(None), BruteValue::Undefined) => true,
        (NodeValue::Objects(Some(s)), BruteValue::Members(m)) => {
            m.len() <= 32 && (0..32).all(|i| ((s >> i) & 1 == 1) == (i < m.len() && m[i]))
        }
        (NodeValue::Encoding(Some(Enc::Bool(b))), BruteValue::Truth(t)) => b == *t,
        (NodeValue::Encoding(Some(Enc::Count(n))), BruteValue::Number(k)) => n == *k,
        (NodeValue::Encoding(Some(Enc::Value(v))), BruteValue::Property(attr, value)) => {
            v.attr.name() == *attr && v.name() == *value
        }
        _ => false,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OracleReport {
    pub scenes: usize,
    pub programs: usize,
    /// Scene-program pairs covered.
    pub cases: u64,
    pub mismatches: u64,
    /// Up to ten disagreements as (scene index, program text).
    pub examples: Vec<(usize, String)>,
}

impl OracleReport {
    pub fn agreement(&self) -> f64 {
        if self.cases == 0 {
            return 1.0;
        }
        1.0 - self.mismatches as f64 / self.cases as f64
    }
}

const NONE: u32 = u32::MAX;

/// Scene-independent layout of the term table.
struct Plan {
    space: ProgramSpace,
    /// Terms evaluated one at a time, in topological order.
    literal: Vec<usize>,
    is_program: Vec<bool>,
    /// Unreferenced comparisons grouped as (kind token, left child, right-child set).
    groups: Vec<(Token, usize, usize)>,
    right_sets: Vec<Vec<usize>>,
}

fn plan(max_depth: usize) -> Plan {
    let space = enumerate_programs(max_depth);
    let n = space.terms.len();
    let mut referenced = vec![false; n];
    for (_, ch) in &space.terms {
        for &c in ch {
            referenced[c] = true;
        }
    }
    let mut is_program = vec![false; n];
    for &p in &space.programs {
        is_program[p] = true;
    }
    let mut literal = Vec::new();
    let mut by_left: HashMap<(Token, usize), Vec<usize>> = HashMap::new();
    for (t, (tok, ch)) in space.terms.iter().enumerate() {
        if matches!(tok, Token::Compare(_)) && !referenced[t] {
            by_left.entry((*tok, ch[0])).or_default().push(ch[1]);
        } else {
            literal.push(t);
        }
    }
    let mut set_ids: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut right_sets = Vec::new();
    let mut groups: Vec<(Token, usize, usize)> = by_left
        .into_iter()
        .map(|((tok, x), mut ys)| {
            ys.sort_unstable();
            let id = *set_ids.entry(ys.clone()).or_insert_with(|| {
                right_sets.push(ys);
                right_sets.len() - 1
            });
            (tok, x, id)
        })
        .collect();
    groups.sort_unstable();
    Plan {
        space,
        literal,
        is_program,
        groups,
        right_sets,
    }
}

struct Classes {
    values: Vec<(NodeValue, BruteValue)>,
    ok: Vec<bool>,
    index: HashMap<(NodeValue, BruteValue), u32>,
}

impl Classes {
    fn new() -> Self {
        Self {
            values: Vec::new(),
            ok: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn intern(&mut self, sym: NodeValue, brute: BruteValue) -> u32 {
        if let Some(&c) = self.index.get(&(sym, brute.clone())) {
            return c;
        }
        let c = self.values.len() as u32;
        self.ok.push(agree(sym, &brute));
        self.values.push((sym, brute.clone()));
        self.index.insert((sym, brute), c);
        c
    }
}

fn evaluate(token: Token, children: &[u32], classes: &mut Classes, scene: &Scene) -> u32 {
    let sym: Vec<NodeValue> = children.iter().map(|&c| classes.values[c as usize].0).collect();
    let brute: Vec<BruteValue> = children.iter().map(|&c| classes.values[c as usize].1.clone()).collect();
    let refs: Vec<&BruteValue> = brute.iter().collect();
    let s = apply_token(token, &sym, scene);
    let b = brute_term(token, &refs, scene);
    classes.intern(s, b)
}

fn check_scene(plan: &Plan, scene: &Scene, index: usize, report: &mut OracleReport) {
    let terms = &plan.space.terms;
    let mut classes = Classes::new();
    let mut memo: HashMap<(Token, u32, u32), u32> = HashMap::new();
    let mut class_of = vec![NONE; terms.len()];
    for &t in &plan.literal {
        let (tok, ch) = &terms[t];
        let kids: Vec<u32> = ch.iter().map(|&c| class_of[c]).collect();
        let key = (*tok, kids.first().copied().unwrap_or(NONE), kids.get(1).copied().unwrap_or(NONE));
        let c = match memo.get(&key) {
            Some(&c) => c,
            None => {
                let c = evaluate(*tok, &kids, &mut classes, scene);
                memo.insert(key, c);
                c
            }
        };
        class_of[t] = c;
        if plan.is_program[t] {
            report.cases += 1;
            if !classes.ok[c as usize] {
                report.mismatches += 1;
                if report.examples.len() < 10 {
                    report.examples.push((index, plan.space.tree(t).to_string()));
                }
            }
        }
    }

    // Histogram of right-child classes per right set.
    let histograms: Vec<HashMap<u32, u64>> = plan
        .right_sets
        .iter()
        .map(|ys| {
            let mut h = HashMap::new();
            for &y in ys {
                *h.entry(class_of[y]).or_insert(0) += 1;
            }
            h
        })
        .collect();
    let mut tally: HashMap<(Token, u32, usize), u64> = HashMap::new();
    for &(tok, x, set) in &plan.groups {
        *tally.entry((tok, class_of[x], set)).or_insert(0) += 1;
    }
    let mut tally: Vec<_> = tally.into_iter().collect();
    tally.sort_unstable();
    for ((tok, cx, set), lefts) in tally {
        let mut hist: Vec<_> = histograms[set].iter().map(|(&c, &k)| (c, k)).collect();
        hist.sort_unstable();
        for (cy, rights) in hist {
            let key = (tok, cx, cy);
            let c = match memo.get(&key) {
                Some(&c) => c,
                None => {
                    let c = evaluate(tok, &[cx, cy], &mut classes, scene);
                    memo.insert(key, c);
                    c
                }
            };
            let count = lefts * rights;
            report.cases += count;
            if !classes.ok[c as usize] {
                report.mismatches += count;
                if report.examples.len() < 10 {
                    let example = plan
                        .groups
                        .iter()
                        .filter(|g| g.0 == tok && class_of[g.1] == cx && g.2 == set)
                        .find_map(|g| {
                            plan.right_sets[set].iter().find(|&&y| class_of[y] == cy).map(|&y| {
                                let tree = crate::program::ProgramNode::binary(
                                    tok,
                                    plan.space.tree(g.1),
                                    plan.space.tree(y),
                                );
                                tree.to_string()
                            })
                        });
                    report.examples.push((index, example.unwrap_or_default()));
                }
            }
        }
    }
}

/// Compares both evaluators on every program of depth at most `max_depth`
/// against every scene in `scenes`.
pub fn oracle_equivalence(max_depth: usize, scenes: &[Scene]) -> OracleReport {
    let plan = plan(max_depth);
    let mut report = OracleReport {
        scenes: scenes.len(),
        programs: plan.space.programs.len(),
        ..Default::default()
    };
    for (i, scene) in scenes.iter().enumerate() {
        check_scene(&plan, scene, i, &mut report);
    }
    report
}
