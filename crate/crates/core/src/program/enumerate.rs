use rand::seq::IndexedRandom;
use rand::Rng;

use crate::vocab::{AttrValue, Attribute, Direction};

use super::{type_check, CheckedProgram, CompareKind, ProgramNode, QueryKind, Token};

/// Every well-typed program up to a depth, stored with shared subterms.
///
/// Terms are in topological order, so any evaluator can fill a table
/// front to back.
#[derive(Clone, Debug)]
pub struct ProgramSpace {
    pub terms: Vec<(Token, Vec<usize>)>,
    /// Encoding-valued terms, i.e. complete programs.
    pub programs: Vec<usize>,
}

impl ProgramSpace {
    /// Materializes term `id` as a tree.
    pub fn tree(&self, id: usize) -> ProgramNode {
        let (token, children) = &self.terms[id];
        ProgramNode {
            token: *token,
            children: children.iter().map(|&c| self.tree(c)).collect(),
        }
    }
}

fn unary_attention_tokens() -> Vec<Token> {
    let mut out = vec![Token::Unique];
    out.extend(AttrValue::all().map(Token::Attention));
    out.extend(Direction::ALL.map(Token::Relate));
    out.extend(Attribute::ALL.map(Token::Same));
    out
}

/// Enumerates all well-typed programs whose depth (in nodes) is at most
/// `max_depth`.
pub fn enumerate_programs(max_depth: usize) -> ProgramSpace {
    let mut terms: Vec<(Token, Vec<usize>)> = vec![(Token::Scene, Vec::new())];
    let mut depth = vec![1usize];
    // Term ids grouped by exact depth.
    let mut att_at: Vec<Vec<usize>> = vec![Vec::new(), vec![0]];
    let mut enc_at: Vec<Vec<usize>> = vec![Vec::new(), Vec::new()];
    let unary = unary_attention_tokens();
    let mut programs = Vec::new();

    for d in 2..=max_depth {
        let mut push = |t: Token, c: Vec<usize>| {
            terms.push((t, c));
            depth.push(d);
            terms.len() - 1
        };
        let att_below: Vec<usize> = att_at[1..d].concat();
        let enc_below: Vec<usize> = enc_at[1..d].concat();

        let mut new_enc = Vec::new();
        for &a in &att_at[d - 1] {
            for q in QueryKind::ALL {
                new_enc.push(push(Token::Query(q), vec![a]));
            }
        }
        let mut new_att = Vec::new();
        // Attention terms at the last level cannot be part of any program.
        if d < max_depth {
            for &a in &att_at[d - 1] {
                for &t in &unary {
                    new_att.push(push(t, vec![a]));
                }
            }
        }
        // Binary terms need at least one child of depth exactly d - 1.
        let deep = |depth: &[usize], x: usize, y: usize| depth[x] == d - 1 || depth[y] == d - 1;
        for &x in &enc_below {
            for &y in &enc_below {
                if deep(&depth, x, y) {
                    for c in CompareKind::ALL {
                        terms.push((Token::Compare(c), vec![x, y]));
                        depth.push(d);
                        new_enc.push(terms.len() - 1);
                    }
                }
            }
        }
        if d < max_depth {
            for &x in &att_below {
                for &y in &att_below {
                    if deep(&depth, x, y) {
                        for t in [Token::And, Token::Or] {
                            terms.push((t, vec![x, y]));
                            depth.push(d);
                            new_att.push(terms.len() - 1);
                        }
                    }
                }
            }
        }
        programs.extend(&new_enc);
        enc_at.push(new_enc);
        att_at.push(new_att);
    }
    ProgramSpace { terms, programs }
}

fn random_attention<R: Rng>(rng: &mut R, depth: usize) -> ProgramNode {
    if depth <= 1 || rng.random_bool(1.0 / depth as f64) {
        return ProgramNode::scene();
    }
    if depth >= 3 && rng.random_bool(0.2) {
        let t = *[Token::And, Token::Or].choose(rng).expect("nonempty");
        return ProgramNode::binary(t, random_attention(rng, depth - 1), random_attention(rng, depth - 1));
    }
    let t = *unary_attention_tokens().choose(rng).expect("nonempty");
    ProgramNode::unary(t, random_attention(rng, depth - 1))
}

fn random_encoding<R: Rng>(rng: &mut R, depth: usize) -> ProgramNode {
    debug_assert!(depth >= 2);
    if depth >= 3 && rng.random_bool(0.3) {
        let c = *CompareKind::ALL.choose(rng).expect("nonempty");
        return ProgramNode::binary(
            Token::Compare(c),
            random_encoding(rng, depth - 1),
            random_encoding(rng, depth - 1),
        );
    }
    let q = *QueryKind::ALL.choose(rng).expect("nonempty");
    ProgramNode::unary(Token::Query(q), random_attention(rng, depth - 1))
}

/// A random well-typed program of depth at most `max_depth` (at least 2).
pub fn random_program<R: Rng>(rng: &mut R, max_depth: usize) -> CheckedProgram {
    assert!(max_depth >= 2, "the shortest program is query(scene)");
    type_check(&random_encoding(rng, max_depth)).expect("generator emits well-typed trees")
}
