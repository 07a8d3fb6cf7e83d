#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use met_core::{Event, RuleAst};
use proptest::prelude::*;
use rand::Rng;

pub const TYPES: [&str; 4] = ["a", "b", "c", "d"];

/// Random rule with `depth() <= max_depth`, counts in `1..=max_count`,
/// leaf types drawn from `types`.
pub fn random_ast(rng: &mut impl Rng, max_depth: usize, max_count: u32, types: &[&str]) -> RuleAst {
    if max_depth <= 1 || rng.gen_bool(0.3) {
        let t = types[rng.gen_range(0..types.len())];
        return RuleAst::leaf(rng.gen_range(1..=max_count), t);
    }
    let l = random_ast(rng, max_depth - 1, max_count, types);
    let r = random_ast(rng, max_depth - 1, max_count, types);
    if rng.gen_bool(0.5) {
        RuleAst::and(l, r)
    } else {
        RuleAst::or(l, r)
    }
}

/// `n` events over `types` plus an occasional type the rule never mentions.
/// Ids are `e0..`, arrival order is list order.
pub fn random_stream(rng: &mut impl Rng, n: usize, types: &[&str]) -> Vec<Event> {
    (0..n)
        .map(|i| {
            let t = if rng.gen_bool(0.05) {
                "zz"
            } else {
                types[rng.gen_range(0..types.len())]
            };
            Event::new(format!("e{i}"), t).created_at(i as i64)
        })
        .collect()
}

pub fn arb_ast(max_depth: u32, max_count: u32, types: &'static [&'static str]) -> impl Strategy<Value = RuleAst> {
    let leaf = (1..=max_count, prop::sample::select(types)).prop_map(|(c, t)| RuleAst::leaf(c, t));
    leaf.prop_recursive(max_depth.saturating_sub(1), 64, 2, |inner| {
        (inner.clone(), inner, any::<bool>()).prop_map(|(l, r, and)| {
            if and {
                RuleAst::and(l, r)
            } else {
                RuleAst::or(l, r)
            }
        })
    })
}

pub fn arb_stream(len: usize, types: &'static [&'static str]) -> impl Strategy<Value = Vec<Event>> {
    prop::collection::vec(prop::sample::select(types), 0..len).prop_map(|ts| {
        ts.into_iter()
            .enumerate()
            .map(|(i, t)| Event::new(format!("e{i}"), t).created_at(i as i64))
            .collect()
    })
}

/// Whether a multiset of events (counts per type) satisfies the rule,
/// evaluated on the tree: AND needs the multiset split between its operands.
pub struct AstEvaluator<'a> {
    types: Vec<String>,
    memo: HashMap<(*const RuleAst, Vec<u32>), bool>,
    root: &'a RuleAst,
}

impl<'a> AstEvaluator<'a> {
    pub fn new(root: &'a RuleAst) -> Self {
        AstEvaluator {
            types: root.event_types(),
            memo: HashMap::new(),
            root,
        }
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn satisfied(&mut self, counts: &[u32]) -> bool {
        let root = self.root;
        self.eval(root, counts.to_vec())
    }

    fn eval(&mut self, node: &RuleAst, v: Vec<u32>) -> bool {
        let key = (node as *const RuleAst, v.clone());
        if let Some(&r) = self.memo.get(&key) {
            return r;
        }
        let r = match node {
            RuleAst::Leaf { count, event_type } => {
                let i = self.types.iter().position(|t| t == event_type).unwrap();
                v[i] >= *count
            }
            RuleAst::Node { condition, left, right } => match condition {
                met_core::rule::Condition::Or => {
                    self.eval(left, v.clone()) || self.eval(right, v.clone())
                }
                met_core::rule::Condition::And => {
                    let mut found = false;
                    for part in splits(&v) {
                        let rest: Vec<u32> = v.iter().zip(&part).map(|(a, b)| a - b).collect();
                        if self.eval(left, part) && self.eval(right, rest) {
                            found = true;
                            break;
                        }
                    }
                    found
                }
            },
        };
        self.memo.insert(key, r);
        r
    }
}

/// Every vector `p` with `0 <= p[i] <= v[i]`.
pub fn splits(v: &[u32]) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new()];
    for &x in v {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..=x).map(move |k| {
                    let mut q = p.clone();
                    q.push(k);
                    q
                })
            })
            .collect();
    }
    out
}

/// Consumed ids per type, for comparing firings.
pub fn consumed_ids(consumed: &BTreeMap<String, Vec<Event>>) -> BTreeMap<String, Vec<String>> {
    consumed
        .iter()
        .map(|(t, es)| (t.clone(), es.iter().map(|e| e.id.clone()).collect()))
        .collect()
}
