use std::collections::{BTreeMap, HashSet};

use super::{CaseRequirement, Condition, NormalizedRule, RuleAst, RuleError, MAX_CASES};

type Case = BTreeMap<String, u32>;

/// Flattens a rule into its ordered disjunctive cases.
///
/// `OR` concatenates the cases of its operands (left first). `AND` takes the
/// cross product in left-major order, merging two requirements on the same
/// type by summing their counts. Duplicate cases keep their first position.
pub fn normalize(ast: &RuleAst) -> Result<NormalizedRule, RuleError> {
    let cases = expand(ast)?;
    Ok(NormalizedRule {
        source_text: ast.render(),
        cases: cases
            .into_iter()
            .enumerate()
            .map(|(case_index, requirements)| CaseRequirement {
                case_index,
                requirements,
            })
            .collect(),
    })
}

fn expand(ast: &RuleAst) -> Result<Vec<Case>, RuleError> {
    match ast {
        RuleAst::Leaf { count, event_type } => {
            Ok(vec![BTreeMap::from([(event_type.clone(), *count)])])
        }
        RuleAst::Node {
            condition,
            left,
            right,
        } => {
            let left = expand(left)?;
            let right = expand(right)?;
            let mut out = Dedup::default();
            match condition {
                Condition::Or => {
                    for case in left.into_iter().chain(right) {
                        out.push(case)?;
                    }
                }
                Condition::And => {
                    for l in &left {
                        for r in &right {
                            let mut merged = l.clone();
                            for (t, n) in r {
                                *merged.entry(t.clone()).or_insert(0) += n;
                            }
                            out.push(merged)?;
                        }
                    }
                }
            }
            Ok(out.cases)
        }
    }
}

#[derive(Default)]
struct Dedup {
    seen: HashSet<Case>,
    cases: Vec<Case>,
}

impl Dedup {
    fn push(&mut self, case: Case) -> Result<(), RuleError> {
        if self.seen.contains(&case) {
            return Ok(());
        }
        if self.cases.len() == MAX_CASES {
            return Err(RuleError::CaseExplosion { max: MAX_CASES });
        }
        self.seen.insert(case.clone());
        self.cases.push(case);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rule::parse;

    fn case_maps(text: &str) -> Vec<BTreeMap<String, u32>> {
        normalize(&parse(text).unwrap())
            .unwrap()
            .cases
            .into_iter()
            .map(|c| c.requirements)
            .collect()
    }

    fn m(pairs: &[(&str, u32)]) -> BTreeMap<String, u32> {
        pairs.iter().map(|(t, n)| (t.to_string(), *n)).collect()
    }

    #[test]
    fn incident_rule() {
        assert_eq!(
            case_maps("OR(AND(5:packetLoss,1:temperature),1:powerConsumption)"),
            vec![
                m(&[("packetLoss", 5), ("temperature", 1)]),
                m(&[("powerConsumption", 1)])
            ]
        );
    }

    #[test]
    fn single_leaf() {
        assert_eq!(case_maps("1:a"), vec![m(&[("a", 1)])]);
    }

    #[test]
    fn and_distributes_left_major() {
        assert_eq!(
            case_maps("AND(OR(1:a,1:b),OR(1:c,1:d))"),
            vec![
                m(&[("a", 1), ("c", 1)]),
                m(&[("a", 1), ("d", 1)]),
                m(&[("b", 1), ("c", 1)]),
                m(&[("b", 1), ("d", 1)]),
            ]
        );
    }

    #[test]
    fn repeated_types_sum() {
        assert_eq!(case_maps("AND(2:a,3:a)"), vec![m(&[("a", 5)])]);
    }

    #[test]
    fn duplicates_keep_first() {
        assert_eq!(
            case_maps("OR(1:b,OR(1:a,OR(1:b,1:a)))"),
            vec![m(&[("b", 1)]), m(&[("a", 1)])]
        );
        let rule = normalize(&parse("OR(1:a,1:a)").unwrap()).unwrap();
        assert_eq!(rule.cases.len(), 1);
        assert_eq!(rule.cases[0].case_index, 0);
    }

    #[test]
    fn case_explosion() {
        // 2^10 = 1024 cases is the limit, 2^11 overflows it
        let or = |i: usize| format!("OR(1:a{},1:b{})", "x".repeat(i), "x".repeat(i));
        let build = |n: usize| {
            let mut text = or(0);
            for i in 1..n {
                text = format!("AND({text},{})", or(i));
            }
            text
        };
        let ok = normalize(&parse(&build(10)).unwrap()).unwrap();
        assert_eq!(ok.cases.len(), 1024);
        assert_eq!(
            normalize(&parse(&build(11)).unwrap()),
            Err(RuleError::CaseExplosion { max: MAX_CASES })
        );
    }
}
