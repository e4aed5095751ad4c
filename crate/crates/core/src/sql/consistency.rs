//! Conservative satisfiability of a producer view together with a query
//! filter.
//!
//! The view's `column = value` bindings are substituted into the filter,
//! constant comparisons are folded, and the remaining single-column
//! comparisons inside each conjunction are checked for an empty feasible
//! region. The answer is `false` only when no tuple can satisfy both.

use std::cmp::Ordering;
use std::collections::HashMap;

use super::ast::CmpOp;
use super::bind::{BoundExpr, BoundOperand, BoundView, ColumnAt};
use crate::types::Value;

/// Whether `view` (over FROM-table `table`) and `filter` may both hold.
pub fn predicate_consistent(view: &BoundView, table: usize, filter: Option<&BoundExpr>) -> bool {
    let Some(filter) = filter else { return true };
    if view.bindings.is_empty() {
        return true;
    }
    let env: HashMap<ColumnAt, &Value> =
        view.bindings.iter().map(|(column, v)| (ColumnAt { table, column: *column }, v)).collect();
    satisfiable(filter, &env)
}

fn substitute<'a>(op: &'a BoundOperand, env: &HashMap<ColumnAt, &'a Value>) -> Option<&'a Value> {
    match op {
        BoundOperand::Const(v) => Some(v),
        BoundOperand::Column(at) => env.get(at).copied(),
    }
}

/// A residual comparison `column op value` after substitution.
fn atom<'a>(expr: &'a BoundExpr, env: &HashMap<ColumnAt, &'a Value>) -> Option<(ColumnAt, CmpOp, &'a Value)> {
    let BoundExpr::Cmp { left, op, right } = expr else { return None };
    match (left, right) {
        (BoundOperand::Column(at), r) if !env.contains_key(at) => substitute(r, env).map(|v| (*at, *op, v)),
        (l, BoundOperand::Column(at)) if !env.contains_key(at) => substitute(l, env).map(|v| (*at, op.flip(), v)),
        _ => None,
    }
}

fn satisfiable(expr: &BoundExpr, env: &HashMap<ColumnAt, &Value>) -> bool {
    match expr {
        BoundExpr::Cmp { left, op, right } => match (substitute(left, env), substitute(right, env)) {
            (Some(l), Some(r)) => l.sql_cmp(r).is_some_and(|ord| op.holds(ord)),
            _ => true,
        },
        BoundExpr::Or(xs) => xs.iter().any(|x| satisfiable(x, env)),
        BoundExpr::And(xs) => {
            if !xs.iter().all(|x| satisfiable(x, env)) {
                return false;
            }
            let mut per_column: HashMap<ColumnAt, Vec<(CmpOp, &Value)>> = HashMap::new();
            for x in xs {
                if let Some((at, op, v)) = atom(x, env) {
                    per_column.entry(at).or_default().push((op, v));
                }
            }
            per_column.values().all(|cs| feasible(cs))
        }
    }
}

/// Whether some point of a dense total order satisfies every constraint.
/// Treating integers and strings as dense only makes the answer more
/// permissive.
fn feasible(constraints: &[(CmpOp, &Value)]) -> bool {
    let holds_at = |x: &Value| {
        constraints.iter().all(|(op, v)| x.sql_cmp(v).is_some_and(|ord| op.holds(ord)))
    };
    if let Some((_, point)) = constraints.iter().find(|(op, _)| *op == CmpOp::Eq) {
        return holds_at(point);
    }
    // (value, strict)
    let mut lower: Option<(&Value, bool)> = None;
    let mut upper: Option<(&Value, bool)> = None;
    for &(op, v) in constraints {
        match op {
            CmpOp::Gt | CmpOp::Ge => {
                let strict = op == CmpOp::Gt;
                lower = Some(match lower {
                    Some((cur, s)) => match v.sql_cmp(cur) {
                        Some(Ordering::Greater) => (v, strict),
                        Some(Ordering::Equal) => (cur, s || strict),
                        _ => (cur, s),
                    },
                    None => (v, strict),
                });
            }
            CmpOp::Lt | CmpOp::Le => {
                let strict = op == CmpOp::Lt;
                upper = Some(match upper {
                    Some((cur, s)) => match v.sql_cmp(cur) {
                        Some(Ordering::Less) => (v, strict),
                        Some(Ordering::Equal) => (cur, s || strict),
                        _ => (cur, s),
                    },
                    None => (v, strict),
                });
            }
            CmpOp::Eq | CmpOp::Ne => {}
        }
    }
    match (lower, upper) {
        (Some((lo, ls)), Some((hi, hs))) => match lo.sql_cmp(hi) {
            Some(Ordering::Greater) => false,
            // a single admissible point, which a <> may exclude
            Some(Ordering::Equal) => !(ls || hs) && holds_at(lo),
            _ => true,
        },
        _ => true,
    }
}

#[cfg(test)]
mod tests {
    use super::super::bind::{bind_view, bind_where};
    use super::super::parser::{parse_create_table, parse_view_predicate, parse_where};
    use super::*;
    use crate::types::TableDef;

    fn def() -> TableDef {
        parse_create_table("CREATE TABLE CpuLoad (host STRING(16), site STRING(16), load1 REAL, PRIMARY KEY (host))")
            .unwrap()
    }

    fn consistent(view: &str, filter: &str) -> bool {
        let def = def();
        let v = bind_view(&parse_view_predicate(view).unwrap(), &def).unwrap();
        let f = bind_where(&parse_where(filter).unwrap(), &def, 0).unwrap();
        predicate_consistent(&v, 0, Some(&f))
    }

    #[test]
    fn contradicting_site_is_inconsistent() {
        assert!(!consistent("WHERE (site='RAL')", "site='CERN'"));
        assert!(consistent("WHERE (site='RAL')", "site='RAL'"));
    }

    #[test]
    fn disjoint_columns_are_consistent() {
        assert!(consistent("WHERE (site='RAL')", "load1 > 0.9"));
    }

    #[test]
    fn empty_view_is_always_consistent() {
        let def = def();
        let f = bind_where(&parse_where("load1 > 1 AND load1 < 0").unwrap(), &def, 0).unwrap();
        assert!(predicate_consistent(&BoundView::default(), 0, Some(&f)));
        assert!(predicate_consistent(&BoundView::default(), 0, None));
    }

    #[test]
    fn range_reasoning_inside_conjunctions() {
        let v = "WHERE (site='RAL')";
        assert!(!consistent(v, "load1 > 1 AND load1 < 0"));
        assert!(!consistent(v, "load1 > 1 AND load1 <= 1"));
        assert!(consistent(v, "load1 >= 1 AND load1 <= 1"));
        assert!(!consistent(v, "load1 >= 1 AND load1 <= 1 AND load1 <> 1"));
        assert!(!consistent(v, "host = 'a' AND host = 'b'"));
        assert!(!consistent(v, "host = 'a' AND host <> 'a'"));
        assert!(consistent(v, "load1 > 1 OR load1 < 0"));
        assert!(!consistent(v, "site > 'RAL'"));
        assert!(consistent(v, "site >= 'RAL' AND load1 < 2"));
    }

    #[test]
    fn disjunctions_need_every_branch_dead() {
        assert!(!consistent("WHERE (site='RAL')", "site='CERN' OR site='FNAL'"));
        assert!(consistent("WHERE (site='RAL')", "site='CERN' OR site='RAL'"));
        assert!(!consistent("WHERE (site='RAL')", "(site='CERN' OR site='FNAL') AND load1 > 0"));
    }
}
