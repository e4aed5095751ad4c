//! Reference implementations used as test oracles, written for clarity
//! rather than speed and sharing no evaluation code with the engines, plus
//! seeded generators for random tables, tuples and filters.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng;
use rgma_core::sql::{CmpOp, ColumnRef, Comparison, Literal, Operand, Projection, SelectQuery, WhereExpr};
use rgma_core::{ColumnType, TableDef, Tuple, Value, TIMESTAMP_COLUMN};

/// The small value domain filters and tuples are drawn from.
pub const INTS: [i64; 3] = [-1, 0, 1];
pub const STRS: [&str; 2] = ["a", "b"];

fn compare(a: &Value, b: &Value) -> Option<Ordering> {
    let num = |v: &Value| match v {
        Value::Int(i) => Some(*i as f64),
        Value::Real(r) => Some(*r),
        Value::Str(_) => None,
    };
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => Some(x.cmp(y)),
        (Value::Str(x), Value::Str(y)) => Some(x.as_bytes().cmp(y.as_bytes())),
        _ => num(a)?.partial_cmp(&num(b)?),
    }
}

fn op_holds(op: CmpOp, ord: Ordering) -> bool {
    match op {
        CmpOp::Eq => ord.is_eq(),
        CmpOp::Ne => ord.is_ne(),
        CmpOp::Lt => ord.is_lt(),
        CmpOp::Le => ord.is_le(),
        CmpOp::Gt => ord.is_gt(),
        CmpOp::Ge => ord.is_ge(),
    }
}

/// Interprets a filter directly on the AST, looking columns up by name.
/// `NOW()` literals resolve to `now`.
pub fn eval_where(expr: &WhereExpr, now: i64, lookup: &dyn Fn(&ColumnRef) -> Value) -> bool {
    match expr {
        WhereExpr::And(xs) => {
            let mut all = true;
            for x in xs {
                all &= eval_where(x, now, lookup);
            }
            all
        }
        WhereExpr::Or(xs) => {
            let mut any = false;
            for x in xs {
                any |= eval_where(x, now, lookup);
            }
            any
        }
        WhereExpr::Cmp(Comparison { left, op, right }) => {
            let value = |o: &Operand| match o {
                Operand::Column(c) => lookup(c),
                Operand::Literal(Literal::Value(v)) => v.clone(),
                Operand::Literal(Literal::Now(off)) => Value::Int(now + off),
            };
            match compare(&value(left), &value(right)) {
                Some(ord) => op_holds(*op, ord),
                None => false,
            }
        }
    }
}

/// Value of column `name` in `t`, with `RgmaTimestamp` for the stamp.
pub fn column(def: &TableDef, t: &Tuple, name: &str) -> Value {
    if name.eq_ignore_ascii_case(TIMESTAMP_COLUMN) {
        return Value::Int(t.timestamp());
    }
    for (c, v) in def.columns().iter().zip(t.values()) {
        if c.name.eq_ignore_ascii_case(name) {
            return v.clone();
        }
    }
    panic!("column {name} not in {}", def.name())
}

/// Single-table filter check.
pub fn matches(def: &TableDef, filter: Option<&WhereExpr>, t: &Tuple, now: i64) -> bool {
    filter.is_none_or(|f| eval_where(f, now, &|c: &ColumnRef| column(def, t, &c.name)))
}

/// Latest merge by definition: per key, the greatest timestamp wins and the
/// last of equal timestamps wins. Output is sorted for set comparison.
pub fn latest(def: &TableDef, tuples: &[Tuple]) -> Vec<Tuple> {
    let key = |t: &Tuple| -> Vec<Value> { def.defining_fields().map(|f| column(def, t, f)).collect() };
    let mut keys: Vec<Vec<Value>> = Vec::new();
    for t in tuples {
        let k = key(t);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut out: Vec<Tuple> = keys
        .iter()
        .map(|k| {
            let same: Vec<&Tuple> = tuples.iter().filter(|t| &key(t) == k).collect();
            let best = same.iter().map(|t| t.timestamp()).max().expect("key came from input");
            (*same.iter().rev().find(|t| t.timestamp() == best).expect("max exists")).clone()
        })
        .collect();
    sort_tuples(&mut out);
    out
}

/// Orders tuples by their textual form, for order-insensitive comparison.
pub fn sort_tuples(ts: &mut [Tuple]) {
    ts.sort_by_cached_key(|t| format!("{t:?}"));
}

/// Evaluates a SELECT over in-memory tables by nested loops, returning
/// projected rows in FROM-order iteration order.
pub fn select(query: &SelectQuery, tables: &[(&TableDef, &[Tuple])], now: i64) -> Vec<Vec<Value>> {
    let from: Vec<(&TableDef, &[Tuple], &str)> = query
        .tables
        .iter()
        .map(|r| {
            let (def, rows) = tables.iter().find(|(d, _)| d.name().eq_ignore_ascii_case(&r.name)).expect("table");
            (*def, *rows, r.alias.as_deref().unwrap_or(&r.name))
        })
        .collect();
    let resolve = |c: &ColumnRef| -> usize {
        match &c.qualifier {
            Some(q) => from.iter().position(|(_, _, n)| n.eq_ignore_ascii_case(q)).expect("qualifier"),
            None => from
                .iter()
                .position(|(d, _, _)| {
                    c.name.eq_ignore_ascii_case(TIMESTAMP_COLUMN)
                        || d.columns().iter().any(|col| col.name.eq_ignore_ascii_case(&c.name))
                })
                .expect("column"),
        }
    };
    let mut combos: Vec<Vec<&Tuple>> = vec![vec![]];
    for (_, rows, _) in &from {
        let mut next = Vec::new();
        for prefix in &combos {
            for r in rows.iter() {
                let mut c = prefix.clone();
                c.push(r);
                next.push(c);
            }
        }
        combos = next;
    }
    let mut out = Vec::new();
    for row in combos {
        let lookup = |c: &ColumnRef| {
            let i = resolve(c);
            column(from[i].0, row[i], &c.name)
        };
        if query.filter.as_ref().is_none_or(|f| eval_where(f, now, &lookup)) {
            out.push(match &query.projection {
                Projection::Star => from
                    .iter()
                    .zip(&row)
                    .flat_map(|((d, _, _), t)| {
                        d.columns().iter().map(|c| column(d, t, &c.name)).chain([Value::Int(t.timestamp())])
                    })
                    .collect(),
                Projection::Columns(cols) => cols.iter().map(&lookup).collect(),
            });
        }
    }
    out
}

/// Whether some tuple over the small domain satisfies both the view
/// equalities and the filter. Every column ranges over its domain values
/// plus the view's constants.
pub fn satisfiable(def: &TableDef, view: &[(String, Value)], filter: &WhereExpr) -> bool {
    let mut domains: Vec<Vec<Value>> = def
        .columns()
        .iter()
        .map(|c| match c.ty {
            ColumnType::String(_) => STRS.iter().map(|s| Value::from(*s)).collect(),
            ColumnType::Real => vec![-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5].into_iter().map(Value::Real).collect(),
            ColumnType::Int | ColumnType::Timestamp => (-2..=2).map(Value::Int).collect(),
        })
        .collect();
    for (name, v) in view {
        let i = def.columns().iter().position(|c| c.name.eq_ignore_ascii_case(name)).expect("view column");
        let v = match (def.columns()[i].ty, v) {
            (ColumnType::Real, Value::Int(x)) => Value::Real(*x as f64),
            (_, v) => v.clone(),
        };
        domains[i] = vec![v];
    }
    let mut idx = vec![0usize; domains.len()];
    loop {
        let values: Vec<Value> = idx.iter().zip(&domains).map(|(&i, d)| d[i].clone()).collect();
        let t = Tuple::new_unchecked(def.name(), values, 0);
        if matches(def, Some(filter), &t, 0) {
            return true;
        }
        let mut k = 0;
        loop {
            if k == idx.len() {
                return false;
            }
            idx[k] += 1;
            if idx[k] < domains[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// A literal of the column's type drawn from the small domain.
pub fn literal_for(rng: &mut impl Rng, ty: ColumnType) -> Value {
    match ty {
        ColumnType::String(_) => Value::from(*STRS.choose(rng).expect("non-empty")),
        ColumnType::Real if rng.gen_bool(0.5) => Value::Real(*INTS.choose(rng).expect("non-empty") as f64 + 0.5),
        _ => Value::Int(*INTS.choose(rng).expect("non-empty")),
    }
}

/// A random filter over `def` of depth at most `depth`, with literals from
/// the small domain. Comparisons between two columns of compatible types
/// appear occasionally.
pub fn random_where(rng: &mut impl Rng, def: &TableDef, depth: usize) -> WhereExpr {
    if depth <= 1 || rng.gen_bool(0.35) {
        let cols = def.columns();
        let i = rng.gen_range(0..cols.len());
        let c = &cols[i];
        let op = *CmpOp::ALL.choose(rng).expect("non-empty");
        let partner: Vec<usize> = (0..cols.len())
            .filter(|&j| j != i && (cols[j].ty.is_numeric() == c.ty.is_numeric()))
            .collect();
        let right = if !partner.is_empty() && rng.gen_bool(0.15) {
            Operand::Column(ColumnRef::bare(cols[*partner.choose(rng).expect("non-empty")].name.clone()))
        } else {
            Operand::Literal(Literal::Value(literal_for(rng, c.ty)))
        };
        let left = Operand::Column(ColumnRef::bare(c.name.clone()));
        return if rng.gen_bool(0.2) {
            WhereExpr::cmp(right, op, left)
        } else {
            WhereExpr::cmp(left, op, right)
        };
    }
    let n = rng.gen_range(2..=3);
    let conj = rng.gen_bool(0.5);
    let kids: Vec<WhereExpr> = (0..n).map(|_| random_where(rng, def, depth - 1)).collect();
    if conj {
        WhereExpr::and(kids)
    } else {
        WhereExpr::or(kids)
    }
}

/// A tuple with every column drawn from the small domain.
pub fn random_tuple(rng: &mut impl Rng, def: &TableDef, ts: i64) -> Tuple {
    let values = def
        .columns()
        .iter()
        .map(|c| c.ty.coerce(literal_for(rng, c.ty)).expect("domain literal fits its column"))
        .collect();
    Tuple::new_unchecked(def.name(), values, ts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rgma_core::sql::{parse_create_table, parse_select};

    #[test]
    fn truth_table_sanity() {
        let def = parse_create_table("CREATE TABLE T (a INT, b INT, PRIMARY KEY (a))").unwrap();
        let t = Tuple::new_unchecked("T", vec![0.into(), 3.into()], 0);
        let q = parse_select("SELECT * FROM T WHERE a = 1 OR b > 2").unwrap();
        assert!(matches(&def, q.filter.as_ref(), &t, 0));
        let q = parse_select("SELECT * FROM T WHERE a <> 0 AND a < 1").unwrap();
        assert!(!matches(&def, q.filter.as_ref(), &t, 0));
    }

    #[test]
    fn generated_depth_is_bounded() {
        let def = parse_create_table("CREATE TABLE T (a INT, s STRING(4), x REAL, PRIMARY KEY (a))").unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for _ in 0..200 {
            assert!(random_where(&mut rng, &def, 3).depth() <= 3);
        }
    }

    #[test]
    fn latest_definition() {
        let def = parse_create_table("CREATE TABLE T (k INT, v INT, PRIMARY KEY (k))").unwrap();
        let t = |k: i64, v: i64, ts: i64| Tuple::new_unchecked("T", vec![k.into(), v.into()], ts);
        assert_eq!(latest(&def, &[t(1, 1, 10), t(1, 2, 10), t(1, 3, 5)]), vec![t(1, 2, 10)]);
    }
}
