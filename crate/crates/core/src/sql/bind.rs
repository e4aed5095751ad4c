//! Name resolution and type checking of parsed statements against table
//! definitions, and evaluation of bound filters.

use super::ast::*;
use super::SqlError;
use crate::tuple::Tuple;
use crate::types::{ColumnType, TableDef, Value};

/// A column of one of the query's tables (`table` indexes the FROM list).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ColumnAt {
    pub table: usize,
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoundOperand {
    Column(ColumnAt),
    Const(Value),
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoundExpr {
    And(Vec<BoundExpr>),
    Or(Vec<BoundExpr>),
    Cmp { left: BoundOperand, op: CmpOp, right: BoundOperand },
}

impl BoundExpr {
    /// Evaluates the filter over one tuple per FROM table.
    pub fn eval(&self, row: &[&Tuple]) -> bool {
        match self {
            BoundExpr::And(xs) => xs.iter().all(|x| x.eval(row)),
            BoundExpr::Or(xs) => xs.iter().any(|x| x.eval(row)),
            BoundExpr::Cmp { left, op, right } => {
                let l = operand_value(left, row);
                let r = operand_value(right, row);
                l.sql_cmp(&r).is_some_and(|ord| op.holds(ord))
            }
        }
    }

    pub fn matches(&self, tuple: &Tuple) -> bool {
        self.eval(&[tuple])
    }
}

fn operand_value(op: &BoundOperand, row: &[&Tuple]) -> Value {
    match op {
        BoundOperand::Const(v) => v.clone(),
        BoundOperand::Column(at) => row[at.table].value(at.column),
    }
}

/// A SELECT resolved against its table definitions.
#[derive(Debug, Clone)]
pub struct BoundSelect {
    pub query: SelectQuery,
    pub tables: Vec<TableDef>,
    /// Output columns; STAR expands to each table's columns followed by its
    /// timestamp.
    pub projection: Vec<ColumnAt>,
    pub filter: Option<BoundExpr>,
}

impl BoundSelect {
    pub fn is_join(&self) -> bool {
        self.tables.len() == 2
    }

    pub fn column_names(&self) -> Vec<String> {
        let qualify = self.is_join();
        self.projection
            .iter()
            .map(|at| {
                let name = self.tables[at.table].name_at(at.column);
                if qualify {
                    let t = &self.query.tables[at.table];
                    format!("{}.{name}", t.alias.as_deref().unwrap_or(&t.name))
                } else {
                    name.to_owned()
                }
            })
            .collect()
    }

    pub fn project(&self, row: &[&Tuple]) -> Vec<Value> {
        self.projection.iter().map(|at| row[at.table].value(at.column)).collect()
    }

    pub fn accepts(&self, row: &[&Tuple]) -> bool {
        self.filter.as_ref().is_none_or(|f| f.eval(row))
    }
}

/// Binding environment: the FROM list and the instant `NOW()` resolves to.
struct Scope<'a> {
    refs: &'a [TableRef],
    defs: &'a [TableDef],
    now_ms: i64,
}

impl Scope<'_> {
    fn resolve(&self, col: &ColumnRef) -> Result<ColumnAt, SqlError> {
        match &col.qualifier {
            Some(q) => {
                let table = self
                    .refs
                    .iter()
                    .position(|t| t.answers_to(q))
                    .ok_or_else(|| SqlError::UnknownQualifier(q.clone()))?;
                let column = self.defs[table]
                    .resolve(&col.name)
                    .ok_or_else(|| SqlError::UnknownColumn(col.to_string()))?;
                Ok(ColumnAt { table, column })
            }
            None => {
                let mut found = None;
                for (table, def) in self.defs.iter().enumerate() {
                    if let Some(column) = def.resolve(&col.name) {
                        if found.is_some() {
                            return Err(SqlError::AmbiguousColumn(col.name.clone()));
                        }
                        found = Some(ColumnAt { table, column });
                    }
                }
                found.ok_or_else(|| SqlError::UnknownColumn(col.name.clone()))
            }
        }
    }

    fn ty(&self, at: ColumnAt) -> ColumnType {
        self.defs[at.table].type_at(at.column)
    }

    fn literal(&self, lit: &Literal, ty: ColumnType, column: &str) -> Result<Value, SqlError> {
        let value = match lit {
            Literal::Value(v) => v.clone(),
            Literal::Now(off) => Value::Int(self.now_ms.saturating_add(*off)),
        };
        ty.coerce(value).map_err(|e| SqlError::TypeMismatch {
            column: column.to_owned(),
            expected: e.expected,
            found: e.found.to_string(),
        })
    }

    fn expr(&self, expr: &WhereExpr) -> Result<BoundExpr, SqlError> {
        match expr {
            WhereExpr::And(xs) => xs.iter().map(|x| self.expr(x)).collect::<Result<_, _>>().map(BoundExpr::And),
            WhereExpr::Or(xs) => xs.iter().map(|x| self.expr(x)).collect::<Result<_, _>>().map(BoundExpr::Or),
            WhereExpr::Cmp(Comparison { left, op, right }) => {
                let (left, right) = match (left, right) {
                    (Operand::Column(l), Operand::Column(r)) => {
                        let (la, ra) = (self.resolve(l)?, self.resolve(r)?);
                        if !self.ty(la).comparable_with(self.ty(ra)) {
                            return Err(SqlError::TypeMismatch {
                                column: r.to_string(),
                                expected: self.ty(la),
                                found: self.ty(ra).to_string(),
                            });
                        }
                        (BoundOperand::Column(la), BoundOperand::Column(ra))
                    }
                    (Operand::Column(c), Operand::Literal(lit)) => {
                        let at = self.resolve(c)?;
                        let v = self.literal(lit, self.ty(at), &c.name)?;
                        (BoundOperand::Column(at), BoundOperand::Const(v))
                    }
                    (Operand::Literal(lit), Operand::Column(c)) => {
                        let at = self.resolve(c)?;
                        let v = self.literal(lit, self.ty(at), &c.name)?;
                        (BoundOperand::Const(v), BoundOperand::Column(at))
                    }
                    (Operand::Literal(_), Operand::Literal(_)) => {
                        return Err(SqlError::syntax(0, "comparison must reference a column"))
                    }
                };
                Ok(BoundExpr::Cmp { left, op: *op, right })
            }
        }
    }
}

fn find_def<'a>(defs: &'a [TableDef], name: &str) -> Result<&'a TableDef, SqlError> {
    defs.iter().find(|d| d.is_named(name)).ok_or_else(|| SqlError::UnknownTable(name.to_owned()))
}

/// Binds a SELECT against the given definitions (which may include
/// unrelated tables). `now_ms` is the value of `NOW()`.
pub fn bind_select(query: &SelectQuery, defs: &[TableDef], now_ms: i64) -> Result<BoundSelect, SqlError> {
    let tables: Vec<TableDef> =
        query.tables.iter().map(|t| find_def(defs, &t.name).cloned()).collect::<Result<_, _>>()?;
    let scope = Scope { refs: &query.tables, defs: &tables, now_ms };
    let projection = match &query.projection {
        Projection::Star => tables
            .iter()
            .enumerate()
            .flat_map(|(table, def)| (0..=def.columns().len()).map(move |column| ColumnAt { table, column }))
            .collect(),
        Projection::Columns(cols) => cols.iter().map(|c| scope.resolve(c)).collect::<Result<_, _>>()?,
    };
    let filter = query.filter.as_ref().map(|w| scope.expr(w)).transpose()?;
    if tables.len() == 2 && !filter.as_ref().is_some_and(has_cross_equality) {
        return Err(SqlError::JoinWithoutEquality);
    }
    Ok(BoundSelect { query: query.clone(), tables, projection, filter })
}

/// A join needs a top-level conjunct `t1.x = t2.y`.
fn has_cross_equality(expr: &BoundExpr) -> bool {
    let is_cross = |e: &BoundExpr| {
        matches!(e, BoundExpr::Cmp { left: BoundOperand::Column(l), op: CmpOp::Eq, right: BoundOperand::Column(r) }
            if l.table != r.table)
    };
    match expr {
        BoundExpr::And(xs) => xs.iter().any(is_cross),
        e => is_cross(e),
    }
}

/// Binds a filter over a single table.
pub fn bind_where(expr: &WhereExpr, def: &TableDef, now_ms: i64) -> Result<BoundExpr, SqlError> {
    let refs = [TableRef { name: def.name().to_owned(), alias: None }];
    let defs = std::slice::from_ref(def);
    Scope { refs: &refs, defs, now_ms }.expr(expr)
}

/// A view predicate resolved against its table: `(column index, value)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundView {
    pub bindings: Vec<(usize, Value)>,
}

impl BoundView {
    pub fn matches(&self, tuple: &Tuple) -> bool {
        self.bindings.iter().all(|(col, v)| tuple.value(*col).sql_cmp(v) == Some(std::cmp::Ordering::Equal))
    }
}

pub fn bind_view(view: &ViewPredicate, def: &TableDef) -> Result<BoundView, SqlError> {
    let bindings = view
        .conjuncts
        .iter()
        .map(|(name, value)| {
            let col = def.resolve(name).ok_or_else(|| SqlError::UnknownColumn(name.clone()))?;
            let v = def.type_at(col).coerce(value.clone()).map_err(|e| SqlError::TypeMismatch {
                column: name.clone(),
                expected: e.expected,
                found: e.found.to_string(),
            })?;
            Ok((col, v))
        })
        .collect::<Result<_, SqlError>>()?;
    Ok(BoundView { bindings })
}

#[cfg(test)]
mod tests {
    use super::super::parser::{parse_create_table, parse_select, parse_where};
    use super::*;
    use crate::tuple::Tuple;

    fn cpu() -> TableDef {
        parse_create_table("CREATE TABLE CpuLoad (host STRING(16), site STRING(16), load1 REAL, PRIMARY KEY (host))")
            .unwrap()
    }

    fn tuple(def: &TableDef, host: &str, site: &str, load: f64, ts: i64) -> Tuple {
        Tuple::new_unchecked(def.name(), vec![host.into(), site.into(), load.into()], ts)
    }

    #[test]
    fn select_filter_evaluates() {
        let def = cpu();
        let q = parse_select("SELECT * FROM CpuLoad WHERE host='n1' AND load1 > 0.5").unwrap();
        let b = bind_select(&q, &[def.clone()], 0).unwrap();
        assert!(b.accepts(&[&tuple(&def, "n1", "RAL", 0.9, 1)]));
        assert!(!b.accepts(&[&tuple(&def, "n1", "RAL", 0.5, 1)]));
        assert!(!b.accepts(&[&tuple(&def, "n2", "RAL", 0.9, 1)]));
        assert_eq!(b.projection.len(), 4);
        assert_eq!(b.column_names(), ["host", "site", "load1", "RgmaTimestamp"]);
    }

    #[test]
    fn int_literal_widens_for_real_columns() {
        let def = cpu();
        let e = bind_where(&parse_where("load1 >= 1").unwrap(), &def, 0).unwrap();
        assert!(e.matches(&tuple(&def, "n", "s", 1.0, 0)));
        let err = bind_where(&parse_where("host = 1").unwrap(), &def, 0).unwrap_err();
        assert!(matches!(err, SqlError::TypeMismatch { .. }));
    }

    #[test]
    fn now_resolves_at_bind_time() {
        let def = cpu();
        let e = bind_where(&parse_where("RgmaTimestamp < NOW() - 100").unwrap(), &def, 1000).unwrap();
        assert!(e.matches(&tuple(&def, "n", "s", 0.0, 899)));
        assert!(!e.matches(&tuple(&def, "n", "s", 0.0, 900)));
    }

    #[test]
    fn join_resolution() {
        let service = parse_create_table("CREATE TABLE Service (uri STRING(64), site STRING(16), PRIMARY KEY (uri))")
            .unwrap();
        let status =
            parse_create_table("CREATE TABLE ServiceStatus (uri STRING(64), status STRING(16), PRIMARY KEY (uri))")
                .unwrap();
        let defs = [service, status];
        let q = parse_select("SELECT s.uri, st.status FROM Service s, ServiceStatus st WHERE s.uri = st.uri")
            .unwrap();
        let b = bind_select(&q, &defs, 0).unwrap();
        assert_eq!(b.column_names(), ["s.uri", "st.status"]);

        let ambiguous = parse_select("SELECT uri FROM Service s, ServiceStatus st WHERE s.uri = st.uri").unwrap();
        assert_eq!(bind_select(&ambiguous, &defs, 0).unwrap_err(), SqlError::AmbiguousColumn("uri".into()));

        let no_eq = parse_select("SELECT * FROM Service s, ServiceStatus st WHERE s.site = 'RAL'").unwrap();
        assert_eq!(bind_select(&no_eq, &defs, 0).unwrap_err(), SqlError::JoinWithoutEquality);

        let unknown = parse_select("SELECT * FROM Nope").unwrap();
        assert_eq!(bind_select(&unknown, &defs, 0).unwrap_err(), SqlError::UnknownTable("Nope".into()));
    }
}
