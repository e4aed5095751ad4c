use std::fmt;

use crate::types::Value;

/// Comparison operator in a WHERE clause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge];

    /// The operator with its operands swapped: `a < b` iff `b > a`.
    pub fn flip(self) -> CmpOp {
        match self {
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Ge => CmpOp::Le,
            op => op,
        }
    }

    pub fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Eq => ord == Equal,
            CmpOp::Ne => ord != Equal,
            CmpOp::Lt => ord == Less,
            CmpOp::Le => ord != Greater,
            CmpOp::Gt => ord == Greater,
            CmpOp::Ge => ord != Less,
        }
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "<>",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        })
    }
}

/// A literal as written. `Now(offset)` is `NOW()` plus or minus a number of
/// milliseconds and is resolved when the expression is bound.
#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Value(Value),
    Now(i64),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Value(v) => v.fmt(f),
            Literal::Now(0) => f.write_str("NOW()"),
            Literal::Now(off) if *off < 0 => write!(f, "NOW() - {}", off.unsigned_abs()),
            Literal::Now(off) => write!(f, "NOW() + {off}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ColumnRef {
    pub qualifier: Option<String>,
    pub name: String,
}

impl ColumnRef {
    pub fn bare(name: impl Into<String>) -> Self {
        ColumnRef { qualifier: None, name: name.into() }
    }

    pub fn qualified(qualifier: impl Into<String>, name: impl Into<String>) -> Self {
        ColumnRef { qualifier: Some(qualifier.into()), name: name.into() }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.qualifier {
            Some(q) => write!(f, "{q}.{}", self.name),
            None => f.write_str(&self.name),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Column(ColumnRef),
    Literal(Literal),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Column(c) => c.fmt(f),
            Operand::Literal(l) => l.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub left: Operand,
    pub op: CmpOp,
    pub right: Operand,
}

/// Boolean filter expression. `And`/`Or` nodes are flattened: a child of
/// `And` is never itself an `And`, likewise for `Or`, and each has at least
/// two children.
#[derive(Debug, Clone, PartialEq)]
pub enum WhereExpr {
    And(Vec<WhereExpr>),
    Or(Vec<WhereExpr>),
    Cmp(Comparison),
}

impl WhereExpr {
    pub fn cmp(left: Operand, op: CmpOp, right: Operand) -> Self {
        WhereExpr::Cmp(Comparison { left, op, right })
    }

    /// Column-versus-literal comparison shorthand.
    pub fn col(column: &str, op: CmpOp, value: impl Into<Value>) -> Self {
        WhereExpr::cmp(
            Operand::Column(ColumnRef::bare(column)),
            op,
            Operand::Literal(Literal::Value(value.into())),
        )
    }

    /// Builds a conjunction, flattening nested conjunctions.
    pub fn and(parts: impl IntoIterator<Item = WhereExpr>) -> Self {
        Self::join(parts, true)
    }

    /// Builds a disjunction, flattening nested disjunctions.
    pub fn or(parts: impl IntoIterator<Item = WhereExpr>) -> Self {
        Self::join(parts, false)
    }

    fn join(parts: impl IntoIterator<Item = WhereExpr>, conj: bool) -> Self {
        let mut out = Vec::new();
        for p in parts {
            match (p, conj) {
                (WhereExpr::And(inner), true) | (WhereExpr::Or(inner), false) => out.extend(inner),
                (p, _) => out.push(p),
            }
        }
        assert!(!out.is_empty(), "empty boolean combination");
        if out.len() == 1 {
            return out.pop().expect("one element");
        }
        if conj {
            WhereExpr::And(out)
        } else {
            WhereExpr::Or(out)
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            WhereExpr::Cmp(_) => 1,
            WhereExpr::And(xs) | WhereExpr::Or(xs) => 1 + xs.iter().map(Self::depth).max().unwrap_or(0),
        }
    }

    /// Every column reference in the expression.
    pub fn columns(&self) -> Vec<&ColumnRef> {
        let mut out = Vec::new();
        self.visit(&mut |c| {
            for side in [&c.left, &c.right] {
                if let Operand::Column(col) = side {
                    out.push(col);
                }
            }
        });
        out
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Comparison)) {
        match self {
            WhereExpr::Cmp(c) => f(c),
            WhereExpr::And(xs) | WhereExpr::Or(xs) => xs.iter().for_each(|x| x.visit(f)),
        }
    }
}

impl fmt::Display for WhereExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WhereExpr::Cmp(c) => write!(f, "{} {} {}", c.left, c.op, c.right),
            WhereExpr::And(xs) => {
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" AND ")?;
                    }
                    match x {
                        WhereExpr::Or(_) => write!(f, "({x})")?,
                        _ => write!(f, "{x}")?,
                    }
                }
                Ok(())
            }
            WhereExpr::Or(xs) => {
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" OR ")?;
                    }
                    write!(f, "{x}")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    Star,
    Columns(Vec<ColumnRef>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableRef {
    pub name: String,
    pub alias: Option<String>,
}

impl TableRef {
    /// Whether `qualifier` names this table (by alias, or by name when no
    /// alias is given).
    pub fn answers_to(&self, qualifier: &str) -> bool {
        match &self.alias {
            Some(a) => a.eq_ignore_ascii_case(qualifier),
            None => self.name.eq_ignore_ascii_case(qualifier),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectQuery {
    pub projection: Projection,
    pub tables: Vec<TableRef>,
    pub filter: Option<WhereExpr>,
}

impl SelectQuery {
    /// `SELECT * FROM table [WHERE filter]`.
    pub fn star(table: impl Into<String>, filter: Option<WhereExpr>) -> Self {
        SelectQuery {
            projection: Projection::Star,
            tables: vec![TableRef { name: table.into(), alias: None }],
            filter,
        }
    }

    pub fn is_join(&self) -> bool {
        self.tables.len() == 2
    }

    pub fn table_names(&self) -> impl Iterator<Item = &str> {
        self.tables.iter().map(|t| t.name.as_str())
    }

    /// Same tables and filter, STAR projection.
    pub fn unprojected(&self) -> Self {
        SelectQuery { projection: Projection::Star, ..self.clone() }
    }
}

impl fmt::Display for SelectQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT ")?;
        match &self.projection {
            Projection::Star => f.write_str("*")?,
            Projection::Columns(cols) => {
                for (i, c) in cols.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{c}")?;
                }
            }
        }
        f.write_str(" FROM ")?;
        for (i, t) in self.tables.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            f.write_str(&t.name)?;
            if let Some(a) = &t.alias {
                write!(f, " {a}")?;
            }
        }
        if let Some(w) = &self.filter {
            write!(f, " WHERE {w}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InsertStatement {
    pub table: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Literal>>,
}

impl fmt::Display for InsertStatement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "INSERT INTO {} ({}) VALUES ", self.table, self.columns.join(", "))?;
        for (i, row) in self.rows.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            f.write_str("(")?;
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{v}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

/// The slice of a table a producer publishes: a conjunction of
/// `column = literal`. Empty means the whole table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ViewPredicate {
    pub conjuncts: Vec<(String, Value)>,
}

impl ViewPredicate {
    pub fn whole_table() -> Self {
        ViewPredicate::default()
    }

    pub fn is_empty(&self) -> bool {
        self.conjuncts.is_empty()
    }

    /// The predicate as an expression, `None` when empty.
    pub fn to_expr(&self) -> Option<WhereExpr> {
        if self.conjuncts.is_empty() {
            return None;
        }
        Some(WhereExpr::and(self.conjuncts.iter().map(|(c, v)| WhereExpr::col(c, CmpOp::Eq, v.clone()))))
    }
}

impl fmt::Display for ViewPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.conjuncts.is_empty() {
            return Ok(());
        }
        f.write_str("WHERE (")?;
        for (i, (c, v)) in self.conjuncts.iter().enumerate() {
            if i > 0 {
                f.write_str(" AND ")?;
            }
            write!(f, "{c} = {v}")?;
        }
        f.write_str(")")
    }
}
