use super::ast::*;
use super::lexer::{is_keyword, tokenize, Tok, Token};
use super::SqlError;
use crate::types::{Column, ColumnType, TableDef, Value};

struct Parser {
    toks: Vec<Token>,
    at: usize,
    end: usize,
}

impl Parser {
    fn new(text: &str) -> Result<Self, SqlError> {
        let mut toks = tokenize(text)?;
        // a single trailing semicolon is allowed
        if matches!(toks.last(), Some(Token { tok: Tok::Semi, .. })) {
            toks.pop();
        }
        Ok(Parser { toks, at: 0, end: text.len() })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|t| &t.tok)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(self.end, |t| t.pos)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, SqlError> {
        Err(SqlError::syntax(self.pos(), msg))
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.at).map(|t| t.tok.clone());
        self.at += 1;
        t
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(w)) if w.eq_ignore_ascii_case(kw))
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.at_keyword(kw) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), SqlError> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            self.err(format!("expected {kw}"))
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), SqlError> {
        if self.eat(&tok) {
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, SqlError> {
        match self.peek() {
            Some(Tok::Ident(w)) if !is_keyword(w) => {
                let w = w.clone();
                self.at += 1;
                Ok(w)
            }
            _ => self.err(format!("expected {what}")),
        }
    }

    fn finish(&self) -> Result<(), SqlError> {
        if self.at < self.toks.len() {
            self.err("unexpected trailing input")
        } else {
            Ok(())
        }
    }

    fn column_type(&mut self) -> Result<ColumnType, SqlError> {
        let pos = self.pos();
        let name = self.ident("column type")?;
        let ty = match name.to_ascii_uppercase().as_str() {
            "INT" => ColumnType::Int,
            "REAL" => ColumnType::Real,
            "TIMESTAMP" => ColumnType::Timestamp,
            "STRING" => {
                self.expect(Tok::LParen, "( after STRING")?;
                let bound = match self.bump() {
                    Some(Tok::Number(n)) => n.parse::<u32>().ok().filter(|&n| n >= 1),
                    _ => None,
                };
                let Some(bound) = bound else {
                    return Err(SqlError::syntax(pos, "STRING length must be a positive integer"));
                };
                self.expect(Tok::RParen, ") after STRING length")?;
                ColumnType::String(bound)
            }
            _ => return Err(SqlError::UnknownType(name)),
        };
        Ok(ty)
    }

    fn number(&mut self, negative: bool) -> Result<Value, SqlError> {
        let pos = self.pos();
        let Some(Tok::Number(text)) = self.bump() else {
            return Err(SqlError::syntax(pos, "expected number"));
        };
        let signed = if negative { format!("-{text}") } else { text };
        if signed.contains(['.', 'e', 'E']) {
            match signed.parse::<f64>() {
                Ok(r) if r.is_finite() => Ok(Value::Real(r)),
                _ => Err(SqlError::syntax(pos, "numeric literal out of range")),
            }
        } else {
            signed
                .parse::<i64>()
                .map(Value::Int)
                .map_err(|_| SqlError::syntax(pos, "integer literal out of range"))
        }
    }

    fn literal(&mut self) -> Result<Literal, SqlError> {
        match self.peek() {
            Some(Tok::Str(s)) => {
                let s = s.clone();
                self.at += 1;
                Ok(Literal::Value(Value::Str(s)))
            }
            Some(Tok::Number(_)) => self.number(false).map(Literal::Value),
            Some(Tok::Minus) => {
                self.at += 1;
                self.number(true).map(Literal::Value)
            }
            Some(Tok::Ident(w)) if w.eq_ignore_ascii_case("NOW") => {
                self.at += 1;
                self.expect(Tok::LParen, "( after NOW")?;
                self.expect(Tok::RParen, ") after NOW(")?;
                let negative = match self.peek() {
                    Some(Tok::Minus) => true,
                    Some(Tok::Plus) => false,
                    _ => return Ok(Literal::Now(0)),
                };
                self.at += 1;
                match self.number(negative)? {
                    Value::Int(off) => Ok(Literal::Now(off)),
                    _ => self.err("NOW() offset must be an integer number of milliseconds"),
                }
            }
            _ => self.err("expected literal"),
        }
    }

    fn column_ref(&mut self) -> Result<ColumnRef, SqlError> {
        let first = self.ident("column name")?;
        if self.eat(&Tok::Dot) {
            let name = self.ident("column name after '.'")?;
            Ok(ColumnRef::qualified(first, name))
        } else {
            Ok(ColumnRef::bare(first))
        }
    }

    fn operand(&mut self) -> Result<Operand, SqlError> {
        match self.peek() {
            Some(Tok::Ident(w)) if !is_keyword(w) => self.column_ref().map(Operand::Column),
            _ => self.literal().map(Operand::Literal),
        }
    }

    fn cmp_op(&mut self) -> Result<CmpOp, SqlError> {
        let op = match self.peek() {
            Some(Tok::Eq) => CmpOp::Eq,
            Some(Tok::Ne) => CmpOp::Ne,
            Some(Tok::Lt) => CmpOp::Lt,
            Some(Tok::Le) => CmpOp::Le,
            Some(Tok::Gt) => CmpOp::Gt,
            Some(Tok::Ge) => CmpOp::Ge,
            _ => return self.err("expected comparison operator"),
        };
        self.at += 1;
        Ok(op)
    }

    fn or_expr(&mut self) -> Result<WhereExpr, SqlError> {
        let mut parts = vec![self.and_expr()?];
        while self.eat_keyword("OR") {
            parts.push(self.and_expr()?);
        }
        Ok(WhereExpr::or(parts))
    }

    fn and_expr(&mut self) -> Result<WhereExpr, SqlError> {
        let mut parts = vec![self.primary()?];
        while self.eat_keyword("AND") {
            parts.push(self.primary()?);
        }
        Ok(WhereExpr::and(parts))
    }

    fn primary(&mut self) -> Result<WhereExpr, SqlError> {
        if self.eat(&Tok::LParen) {
            let inner = self.or_expr()?;
            self.expect(Tok::RParen, ")")?;
            return Ok(inner);
        }
        let pos = self.pos();
        let left = self.operand()?;
        let op = self.cmp_op()?;
        let right = self.operand()?;
        if matches!((&left, &right), (Operand::Literal(_), Operand::Literal(_))) {
            return Err(SqlError::syntax(pos, "comparison must reference a column"));
        }
        Ok(WhereExpr::cmp(left, op, right))
    }

    fn table_ref(&mut self) -> Result<TableRef, SqlError> {
        let name = self.ident("table name")?;
        let alias = if self.eat_keyword("AS") {
            Some(self.ident("alias")?)
        } else if matches!(self.peek(), Some(Tok::Ident(w)) if !is_keyword(w)) {
            Some(self.ident("alias")?)
        } else {
            None
        };
        Ok(TableRef { name, alias })
    }
}

/// Parses `CREATE TABLE name (col type, ..., PRIMARY KEY (c1, ...))`.
pub fn parse_create_table(text: &str) -> Result<TableDef, SqlError> {
    let mut p = Parser::new(text)?;
    p.expect_keyword("CREATE")?;
    p.expect_keyword("TABLE")?;
    let name = p.ident("table name")?;
    p.expect(Tok::LParen, "(")?;
    let mut columns: Vec<Column> = Vec::new();
    let mut key: Option<Vec<String>> = None;
    loop {
        if p.at_keyword("PRIMARY") {
            if key.is_some() {
                return p.err("PRIMARY KEY given twice");
            }
            p.at += 1;
            p.expect_keyword("KEY")?;
            p.expect(Tok::LParen, "( after PRIMARY KEY")?;
            let mut fields = vec![p.ident("key column")?];
            while p.eat(&Tok::Comma) {
                fields.push(p.ident("key column")?);
            }
            p.expect(Tok::RParen, ")")?;
            key = Some(fields);
        } else {
            if key.is_some() {
                return p.err("columns must precede PRIMARY KEY");
            }
            let col = p.ident("column name")?;
            let ty = p.column_type()?;
            if columns.iter().any(|c| c.name.eq_ignore_ascii_case(&col)) {
                return Err(SqlError::DuplicateColumn(col));
            }
            columns.push(Column::new(col, ty));
        }
        if !p.eat(&Tok::Comma) {
            break;
        }
    }
    p.expect(Tok::RParen, ")")?;
    p.finish()?;
    let key = key.ok_or(SqlError::MissingPrimaryKey)?;
    Ok(TableDef::new(name, columns, key)?)
}

/// Parses `INSERT INTO t (c1, ...) VALUES (v1, ...)[, (...)]`.
pub fn parse_insert(text: &str) -> Result<InsertStatement, SqlError> {
    let mut p = Parser::new(text)?;
    p.expect_keyword("INSERT")?;
    p.expect_keyword("INTO")?;
    let table = p.ident("table name")?;
    p.expect(Tok::LParen, "( before column list")?;
    let mut columns = vec![p.ident("column name")?];
    while p.eat(&Tok::Comma) {
        columns.push(p.ident("column name")?);
    }
    p.expect(Tok::RParen, ")")?;
    for (i, c) in columns.iter().enumerate() {
        if columns[..i].iter().any(|o| o.eq_ignore_ascii_case(c)) {
            return Err(SqlError::DuplicateColumn(c.clone()));
        }
    }
    p.expect_keyword("VALUES")?;
    let mut rows = Vec::new();
    loop {
        let pos = p.pos();
        p.expect(Tok::LParen, "( before values")?;
        let mut row = vec![p.literal()?];
        while p.eat(&Tok::Comma) {
            row.push(p.literal()?);
        }
        p.expect(Tok::RParen, ")")?;
        if row.len() != columns.len() {
            return Err(SqlError::Arity { pos, expected: columns.len(), found: row.len() });
        }
        rows.push(row);
        if !p.eat(&Tok::Comma) {
            break;
        }
    }
    p.finish()?;
    Ok(InsertStatement { table, columns, rows })
}

/// Parses `SELECT proj FROM t1 [alias][, t2 [alias]] [WHERE expr]`.
pub fn parse_select(text: &str) -> Result<SelectQuery, SqlError> {
    let mut p = Parser::new(text)?;
    p.expect_keyword("SELECT")?;
    let projection = if p.eat(&Tok::Star) {
        Projection::Star
    } else {
        let mut cols = vec![p.column_ref()?];
        while p.eat(&Tok::Comma) {
            cols.push(p.column_ref()?);
        }
        Projection::Columns(cols)
    };
    p.expect_keyword("FROM")?;
    let mut tables = vec![p.table_ref()?];
    while p.eat(&Tok::Comma) {
        if tables.len() == 2 {
            return Err(SqlError::TooManyTables);
        }
        tables.push(p.table_ref()?);
    }
    if tables.len() == 2 {
        let (a, b) = (&tables[0], &tables[1]);
        let qa = a.alias.as_deref().unwrap_or(&a.name);
        if b.answers_to(qa) {
            return Err(SqlError::syntax(0, format!("table qualifier {qa} used twice")));
        }
    }
    let filter = if p.eat_keyword("WHERE") { Some(p.or_expr()?) } else { None };
    p.finish()?;
    let query = SelectQuery { projection, tables, filter };
    check_qualifiers(&query)?;
    Ok(query)
}

fn check_qualifiers(query: &SelectQuery) -> Result<(), SqlError> {
    let mut refs: Vec<&ColumnRef> = Vec::new();
    if let Projection::Columns(cols) = &query.projection {
        refs.extend(cols);
    }
    if let Some(w) = &query.filter {
        refs.extend(w.columns());
    }
    for r in refs {
        if let Some(q) = &r.qualifier {
            if !query.tables.iter().any(|t| t.answers_to(q)) {
                return Err(SqlError::UnknownQualifier(q.clone()));
            }
        }
    }
    Ok(())
}

/// Parses a producer view: empty text, or `WHERE` followed by a conjunction
/// of `column = literal`, with or without surrounding parentheses.
pub fn parse_view_predicate(text: &str) -> Result<ViewPredicate, SqlError> {
    let mut p = Parser::new(text)?;
    if p.toks.is_empty() {
        return Ok(ViewPredicate::default());
    }
    p.expect_keyword("WHERE")?;
    let expr = p.or_expr()?;
    p.finish()?;
    let parts = match expr {
        WhereExpr::And(parts) => parts,
        WhereExpr::Or(_) => return Err(SqlError::NotAView("OR is not allowed".into())),
        cmp => vec![cmp],
    };
    let mut conjuncts: Vec<(String, Value)> = Vec::new();
    for part in parts {
        let WhereExpr::Cmp(Comparison { left, op, right }) = part else {
            return Err(SqlError::NotAView("OR is not allowed".into()));
        };
        if op != CmpOp::Eq {
            return Err(SqlError::NotAView(format!("operator {op} is not allowed, only =")));
        }
        let (col, lit) = match (left, right) {
            (Operand::Column(c), Operand::Literal(l)) | (Operand::Literal(l), Operand::Column(c)) => (c, l),
            _ => return Err(SqlError::NotAView("each conjunct must be column = literal".into())),
        };
        if col.qualifier.is_some() {
            return Err(SqlError::NotAView("columns must be unqualified".into()));
        }
        let Literal::Value(value) = lit else {
            return Err(SqlError::NotAView("NOW() is not allowed".into()));
        };
        if conjuncts.iter().any(|(c, _)| c.eq_ignore_ascii_case(&col.name)) {
            return Err(SqlError::DuplicateColumn(col.name));
        }
        conjuncts.push((col.name, value));
    }
    Ok(ViewPredicate { conjuncts })
}

/// Parses a bare boolean expression (the text after WHERE).
pub fn parse_where(text: &str) -> Result<WhereExpr, SqlError> {
    let mut p = Parser::new(text)?;
    p.eat_keyword("WHERE");
    let expr = p.or_expr()?;
    p.finish()?;
    Ok(expr)
}
