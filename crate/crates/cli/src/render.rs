//! Plain-text tables for terminal output.

use rgma_core::{TableDef, Value, TIMESTAMP_COLUMN};

fn cell(v: &Value) -> String {
    match v {
        Value::Str(s) => s.replace('\n', "\\n"),
        v => v.to_string(),
    }
}

/// Left-aligned columns separated by two spaces, with a dashed rule under
/// the header.
pub fn table(columns: &[String], rows: &[Vec<Value>]) -> String {
    let cells: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(cell).collect()).collect();
    let mut widths: Vec<usize> = columns.iter().map(|c| c.chars().count()).collect();
    for r in &cells {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |vals: &[String]| {
        let mut s = String::new();
        for (i, (v, w)) in vals.iter().zip(&widths).enumerate() {
            if i + 1 == vals.len() {
                s.push_str(v);
            } else {
                s.push_str(&format!("{v:<w$}  "));
            }
        }
        s.trim_end().to_owned() + "\n"
    };
    let mut out = line(columns);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&line(&rule));
    for r in &cells {
        out.push_str(&line(r));
    }
    out
}

/// Rows only, for streaming output where the header was printed already.
pub fn rows(columns: &[String], rows: &[Vec<Value>]) -> String {
    let full = table(columns, rows);
    full.lines().skip(2).map(|l| format!("{l}\n")).collect()
}

pub fn describe(def: &TableDef) -> String {
    let mut out = format!("table {}\n", def.name());
    let key: Vec<&str> = def.defining_fields().collect();
    let width = def.columns().iter().map(|c| c.name.len()).max().unwrap_or(0).max(TIMESTAMP_COLUMN.len());
    for c in def.columns() {
        let mark = if key.iter().any(|k| k.eq_ignore_ascii_case(&c.name)) { "  defining" } else { "" };
        out.push_str(&format!("  {:<width$}  {}{mark}\n", c.name, c.ty));
    }
    out.push_str(&format!("  {TIMESTAMP_COLUMN:<width$}  TIMESTAMP  implicit\n"));
    out.push_str(&format!("defining fields: {}\n", key.join(", ")));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rgma_core::sql::parse_create_table;

    #[test]
    fn aligns_columns() {
        let cols = vec!["uri".to_owned(), "n".to_owned()];
        let rows = vec![vec![Value::from("gsiftp://a"), Value::Int(1)], vec![Value::from("x"), Value::Int(22)]];
        assert_eq!(table(&cols, &rows), "uri         n\n----------  --\ngsiftp://a  1\nx           22\n");
        assert_eq!(self::rows(&cols, &rows), "gsiftp://a  1\nx           22\n");
    }

    #[test]
    fn describe_marks_defining_fields() {
        let def = parse_create_table(
            "CREATE TABLE Service (uri STRING(255), type STRING(64), site STRING(64), PRIMARY KEY (uri))",
        )
        .unwrap();
        let text = describe(&def);
        assert!(text.contains("uri            STRING(255)  defining"), "{text}");
        assert!(text.contains("defining fields: uri"));
        assert!(!text.contains("type           STRING(64)  defining"));
    }
}
