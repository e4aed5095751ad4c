use std::collections::HashMap;

use crate::tuple::{DefiningKey, Tuple};
use crate::types::TableDef;

/// Row storage for one table of a DATABASE or LATEST producer.
#[derive(Debug, Clone)]
pub struct Store {
    def: TableDef,
    rows: Vec<Tuple>,
    /// Present in latest mode: the row index holding each key.
    latest: Option<HashMap<DefiningKey, usize>>,
}

impl Store {
    /// A store keeping every appended row.
    pub fn history(def: TableDef) -> Self {
        Store { def, rows: Vec::new(), latest: None }
    }

    /// A store keeping one row per defining key.
    pub fn latest(def: TableDef) -> Self {
        Store { def, rows: Vec::new(), latest: Some(HashMap::new()) }
    }

    pub fn def(&self) -> &TableDef {
        &self.def
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn scan(&self) -> &[Tuple] {
        &self.rows
    }

    pub fn append(&mut self, t: Tuple) {
        debug_assert!(self.latest.is_none(), "append on a latest store");
        self.rows.push(t);
    }

    /// Stores `t` unless the current row for its key is strictly newer.
    /// Returns whether `t` was stored.
    pub fn replace_by_key(&mut self, t: Tuple) -> bool {
        let index = self.latest.as_mut().expect("replace_by_key on a history store");
        match index.get(&DefiningKey::of(&self.def, &t)) {
            Some(&i) if self.rows[i].timestamp() > t.timestamp() => false,
            Some(&i) => {
                self.rows[i] = t;
                true
            }
            None => {
                index.insert(DefiningKey::of(&self.def, &t), self.rows.len());
                self.rows.push(t);
                true
            }
        }
    }

    /// Stores according to the store's mode. Returns whether `t` was kept.
    pub fn put(&mut self, t: Tuple) -> bool {
        if self.latest.is_some() {
            self.replace_by_key(t)
        } else {
            self.append(t);
            true
        }
    }

    pub fn delete_where(&mut self, mut doomed: impl FnMut(&Tuple) -> bool) -> usize {
        let before = self.rows.len();
        self.rows.retain(|t| !doomed(t));
        let deleted = before - self.rows.len();
        if deleted > 0 {
            if let Some(index) = &mut self.latest {
                index.clear();
                for (i, t) in self.rows.iter().enumerate() {
                    index.insert(DefiningKey::of(&self.def, t), i);
                }
            }
        }
        deleted
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::parse_create_table;

    fn def() -> TableDef {
        parse_create_table("CREATE TABLE T (k INT, v INT, PRIMARY KEY (k))").unwrap()
    }

    fn t(k: i64, v: i64, ts: i64) -> Tuple {
        Tuple::new_unchecked("T", vec![k.into(), v.into()], ts)
    }

    #[test]
    fn latest_replacement_rule() {
        let mut s = Store::latest(def());
        assert!(s.put(t(1, 0, 10)));
        assert!(s.put(t(1, 1, 20)));
        assert!(!s.put(t(1, 2, 10)));
        assert!(s.put(t(1, 3, 20)));
        assert_eq!(s.scan(), &[t(1, 3, 20)]);
    }

    #[test]
    fn delete_keeps_index_consistent() {
        let mut s = Store::latest(def());
        for k in 0..5 {
            s.put(t(k, 0, 10));
        }
        assert_eq!(s.delete_where(|r| r.value(0).as_i64().unwrap() % 2 == 0), 3);
        s.put(t(3, 9, 11));
        s.put(t(0, 9, 11));
        assert_eq!(s.scan(), &[t(1, 0, 10), t(3, 9, 11), t(0, 9, 11)]);
    }

    #[test]
    fn history_keeps_duplicates() {
        let mut s = Store::history(def());
        s.put(t(1, 0, 10));
        s.put(t(1, 0, 10));
        assert_eq!(s.len(), 2);
    }
}
