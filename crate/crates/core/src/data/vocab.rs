use std::collections::HashMap;

use crate::error::{HtkgError, Result};

/// Bijection between strings and dense ids, in first-insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vocabulary from an explicit list; repeated names are an error.
    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab::new();
        for name in names {
            let name = name.into();
            if v.index.contains_key(&name) {
                return Err(HtkgError::DuplicateVocab(name));
            }
            v.get_or_insert(&name);
        }
        Ok(v)
    }

    pub fn get_or_insert(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Raw timestamps (years) mapped to consecutive ids in chronological order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TimeVocab {
    values: Vec<i64>,
}

impl TimeVocab {
    pub fn from_values(values: impl IntoIterator<Item = i64>) -> Self {
        let mut values: Vec<i64> = values.into_iter().collect();
        values.sort_unstable();
        values.dedup();
        Self { values }
    }

    pub fn id(&self, value: i64) -> Option<usize> {
        self.values.binary_search(&value).ok()
    }

    pub fn value(&self, id: usize) -> i64 {
        self.values[id]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[i64] {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_seen_order() {
        let mut v = Vocab::new();
        assert_eq!(v.get_or_insert("b"), 0);
        assert_eq!(v.get_or_insert("a"), 1);
        assert_eq!(v.get_or_insert("b"), 0);
        assert_eq!(v.name(1), "a");
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(matches!(
            Vocab::from_names(["x", "y", "x"]),
            Err(HtkgError::DuplicateVocab(n)) if n == "x"
        ));
    }

    #[test]
    fn times_are_chronological() {
        let t = TimeVocab::from_values([2001, 1513, 2001, 1900]);
        assert_eq!(t.values(), &[1513, 1900, 2001]);
        assert_eq!(t.id(2001), Some(2));
        assert_eq!(t.id(1999), None);
    }
}
