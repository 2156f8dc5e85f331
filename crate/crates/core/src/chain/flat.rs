use indexmap::IndexMap;

use super::ChainError;

/// The transaction as one ordered key→value map, independent of transport.
///
/// Every signed value string is built from this view, which is what makes a
/// signature produced on a query string verify on an OpenRTB object and vice
/// versa.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlatView {
    entries: IndexMap<String, String>,
}

impl FlatView {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl Into<String>) -> Result<(), ChainError> {
        let key = key.into();
        if self.entries.contains_key(&key) {
            return Err(ChainError::DuplicateKey(key));
        }
        self.entries.insert(key, value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Replaces an existing value; returns the previous one.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Option<String> {
        self.entries
            .get_mut(key)
            .map(|slot| std::mem::replace(slot, value.into()))
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.shift_remove(key)
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl<'a> FromIterator<(&'a str, &'a str)> for FlatView {
    /// Later duplicates are ignored.
    fn from_iter<I: IntoIterator<Item = (&'a str, &'a str)>>(iter: I) -> Self {
        let mut view = FlatView::new();
        for (k, v) in iter {
            let _ = view.insert(k, v);
        }
        view
    }
}
