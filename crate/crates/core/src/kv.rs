//! Flat `name = value` text format shared by parameter sets, controller
//! configuration and scenario files.
//!
//! One entry per line, `#` starts a comment, blank lines are ignored. Keys may
//! carry dotted section prefixes (`controller.horizon`). Floating point values
//! are written with the shortest representation that parses back to the same
//! bits, so a document written by one tool is read back exactly by another.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvDoc {
    entries: Vec<(String, String)>,
}

impl KvDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = KvDoc::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                msg: format!("expected `name = value`, got `{line}`"),
            })?;
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("invalid key `{key}`"),
                });
            }
            if doc.get(key).is_some() {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("duplicate key `{key}`"),
                });
            }
            doc.entries.push((key.to_string(), value.trim().to_string()));
        }
        Ok(doc)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Inserts or replaces `key`, keeping the original position on replace.
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn set_f64(&mut self, key: impl Into<String>, value: f64) {
        self.set(key, fmt_f64(value));
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        let pos = self.entries.iter().position(|(k, _)| k == key)?;
        Some(self.entries.remove(pos).1)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Applies a `key=value` override as given on the command line.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form key=value")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("override `{spec}` has an empty key")));
        }
        self.set(key, value.trim());
        Ok(())
    }

    /// Extracts all entries under `prefix.` with the prefix stripped.
    pub fn section(&self, prefix: &str) -> KvDoc {
        let dotted = format!("{prefix}.");
        KvDoc {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&dotted).map(|rest| (rest.to_string(), v.clone())))
                .collect(),
        }
    }
}

impl fmt::Display for KvDoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

/// Shortest decimal form that round-trips to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Consumes keys from a document, so that leftovers can be reported as
/// unknown once a typed structure has been read.
#[derive(Debug)]
pub struct KvReader {
    doc: KvDoc,
}

impl KvReader {
    pub fn new(doc: KvDoc) -> Self {
        Self { doc }
    }

    pub fn take(&mut self, key: &str) -> Option<String> {
        self.doc.remove(key)
    }

    pub fn take_parsed<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        match self.doc.remove(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{raw}`: {e}"))),
        }
    }

    pub fn take_or<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        Ok(self.take_parsed(key)?.unwrap_or(default))
    }

    pub fn require<T>(&mut self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        self.take_parsed(key)?
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    /// Keys still present that share `prefix.`, in document order.
    pub fn keys_with_prefix(&self, prefix: &str) -> Vec<String> {
        let dotted = format!("{prefix}.");
        self.doc
            .entries()
            .filter(|(k, _)| k.starts_with(&dotted))
            .map(|(k, _)| k.to_string())
            .collect()
    }

    pub fn finish(self) -> Result<()> {
        match self.doc.entries().next() {
            None => Ok(()),
            Some(_) => {
                let keys: Vec<&str> = self.doc.entries().map(|(k, _)| k).collect();
                Err(Error::Config(format!("unknown keys: {}", keys.join(", "))))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let doc = KvDoc::parse("# header\n\nr_w = 6 # K/W\n  c_w=197.41\n").unwrap();
        assert_eq!(doc.get("r_w"), Some("6"));
        assert_eq!(doc.get("c_w"), Some("197.41"));
        assert_eq!(doc.entries().count(), 2);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(KvDoc::parse("a = 1\nbogus\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(KvDoc::parse("a = 1\na = 2\n"), Err(Error::Parse { line: 2, .. })));
        assert!(KvDoc::parse("two words = 1").is_err());
    }

    #[test]
    fn floats_round_trip_bit_exactly() {
        for x in [197.41, 0.1, 1.0 / 3.0, 1e-12, 6.02214076e23, -0.0, 5e-324] {
            let back: f64 = fmt_f64(x).parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn reader_reports_unknown_keys() {
        let mut r = KvReader::new(KvDoc::parse("a = 1\nb = 2\n").unwrap());
        assert_eq!(r.require::<f64>("a").unwrap(), 1.0);
        let err = r.finish().unwrap_err();
        assert!(err.to_string().contains('b'));
    }

    #[test]
    fn override_replaces_in_place() {
        let mut doc = KvDoc::parse("x = 1\ny = 2\n").unwrap();
        doc.apply_override("x=5").unwrap();
        assert_eq!(doc.to_string(), "x = 5\ny = 2\n");
        assert!(doc.apply_override("novalue").is_err());
    }
}
