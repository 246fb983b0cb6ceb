//! Text checkpoint container.
//!
//! ```text
//! motionforge-ckpt v1
//! <name>\t<d0>x<d1>...\t<v0> <v1> ...
//! ```
//!
//! One entry per line in name order; values use 17 significant digits so
//! every `f64` round-trips exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::array::Array;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const HEADER: &str = "motionforge-ckpt v1";

pub fn format_value(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint<S> {
    pub entries: BTreeMap<String, Array<S>>,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array<S>) -> Result<()> {
        let name = name.into();
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::Checkpoint(format!("invalid entry name {name:?}")));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Array<S>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry `{name}`")))
    }

    pub fn get_scalar(&self, name: &str) -> Result<f64> {
        self.get(name)?
            .item()
            .map(Scalar::as_f64)
            .ok_or_else(|| Error::Checkpoint(format!("entry `{name}` is not a scalar")))
    }

    pub fn encode(&self) -> String {
        let mut out = String::new();
        out.push_str(HEADER);
        out.push('\n');
        for (name, a) in &self.entries {
            let dims: Vec<String> = a.dims().iter().map(usize::to_string).collect();
            let _ = write!(out, "{name}\t{}\t", dims.join("x"));
            for (i, v) in a.values().iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                out.push_str(&format_value(v.as_f64()));
            }
            out.push('\n');
        }
        out
    }

    pub fn decode(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim_end() == HEADER => {}
            other => {
                return Err(Error::Checkpoint(format!(
                    "bad header {other:?}, expected `{HEADER}`"
                )))
            }
        }
        let mut ckpt = Self::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let lineno = i + 2;
            let mut parts = line.splitn(3, '\t');
            let (Some(name), Some(dims), Some(values)) = (parts.next(), parts.next(), parts.next())
            else {
                return Err(Error::Checkpoint(format!("line {lineno}: expected 3 fields")));
            };
            let dims = dims
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Checkpoint(format!("line {lineno}: dims: {e}")))?;
            let values = values
                .split_ascii_whitespace()
                .map(|v| v.parse::<f64>().map(S::of))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Checkpoint(format!("line {lineno}: value: {e}")))?;
            let a = Array::new(dims, values)
                .map_err(|e| Error::Checkpoint(format!("line {lineno}: {e}")))?;
            ckpt.insert(name, a)?;
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::decode(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_exact(values in proptest::collection::vec(-1e300f64..1e300, 1..40)) {
            let mut c = Checkpoint::<f64>::new();
            let n = values.len();
            c.insert("a.w", Array::new(vec![n], values).unwrap()).unwrap();
            c.insert("b", Array::new(vec![1, 1], vec![f64::MIN_POSITIVE]).unwrap()).unwrap();
            let back = Checkpoint::<f64>::decode(&c.encode()).unwrap();
            prop_assert_eq!(back, c);
        }
    }

    #[test]
    fn header_is_versioned() {
        let c = Checkpoint::<f64>::new();
        assert!(c.encode().starts_with("motionforge-ckpt v1\n"));
        assert!(Checkpoint::<f64>::decode("motionforge-ckpt v2\n").is_err());
    }

    #[test]
    fn rejects_value_count_mismatch() {
        let text = "motionforge-ckpt v1\nw\t2x2\t1 2 3\n";
        assert!(Checkpoint::<f64>::decode(text).is_err());
    }
}
