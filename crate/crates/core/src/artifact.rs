//! Canonical JSON encoding shared by every artifact file.
//!
//! Object keys are emitted in sorted order and every floating-point value is
//! written with 17 significant digits, so identical values always produce
//! identical bytes.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::ser::Formatter;

use crate::error::{Error, Result};

#[derive(Debug, Default, Clone, Copy)]
struct FixedFloatFormatter;

impl Formatter for FixedFloatFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        // `{:.16e}` keeps 17 significant digits; "-0" collapses to "0" so the
        // output does not depend on the sign of zero.
        let value = if value == 0.0 { 0.0 } else { value };
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

/// Serialize `value` to canonical JSON bytes (no trailing newline).
pub fn to_canonical_vec<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    // Round-tripping through `Value` sorts object keys (BTreeMap-backed maps).
    let tree = serde_json::to_value(value).map_err(|e| Error::Internal(e.to_string()))?;
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FixedFloatFormatter);
    tree.serialize(&mut ser).map_err(|e| Error::Internal(e.to_string()))?;
    Ok(out)
}

pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let bytes = to_canonical_vec(value)?;
    String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
}

/// Write `value` as a single canonical JSON document followed by a newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<u64> {
    let mut bytes = to_canonical_vec(value)?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

/// Write one canonical JSON record per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<u64> {
    let mut bytes = Vec::new();
    for record in records {
        bytes.extend(to_canonical_vec(record)?);
        bytes.push(b'\n');
    }
    write_bytes(path, &bytes)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<u64> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes.len() as u64)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(n, line)| {
            serde_json::from_str(line).map_err(|e| Error::parse(format!("{}:{}", path.display(), n + 1), e))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn keys_are_sorted_and_floats_fixed() {
        let mut m = HashMap::new();
        m.insert("b", 0.1_f64);
        m.insert("a", 3.0);
        let s = to_canonical_string(&m).unwrap();
        assert_eq!(s, r#"{"a":3.0000000000000000e0,"b":1.0000000000000001e-1}"#);
    }

    #[test]
    fn integers_stay_integers() {
        let s = to_canonical_string(&serde_json::json!({"n": 5, "v": [1, -2]})).unwrap();
        assert_eq!(s, r#"{"n":5,"v":[1,-2]}"#);
    }

    #[test]
    fn floats_round_trip_exactly() {
        for x in [std::f64::consts::PI, 1e-300, -2.5e17, 0.6176585901356543] {
            let s = to_canonical_string(&x).unwrap();
            let back: f64 = serde_json::from_str(&s).unwrap();
            assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
