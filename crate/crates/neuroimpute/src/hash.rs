//! Canonical JSON hashing for config identity.

use serde_json::Value;
use sha2::{Digest, Sha256};

/// Writes a JSON value with object keys sorted recursively; numbers keep
/// serde_json's shortest round-trip formatting, so equal values hash equal.
fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            out.push('{');
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            for (i, key) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(key).expect("string serializes"));
                out.push(':');
                write_canonical(&map[*key], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

/// Hex SHA-256 of the canonical serialization of a JSON value.
pub fn canonical_json_hash(value: &Value) -> String {
    let mut text = String::new();
    write_canonical(value, &mut text);
    let digest = Sha256::digest(text.as_bytes());
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn key_order_does_not_matter() {
        let a = json!({"b": 1, "a": [1.5, {"y": 2, "x": 3}]});
        let b = json!({"a": [1.5, {"x": 3, "y": 2}], "b": 1});
        assert_eq!(canonical_json_hash(&a), canonical_json_hash(&b));
    }

    #[test]
    fn different_values_hash_differently() {
        let a = json!({"plan": [0, 200, 100]});
        let b = json!({"plan": [0, 200, 101]});
        assert_ne!(canonical_json_hash(&a), canonical_json_hash(&b));
    }
}
