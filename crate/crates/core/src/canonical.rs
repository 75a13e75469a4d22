//! Canonical JSON text: object keys sorted lexicographically, no insignificant
//! whitespace, UTF-8.
//!
//! `serde_json::Value` stores objects in a `BTreeMap` unless the
//! `preserve_order` feature is enabled, so routing every value through
//! `Value` yields sorted keys. The workspace must never enable that feature.

use serde::Serialize;
use serde_json::Value;

/// Serialize any value to canonical JSON text.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> String {
    let value = serde_json::to_value(value).expect("serializable value");
    value_to_canonical(&value)
}

pub fn value_to_canonical(value: &Value) -> String {
    debug_assert!(keys_sorted(value));
    value.to_string()
}

fn keys_sorted(value: &Value) -> bool {
    match value {
        Value::Object(map) => {
            let keys: Vec<&String> = map.keys().collect();
            keys.windows(2).all(|w| w[0] < w[1]) && map.values().all(keys_sorted)
        }
        Value::Array(items) => items.iter().all(keys_sorted),
        _ => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_are_sorted_recursively() {
        let v = json!({"z": 1, "a": {"c": [ {"y": 0, "b": 1} ], "b": null}});
        assert_eq!(
            value_to_canonical(&v),
            r#"{"a":{"b":null,"c":[{"b":1,"y":0}]},"z":1}"#
        );
    }

    #[test]
    fn unicode_is_emitted_raw() {
        let v = json!({"k": "Load→Filter→Plot"});
        assert_eq!(value_to_canonical(&v), "{\"k\":\"Load→Filter→Plot\"}");
    }
}
