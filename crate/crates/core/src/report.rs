//! Canonical JSON output: object keys sorted, floats rounded to 9
//! significant digits, two-space indentation, trailing newline. Identical
//! values always serialize to identical bytes.

use serde::Serialize;
use serde_json::Value;

use crate::error::Result;

pub const SIGNIFICANT_DIGITS: usize = 9;

/// Rounds to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_significant(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, v)
        .parse()
        .expect("formatted float parses")
}

pub fn to_canonical_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&v, 0, &mut out);
    out.push('\n');
    Ok(out)
}

fn write_value(v: &Value, indent: usize, out: &mut String) {
    match v {
        Value::Null | Value::Bool(_) | Value::String(_) => out.push_str(&v.to_string()),
        Value::Number(n) => match (n.as_i64(), n.as_u64(), n.as_f64()) {
            (Some(i), _, _) => out.push_str(&i.to_string()),
            (_, Some(u), _) => out.push_str(&u.to_string()),
            (_, _, Some(f)) => out.push_str(&Value::from(round_significant(f)).to_string()),
            _ => out.push_str(&n.to_string()),
        },
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                newline(indent + 1, out);
                write_value(item, indent + 1, out);
            }
            newline(indent, out);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                newline(indent + 1, out);
                out.push_str(&Value::String(k.clone()).to_string());
                out.push_str(": ");
                write_value(&map[k], indent + 1, out);
            }
            newline(indent, out);
            out.push('}');
        }
    }
}

fn newline(indent: usize, out: &mut String) {
    out.push('\n');
    for _ in 0..indent {
        out.push_str("  ");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{MetricReport, Psnr};

    #[test]
    fn rounding() {
        assert_eq!(round_significant(0.98360931214), 0.983609312);
        assert_eq!(round_significant(179.0), 179.0);
        assert_eq!(round_significant(1.0 / 3.0), 0.333333333);
        assert_eq!(round_significant(-2.5e-12), -2.5e-12);
        assert_eq!(round_significant(0.0), 0.0);
    }

    #[test]
    fn sorted_keys_and_fixed_floats() {
        let r = MetricReport {
            ssim: 0.98360931214,
            psnr_db: Psnr::Infinite,
            mae: 0.0,
        };
        let json = to_canonical_json(&r).unwrap();
        assert_eq!(json, "{\n  \"mae\": 0.0,\n  \"psnr_db\": \"inf\",\n  \"ssim\": 0.983609312\n}\n");
        assert_eq!(to_canonical_json(&r).unwrap(), json);
    }

    #[test]
    fn nested_and_empty() {
        let v = serde_json::json!({"b": [1, 2.0, {"z": null, "a": true}], "a": {}, "c": []});
        assert_eq!(
            to_canonical_json(&v).unwrap(),
            "{\n  \"a\": {},\n  \"b\": [\n    1,\n    2.0,\n    {\n      \"a\": true,\n      \"z\": null\n    }\n  ],\n  \"c\": []\n}\n"
        );
    }
}
