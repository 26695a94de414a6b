//! Evaluation reports as canonical JSON and as aligned text tables.

use serde::Serialize;
use serde_json::Value;

use crate::fsio::{canonical_json, round9};

pub const REPORT_VERSION: u32 = 1;

fn round_numbers(v: &mut Value) {
    match v {
        Value::Number(n) => {
            if let Some(f) = n.as_f64().filter(|_| n.is_f64()) {
                if let Some(r) = serde_json::Number::from_f64(round9(f)) {
                    *n = r;
                }
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_numbers),
        Value::Object(o) => o.values_mut().for_each(round_numbers),
        _ => {}
    }
}

/// `{"kind": .., "metrics": .., "version": ..}` with sorted keys and floats
/// at 9 significant digits.
pub fn report_json(kind: &str, metrics: &impl Serialize) -> String {
    let mut metrics = serde_json::to_value(metrics).expect("report serializes");
    round_numbers(&mut metrics);
    let value = serde_json::json!({ "kind": kind, "metrics": metrics, "version": REPORT_VERSION });
    canonical_json(&value)
}

/// Two-column table with the names left-aligned.
pub fn table(title: &str, rows: &[(&str, String)]) -> String {
    let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = format!("{title}\n");
    for (k, v) in rows {
        out.push_str(&format!("  {k:<w$}  {v}\n"));
    }
    out
}
