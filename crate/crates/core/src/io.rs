//! Text output helpers: every float leaves the crate with 12 significant digits.

use serde::Serialize;
use serde_json::Value;

/// Rounds `x` to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) => {
            if let Some(x) = n.as_f64() {
                if n.is_f64() {
                    if let Some(r) = serde_json::Number::from_f64(round12(x)) {
                        *n = r;
                    }
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with floats rounded to 12 significant digits.
pub fn to_json_string<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_value(&mut v);
    serde_json::to_string_pretty(&v)
}

/// Decimal text of `x` at 12 significant digits, shortest form.
pub fn fmt12(x: f64) -> String {
    format!("{}", round12(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounds_to_twelve_digits() {
        assert_eq!(round12(0.1 + 0.2), 0.3);
        assert_eq!(round12(1.0 / 3.0), 0.333333333333);
        assert_eq!(fmt12(2.5), "2.5");
        let s = to_json_string(&vec![1.0 / 3.0, 2.0]).unwrap();
        assert!(s.contains("0.333333333333"));
    }
}
