//! Number formatting shared by CSV and record output.

use serde_json::Value;

/// Significant digits kept in every printed number.
pub const DIGITS: usize = 12;

/// `x` rounded to [`DIGITS`] significant digits.
pub fn round(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", DIGITS - 1, x).parse().unwrap_or(x)
}

/// `%g`-style text for `x` with [`DIGITS`] significant digits.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let y = round(x);
    if y == 0.0 {
        return "0".into();
    }
    let exp = y.abs().log10().floor() as i32;
    if (-4..DIGITS as i32).contains(&exp) {
        format!("{y}")
    } else {
        format!("{y:e}")
    }
}

/// Rounds every float inside a JSON document in place.
pub fn round_json(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_json),
        Value::Object(map) => map.values_mut().for_each(round_json),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_digits() {
        assert_eq!(num(1.0 / 3.0), "0.333333333333");
        assert_eq!(num(-2.0 / 3.0), "-0.666666666667");
        assert_eq!(num(0.1), "0.1");
        assert_eq!(num(1e-20), "1e-20");
        assert_eq!(num(123456789012345.0), "1.23456789012e14");
        assert_eq!(num(0.0), "0");
        assert_eq!(num(-0.0), "0");
        assert_eq!(num(f64::NAN), "nan");
    }

    #[test]
    fn json_and_text_agree() {
        for x in [1.0 / 7.0, -2.0e-9 / 3.0, 6.02214076e23, 10.0] {
            let mut v = serde_json::json!({ "a": [x] });
            round_json(&mut v);
            let back = v["a"][0].as_f64().unwrap();
            assert_eq!(num(back), num(x));
            assert_eq!(back, round(x));
        }
    }
}
