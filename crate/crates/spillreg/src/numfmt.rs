//! Fixed significant-digit formatting for text outputs.

/// Format `x` with `digits` significant digits, trailing zeros removed,
/// switching to exponent notation for very small or large magnitudes
/// (the C `%g` rule).
pub fn sig(x: f64, digits: usize) -> String {
    assert!(digits > 0, "need at least one significant digit");
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent notation");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        format!("{}e{}", trim_zeros(mantissa), exp)
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

/// Nine significant digits, the trace CSV precision.
pub fn sig9(x: f64) -> String {
    sig(x, 9)
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_printf_g() {
        assert_eq!(sig9(1.0), "1");
        assert_eq!(sig9(0.1 + 0.2), "0.3");
        assert_eq!(sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(sig9(-2.0 / 3.0), "-0.666666667");
        assert_eq!(sig9(123456789.4), "123456789");
        assert_eq!(sig9(1234567890.0), "1.23456789e9");
        assert_eq!(sig9(1.5e-7), "1.5e-7");
        assert_eq!(sig9(0.000123), "0.000123");
        assert_eq!(sig9(9.9999999999), "10");
        assert_eq!(sig9(0.0), "0");
        assert_eq!(sig9(-0.0), "0");
    }

    #[test]
    fn nine_digits_survive_a_round_trip() {
        for &x in &[0.123456789123, 1.98765432123, 1e-3 / 7.0] {
            let back: f64 = sig9(x).parse().unwrap();
            assert!(((back - x) / x).abs() < 1e-8);
        }
    }
}
