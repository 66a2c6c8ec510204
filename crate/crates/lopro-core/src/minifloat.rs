//! Reduced-precision value grids: an 8-bit 1/4/3 minifloat for factor
//! storage, and half/single snapping helpers for scales and magnitudes.
//!
//! The 1/4/3 format (bias 7) covers ±448 with a 2^-9 subnormal step.
//! Rounding is round-to-nearest-even onto the grid and saturating at the
//! top; it is computed through exact binade arithmetic in f64 (the quantum
//! is a power of two read off the exponent bits, never via logarithms), so
//! results are deterministic and bit-reproducible across platforms.

use half::f16;

/// Largest finite 1/4/3 value.
pub const E4M3_MAX: f64 = 448.0;
/// Smallest positive normal 1/4/3 value (2^-6).
pub const E4M3_MIN_NORMAL: f64 = 0.015625;
/// Subnormal spacing (2^-9), also the spacing just above the normal cutoff.
pub const E4M3_SUBNORMAL_STEP: f64 = 0.001953125;

/// Rounds a finite f64 to the nearest 1/4/3 grid value (ties to even),
/// saturating to ±448. NaN is passed through for the encoder to handle.
pub fn e4m3_round(x: f64) -> f64 {
    if x.is_nan() {
        return x;
    }
    let neg = x.is_sign_negative();
    let a = x.abs().min(E4M3_MAX);
    let q = if a < E4M3_MIN_NORMAL {
        E4M3_SUBNORMAL_STEP
    } else {
        // Exact power-of-two quantum for the binade [2^e, 2^(e+1)): 2^(e-3).
        let e = ((a.to_bits() >> 52) & 0x7FF) as i64 - 1023;
        f64::powi(2.0, (e - 3) as i32)
    };
    let r = ((a / q).round_ties_even() * q).min(E4M3_MAX);
    if neg {
        -r
    } else {
        r
    }
}

/// Encodes to the canonical 1/4/3 byte (sign, 4 exponent bits, 3 mantissa
/// bits). Inputs are rounded first, so any finite f64 is accepted; NaN
/// encodes to the canonical quiet pattern 0x7F.
pub fn e4m3_to_bits(x: f64) -> u8 {
    if x.is_nan() {
        return 0x7F;
    }
    let v = e4m3_round(x);
    let sign = if v.is_sign_negative() { 0x80u8 } else { 0 };
    let a = v.abs();
    if a == 0.0 {
        return sign;
    }
    if a < E4M3_MIN_NORMAL {
        let mant = (a / E4M3_SUBNORMAL_STEP) as u8;
        return sign | mant;
    }
    let e = ((a.to_bits() >> 52) & 0x7FF) as i64 - 1023;
    let exp_bits = (e + 7) as u8;
    let mant = (a / f64::powi(2.0, (e - 3) as i32)) as u8 - 8;
    sign | (exp_bits << 3) | mant
}

/// Decodes a 1/4/3 byte. The two NaN patterns decode to NaN.
pub fn e4m3_from_bits(b: u8) -> f64 {
    let sign = if b & 0x80 != 0 { -1.0 } else { 1.0 };
    let exp = (b >> 3) & 0xF;
    let mant = (b & 0x7) as f64;
    if exp == 0xF && (b & 0x7) == 0x7 {
        return f64::NAN;
    }
    let a = if exp == 0 {
        mant * E4M3_SUBNORMAL_STEP
    } else {
        (8.0 + mant) * f64::powi(2.0, exp as i32 - 7 - 3)
    };
    sign * a
}

/// True when the value sits exactly on the 1/4/3 grid.
pub fn is_e4m3_exact(x: f64) -> bool {
    x.is_finite() && e4m3_round(x) == x
}

/// Snaps to the nearest binary16 value, saturating at ±65504.
pub fn f16_snap(x: f64) -> f64 {
    const F16_MAX: f64 = 65504.0;
    f16::from_f64(x.clamp(-F16_MAX, F16_MAX)).to_f64()
}

/// Snaps to the nearest binary32 value, saturating at the f32 range.
pub fn f32_snap(x: f64) -> f64 {
    (x.clamp(f32::MIN as f64, f32::MAX as f64) as f32) as f64
}
