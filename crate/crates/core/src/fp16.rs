//! Software IEEE 754 binary16 emulation.
//!
//! Storage stays `f32`; values are rounded through binary16 (round to nearest,
//! ties to even) at operation boundaries. Overflow saturates to the largest
//! finite half value instead of producing infinities.

/// Largest finite binary16 magnitude.
pub const F16_MAX: f32 = 65504.0;

/// Smallest positive normal binary16 value, 2^-14.
pub const F16_MIN_POSITIVE: f32 = 6.103_515_6e-5;

const F16_MAX_BITS: u16 = 0x7bff;
const F16_INF_BITS: u16 = 0x7c00;

/// Converts to binary16 bits with IEEE round-to-nearest-even.
///
/// Overflow produces infinity here; saturation happens in [`round_trip`].
pub fn f32_to_f16_bits(x: f32) -> u16 {
    let bits = x.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xff) as i32;
    let man = bits & 0x007f_ffff;

    if exp == 0xff {
        return if man != 0 {
            sign | 0x7e00 | ((man >> 13) as u16)
        } else {
            sign | F16_INF_BITS
        };
    }

    let half_exp = exp - 127 + 15;
    if half_exp >= 0x1f {
        return sign | F16_INF_BITS;
    }

    if half_exp <= 0 {
        // Result is subnormal or zero. Anything below 2^-25 rounds to zero.
        if half_exp < -10 {
            return sign;
        }
        let significand = man | 0x0080_0000;
        let shift = (14 - half_exp) as u32;
        let kept = significand >> shift;
        let rem = significand & ((1 << shift) - 1);
        let halfway = 1 << (shift - 1);
        let round_up = rem > halfway || (rem == halfway && kept & 1 == 1);
        // A carry out of the subnormal range lands on the smallest normal.
        return sign | (kept + round_up as u32) as u16;
    }

    let kept = ((half_exp as u32) << 10) | (man >> 13);
    let rem = man & 0x1fff;
    let round_up = rem > 0x1000 || (rem == 0x1000 && kept & 1 == 1);
    sign | (kept + round_up as u32) as u16
}

/// Widens binary16 bits to `f32`. Exact for every half value.
pub fn f16_bits_to_f32(h: u16) -> f32 {
    let sign = ((h & 0x8000) as u32) << 16;
    let exp = ((h >> 10) & 0x1f) as u32;
    let man = (h & 0x03ff) as u32;
    match exp {
        0 => {
            let mag = man as f32 * f32::from_bits(0x3380_0000); // 2^-24
            if sign != 0 {
                -mag
            } else {
                mag
            }
        }
        0x1f => f32::from_bits(sign | 0x7f80_0000 | (man << 13)),
        _ => f32::from_bits(sign | ((exp + 112) << 23) | (man << 13)),
    }
}

/// Rounds `x` to the nearest binary16 value and widens it back.
///
/// Values beyond the finite half range (including infinities) saturate to
/// `±65504`. NaN stays NaN.
pub fn round_trip(x: f32) -> f32 {
    if x.is_nan() {
        return x;
    }
    let mut h = f32_to_f16_bits(x);
    if h & 0x7fff == F16_INF_BITS {
        h = (h & 0x8000) | F16_MAX_BITS;
    }
    f16_bits_to_f32(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn representable_values_pass_through() {
        for x in [0.0f32, -0.0, 1.0, -2.0, 0.5, 65504.0, F16_MIN_POSITIVE] {
            assert_eq!(round_trip(x).to_bits(), x.to_bits(), "{x}");
        }
    }

    #[test]
    fn ties_round_to_even() {
        // 2049 sits exactly between 2048 and 2050 (spacing 2 at this exponent).
        assert_eq!(round_trip(2049.0), 2048.0);
        assert_eq!(round_trip(2051.0), 2052.0);
    }

    #[test]
    fn overflow_saturates() {
        assert_eq!(round_trip(100_000.0), F16_MAX);
        assert_eq!(round_trip(-1e30), -F16_MAX);
        assert_eq!(round_trip(f32::INFINITY), F16_MAX);
        assert_eq!(round_trip(65519.0), F16_MAX);
        assert_eq!(round_trip(65520.0), F16_MAX);
    }

    #[test]
    fn subnormals() {
        let min_sub = f32::powi(2.0, -24);
        assert_eq!(round_trip(min_sub), min_sub);
        assert_eq!(round_trip(min_sub * 0.5), 0.0);
        assert_eq!(round_trip(min_sub * 0.75), min_sub);
        assert_eq!(round_trip(min_sub * 1.5), 2.0 * min_sub);
        assert_eq!(round_trip(1e-10), 0.0);
    }

    #[test]
    fn nan_is_preserved() {
        assert!(round_trip(f32::NAN).is_nan());
    }
}
