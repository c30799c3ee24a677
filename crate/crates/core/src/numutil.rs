//! Small numeric helpers shared across modules: mod-1 arithmetic, exact
//! big-integer × f64 fractional parts, compensated summation.
//!
//! The mod-1 helpers are the workhorses of every distance computation, so the
//! conventions are pinned here once: `frac` maps into `[0, 1)`,
//! `frac_centered` into `[-1/2, 1/2)`, and `norm1` is the distance to the
//! nearest integer (values in `[0, 1/2]`).

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive};

/// Fractional part in `[0, 1)`. `frac(-0.25) == 0.75`.
#[inline]
pub fn frac(t: f64) -> f64 {
    let f = t.rem_euclid(1.0);
    // rem_euclid can round to exactly 1.0 for tiny negative inputs.
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

/// Centered fractional part in `[-1/2, 1/2)`.
#[inline]
pub fn frac_centered(t: f64) -> f64 {
    let f = frac(t);
    if f >= 0.5 {
        f - 1.0
    } else {
        f
    }
}

/// Distance to the nearest integer, `‖t‖ ∈ [0, 1/2]`.
#[inline]
pub fn norm1(t: f64) -> f64 {
    let f = frac(t);
    f.min(1.0 - f)
}

/// Exact rational value of an f64 (every finite double is a dyadic rational).
pub fn rational_of(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite float")
}

/// `‖s·α − r·β‖` computed exactly in big-rational arithmetic, with only the
/// final reduction to f64 rounded. Needed when `s`, `r` are huge prime
/// products: the double-precision product `s·α` has no fractional bits left,
/// but `α` itself is an exact dyadic rational so the mod-1 value is exact.
pub fn norm1_big_combo(s: &BigInt, alpha: f64, r: &BigInt, beta: f64) -> f64 {
    let v = BigRational::from(s.clone()) * rational_of(alpha)
        - BigRational::from(r.clone()) * rational_of(beta);
    let fr = &v - v.floor(); // in [0, 1)
    let d = if fr > BigRational::new(BigInt::from(1), BigInt::from(2)) {
        BigRational::from(BigInt::from(1)) - fr
    } else {
        fr
    };
    d.abs().to_f64().unwrap_or(0.0)
}

/// `‖n·α‖` exactly, for big `n`.
pub fn norm1_big_multiple(n: &BigInt, alpha: f64) -> f64 {
    norm1_big_combo(n, alpha, &BigInt::from(0), 0.0)
}

/// Kahan–Babuška compensated accumulator for long float sums.
#[derive(Clone, Copy, Debug, Default)]
pub struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.c += (self.sum - t) + v;
        } else {
            self.c += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.c
    }
}

/// Deterministic 64-bit mixer (splitmix64 finalizer). Used for per-index
/// reproducible noise without sequential RNG state.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform value in `[0, 1)` derived from `mix64`.
#[inline]
pub fn unit_from_hash(seed: u64, idx: u64) -> f64 {
    let h = mix64(seed ^ mix64(idx));
    // 53 high bits → exact dyadic rational in [0,1).
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Inverse of `a` modulo `m`, or `None` when gcd(a, m) ≠ 1.
pub fn mod_inverse(a: u64, m: u64) -> Option<u64> {
    let e = num_integer::Integer::extended_gcd(&(a as i128), &(m as i128));
    if e.gcd != 1 {
        return None;
    }
    Some(e.x.rem_euclid(m as i128) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;

    #[test]
    fn frac_conventions() {
        assert_eq!(frac(1.25), 0.25);
        assert_eq!(frac(-0.25), 0.75);
        assert_eq!(frac_centered(0.75), -0.25);
        assert_eq!(norm1(0.75), 0.25);
        assert_eq!(norm1(3.0), 0.0);
        assert!(frac(-1e-19) < 1.0);
    }

    #[test]
    fn big_combo_matches_plain_for_small_inputs() {
        let s = BigInt::from(7);
        let r = BigInt::from(13);
        let plain = norm1(7.0 * 0.26 - 13.0 * 0.14);
        let exact = norm1_big_combo(&s, 0.26, &r, 0.14);
        assert!((plain - exact).abs() < 1e-12, "{plain} vs {exact}");
    }

    #[test]
    fn big_multiple_has_fractional_resolution_beyond_f64() {
        // n·α with n ~ 2^80: the double product has no fractional bits,
        // the exact route still resolves ‖n·α‖.
        let n = BigInt::from(1u128 << 80);
        let alpha = 0.5f64;
        assert_eq!(norm1_big_multiple(&n, alpha), 0.0); // 2^80 · 1/2 ∈ ℤ
        let alpha = 1.0 / 3.0; // dyadic approximation of 1/3
        let v = norm1_big_multiple(&n, alpha);
        assert!(v <= 0.5);
    }

    #[test]
    fn kahan_beats_naive_on_adversarial_sum() {
        let mut k = Kahan::default();
        k.add(1e16);
        for _ in 0..10 {
            k.add(1.0);
        }
        k.add(-1e16);
        assert_eq!(k.value(), 10.0);
    }
}
