//! Hurwitz zeta function for real arguments `s > 1`, `a > 0`.
//!
//! Used for closed-form weight sums and their tails:
//! `sum_{k >= K} (k + 1)^{-q} = zeta(q, K + 1)`.

/// B_{2j} / (2j)! for j = 1..=8.
const BERNOULLI_OVER_FACTORIAL: [f64; 8] = [
    1.0 / 6.0 / 2.0,
    -1.0 / 30.0 / 24.0,
    1.0 / 42.0 / 720.0,
    -1.0 / 30.0 / 40_320.0,
    5.0 / 66.0 / 3_628_800.0,
    -691.0 / 2730.0 / 479_001_600.0,
    7.0 / 6.0 / 87_178_291_200.0,
    -3617.0 / 510.0 / 20_922_789_888_000.0,
];

/// Shift applied before the asymptotic expansion kicks in.
const SHIFT_TARGET: f64 = 16.0;

/// Result of a zeta evaluation together with the size of the first omitted
/// Euler-Maclaurin term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZetaValue {
    pub value: f64,
    pub remainder: f64,
}

/// `zeta(s, a) = sum_{k >= 0} (k + a)^{-s}`.
///
/// Returns `f64::INFINITY` when `s <= 1` (divergent) and NaN for `a <= 0`.
pub fn hurwitz_zeta(s: f64, a: f64) -> f64 {
    hurwitz_zeta_with_remainder(s, a).value
}

pub fn hurwitz_zeta_with_remainder(s: f64, a: f64) -> ZetaValue {
    if !(a > 0.0) || s.is_nan() {
        return ZetaValue {
            value: f64::NAN,
            remainder: f64::NAN,
        };
    }
    if s <= 1.0 {
        return ZetaValue {
            value: f64::INFINITY,
            remainder: f64::INFINITY,
        };
    }
    let shift = if a < SHIFT_TARGET {
        (SHIFT_TARGET - a).ceil() as usize
    } else {
        0
    };
    let mut direct = 0.0;
    // smallest terms first
    for k in (0..shift).rev() {
        direct += (k as f64 + a).powf(-s);
    }
    let x = a + shift as f64;
    let x_pow = x.powf(-s);
    let mut tail = x * x_pow / (s - 1.0) + 0.5 * x_pow;
    // rising factorial s (s+1) ... (s+2j-2) times x^{-s-2j+1}
    let mut rising = s;
    let mut power = x_pow / x;
    let x2 = x * x;
    let mut last = 0.0;
    for (j, b) in BERNOULLI_OVER_FACTORIAL.iter().enumerate() {
        let term = b * rising * power;
        tail += term;
        last = term.abs();
        let base = s + (2 * j + 1) as f64;
        rising *= base * (base + 1.0);
        power /= x2;
    }
    ZetaValue {
        value: direct + tail,
        remainder: last,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Pairwise-free direct summation with an integral bracket for the tail.
    fn brute(s: f64, a: f64, n: usize) -> (f64, f64) {
        let mut sum = 0.0;
        for k in (0..n).rev() {
            sum += (k as f64 + a).powf(-s);
        }
        let x = n as f64 + a;
        // integral bracket: int_x^inf t^{-s} <= tail <= x^{-s} + int_x^inf t^{-s}
        let lo = x.powf(1.0 - s) / (s - 1.0);
        let hi = lo + x.powf(-s);
        (sum + lo, sum + hi)
    }

    #[test]
    fn riemann_values() {
        assert!((hurwitz_zeta(2.0, 1.0) - PI * PI / 6.0).abs() < 1e-15);
        assert!((hurwitz_zeta(4.0, 1.0) - PI.powi(4) / 90.0).abs() < 1e-15);
        // zeta(3) (Apery)
        assert!((hurwitz_zeta(3.0, 1.0) - 1.202_056_903_159_594_3).abs() < 1e-15);
    }

    #[test]
    fn half_shift_identity() {
        // zeta(s, 1/2) = (2^s - 1) zeta(s)
        for &s in &[1.5, 2.0, 3.5, 6.0] {
            let lhs = hurwitz_zeta(s, 0.5);
            let rhs = (2f64.powf(s) - 1.0) * hurwitz_zeta(s, 1.0);
            assert!((lhs - rhs).abs() <= 1e-14 * rhs, "s = {s}");
        }
    }

    #[test]
    fn agrees_with_bracketed_direct_sum() {
        for &(s, a) in &[(2.0, 1.0), (2.0, 129.0), (1.5, 3.25), (4.0, 1e6), (8.0, 2.0)] {
            let (lo, hi) = brute(s, a, 200_000);
            let z = hurwitz_zeta(s, a);
            let slack = 1e-13 * z;
            assert!(z >= lo - slack && z <= hi + slack, "s={s} a={a}: {lo} {z} {hi}");
        }
    }

    #[test]
    fn recurrence_in_a() {
        for &(s, a) in &[(2.0, 0.3), (3.0, 7.5), (2.5, 40.0)] {
            let lhs = hurwitz_zeta(s, a) - hurwitz_zeta(s, a + 1.0);
            let rhs = a.powf(-s);
            assert!((lhs - rhs).abs() <= 1e-13 * rhs.max(hurwitz_zeta(s, a)));
        }
    }

    #[test]
    fn divergent_and_invalid() {
        assert!(hurwitz_zeta(1.0, 1.0).is_infinite());
        assert!(hurwitz_zeta(0.5, 1.0).is_infinite());
        assert!(hurwitz_zeta(2.0, 0.0).is_nan());
    }
}
