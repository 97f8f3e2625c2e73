//! The 2x2 coefficient matrices of the per-mode difference system and the
//! convergent infinite product of the transfer matrices.
//!
//! Products are ordered right to left: `P(k) = C(k-1) ... C(1) C(0)`.

use std::ops::{Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weights::Families;

/// Determinants below this magnitude are treated as singular.
pub const SINGULARITY_FLOOR: f64 = 1e-300;

/// Default cap on the adaptive truncation index.
pub const DEFAULT_INDEX_CAP: usize = 1 << 22;

/// Angular mode `m` and radial level `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeIndex {
    pub m: i64,
    pub n: usize,
}

impl ModeIndex {
    pub fn new(m: i64, n: usize) -> Self {
        ModeIndex { m, n }
    }

    #[inline]
    pub fn mf(&self) -> f64 {
        self.m as f64
    }
}

impl std::fmt::Display for ModeIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.m, self.n)
    }
}

/// Row-major real 2x2 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2([[a, b], [c, d]])
    }

    pub fn diag(a: f64, d: f64) -> Self {
        Mat2([[a, 0.0], [0.0, d]])
    }

    #[inline]
    pub fn det(&self) -> f64 {
        let [[a, b], [c, d]] = self.0;
        a * d - b * c
    }

    #[inline]
    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        let [[a, b], [c, d]] = self.0;
        [a * v[0] + b * v[1], c * v[0] + d * v[1]]
    }

    pub fn transpose(&self) -> Mat2 {
        let [[a, b], [c, d]] = self.0;
        Mat2([[a, c], [b, d]])
    }

    /// Sum of absolute values of the entries (submultiplicative).
    pub fn norm_l1(&self) -> f64 {
        self.0.iter().flatten().map(|x| x.abs()).sum()
    }

    pub fn entries(&self) -> [f64; 4] {
        let [[a, b], [c, d]] = self.0;
        [a, b, c, d]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|x| x.is_finite())
    }
}

impl Mul for Mat2 {
    type Output = Mat2;

    #[inline]
    fn mul(self, rhs: Mat2) -> Mat2 {
        let [[a, b], [c, d]] = self.0;
        let [[e, f], [g, h]] = rhs.0;
        Mat2([[a * e + b * g, a * f + b * h], [c * e + d * g, c * f + d * h]])
    }
}

impl Sub for Mat2 {
    type Output = Mat2;

    fn sub(self, rhs: Mat2) -> Mat2 {
        let mut out = self.0;
        for (row, r) in out.iter_mut().zip(rhs.0.iter()) {
            for (x, y) in row.iter_mut().zip(r.iter()) {
                *x -= y;
            }
        }
        Mat2(out)
    }
}

/// `A(k+1) = [[a_{n+1}(k) c1(k), 0], [m, a_n(k+1)]]`.
#[inline]
pub fn build_a(mode: ModeIndex, k: usize, fam: &Families) -> Mat2 {
    let n = mode.n;
    Mat2([
        [fam.a(n + 1, k) * fam.c1(n, k), 0.0],
        [mode.mf(), fam.a(n, k + 1)],
    ])
}

/// `A(k+1) C(k) = [[a_{n+1}(k), -m], [0, a_n(k+1) c2(k)]]`, assembled directly.
#[inline]
pub fn build_b(mode: ModeIndex, k: usize, fam: &Families) -> Mat2 {
    let n = mode.n;
    Mat2([
        [fam.a(n + 1, k), -mode.mf()],
        [0.0, fam.a(n, k + 1) * fam.c2(n, k)],
    ])
}

/// Transfer matrix `C(k)` with `det C(k) = c2(k)/c1(k)`.
#[inline]
pub fn build_c(mode: ModeIndex, k: usize, fam: &Families) -> Mat2 {
    let n = mode.n;
    let m = mode.mf();
    let c1 = fam.c1(n, k);
    let c2 = fam.c2(n, k);
    let a_up = fam.a(n + 1, k);
    let a_next = fam.a(n, k + 1);
    Mat2([
        [1.0 / c1, -m / (a_up * c1)],
        [-m / (a_next * c1), c2 + m * m / (a_next * a_up * c1)],
    ])
}

/// Adjugate over determinant.
pub fn invert(mat: &Mat2) -> Result<Mat2> {
    let det = mat.det();
    if !(det.abs() > SINGULARITY_FLOOR) || !det.is_finite() {
        return Err(Error::Singular { det });
    }
    let [[a, b], [c, d]] = mat.0;
    Ok(Mat2([[d / det, -b / det], [-c / det, a / det]]))
}

/// Upper bound on `sum_{k >= from} ||C(k) - I||_1`.
pub fn tail_bound(mode: ModeIndex, fam: &Families, from: usize) -> f64 {
    let n = mode.n;
    let m = mode.m.unsigned_abs() as f64;
    let kappa = fam.kappa();
    let coeff = fam.coeffs.tail_inv_minus_one(1, n, from) + fam.coeffs.tail_one_minus(2, n, from);
    if m == 0.0 {
        return coeff;
    }
    let up = fam.weights.inv_tail(n + 1, from);
    let next = fam.weights.inv_tail(n, from + 1);
    coeff + m * kappa * (up + next) + m * m * kappa * up * next
}

/// Smallest index `K >= min_index` with `tail_bound(K) < tol`, located by
/// doubling then bisection. Returns the index and its bound.
pub fn seed_index(
    mode: ModeIndex,
    fam: &Families,
    tol: f64,
    min_index: usize,
    cap: usize,
) -> Result<(usize, f64)> {
    let bound_at = |k: usize| tail_bound(mode, fam, k);
    let first = bound_at(min_index);
    if first < tol {
        return Ok((min_index, first));
    }
    let mut lo = min_index;
    let mut hi = min_index.max(1);
    loop {
        hi = hi.saturating_mul(2).min(cap);
        let b = bound_at(hi);
        if b < tol {
            break;
        }
        if hi >= cap {
            return Err(Error::Convergence {
                what: "transfer product",
                limit: cap,
                bound: b,
            });
        }
        lo = hi;
    }
    // invariant: bound(lo) >= tol > bound(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if bound_at(mid) < tol {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((hi, bound_at(hi)))
}

/// `C(to-1) ... C(from)`; identity when `to <= from`.
pub fn product_range(mode: ModeIndex, fam: &Families, from: usize, to: usize) -> Mat2 {
    let mut acc = Mat2::IDENTITY;
    for k in from..to {
        acc = build_c(mode, k, fam) * acc;
    }
    acc
}

/// Partial products `P(k)` for `k = 0..=truncation` and the limit estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferProduct {
    pub mode: ModeIndex,
    pub partials: Vec<Mat2>,
    pub limit: Mat2,
    pub truncation: usize,
    /// Bound on `sum_{k >= truncation} ||C(k) - I||_1`.
    pub tail_bound: f64,
}

impl TransferProduct {
    /// Bound on `||C_inf - P(K)||_1` implied by the tail bound.
    pub fn limit_error(&self) -> f64 {
        self.limit.norm_l1() * self.tail_bound.exp_m1()
    }
}

pub fn limit_product(mode: ModeIndex, fam: &Families, tol: f64) -> Result<TransferProduct> {
    limit_product_capped(mode, fam, tol, DEFAULT_INDEX_CAP)
}

pub fn limit_product_capped(
    mode: ModeIndex,
    fam: &Families,
    tol: f64,
    cap: usize,
) -> Result<TransferProduct> {
    fam.check()?;
    let (truncation, bound) = seed_index(mode, fam, tol, 0, cap)?;
    let mut partials = Vec::with_capacity(truncation + 1);
    let mut acc = Mat2::IDENTITY;
    partials.push(acc);
    for k in 0..truncation {
        acc = build_c(mode, k, fam) * acc;
        partials.push(acc);
    }
    if !acc.is_finite() {
        return Err(Error::Range(format!("transfer product for mode {mode}")));
    }
    invert(&acc)?;
    Ok(TransferProduct {
        mode,
        partials,
        limit: acc,
        truncation,
        tail_bound: bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureCheck {
    pub name: String,
    pub passed: bool,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub mode: ModeIndex,
    pub checks: Vec<StructureCheck>,
}

impl StructureReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Sign and ordering structure of the limit product: diagonal entries dominate
/// the coefficient products, off-diagonals carry the sign `-sgn(m)`, and the
/// determinant matches `prod c2 / prod c1`.
pub fn structure_check(tp: &TransferProduct, fam: &Families) -> StructureReport {
    let mode = tp.mode;
    let n = mode.n;
    let [[l00, l01], [l10, l11]] = tp.limit.0;
    let mut inv_c1 = 1.0;
    let mut c2 = 1.0;
    for k in 0..tp.truncation {
        inv_c1 /= fam.c1(n, k);
        c2 *= fam.c2(n, k);
    }
    let mut checks = Vec::new();
    let mut push = |name: &str, passed: bool, value: f64| {
        checks.push(StructureCheck {
            name: name.to_string(),
            passed,
            value,
        })
    };
    let f0 = l00 - inv_c1;
    let f3 = l11 - c2;
    let slack = 1e-13;
    push("f0_nonnegative", f0 >= -slack * l00.abs(), f0);
    push("f3_nonnegative", f3 >= -slack * l11.abs(), f3);
    if mode.m == 0 {
        push("off_diagonal_zero", l01 == 0.0 && l10 == 0.0, l01.abs() + l10.abs());
    } else {
        let m = mode.mf();
        let f1 = -l01 / m;
        let f2 = -l10 / m;
        push("f1_positive", f1 > 0.0, f1);
        push("f2_positive", f2 > 0.0, f2);
        // F3 = (prod 1/c1 + F0)^{-1} (m^2 F1 F2 - F0 prod c2)
        let predicted = (m * m * f1 * f2 - f0 * c2) / (inv_c1 + f0);
        let rel = (f3 - predicted).abs() / l11.abs().max(c2);
        push("f3_relation", rel <= 1e-10, rel);
    }
    // measured against the size of the cancelling products l00 l11, l01 l10
    let det_scale = (l00 * l11).abs() + (l01 * l10).abs();
    let det_rel = (tp.limit.det() - c2 * inv_c1).abs() / det_scale.max(c2 * inv_c1);
    push("det_matches_products", det_rel <= 1e-10, det_rel);
    StructureReport { mode, checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{eval_j, CoefficientFamily, WeightFamily};
    use proptest::prelude::*;

    fn defaults() -> Families {
        Families::default()
    }

    #[test]
    fn a_matrix_first_entry() {
        let a = build_a(ModeIndex::new(1, 0), 0, &defaults());
        assert_eq!(a, Mat2::new(1.0, 0.0, 1.0, 4.0));
        let a0 = build_a(ModeIndex::new(0, 2), 5, &defaults());
        assert_eq!(a0.0[1][0], 0.0);
    }

    #[test]
    fn c_matrix_first_entry() {
        let c = build_c(ModeIndex::new(1, 0), 0, &defaults());
        assert_eq!(c, Mat2::new(2.0, -1.0, -0.5, 0.75));
    }

    #[test]
    fn c_diagonal_at_zero_mode() {
        let fam = Families::new(WeightFamily::default(), CoefficientFamily::geometric(0.5, 0.5, 2.0));
        assert_eq!(build_c(ModeIndex::new(0, 3), 0, &fam), Mat2::diag(2.0, 0.5));
    }

    #[test]
    fn c_determinant_with_distinct_gaps() {
        // c1(0) = 1/2, c2(0) = 3/4
        let fam = Families::new(WeightFamily::default(), CoefficientFamily::geometric(0.5, 0.25, 2.0));
        for m in [-7i64, -1, 0, 3, 40] {
            let c = build_c(ModeIndex::new(m, 2), 0, &fam);
            assert!((c.det() - 1.5).abs() <= 1e-15 * (1.0 + c.norm_l1().powi(2)));
        }
    }

    #[test]
    fn b_is_a_times_c() {
        let fam = defaults();
        for &(m, n, k) in &[(1i64, 0usize, 0usize), (-5, 3, 7), (32, 16, 100)] {
            let mode = ModeIndex::new(m, n);
            let ac = build_a(mode, k, &fam) * build_c(mode, k, &fam);
            let b = build_b(mode, k, &fam);
            assert!((ac - b).norm_l1() <= 1e-13 * b.norm_l1());
        }
    }

    #[test]
    fn inverse_round_trip() {
        assert_eq!(invert(&Mat2::IDENTITY).unwrap(), Mat2::IDENTITY);
        assert_eq!(invert(&Mat2::diag(2.0, 0.5)).unwrap(), Mat2::diag(0.5, 2.0));
        let c = build_c(ModeIndex::new(1, 0), 0, &defaults());
        let r = c * invert(&c).unwrap() - Mat2::IDENTITY;
        assert!(r.norm_l1() <= 1e-15);
        assert!(matches!(invert(&Mat2::new(1.0, 2.0, 2.0, 4.0)), Err(Error::Singular { .. })));
    }

    #[test]
    fn unit_coefficients_zero_mode_limit_is_identity() {
        let fam = Families::new(WeightFamily::default(), CoefficientFamily::unit());
        let tp = limit_product(ModeIndex::new(0, 1), &fam, 1e-10).unwrap();
        assert_eq!(tp.limit, Mat2::IDENTITY);
    }

    #[test]
    fn zero_mode_limit_is_diagonal_of_products() {
        let fam = defaults();
        let tp = limit_product(ModeIndex::new(0, 2), &fam, 1e-13).unwrap();
        let j1 = eval_j(&fam.coeffs, 1, 2, 1e-14).unwrap().value;
        let j2 = eval_j(&fam.coeffs, 2, 2, 1e-14).unwrap().value;
        let expected = Mat2::diag(1.0 / j1, j2);
        assert!((tp.limit - expected).norm_l1() <= 1e-12);
        assert_eq!(tp.limit.0[0][1], 0.0);
    }

    #[test]
    fn limit_determinant_matches_products() {
        let fam = defaults();
        let tp = limit_product(ModeIndex::new(3, 2), &fam, 1e-4).unwrap();
        let j1 = eval_j(&fam.coeffs, 1, 2, 1e-14).unwrap().value;
        let j2 = eval_j(&fam.coeffs, 2, 2, 1e-14).unwrap().value;
        assert!((tp.limit.det() - j2 / j1).abs() <= 1e-10 * (j2 / j1));
        assert!(tp.tail_bound < 1e-4);
        assert_eq!(tp.partials.len(), tp.truncation + 1);
    }

    #[test]
    fn limit_determinant_distinct_gaps() {
        let fam = Families::new(WeightFamily::default(), CoefficientFamily::geometric(0.5, 0.25, 2.0));
        let tp = limit_product(ModeIndex::new(3, 2), &fam, 1e-4).unwrap();
        let j1 = eval_j(&fam.coeffs, 1, 2, 1e-15).unwrap().value;
        let j2 = eval_j(&fam.coeffs, 2, 2, 1e-15).unwrap().value;
        let rel = (tp.limit.det() - j2 / j1).abs() / (j2 / j1);
        assert!(rel <= 1e-10, "{rel}");
    }

    #[test]
    fn tail_bound_dominates_direct_sum() {
        let fam = defaults();
        for &(m, n, from) in &[(1i64, 0usize, 0usize), (-8, 2, 10), (32, 0, 128)] {
            let mode = ModeIndex::new(m, n);
            let direct: f64 = (from..from + 200_000)
                .map(|k| (build_c(mode, k, &fam) - Mat2::IDENTITY).norm_l1())
                .sum();
            assert!(direct <= tail_bound(mode, &fam, from));
        }
    }

    #[test]
    fn seed_index_is_minimal() {
        let fam = defaults();
        let mode = ModeIndex::new(4, 1);
        let (k, b) = seed_index(mode, &fam, 1e-3, 0, DEFAULT_INDEX_CAP).unwrap();
        assert!(b < 1e-3);
        assert!(tail_bound(mode, &fam, k - 1) >= 1e-3);
        let capped = seed_index(mode, &fam, 1e-9, 0, 1024);
        assert!(matches!(capped, Err(Error::Convergence { .. })));
    }

    #[test]
    fn structure_for_signed_modes() {
        let fam = defaults();
        for m in [5i64, -5, 0] {
            let tp = limit_product(ModeIndex::new(m, 0), &fam, 1e-4).unwrap();
            let report = structure_check(&tp, &fam);
            assert!(report.all_passed(), "{report:?}");
            if m < 0 {
                assert!(tp.limit.0[0][1] > 0.0 && tp.limit.0[1][0] > 0.0);
            }
            if m == 0 {
                assert_eq!(tp.limit.0[0][1], 0.0);
                assert_eq!(tp.limit.0[1][0], 0.0);
            }
        }
    }

    proptest! {
        #[test]
        fn c_determinant_identity(m in -64i64..64, n in 0usize..20, k in 0usize..500, t1 in 0.1f64..0.9, t2 in 0.1f64..0.9) {
            let fam = Families::new(WeightFamily::default(), CoefficientFamily::geometric(t1, t2, 20.0));
            let c = build_c(ModeIndex::new(m, n), k, &fam);
            let expected = fam.c2(n, k) / fam.c1(n, k);
            // cancellation in ad - bc scales with the size of the products
            let scale = (c.0[0][0] * c.0[1][1]).abs() + (c.0[0][1] * c.0[1][0]).abs();
            prop_assert!((c.det() - expected).abs() <= 4.0 * f64::EPSILON * scale);
        }

        #[test]
        fn partial_products_associate(m in -16i64..16, n in 0usize..6, k in 1usize..60) {
            let fam = defaults();
            let mode = ModeIndex::new(m, n);
            let p_k = product_range(mode, &fam, 0, k);
            let p_next = product_range(mode, &fam, 0, k + 1);
            let stepped = build_c(mode, k, &fam) * p_k;
            prop_assert!((p_next - stepped).norm_l1() <= 1e-14 * p_next.norm_l1());
            // split point does not matter
            let split = product_range(mode, &fam, k / 2, k + 1) * product_range(mode, &fam, 0, k / 2);
            prop_assert!((p_next - split).norm_l1() <= 1e-12 * p_next.norm_l1());
        }

        #[test]
        fn partial_product_determinant(m in -16i64..16, k in 1usize..200) {
            let fam = Families::new(WeightFamily::default(), CoefficientFamily::geometric(0.4, 0.6, 3.0));
            let mode = ModeIndex::new(m, 1);
            let p = product_range(mode, &fam, 0, k);
            let expected: f64 = (0..k).map(|i| fam.c2(1, i) / fam.c1(1, i)).product();
            let scale = (p.0[0][0] * p.0[1][1]).abs() + (p.0[0][1] * p.0[1][0]).abs();
            prop_assert!((p.det() - expected).abs() <= (k as f64) * 1e-14 * scale.max(expected));
        }

        #[test]
        fn mirror_negates_off_diagonals(m in 1i64..100, n in 0usize..10, k in 0usize..100) {
            let fam = defaults();
            let c = build_c(ModeIndex::new(m, n), k, &fam);
            let d = build_c(ModeIndex::new(-m, n), k, &fam);
            prop_assert_eq!(c.0[0][0], d.0[0][0]);
            prop_assert_eq!(c.0[1][1], d.0[1][1]);
            prop_assert_eq!(c.0[0][1], -d.0[0][1]);
            prop_assert_eq!(c.0[1][0], -d.0[1][0]);
        }
    }
}
