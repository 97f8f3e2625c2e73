//! Weight sequences `a_n(k)`, coefficient sequences `c_{i,n}(k)` and their
//! derived scalars: `s(n) = sum_k 1/a_n(k)` and `J_i(n) = prod_k c_{i,n}(k)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::hurwitz_zeta_with_remainder;

/// Iteration cap for adaptive products.
const MAX_TERMS: usize = 1 << 24;

/// Products below this are treated as collapsed to zero.
const COLLAPSE_FLOOR: f64 = 1e-300;

/// Radial levels probed by [`validate_hypotheses`].
pub const PROBE_LEVELS: usize = 16;
/// Radial indices probed by [`validate_hypotheses`].
pub const PROBE_INDICES: usize = 256;

/// `x^e`, using `powi` when the exponent is a small integer so the common
/// families stay exact and fast.
fn pow_real(x: f64, e: f64) -> f64 {
    if e.fract() == 0.0 && e.abs() <= 64.0 {
        x.powi(e as i32)
    } else {
        x.powf(e)
    }
}

/// A truncated series or product together with a bound on what was left out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesValue {
    pub value: f64,
    /// Number of terms summed (or multiplied) explicitly.
    pub truncation: usize,
    pub tail_bound: f64,
}

/// `a_n(k) = lambda (n+1)^p (k+1)^q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub lambda: f64,
    pub p: f64,
    pub q: f64,
}

impl PowerLaw {
    pub const DEFAULT: PowerLaw = PowerLaw {
        lambda: 1.0,
        p: 1.0,
        q: 2.0,
    };

    fn level_scale(&self, n: usize) -> f64 {
        self.lambda * pow_real((n + 1) as f64, self.p)
    }

    pub fn value(&self, n: usize, k: usize) -> f64 {
        self.level_scale(n) * pow_real((k + 1) as f64, self.q)
    }

    fn summable(&self) -> bool {
        self.q > 1.0
    }

    /// `sum_{k >= from} 1/a_n(k)` with the Euler-Maclaurin remainder.
    fn inv_tail_with_remainder(&self, n: usize, from: usize) -> (f64, f64) {
        let z = hurwitz_zeta_with_remainder(self.q, (from + 1) as f64);
        let scale = self.level_scale(n);
        (z.value / scale, z.remainder / scale)
    }

    fn inv_sq_tail(&self, n: usize, from: usize) -> f64 {
        let z = hurwitz_zeta_with_remainder(2.0 * self.q, (from + 1) as f64);
        let scale = self.level_scale(n);
        z.value / (scale * scale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightFamily {
    Power(PowerLaw),
    /// Explicit values `table[n][k]`; entries outside the table follow `tail`.
    Tabulated { table: Vec<Vec<f64>>, tail: PowerLaw },
}

impl Default for WeightFamily {
    fn default() -> Self {
        WeightFamily::Power(PowerLaw::DEFAULT)
    }
}

impl WeightFamily {
    #[inline]
    pub fn a(&self, n: usize, k: usize) -> f64 {
        match self {
            WeightFamily::Power(law) => law.value(n, k),
            WeightFamily::Tabulated { table, tail } => table
                .get(n)
                .and_then(|row| row.get(k))
                .copied()
                .unwrap_or_else(|| tail.value(n, k)),
        }
    }

    fn law(&self) -> &PowerLaw {
        match self {
            WeightFamily::Power(law) => law,
            WeightFamily::Tabulated { tail, .. } => tail,
        }
    }

    fn row_len(&self, n: usize) -> usize {
        match self {
            WeightFamily::Power(_) => 0,
            WeightFamily::Tabulated { table, .. } => table.get(n).map_or(0, Vec::len),
        }
    }

    /// Checks the parameters that make every other method meaningful.
    pub fn check(&self) -> Result<()> {
        let law = self.law();
        if !(law.lambda > 0.0 && law.lambda.is_finite()) {
            return Err(Error::Hypothesis(format!(
                "weight scale lambda = {} must be positive",
                law.lambda
            )));
        }
        if !law.summable() {
            return Err(Error::Hypothesis(format!(
                "s(n) divergent: radial exponent q = {} <= 1",
                law.q
            )));
        }
        match self {
            WeightFamily::Power(law) if !(law.p >= 1.0) => Err(Error::Hypothesis(format!(
                "mode exponent p = {} must be >= 1",
                law.p
            ))),
            WeightFamily::Tabulated { table, tail } => {
                if !(tail.p > 0.0) {
                    return Err(Error::Hypothesis(format!(
                        "tail mode exponent p = {} must be > 0 for s(n) -> 0",
                        tail.p
                    )));
                }
                for (n, row) in table.iter().enumerate() {
                    if let Some(k) = row.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
                        return Err(Error::Hypothesis(format!(
                            "a_{n}({k}) = {} is not positive",
                            row[k]
                        )));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `sum_{k >= from} 1/a_n(k)`; infinite when the tail rule diverges.
    pub fn inv_tail(&self, n: usize, from: usize) -> f64 {
        let law = self.law();
        if !law.summable() {
            return f64::INFINITY;
        }
        let len = self.row_len(n);
        let mut head = 0.0;
        for k in (from..len).rev() {
            head += 1.0 / self.a(n, k);
        }
        head + law.inv_tail_with_remainder(n, from.max(len)).0
    }

    /// `sum_{k >= from} 1/a_n(k)^2`.
    pub fn inv_sq_tail(&self, n: usize, from: usize) -> f64 {
        let law = self.law();
        if !law.summable() {
            return f64::INFINITY;
        }
        let len = self.row_len(n);
        let mut head = 0.0;
        for k in (from..len).rev() {
            head += self.a(n, k).powi(-2);
        }
        head + law.inv_sq_tail(n, from.max(len))
    }
}

/// `s(n) = sum_k 1/a_n(k)`, closed form through the Hurwitz zeta function.
pub fn eval_s(family: &WeightFamily, n: usize) -> Result<SeriesValue> {
    family.check()?;
    let len = family.row_len(n);
    let mut head = 0.0;
    for k in (0..len).rev() {
        head += 1.0 / family.a(n, k);
    }
    let (tail, remainder) = family.law().inv_tail_with_remainder(n, len);
    let value = head + tail;
    Ok(SeriesValue {
        value,
        truncation: len,
        tail_bound: remainder + 4.0 * f64::EPSILON * value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientKind {
    Unit,
    /// `c_{i,n}(k) = 1 - t_i^{k+1}`.
    GeometricGap { t1: f64, t2: f64 },
    /// Explicit `c1[n][k]`, `c2[n][k]`; beyond the table the geometric rule
    /// with `t1`, `t2` applies.
    Tabulated {
        c1: Vec<Vec<f64>>,
        c2: Vec<Vec<f64>>,
        t1: f64,
        t2: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientFamily {
    #[serde(flatten)]
    pub kind: CoefficientKind,
    pub kappa: f64,
}

impl Default for CoefficientFamily {
    fn default() -> Self {
        CoefficientFamily {
            kind: CoefficientKind::GeometricGap { t1: 0.5, t2: 0.5 },
            kappa: 2.0,
        }
    }
}

impl CoefficientFamily {
    pub fn unit() -> Self {
        CoefficientFamily {
            kind: CoefficientKind::Unit,
            kappa: 1.0,
        }
    }

    pub fn geometric(t1: f64, t2: f64, kappa: f64) -> Self {
        CoefficientFamily {
            kind: CoefficientKind::GeometricGap { t1, t2 },
            kappa,
        }
    }

    fn gap_ratio(&self, i: usize) -> f64 {
        match &self.kind {
            CoefficientKind::Unit => 0.0,
            CoefficientKind::GeometricGap { t1, t2 } | CoefficientKind::Tabulated { t1, t2, .. } => {
                if i == 1 {
                    *t1
                } else {
                    *t2
                }
            }
        }
    }

    fn table(&self, i: usize) -> Option<&Vec<Vec<f64>>> {
        match &self.kind {
            CoefficientKind::Tabulated { c1, c2, .. } => Some(if i == 1 { c1 } else { c2 }),
            _ => None,
        }
    }

    fn row_len(&self, i: usize, n: usize) -> usize {
        self.table(i).and_then(|t| t.get(n)).map_or(0, Vec::len)
    }

    /// `c_{i,n}(k)` for `i` in {1, 2}.
    #[inline]
    pub fn c(&self, i: usize, n: usize, k: usize) -> f64 {
        debug_assert!(i == 1 || i == 2);
        if let Some(v) = self.table(i).and_then(|t| t.get(n)).and_then(|r| r.get(k)) {
            return *v;
        }
        let t = self.gap_ratio(i);
        if t == 0.0 {
            1.0
        } else {
            1.0 - pow_real(t, (k + 1) as f64)
        }
    }

    #[inline]
    pub fn c1(&self, n: usize, k: usize) -> f64 {
        self.c(1, n, k)
    }

    #[inline]
    pub fn c2(&self, n: usize, k: usize) -> f64 {
        self.c(2, n, k)
    }

    fn ln_c(&self, i: usize, n: usize, k: usize) -> f64 {
        if k < self.row_len(i, n) {
            return self.c(i, n, k).ln();
        }
        let t = self.gap_ratio(i);
        (-pow_real(t, (k + 1) as f64)).ln_1p()
    }

    /// Upper bound on `sum_{k >= from} (1 - c_{i,n}(k))`.
    pub fn tail_one_minus(&self, i: usize, n: usize, from: usize) -> f64 {
        let len = self.row_len(i, n);
        let mut head = 0.0;
        for k in from..len {
            head += 1.0 - self.c(i, n, k);
        }
        let t = self.gap_ratio(i);
        if t == 0.0 {
            return head;
        }
        head + pow_real(t, (from.max(len) + 1) as f64) / (1.0 - t)
    }

    /// Upper bound on `sum_{k >= from} (1/c_{i,n}(k) - 1)`; also bounds the
    /// tail of `-ln c`.
    pub fn tail_inv_minus_one(&self, i: usize, n: usize, from: usize) -> f64 {
        let len = self.row_len(i, n);
        let mut head = 0.0;
        for k in from..len {
            head += 1.0 / self.c(i, n, k) - 1.0;
        }
        let t = self.gap_ratio(i);
        if t == 0.0 {
            return head;
        }
        let first = pow_real(t, (from.max(len) + 1) as f64);
        head + first / ((1.0 - t) * (1.0 - first))
    }

    pub fn check(&self) -> Result<()> {
        if !(self.kappa >= 1.0 && self.kappa.is_finite()) {
            return Err(Error::Hypothesis(format!(
                "kappa = {} must be a finite number >= 1",
                self.kappa
            )));
        }
        for i in 1..=2 {
            let t = self.gap_ratio(i);
            let unit = matches!(self.kind, CoefficientKind::Unit);
            if !unit && !(t > 0.0 && t < 1.0) {
                return Err(Error::Hypothesis(format!("gap ratio t{i} = {t} must lie in (0, 1)")));
            }
            if let Some(table) = self.table(i) {
                for (n, row) in table.iter().enumerate() {
                    if let Some(k) = row.iter().position(|v| !(*v > 0.0 && *v <= 1.0)) {
                        return Err(Error::Hypothesis(format!(
                            "c_{i},{n}({k}) = {} outside (0, 1]",
                            row[k]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Smallest coefficient over `n < levels` (all `k`), used for the kappa
    /// bracket. Beyond any table the geometric rule is increasing in `k`.
    fn min_coefficient(&self, i: usize, levels: usize) -> (f64, usize, usize) {
        let mut best = (f64::INFINITY, 0, 0);
        for n in 0..levels {
            let len = self.row_len(i, n);
            for k in 0..=len {
                let v = self.c(i, n, k);
                if v < best.0 {
                    best = (v, n, k);
                }
            }
        }
        best
    }
}

/// `J_i(n) = prod_k c_{i,n}(k)`, accumulated as a sum of logarithms until the
/// tail bound drops below `tol`. The true product lies in
/// `[value - tail_bound, value]`.
pub fn eval_j(family: &CoefficientFamily, i: usize, n: usize, tol: f64) -> Result<SeriesValue> {
    if i != 1 && i != 2 {
        return Err(Error::Shape(format!("coefficient index {i} not in {{1, 2}}")));
    }
    family.check()?;
    let mut log_sum = 0.0;
    let mut k = 0;
    let mut delta = family.tail_inv_minus_one(i, n, 0);
    while delta >= tol {
        if k >= MAX_TERMS {
            return Err(Error::Convergence {
                what: "coefficient product",
                limit: MAX_TERMS,
                bound: delta,
            });
        }
        log_sum += family.ln_c(i, n, k);
        k += 1;
        delta = family.tail_inv_minus_one(i, n, k);
    }
    let value = log_sum.exp();
    if !(value > COLLAPSE_FLOOR) {
        return Err(Error::Hypothesis(format!(
            "product J_{i}({n}) collapses to zero (log = {log_sum:.3e})"
        )));
    }
    Ok(SeriesValue {
        value,
        truncation: k,
        tail_bound: -value * (-delta).exp_m1(),
    })
}

/// Weight and coefficient families bundled together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Families {
    pub weights: WeightFamily,
    pub coeffs: CoefficientFamily,
}

impl Families {
    pub fn new(weights: WeightFamily, coeffs: CoefficientFamily) -> Self {
        Families { weights, coeffs }
    }

    #[inline]
    pub fn a(&self, n: usize, k: usize) -> f64 {
        self.weights.a(n, k)
    }

    #[inline]
    pub fn c1(&self, n: usize, k: usize) -> f64 {
        self.coeffs.c1(n, k)
    }

    #[inline]
    pub fn c2(&self, n: usize, k: usize) -> f64 {
        self.coeffs.c2(n, k)
    }

    #[inline]
    pub fn kappa(&self) -> f64 {
        self.coeffs.kappa
    }

    pub fn check(&self) -> Result<()> {
        self.weights.check()?;
        self.coeffs.check()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub name: String,
    pub passed: bool,
    pub witness: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub entries: Vec<HypothesisCheck>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &HypothesisCheck> {
        self.entries.iter().filter(|e| !e.passed)
    }

    fn push(&mut self, name: &str, passed: bool, witness: String) {
        self.entries.push(HypothesisCheck {
            name: name.to_string(),
            passed,
            witness,
        });
    }
}

/// Checks every standing hypothesis on a probe grid and reports each with a
/// witness. Never fails; failures are entries of the report.
pub fn validate_hypotheses(w: &WeightFamily, c: &CoefficientFamily) -> ValidationReport {
    let mut report = ValidationReport { entries: Vec::new() };

    // positivity
    let mut bad = None;
    'outer: for n in 0..=PROBE_LEVELS {
        for k in 0..=PROBE_INDICES.max(w.row_len(n)) {
            let v = w.a(n, k);
            if !(v > 0.0 && v.is_finite()) {
                bad = Some((n, k, v));
                break 'outer;
            }
        }
    }
    match bad {
        None => report.push(
            "weights_positive",
            true,
            format!("a_n(k) > 0 for n <= {PROBE_LEVELS}, k <= {PROBE_INDICES}"),
        ),
        Some((n, k, v)) => report.push("weights_positive", false, format!("a_{n}({k}) = {v}")),
    }

    // summability and decay of s(n)
    match w.check() {
        Err(e) => {
            let msg = e.to_string();
            let divergent = msg.contains("divergent");
            report.push(
                "s_finite",
                !divergent,
                if divergent {
                    msg.trim_start_matches("hypothesis violated: ").to_string()
                } else {
                    "radial exponent gives a convergent tail".to_string()
                },
            );
            if !divergent {
                report.push("weight_parameters", false, msg);
            }
            report.push("s_decreasing", false, "skipped: s(n) unavailable".to_string());
        }
        Ok(()) => {
            let s: Vec<f64> = (0..=PROBE_LEVELS)
                .map(|n| eval_s(w, n).map(|v| v.value).unwrap_or(f64::NAN))
                .collect();
            report.push(
                "s_finite",
                s.iter().all(|v| v.is_finite()),
                format!("s(0) = {:.12e}", s[0]),
            );
            let violation = s.windows(2).position(|p| !(p[1] < p[0]));
            match violation {
                None => report.push(
                    "s_decreasing",
                    true,
                    format!("s({PROBE_LEVELS}) / s(0) = {:.6e}", s[PROBE_LEVELS] / s[0]),
                ),
                Some(n) => report.push(
                    "s_decreasing",
                    false,
                    format!("s({}) = {:.6e} >= s({n}) = {:.6e}", n + 1, s[n + 1], s[n]),
                ),
            }
        }
    }

    // kappa bracketing
    let kappa_ok = c.kappa >= 1.0 && c.kappa.is_finite();
    report.push("kappa_at_least_one", kappa_ok, format!("kappa = {}", c.kappa));
    match c.check() {
        Err(e) => report.push("coefficient_parameters", false, e.to_string()),
        Ok(()) => {
            let mut witness = String::new();
            let mut ok = true;
            for i in 1..=2 {
                let (min, n, k) = c.min_coefficient(i, PROBE_LEVELS + 1);
                if min * c.kappa < 1.0 {
                    ok = false;
                    witness = format!("c_{i},{n}({k}) = {min} < 1/kappa = {}", 1.0 / c.kappa);
                    break;
                }
                witness.push_str(&format!("min c_{i} = {min}; "));
            }
            report.push("kappa_bracket", ok, witness.trim_end_matches("; ").to_string());

            let mut witness = String::new();
            let mut ok = true;
            'levels: for n in 0..=PROBE_LEVELS {
                for i in 1..=2 {
                    match eval_j(c, i, n, 1e-12) {
                        Ok(j) if j.value - j.tail_bound > 0.0 => {
                            if n == 0 {
                                witness.push_str(&format!("J_{i}(0) = {:.12}; ", j.value));
                            }
                        }
                        Ok(j) => {
                            ok = false;
                            witness = format!("J_{i}({n}) = {:.3e} not bounded away from 0", j.value);
                            break 'levels;
                        }
                        Err(e) => {
                            ok = false;
                            witness = e.to_string();
                            break 'levels;
                        }
                    }
                }
            }
            report.push("products_nonzero", ok, witness.trim_end_matches("; ").to_string());
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Plain running product, no logarithms.
    fn product_oracle(t: f64, terms: usize) -> f64 {
        (0..terms).fold(1.0, |acc, k| acc * (1.0 - t.powi(k as i32 + 1)))
    }

    #[test]
    fn s_zero_is_zeta_two() {
        let s = eval_s(&WeightFamily::default(), 0).unwrap();
        assert!((s.value - PI * PI / 6.0).abs() < 1e-15);
        assert!(s.tail_bound < 1e-12);
        // direct summation to 1e6 terms plus integral bracket on the tail
        let mut direct = 0.0;
        for k in (0..1_000_000u64).rev() {
            direct += 1.0 / ((k + 1) as f64).powi(2);
        }
        let x = 1_000_001.0_f64;
        assert!(s.value >= direct + 1.0 / x - 1e-12);
        assert!(s.value <= direct + 1.0 / x + 1.0 / (x * x) + 1e-12);
    }

    #[test]
    fn s_scales_with_level() {
        let w = WeightFamily::default();
        let s0 = eval_s(&w, 0).unwrap().value;
        let s9 = eval_s(&w, 9).unwrap().value;
        assert!((s9 - s0 / 10.0).abs() <= 1e-16);
    }

    #[test]
    fn divergent_tail_rule_is_rejected() {
        let w = WeightFamily::Tabulated {
            table: vec![vec![1.0, 2.0, 3.0]],
            tail: PowerLaw {
                lambda: 1.0,
                p: 1.0,
                q: 1.0,
            },
        };
        assert!(matches!(eval_s(&w, 0), Err(Error::Hypothesis(_))));
        assert!(w.inv_tail(0, 0).is_infinite());
    }

    #[test]
    fn tabulated_head_then_power_tail() {
        let law = PowerLaw::DEFAULT;
        let w = WeightFamily::Tabulated {
            table: vec![vec![2.0, 8.0]],
            tail: law,
        };
        let expected = 0.5 + 0.125 + (PI * PI / 6.0 - 1.0 - 0.25);
        assert!((eval_s(&w, 0).unwrap().value - expected).abs() < 1e-14);
        // level 1 has no table row
        assert_eq!(w.a(1, 3), law.value(1, 3));
    }

    #[test]
    fn unit_family_products_are_one() {
        let c = CoefficientFamily::unit();
        for i in 1..=2 {
            let j = eval_j(&c, i, 3, 1e-12).unwrap();
            assert_eq!(j.value, 1.0);
            assert_eq!(j.tail_bound, 0.0);
        }
    }

    #[test]
    fn geometric_half_product() {
        let c = CoefficientFamily::default();
        let j = eval_j(&c, 1, 0, 1e-12).unwrap();
        // independent plain product, 60 factors exhaust double precision
        let oracle = product_oracle(0.5, 60);
        assert!(j.tail_bound < 1e-12);
        assert!(oracle <= j.value + 1e-16 && oracle >= j.value - j.tail_bound - 1e-16);
        assert!((oracle - 0.288_788_095_086_602_4).abs() < 1e-15);
        let tight = eval_j(&c, 1, 0, 1e-17).unwrap();
        assert!((tight.value - oracle).abs() < 1e-15);
    }

    #[test]
    fn kappa_two_is_accepted_for_half() {
        let report = validate_hypotheses(&WeightFamily::default(), &CoefficientFamily::default());
        assert!(report.all_passed(), "{report:?}");
    }

    #[test]
    fn harmonic_weights_flagged() {
        let w = WeightFamily::Power(PowerLaw {
            lambda: 1.0,
            p: 1.0,
            q: 1.0,
        });
        let report = validate_hypotheses(&w, &CoefficientFamily::default());
        assert!(!report.all_passed());
        let entry = report.entries.iter().find(|e| e.name == "s_finite").unwrap();
        assert!(!entry.passed);
        assert!(entry.witness.contains("s(n) divergent"));
    }

    #[test]
    fn kappa_one_fails_bracket() {
        let c = CoefficientFamily::geometric(0.5, 0.5, 1.0);
        let report = validate_hypotheses(&WeightFamily::default(), &c);
        let entry = report.entries.iter().find(|e| e.name == "kappa_bracket").unwrap();
        assert!(!entry.passed);
    }

    #[test]
    fn tail_bounds_dominate_direct_sums() {
        let c = CoefficientFamily::geometric(0.3, 0.7, 4.0);
        for &from in &[0usize, 1, 5, 20] {
            for i in 1..=2 {
                let direct_one: f64 = (from..400).map(|k| 1.0 - c.c(i, 0, k)).sum();
                let direct_inv: f64 = (from..400).map(|k| 1.0 / c.c(i, 0, k) - 1.0).sum();
                assert!(direct_one <= c.tail_one_minus(i, 0, from) + 1e-13);
                assert!(direct_inv <= c.tail_inv_minus_one(i, 0, from) + 1e-13);
            }
        }
    }

    proptest! {
        #[test]
        fn closed_form_level_ratio(n in 0usize..200, p in 1.0f64..3.0, q in 1.2f64..4.0) {
            let w = WeightFamily::Power(PowerLaw { lambda: 0.7, p, q });
            let r = eval_s(&w, n + 1).unwrap().value / eval_s(&w, n).unwrap().value;
            let expected = ((n + 1) as f64 / (n + 2) as f64).powf(p);
            prop_assert!((r - expected).abs() <= 1e-14 * expected);
        }

        #[test]
        fn product_bracket_contains_longer_truncation(t in 0.05f64..0.95, extra in 1usize..200) {
            let c = CoefficientFamily::geometric(t, t, 1.0 / (1.0 - t));
            let j = eval_j(&c, 1, 0, 1e-9).unwrap();
            let longer = product_oracle(t, j.truncation + extra);
            let slack = 1e-13 * j.value;
            prop_assert!(longer <= j.value + slack);
            prop_assert!(longer >= j.value - j.tail_bound - slack);
        }

        #[test]
        fn evaluations_are_deterministic(n in 0usize..50, t in 0.1f64..0.9) {
            let w = WeightFamily::default();
            let c = CoefficientFamily::geometric(t, 0.5, 10.0);
            prop_assert_eq!(eval_s(&w, n).unwrap().value.to_bits(), eval_s(&w, n).unwrap().value.to_bits());
            prop_assert_eq!(
                eval_j(&c, 1, n, 1e-12).unwrap().value.to_bits(),
                eval_j(&c, 1, n, 1e-12).unwrap().value.to_bits()
            );
        }
    }
}
