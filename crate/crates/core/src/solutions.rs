//! The special kernel solutions `I` (regular at the origin) and `K`
//! (prescribed at infinity), their pairing `tau`, the scalar `epsilon(m, n)`
//! and checkers for the inequalities they satisfy.
//!
//! `I` is recursed forward from its normalization. `K` is recursed backward:
//! it is seeded with its value at infinity at an index far enough out that the
//! remaining transfer product is within `tol_prod` of the identity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transfer::{build_c, invert, seed_index, Mat2, ModeIndex, DEFAULT_INDEX_CAP};
use crate::weights::{Families, SeriesValue};

/// Pairings smaller than this, relative to `|K(0)| |I(0)|`, are degenerate.
const TAU_RELATIVE_FLOOR: f64 = 1e-13;

/// Default additive slack (relative to the size of both sides) for the
/// inequality checks.
pub const DEFAULT_SLACK: f64 = 1e-14;

/// Truncation parameters shared by every per-mode computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    /// Last radial index kept in tables.
    pub k_max: usize,
    /// Target for the transfer-product tail bound when seeding `K`.
    pub tol_prod: f64,
    /// Target for scalar series tails (`epsilon`, `J_i`).
    pub tol_tail: f64,
    pub index_cap: usize,
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation {
            k_max: 128,
            tol_prod: 1e-4,
            tol_tail: 1e-12,
            index_cap: DEFAULT_INDEX_CAP,
        }
    }
}

impl Truncation {
    pub fn with_k_max(mut self, k_max: usize) -> Self {
        self.k_max = k_max;
        self
    }
}

/// `v^perp = (v2, -v1)`.
#[inline]
pub fn perp(v: [f64; 2]) -> [f64; 2] {
    [v[1], -v[0]]
}

#[inline]
pub fn dot(u: [f64; 2], v: [f64; 2]) -> f64 {
    u[0] * v[0] + u[1] * v[1]
}

/// `<K, I^perp> = K1 I2 - K2 I1`.
#[inline]
pub fn pairing(k: [f64; 2], i: [f64; 2]) -> f64 {
    dot(k, perp(i))
}

fn norm2(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// A user-supplied value of `K(inf)` for one angular mode (all levels `n`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CustomBoundary {
    pub m: i64,
    pub k1: f64,
    pub k2: f64,
}

/// How `K(inf)` is chosen per mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum BoundaryRule {
    /// `(sgn(m)/(1+m^2), 1)`.
    #[default]
    Default,
    /// Listed modes use the given values; others fall back to the default.
    /// With `strict = false` the sign conditions are not enforced.
    Custom {
        entries: Vec<CustomBoundary>,
        strict: bool,
    },
}

pub fn default_k_infinity(m: i64) -> [f64; 2] {
    if m == 0 {
        [0.0, 1.0]
    } else {
        let mf = m as f64;
        [mf.signum() / (1.0 + mf * mf), 1.0]
    }
}

/// Value of `K(inf)` and where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryData {
    pub mode: ModeIndex,
    pub k_inf: [f64; 2],
    pub rule: String,
}

impl BoundaryData {
    /// `|K1(inf) / K2(inf)|`.
    pub fn ratio(&self) -> f64 {
        (self.k_inf[0] / self.k_inf[1]).abs()
    }
}

/// Returns the violated sign condition, if any.
pub fn sign_condition_violation(m: i64, k_inf: [f64; 2]) -> Option<&'static str> {
    let [k1, k2] = k_inf;
    if !(k1.is_finite() && k2.is_finite()) {
        return Some("K(inf) must be finite");
    }
    match m.signum() {
        1 if !(k1 > 0.0 && k2 > 0.0) => Some("m > 0 requires K1(inf) > 0 and K2(inf) > 0"),
        -1 if !(k1 < 0.0 && k2 > 0.0) => Some("m < 0 requires K1(inf) < 0 and K2(inf) > 0"),
        0 if !(k1 == 0.0 && k2 != 0.0) => Some("m = 0 requires K1(inf) = 0 and K2(inf) != 0"),
        _ => None,
    }
}

pub fn choose_k_infinity(mode: ModeIndex, rule: &BoundaryRule) -> Result<BoundaryData> {
    match rule {
        BoundaryRule::Default => Ok(BoundaryData {
            mode,
            k_inf: default_k_infinity(mode.m),
            rule: "default".to_string(),
        }),
        BoundaryRule::Custom { entries, strict } => {
            let Some(entry) = entries.iter().find(|e| e.m == mode.m) else {
                return Ok(BoundaryData {
                    mode,
                    k_inf: default_k_infinity(mode.m),
                    rule: "default".to_string(),
                });
            };
            let k_inf = [entry.k1, entry.k2];
            if *strict {
                if let Some(clause) = sign_condition_violation(mode.m, k_inf) {
                    return Err(Error::BoundaryRule {
                        m: mode.m,
                        clause: clause.to_string(),
                    });
                }
            }
            Ok(BoundaryData {
                mode,
                k_inf,
                rule: "custom".to_string(),
            })
        }
    }
}

/// Forward recursion `I(k+1) = C(k) I(k)` from `I(0) = (-1, m/a_n(0))`.
pub fn compute_i(mode: ModeIndex, fam: &Families, k_max: usize) -> Result<Vec<[f64; 2]>> {
    let mut out = Vec::with_capacity(k_max + 1);
    let mut v = [-1.0, mode.mf() / fam.a(mode.n, 0)];
    out.push(v);
    for k in 0..k_max {
        v = build_c(mode, k, fam).apply(v);
        if !(v[0].is_finite() && v[1].is_finite()) {
            return Err(Error::Range(format!("I table for mode {mode} at k = {}", k + 1)));
        }
        out.push(v);
    }
    Ok(out)
}

/// Backward recursion `K(k) = C(k)^{-1} K(k+1)` seeded with `K(seed) = K(inf)`.
///
/// Returns the table for `k = 0..=k_max` and the forward product
/// `T = C(seed-1) ... C(k_max)` carrying `K(k_max)` back to `K(inf)`.
pub fn compute_k(
    mode: ModeIndex,
    fam: &Families,
    k_max: usize,
    bd: &BoundaryData,
    seed: usize,
) -> Result<(Vec<[f64; 2]>, Mat2)> {
    let seed = seed.max(k_max);
    let mut v = bd.k_inf;
    let mut t_inv = Mat2::IDENTITY;
    for k in (k_max..seed).rev() {
        let inv = invert(&build_c(mode, k, fam))?;
        v = inv.apply(v);
        t_inv = inv * t_inv;
    }
    let mut out = vec![[0.0; 2]; k_max + 1];
    out[k_max] = v;
    for k in (0..k_max).rev() {
        v = invert(&build_c(mode, k, fam))?.apply(v);
        if !(v[0].is_finite() && v[1].is_finite()) {
            return Err(Error::Range(format!("K table for mode {mode} at k = {k}")));
        }
        out[k] = v;
    }
    Ok((out, invert(&t_inv)?))
}

/// `epsilon(m, n) = sum_k a_{n+1}(k) / (m^2 + a_n(k) a_{n+1}(k))`.
///
/// The partial sum is completed with the exact tail of `sum 1/a_n`, which
/// overestimates the remaining terms by at most
/// `m^2 sum_{k >= K} 1/(a_n(k)^2 a_{n+1}(k))`; that quantity is the reported
/// tail bound.
pub fn epsilon(mode: ModeIndex, fam: &Families, tol: f64) -> Result<SeriesValue> {
    let n = mode.n;
    let m2 = mode.mf() * mode.mf();
    let bound_at = |k: usize| m2 * fam.weights.inv_sq_tail(n, k) * fam.weights.inv_tail(n + 1, k);
    let mut truncation = 0;
    if m2 > 0.0 {
        let mut hi = 1usize;
        while bound_at(hi) >= tol {
            if hi >= DEFAULT_INDEX_CAP {
                return Err(Error::Convergence {
                    what: "epsilon series",
                    limit: hi,
                    bound: bound_at(hi),
                });
            }
            hi *= 2;
        }
        let mut lo = hi / 2;
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if bound_at(mid) < tol {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        truncation = hi;
    }
    let tail = fam.weights.inv_tail(n, truncation);
    if !tail.is_finite() {
        return Err(Error::Hypothesis("s(n) divergent".to_string()));
    }
    let mut partial = 0.0;
    for k in (0..truncation).rev() {
        let up = fam.a(n + 1, k);
        partial += up / (m2 + fam.a(n, k) * up);
    }
    Ok(SeriesValue {
        value: partial + tail,
        truncation,
        tail_bound: if m2 > 0.0 { bound_at(truncation) } else { 0.0 },
    })
}

/// Per-mode kernel data: `I`, `K` on `0..=k_max`, their limits, the pairing
/// `tau = <K(0), I(0)^perp>` and `epsilon(m, n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSolution {
    pub mode: ModeIndex,
    pub k_max: usize,
    pub i: Vec<[f64; 2]>,
    pub k: Vec<[f64; 2]>,
    /// `T I(k_max)`, the limit of `I` up to the seeding tail.
    pub i_inf: [f64; 2],
    pub k_inf: [f64; 2],
    pub tau: f64,
    pub epsilon: SeriesValue,
    /// Index at which `K` was seeded with `K(inf)`.
    pub seed_index: usize,
    /// `C(seed-1) ... C(k_max)`.
    pub tail_transfer: Mat2,
    /// Bound on `sum_{k >= seed} ||C(k) - I||_1`.
    pub tail_bound: f64,
    /// Relative tolerance used for scalar tails and boundary checks.
    pub tol_tail: f64,
    /// `prod_{i<k} c2(i)/c1(i)` for `k = 0..=k_max+1`.
    pub det_prefix: Vec<f64>,
    /// `prod_{i<k} c1(i)/c2(i)` for `k = 0..=k_max+1`.
    pub ratio_prefix: Vec<f64>,
}

impl KernelSolution {
    /// Error estimate on limits induced by stopping the product at the seed.
    pub fn limit_error(&self, v: [f64; 2]) -> f64 {
        self.tail_bound.exp_m1() * norm2(v)
    }

    /// `|K1(inf) / K2(inf)|`.
    pub fn k_ratio(&self) -> f64 {
        (self.k_inf[0] / self.k_inf[1]).abs()
    }
}

pub fn solve_kernel(
    mode: ModeIndex,
    fam: &Families,
    bd: &BoundaryData,
    trunc: &Truncation,
) -> Result<KernelSolution> {
    fam.check()?;
    let k_max = trunc.k_max;
    if k_max == 0 {
        return Err(Error::Shape("k_max must be at least 1".to_string()));
    }
    let i = compute_i(mode, fam, k_max)?;
    let (seed, tail_bound) = seed_index(mode, fam, trunc.tol_prod, k_max, trunc.index_cap)?;
    let (k, tail_transfer) = compute_k(mode, fam, k_max, bd, seed)?;
    let tau = pairing(k[0], i[0]);
    if !tau.is_finite() || tau.abs() <= TAU_RELATIVE_FLOOR * norm2(k[0]) * norm2(i[0]) {
        return Err(Error::DegeneratePairing {
            m: mode.m,
            n: mode.n,
            tau,
        });
    }
    let eps = epsilon(mode, fam, trunc.tol_tail)?;
    let mut det_prefix = Vec::with_capacity(k_max + 2);
    let mut ratio_prefix = Vec::with_capacity(k_max + 2);
    let (mut d, mut r) = (1.0, 1.0);
    for j in 0..=k_max + 1 {
        det_prefix.push(d);
        ratio_prefix.push(r);
        let (c1, c2) = (fam.c1(mode.n, j), fam.c2(mode.n, j));
        d *= c2 / c1;
        r *= c1 / c2;
    }
    Ok(KernelSolution {
        mode,
        k_max,
        i_inf: tail_transfer.apply(i[k_max]),
        i,
        k,
        k_inf: bd.k_inf,
        tau,
        epsilon: eps,
        seed_index: seed,
        tail_transfer,
        tail_bound,
        tol_tail: trunc.tol_tail,
        det_prefix,
        ratio_prefix,
    })
}

/// Relative deviation of `<K(k), I(k)^perp>` from `tau prod_{i<k} c2/c1`.
pub fn wronskian_residuals(sol: &KernelSolution) -> Vec<f64> {
    (0..=sol.k_max)
        .map(|k| {
            let expected = sol.tau * sol.det_prefix[k];
            (pairing(sol.k[k], sol.i[k]) - expected).abs() / expected.abs()
        })
        .collect()
}

/// Relative deviation between `K(k)^perp` and
/// `prod(c2/c1) (P(k)^{-1})^T K(0)^perp`, with `P(k)` recomputed here.
pub fn perp_transport_residual(sol: &KernelSolution, fam: &Families, k: usize) -> Result<f64> {
    let mut p = Mat2::IDENTITY;
    for j in 0..k {
        p = build_c(sol.mode, j, fam) * p;
    }
    let moved = invert(&p)?.transpose().apply(perp(sol.k[0]));
    let expected = [moved[0] * sol.det_prefix[k], moved[1] * sol.det_prefix[k]];
    let direct = perp(sol.k[k]);
    let diff = [direct[0] - expected[0], direct[1] - expected[1]];
    Ok(norm2(diff) / norm2(direct))
}

/// Smallest `|det[I(k) K(k)]|` relative to `|I(k)| |K(k)|` over the table and
/// at infinity.
pub fn independence_margin(sol: &KernelSolution) -> f64 {
    let finite = sol
        .i
        .iter()
        .zip(&sol.k)
        .map(|(i, k)| pairing(*k, *i).abs() / (norm2(*i) * norm2(*k)));
    let at_inf = pairing(sol.k_inf, sol.i_inf).abs() / (norm2(sol.i_inf) * norm2(sol.k_inf));
    finite.fold(at_inf, f64::min)
}

/// Outcome of one family of inequalities over all radial indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaClause {
    pub group: String,
    pub name: String,
    pub checked: usize,
    pub violations: usize,
    /// Smallest `(rhs - lhs) / (|lhs| + |rhs|)` seen.
    pub worst_margin: f64,
    pub first_violation: Option<usize>,
    /// Informational clauses are reported but never counted as violations.
    pub informational: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub mode: ModeIndex,
    pub clauses: Vec<LemmaClause>,
}

impl LemmaReport {
    pub fn violations(&self) -> usize {
        self.clauses
            .iter()
            .filter(|c| !c.informational)
            .map(|c| c.violations)
            .sum()
    }

    pub fn first_counterexample(&self) -> Option<(&LemmaClause, usize)> {
        self.clauses
            .iter()
            .filter(|c| !c.informational)
            .find_map(|c| c.first_violation.map(|k| (c, k)))
    }
}

struct ClauseBuilder {
    clause: LemmaClause,
    slack: f64,
}

impl ClauseBuilder {
    fn new(group: &str, name: &str, slack: f64) -> Self {
        ClauseBuilder {
            clause: LemmaClause {
                group: group.to_string(),
                name: name.to_string(),
                checked: 0,
                violations: 0,
                worst_margin: f64::INFINITY,
                first_violation: None,
                informational: false,
            },
            slack,
        }
    }

    fn record(&mut self, k: usize, ok: bool, margin: f64) {
        let c = &mut self.clause;
        c.checked += 1;
        c.worst_margin = c.worst_margin.min(margin);
        if !ok {
            c.violations += 1;
            c.first_violation.get_or_insert(k);
        }
    }

    /// `lhs < rhs`, or `lhs <= rhs` when `strict` is false, up to slack.
    fn less(&mut self, k: usize, lhs: f64, rhs: f64, strict: bool) {
        let scale = lhs.abs() + rhs.abs();
        let allowance = self.slack * scale;
        let ok = if strict {
            lhs < rhs + allowance
        } else {
            lhs <= rhs + allowance
        };
        let margin = if scale > 0.0 { (rhs - lhs) / scale } else { 0.0 };
        self.record(k, ok && lhs.is_finite() && rhs.is_finite(), margin);
    }

    fn positive(&mut self, k: usize, x: f64) {
        self.record(k, x > 0.0, if x > 0.0 { 1.0 } else { -1.0 });
    }

    fn finish(self) -> LemmaClause {
        self.clause
    }

    fn informational(mut self) -> LemmaClause {
        self.clause.informational = true;
        self.clause
    }
}

/// Evaluates, at every tabulated `k`, the positivity, monotonicity, ratio,
/// summation and pointwise product inequalities satisfied by `I` and `K`.
///
/// Negative modes are checked on the mirrored sequences `(I1, -I2)` and
/// `(-K1, K2)` with `|m|` and `|K1(inf)/K2(inf)|`; the signed-ratio form of
/// the `K` ratio bound is added as an informational clause.
pub fn verify_lemma_suite(sol: &KernelSolution, fam: &Families, slack: f64) -> Result<LemmaReport> {
    let mode = sol.mode;
    if mode.m == 0 {
        return Err(Error::Shape("lemma suite requires m != 0".to_string()));
    }
    let n = mode.n;
    let kk = sol.k_max;
    let sigma = mode.mf().signum();
    let m_abs = mode.mf().abs();
    let i: Vec<[f64; 2]> = sol.i.iter().map(|v| [v[0], sigma * v[1]]).collect();
    let k: Vec<[f64; 2]> = sol.k.iter().map(|v| [sigma * v[0], v[1]]).collect();
    let ratio = sigma * sol.k_inf[0] / sol.k_inf[1];
    let signed_ratio = sol.k_inf[0] / sol.k_inf[1];
    let eps = sol.epsilon.value;
    let tau = sol.tau;
    let c1 = |j: usize| fam.c1(n, j);
    let c2 = |j: usize| fam.c2(n, j);

    let mut clauses = Vec::new();

    let mut pos = [
        ClauseBuilder::new("positivity", "minus_i1_positive", slack),
        ClauseBuilder::new("positivity", "i2_positive", slack),
        ClauseBuilder::new("positivity", "k1_positive", slack),
        ClauseBuilder::new("positivity", "k2_positive", slack),
    ];
    for j in 0..=kk {
        pos[0].positive(j, -i[j][0]);
        pos[1].positive(j, i[j][1]);
        pos[2].positive(j, k[j][0]);
        pos[3].positive(j, k[j][1]);
    }
    clauses.extend(pos.into_iter().map(ClauseBuilder::finish));

    let mut mono = [
        ClauseBuilder::new("monotonicity", "minus_i1_increasing", slack),
        ClauseBuilder::new("monotonicity", "i2_over_c2_increasing", slack),
        ClauseBuilder::new("monotonicity", "k1_over_c1_decreasing", slack),
        ClauseBuilder::new("monotonicity", "k2_decreasing", slack),
    ];
    for j in 0..kk {
        mono[0].less(j, -i[j][0], -i[j + 1][0], true);
        mono[1].less(j, i[j][1], i[j + 1][1] / c2(j), true);
        mono[2].less(j, k[j + 1][0], k[j][0] / c1(j), true);
        mono[3].less(j, k[j + 1][1], k[j][1], true);
    }
    clauses.extend(mono.into_iter().map(ClauseBuilder::finish));

    let mut ratio_i = ClauseBuilder::new("ratio", "i2_bounded_by_epsilon", slack);
    let mut ratio_k = ClauseBuilder::new("ratio", "k1_bounded_by_epsilon_plus_ratio", slack);
    let mut ratio_signed = ClauseBuilder::new("ratio", "k1_bounded_signed_ratio", slack);
    for j in 0..kk {
        ratio_i.less(j, i[j][1], m_abs * eps * (-i[j + 1][0]), false);
        ratio_k.less(j, k[j + 1][0], m_abs * (eps + ratio) * k[j][1], false);
        ratio_signed.less(j, k[j + 1][0], m_abs * (eps + signed_ratio) * k[j][1], false);
    }
    clauses.push(ratio_i.finish());
    clauses.push(ratio_k.finish());
    if mode.m < 0 {
        clauses.push(ratio_signed.informational());
    }

    // prod_{j<l} c1(j)
    let mut c1_prefix = vec![1.0; kk + 2];
    for j in 0..=kk {
        c1_prefix[j + 1] = c1_prefix[j] * c1(j);
    }
    let mut sum_k2 = vec![0.0; kk + 2];
    let mut sum_k1 = vec![0.0; kk + 2];
    for l in (0..=kk).rev() {
        sum_k2[l] = sum_k2[l + 1] + c1_prefix[l] * k[l][1] / fam.a(n + 1, l);
        sum_k1[l] = sum_k1[l + 1] + k[l][0] / fam.a(n, l);
    }
    let mut sum_a = ClauseBuilder::new("summation", "weighted_k2_tail", slack);
    let mut sum_b = ClauseBuilder::new("summation", "k1_tail", slack);
    for j in 0..kk {
        sum_a.less(j, sum_k2[j], c1_prefix[j] * k[j][0] / m_abs, false);
        sum_b.less(j, sum_k1[j + 1], k[j][1] / m_abs, false);
    }
    clauses.push(sum_a.finish());
    clauses.push(sum_b.finish());

    let mut prod = [
        ClauseBuilder::new("product", "k1_i2", slack),
        ClauseBuilder::new("product", "k2_minus_i1", slack),
        ClauseBuilder::new("product", "shifted_minus_i1_k2", slack),
        ClauseBuilder::new("product", "i2_shifted_k1", slack),
    ];
    for j in 0..=kk {
        let w = tau * sol.det_prefix[j];
        prod[0].less(j, k[j][0] * i[j][1], w, false);
        prod[1].less(j, -k[j][1] * i[j][0], w, false);
        if j < kk {
            prod[2].less(j, -i[j + 1][0] * k[j][1], w / c1(j), false);
            prod[3].less(j, i[j][1] * k[j + 1][0], w / c1(j), false);
        }
    }
    clauses.extend(prod.into_iter().map(ClauseBuilder::finish));

    Ok(LemmaReport { mode, clauses })
}
