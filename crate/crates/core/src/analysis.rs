//! Hilbert-Schmidt norms of the kernel operators on the truncation window,
//! their closed-form upper bounds, and decay summaries over a mode grid.
//!
//! An operator `r -> sum_i t(k, i) r(i) / a_in(i)` from the space weighted by
//! `a_in` to the one weighted by `a_out` has squared HS norm
//! `sum_{k,i} t(k, i)^2 / (a_in(i) a_out(k))`. All kernels here factor as
//! `u(k) v(i)` on a triangular region, so the double sums reduce to prefix
//! sums. Values are squared norms; the factor `1/tau` is not included.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::solutions::{choose_k_infinity, solve_kernel, BoundaryRule, KernelSolution, Truncation};
use crate::transfer::ModeIndex;
use crate::weights::{eval_s, Families};

/// Relative slack on the closed-form bounds.
pub const BOUND_SLACK: f64 = 1e-10;
/// Relative tolerance for the Fubini pairs.
pub const FUBINI_TOL: f64 = 1e-12;

/// One of the equalities obtained by exchanging the order of summation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FubiniPair {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub relative_gap: f64,
    pub passed: bool,
}

/// Squared HS norms for one mode, with their bounds and tail estimates.
///
/// Index `[a-1][b-1]` holds the kernel with output component `a` and input
/// component `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsReport {
    pub mode: ModeIndex,
    pub hs_x: Option<[[f64; 2]; 2]>,
    pub hs_y: Option<[[f64; 2]; 2]>,
    /// `m = 0` only.
    pub hs_z: Option<f64>,
    /// `m = 0` only.
    pub hs_w: Option<f64>,
    /// Bound shared by the `X` kernel and, by exchange of summation, its `Y`
    /// partner with the same output component.
    pub bound_x: Option<[[f64; 2]; 2]>,
    /// `s(n) s(n+1)`, bounding `Z` and `W`.
    pub bound_zw: f64,
    pub tail_x: Option<[[f64; 2]; 2]>,
    pub tail_y: Option<[[f64; 2]; 2]>,
    pub tail_zw: f64,
    pub epsilon: f64,
    pub s_n: f64,
    pub s_n1: f64,
    pub tau: f64,
    pub ratio: f64,
    pub x_pass: bool,
    pub y_pass: bool,
    pub zw_pass: bool,
    pub fubini: Vec<FubiniPair>,
    /// `sqrt(sum of the eight squared norms) / |tau|`, or
    /// `sqrt(Z^2 + W^2)` for `m = 0`.
    pub proxy: f64,
}

impl HsReport {
    pub fn bounds_pass(&self) -> bool {
        self.x_pass && self.zw_pass
    }

    pub fn fubini_pass(&self) -> bool {
        self.fubini.iter().all(|p| p.passed)
    }
}

/// `sum_k u(k) * sum_{i in region(k)} v(i)` for a triangular region.
#[derive(Clone, Copy)]
enum Region {
    /// `i >= k`
    Upper,
    /// `i > k`
    StrictUpper,
    /// `i <= k`
    Lower,
    /// `i < k`
    StrictLower,
}

fn triangular(u: &[f64], v: &[f64], region: Region) -> f64 {
    let len = v.len();
    let mut prefix = vec![0.0; len + 1];
    for i in 0..len {
        prefix[i + 1] = prefix[i] + v[i];
    }
    // suffix sums accumulated directly; differences of prefix sums cancel
    let mut suffix = vec![0.0; len + 1];
    for i in (0..len).rev() {
        suffix[i] = suffix[i + 1] + v[i];
    }
    u.iter()
        .enumerate()
        .map(|(k, uk)| {
            let s = match region {
                Region::Upper => suffix[k.min(len)],
                Region::StrictUpper => suffix[(k + 1).min(len)],
                Region::Lower => prefix[(k + 1).min(len)],
                Region::StrictLower => prefix[k.min(len)],
            };
            uk * s
        })
        .sum()
}

fn rel_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Squared HS norms of `Z` (with `c2` products) and `W` (with `c1` products)
/// on the window `0..=k_max`.
pub fn hs_zw(mode: ModeIndex, fam: &Families, k_max: usize) -> (f64, f64) {
    let n = mode.n;
    let mut z = 0.0;
    let mut s = 0.0;
    for k in 0..=k_max {
        if k > 0 {
            let c = fam.c2(n, k - 1);
            s *= c * c;
        }
        s += 1.0 / fam.a(n, k);
        z += s / fam.a(n + 1, k);
    }
    let mut w = 0.0;
    let mut r = 0.0;
    for k in (0..=k_max).rev() {
        let c = fam.c1(n, k);
        r = 1.0 / fam.a(n + 1, k) + c * c * r;
        w += r / fam.a(n, k);
    }
    (z, w)
}

pub fn hs_norms(sol: &KernelSolution, fam: &Families) -> Result<HsReport> {
    let mode = sol.mode;
    let n = mode.n;
    let k_max = sol.k_max;
    let kappa = fam.kappa();
    let s_n = eval_s(&fam.weights, n)?.value;
    let s_n1 = eval_s(&fam.weights, n + 1)?.value;
    let eps = sol.epsilon.value;
    let tau = sol.tau;
    let ratio = sol.k_ratio();
    let bound_zw = s_n * s_n1;
    let (z, w) = hs_zw(mode, fam, k_max);
    // envelopes for the region beyond the window
    let grow = sol.tail_bound.exp();
    let p_grow = (kappa * fam.coeffs.tail_one_minus(2, n, k_max)).exp();
    let level = |b: usize| n + b - 1;
    let inv_tail = |b: usize| fam.weights.inv_tail(level(b), k_max + 1);
    let tail_zw = 2.0 * (s_n * inv_tail(2) + s_n1 * inv_tail(1));

    let mut report = HsReport {
        mode,
        hs_x: None,
        hs_y: None,
        hs_z: None,
        hs_w: None,
        bound_x: None,
        bound_zw,
        tail_x: None,
        tail_y: None,
        tail_zw,
        epsilon: eps,
        s_n,
        s_n1,
        tau,
        ratio,
        x_pass: true,
        y_pass: true,
        zw_pass: true,
        fubini: Vec::new(),
        proxy: 0.0,
    };

    if mode.m == 0 {
        report.hs_z = Some(z);
        report.hs_w = Some(w);
        report.zw_pass = z <= bound_zw * (1.0 + BOUND_SLACK) && w <= bound_zw * (1.0 + BOUND_SLACK);
        report.proxy = (z * z + w * w).sqrt();
        return Ok(report);
    }

    // u_a(k)^2 / a_out(k) and (P v_b)(i)^2 / a_in(i)
    let out_sq = |table: &[[f64; 2]], a: usize| -> Vec<f64> {
        (0..=k_max).map(|k| table[k][a - 1].powi(2) / fam.a(level(a), k)).collect()
    };
    let in_sq = |table: &[[f64; 2]], b: usize| -> Vec<f64> {
        (0..=k_max)
            .map(|i| (sol.ratio_prefix[i] * table[i][b - 1]).powi(2) / fam.a(level(b), i))
            .collect()
    };
    let i_last = sol.i[k_max][0].hypot(sol.i[k_max][1]);
    let k_last = sol.k[k_max][0].hypot(sol.k[k_max][1]);
    let p_last = sol.ratio_prefix[k_max];
    let mut hs_x = [[0.0; 2]; 2];
    let mut hs_y = [[0.0; 2]; 2];
    let mut tail_x = [[0.0; 2]; 2];
    let mut tail_y = [[0.0; 2]; 2];
    let mut bound_x = [[0.0; 2]; 2];
    for a in 1..=2 {
        let ui = out_sq(&sol.i, a);
        let uk = out_sq(&sol.k, a);
        for b in 1..=2 {
            let vk = in_sq(&sol.k, b);
            let vi = in_sq(&sol.i, b);
            let (x_region, y_region) = if b == 1 {
                (Region::StrictUpper, Region::Lower)
            } else {
                (Region::Upper, Region::StrictLower)
            };
            hs_x[a - 1][b - 1] = triangular(&ui, &vk, x_region);
            hs_y[a - 1][b - 1] = triangular(&uk, &vi, y_region);
            let tail = |u: &[f64], u_env: f64, v: &[f64], v_env: f64| {
                let u_tail = (u_env * grow).powi(2) * inv_tail(a);
                let v_tail = (v_env * grow * p_last * p_grow).powi(2) * inv_tail(b);
                let u_sum: f64 = u.iter().sum();
                let v_sum: f64 = v.iter().sum();
                (u_sum + u_tail) * v_tail + u_tail * v_sum
            };
            tail_x[a - 1][b - 1] = tail(&ui, i_last, &vk, k_last);
            tail_y[a - 1][b - 1] = tail(&uk, k_last, &vi, i_last);
            bound_x[a - 1][b - 1] = if a == 1 {
                tau * tau * kappa * (eps + ratio) * s_n
            } else {
                tau * tau * kappa * eps * s_n1
            };
        }
    }
    let limit = |b: f64| b * (1.0 + BOUND_SLACK);
    report.x_pass = (0..2).all(|a| (0..2).all(|b| hs_x[a][b] <= limit(bound_x[a][b])));
    // each Y kernel is checked against the bound of its exchange partner
    report.y_pass = hs_y[0][0] <= limit(bound_x[0][0])
        && hs_y[1][0] <= limit(bound_x[0][1])
        && hs_y[0][1] <= limit(bound_x[1][0])
        && hs_y[1][1] <= limit(bound_x[1][1]);
    let pair = |name: &str, lhs: f64, rhs: f64| {
        let gap = rel_gap(lhs, rhs);
        FubiniPair {
            name: name.to_string(),
            lhs,
            rhs,
            relative_gap: gap,
            passed: gap <= FUBINI_TOL,
        }
    };
    report.fubini = vec![
        pair("x11_y11", hs_x[0][0], hs_y[0][0]),
        pair("x12_y21", hs_x[0][1], hs_y[1][0]),
        pair("x21_y12", hs_x[1][0], hs_y[0][1]),
        pair("x22_y22", hs_x[1][1], hs_y[1][1]),
    ];
    let total: f64 = hs_x.iter().chain(&hs_y).flatten().sum();
    report.proxy = total.sqrt() / tau.abs();
    report.hs_x = Some(hs_x);
    report.hs_y = Some(hs_y);
    report.bound_x = Some(bound_x);
    report.tail_x = Some(tail_x);
    report.tail_y = Some(tail_y);
    Ok(report)
}

/// Running supremum of a series from the far end.
fn tail_sup(values: &BTreeMap<u64, f64>) -> Vec<(u64, f64)> {
    let mut out: Vec<(u64, f64)> = Vec::with_capacity(values.len());
    let mut sup = f64::NEG_INFINITY;
    for (&key, &v) in values.iter().rev() {
        sup = sup.max(v);
        out.push((key, sup));
    }
    out.reverse();
    out
}

/// Per-mode reports and monotone envelopes of the norm proxy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayTable {
    pub rows: Vec<HsReport>,
    /// `(|m|, sup of proxy over |m'| >= |m|, all n)`.
    pub envelope_m: Vec<(u64, f64)>,
    /// `(n, sup of proxy over n' >= n, all m)`.
    pub envelope_n: Vec<(u64, f64)>,
}

impl DecayTable {
    pub fn row(&self, m: i64, n: usize) -> Option<&HsReport> {
        self.rows.iter().find(|r| r.mode == ModeIndex::new(m, n))
    }
}

/// Solves every mode of the grid in parallel and collects the reports in
/// `(m, n)` order.
pub fn decay_scan(
    modes: &[ModeIndex],
    fam: &Families,
    rule: &BoundaryRule,
    trunc: &Truncation,
) -> Result<DecayTable> {
    let mut modes = modes.to_vec();
    modes.sort();
    modes.dedup();
    let rows: Vec<HsReport> = modes
        .par_iter()
        .map(|&mode| {
            let bd = choose_k_infinity(mode, rule)?;
            let sol = solve_kernel(mode, fam, &bd, trunc)?;
            hs_norms(&sol, fam)
        }
        .map_err(|e| e.at_mode(mode.m, mode.n)))
        .collect::<Result<_>>()?;
    let mut by_m: BTreeMap<u64, f64> = BTreeMap::new();
    let mut by_n: BTreeMap<u64, f64> = BTreeMap::new();
    for r in &rows {
        let em = by_m.entry(r.mode.m.unsigned_abs()).or_insert(f64::NEG_INFINITY);
        *em = em.max(r.proxy);
        let en = by_n.entry(r.mode.n as u64).or_insert(f64::NEG_INFINITY);
        *en = en.max(r.proxy);
    }
    Ok(DecayTable {
        rows,
        envelope_m: tail_sup(&by_m),
        envelope_n: tail_sup(&by_n),
    })
}

/// The grid `m in {0, +-1, +-2, +-4, ..., +-32}`, `n in {0, 1, 2, 4, 8, 16}`.
pub fn default_grid() -> Vec<ModeIndex> {
    let ms: Vec<i64> = std::iter::once(0)
        .chain([1i64, 2, 4, 8, 16, 32].iter().flat_map(|&m| [m, -m]))
        .collect();
    let ns = [0usize, 1, 2, 4, 8, 16];
    ms.iter()
        .flat_map(|&m| ns.iter().map(move |&n| ModeIndex::new(m, n)))
        .collect()
}
