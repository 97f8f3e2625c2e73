//! The global operator on finitely supported Fourier fields, its inverse
//! assembled mode by mode, and sanity checks on a truncated representation
//! of the algebra generated by `U` and `V`.
//!
//! A field in the positive sector carries, for each mode `(m, n)`, the pair
//! `g_{m,n}` (level `n`) and `f_{m,n+1}` (level `n+1`). The operator output
//! carries `p_{m,n+1}` (level `n+1`, indices `k < k_max`) and `q_{m,n}`
//! (level `n`, indices `k <= k_max`).

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parametrix::{apply_a, apply_q, RhsPair, SolutionPair, WeightedSeq};
use crate::solutions::{choose_k_infinity, solve_kernel, BoundaryRule, Truncation};
use crate::transfer::ModeIndex;
use crate::weights::Families;

/// Half of the partial Fourier series a field lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sector {
    /// Positive powers of `U`.
    #[default]
    Positive,
}

/// One mode of a field, as exported to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRecord {
    pub m: i64,
    pub n: usize,
    pub g: Vec<f64>,
    pub f: Vec<f64>,
}

/// Finitely supported field `F`, one `(g, f)` pair per mode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FourierField {
    pub sector: Sector,
    pub entries: BTreeMap<ModeIndex, SolutionPair>,
}

impl FourierField {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, mode: ModeIndex, g: Vec<f64>, f: Vec<f64>) -> Result<()> {
        if g.len() != f.len() || g.len() < 2 {
            return Err(Error::Shape(format!(
                "mode {mode}: g and f need equal lengths >= 2, got {} and {}",
                g.len(),
                f.len()
            )));
        }
        self.entries.insert(
            mode,
            SolutionPair {
                g: WeightedSeq::new(mode.n, 0, g),
                f: WeightedSeq::new(mode.n + 1, 0, f),
            },
        );
        Ok(())
    }

    /// Uniform entries in `[-1, 1]` on `k < support` for each listed mode.
    pub fn random<R: Rng + ?Sized>(modes: &[ModeIndex], k_max: usize, support: usize, rng: &mut R) -> Self {
        let mut out = Self::new();
        for &mode in modes {
            let mut pair = SolutionPair::zeros(mode, k_max);
            for k in 0..support.min(k_max + 1) {
                pair.g.values[k] = rng.random_range(-1.0..=1.0);
                pair.f.values[k] = rng.random_range(-1.0..=1.0);
            }
            out.entries.insert(mode, pair);
        }
        out
    }

    pub fn to_records(&self) -> Vec<FieldRecord> {
        self.entries
            .iter()
            .map(|(mode, h)| FieldRecord {
                m: mode.m,
                n: mode.n,
                g: h.g.values.clone(),
                f: h.f.values.clone(),
            })
            .collect()
    }

    pub fn from_records(records: &[FieldRecord]) -> Result<Self> {
        let mut out = Self::new();
        for r in records {
            out.insert(ModeIndex::new(r.m, r.n), r.g.clone(), r.f.clone())?;
        }
        Ok(out)
    }
}

/// `sqrt(sum_modes sum_k g^2/a_n + f^2/a_{n+1})`.
pub fn h0_norm(field: &FourierField, fam: &Families) -> f64 {
    field
        .entries
        .values()
        .map(|h| h.g.norm_sq(fam) + h.f.norm_sq(fam))
        .sum::<f64>()
        .sqrt()
}

/// Output of the operator for one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DComponents {
    /// `p_{m,n+1}(k)`, `k < k_max`, level `n+1`.
    pub p: Vec<f64>,
    /// `q_{m,n}(k)`, `k <= k_max`, level `n`.
    pub q: Vec<f64>,
}

/// Operator output (or right-hand side) for every mode of a field.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DField {
    pub entries: BTreeMap<ModeIndex, DComponents>,
}

impl DField {
    pub fn random<R: Rng + ?Sized>(modes: &[ModeIndex], k_max: usize, support: usize, rng: &mut R) -> Self {
        let mut entries = BTreeMap::new();
        for &mode in modes {
            let mut p = vec![0.0; k_max];
            let mut q = vec![0.0; k_max + 1];
            for k in 0..support.min(k_max) {
                p[k] = rng.random_range(-1.0..=1.0);
                q[k] = rng.random_range(-1.0..=1.0);
            }
            entries.insert(mode, DComponents { p, q });
        }
        DField { entries }
    }

    pub fn norm(&self, fam: &Families) -> f64 {
        self.entries
            .iter()
            .map(|(mode, d)| {
                let p: f64 = d.p.iter().enumerate().map(|(k, v)| v * v / fam.a(mode.n + 1, k)).sum();
                let q: f64 = d.q.iter().enumerate().map(|(k, v)| v * v / fam.a(mode.n, k)).sum();
                p + q
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn sub(&self, other: &DField) -> Result<DField> {
        let mut entries = BTreeMap::new();
        for (mode, d) in &self.entries {
            let o = other
                .entries
                .get(mode)
                .ok_or_else(|| Error::Shape(format!("mode {mode} missing from second field")))?;
            entries.insert(
                *mode,
                DComponents {
                    p: d.p.iter().zip(&o.p).map(|(a, b)| a - b).collect(),
                    q: d.q.iter().zip(&o.q).map(|(a, b)| a - b).collect(),
                },
            );
        }
        Ok(DField { entries })
    }
}

/// Per-mode right-hand side in matrix form: `r1 = p`, `r2(k) = -q(k+1)`,
/// `q0 = -q(0)`.
pub fn to_rhs(mode: ModeIndex, d: &DComponents) -> Result<RhsPair> {
    let k_max = d.p.len();
    if d.q.len() != k_max + 1 {
        return Err(Error::Shape(format!(
            "mode {mode}: q needs {} entries, got {}",
            k_max + 1,
            d.q.len()
        )));
    }
    Ok(RhsPair {
        r1: WeightedSeq::new(mode.n + 1, 0, d.p.clone()),
        r2: WeightedSeq::new(mode.n, 1, d.q[1..].iter().map(|v| -v).collect()),
        q0: -d.q[0],
    })
}

pub fn from_rhs(r: &RhsPair) -> DComponents {
    let mut q = Vec::with_capacity(r.r2.len() + 1);
    q.push(-r.q0);
    q.extend(r.r2.values.iter().map(|v| -v));
    DComponents {
        p: r.r1.values.clone(),
        q,
    }
}

/// Level-indexed sequences keyed by `(m, level)`.
type Series = BTreeMap<(i64, usize), Vec<f64>>;

/// `delta_1`: multiplication by `m`.
fn delta_one(series: &Series) -> Series {
    series
        .iter()
        .map(|(&(m, l), v)| ((m, l), v.iter().map(|x| m as f64 * x).collect()))
        .collect()
}

/// `delta_0 g` at `(m, n+1)` equals `-Bbar_n g_{m,n}` with
/// `Bbar_n h(k) = a_{n+1}(k) (h(k) - c1(k) h(k+1))`, for `k < len-1`.
fn delta_zero(g: &Series, fam: &Families) -> Series {
    g.iter()
        .map(|(&(m, n), h)| {
            let out = (0..h.len() - 1)
                .map(|k| -(fam.a(n + 1, k) * (h[k] - fam.c1(n, k) * h[k + 1])))
                .collect();
            ((m, n + 1), out)
        })
        .collect()
}

/// `delta_2 f` at `(m, n)` equals `-B_n f_{m,n+1}` with
/// `B_n h(k) = a_n(k) (h(k) - c2(k-1) h(k-1))` and `h(-1) = 0`.
fn delta_two(f: &Series, fam: &Families) -> Series {
    f.iter()
        .map(|(&(m, l), h)| {
            let n = l - 1;
            let out = (0..h.len())
                .map(|k| {
                    let prev = if k == 0 { 0.0 } else { fam.c2(n, k - 1) * h[k - 1] };
                    -(fam.a(n, k) * (h[k] - prev))
                })
                .collect();
            ((m, n), out)
        })
        .collect()
}

fn combine(a: &Series, b: &Series, sign: f64, key: (i64, usize), len: usize) -> Vec<f64> {
    let at = |s: &Series, k: usize| s.get(&key).and_then(|v| v.get(k)).copied().unwrap_or(0.0);
    (0..len).map(|k| at(a, k) + sign * at(b, k)).collect()
}

/// `D F = (delta_1 f + delta_0 g, delta_2 f - delta_1 g)`, composed from the
/// level-indexed difference operators.
pub fn apply_d(field: &FourierField, fam: &Families) -> DField {
    let g: Series = field
        .entries
        .iter()
        .map(|(mode, h)| ((mode.m, mode.n), h.g.values.clone()))
        .collect();
    let f: Series = field
        .entries
        .iter()
        .map(|(mode, h)| ((mode.m, mode.n + 1), h.f.values.clone()))
        .collect();
    let d1f = delta_one(&f);
    let d0g = delta_zero(&g, fam);
    let d2f = delta_two(&f, fam);
    let d1g = delta_one(&g);
    let entries = field
        .entries
        .iter()
        .map(|(mode, h)| {
            let k_max = h.k_max();
            let mut p = combine(&d1f, &d0g, 1.0, (mode.m, mode.n + 1), k_max + 1);
            p.truncate(k_max);
            let q = combine(&d2f, &d1g, -1.0, (mode.m, mode.n), k_max + 1);
            (*mode, DComponents { p, q })
        })
        .collect();
    DField { entries }
}

/// Same operator through the per-mode matrix systems.
pub fn apply_d_matrix(field: &FourierField, fam: &Families) -> Result<DField> {
    let mut entries = BTreeMap::new();
    for (mode, h) in &field.entries {
        let r = apply_a(*mode, fam, h).map_err(|e| e.at_mode(mode.m, mode.n))?;
        entries.insert(*mode, from_rhs(&r));
    }
    Ok(DField { entries })
}

/// Largest entrywise gap between the two operator paths, each entry measured
/// against the sum of the absolute values of the terms that produce it.
pub fn mode_equivalence_gap(field: &FourierField, fam: &Families) -> Result<f64> {
    let direct = apply_d(field, fam);
    let matrix = apply_d_matrix(field, fam)?;
    let mut worst: f64 = 0.0;
    for (mode, h) in &field.entries {
        let (n, m) = (mode.n, mode.mf().abs());
        let (g, f) = (&h.g.values, &h.f.values);
        let a = &direct.entries[mode];
        let b = &matrix.entries[mode];
        for k in 0..a.p.len() {
            let scale = m * f[k].abs() + fam.a(n + 1, k) * (g[k].abs() + fam.c1(n, k) * g[k + 1].abs());
            if scale > 0.0 {
                worst = worst.max((a.p[k] - b.p[k]).abs() / scale);
            }
        }
        for k in 0..a.q.len() {
            let prev = if k == 0 { 0.0 } else { fam.c2(n, k - 1) * f[k - 1].abs() };
            let scale = m * g[k].abs() + fam.a(n, k) * (f[k].abs() + prev);
            if scale > 0.0 {
                worst = worst.max((a.q[k] - b.q[k]).abs() / scale);
            }
        }
    }
    Ok(worst)
}

/// Mode-by-mode inverse; modes are processed in parallel and merged in
/// `(m, n)` order.
pub fn apply_q_global(
    rhs: &DField,
    fam: &Families,
    rule: &BoundaryRule,
    trunc: &Truncation,
) -> Result<FourierField> {
    let solved: Vec<Result<(ModeIndex, SolutionPair)>> = rhs
        .entries
        .par_iter()
        .map(|(mode, d)| {
            let run = || -> Result<SolutionPair> {
                let r = to_rhs(*mode, d)?;
                let trunc = trunc.with_k_max(r.k_max());
                let bd = choose_k_infinity(*mode, rule)?;
                let sol = solve_kernel(*mode, fam, &bd, &trunc)?;
                Ok(apply_q(&sol, fam, &r)?.h)
            };
            run().map(|h| (*mode, h)).map_err(|e| e.at_mode(mode.m, mode.n))
        })
        .collect();
    let mut out = FourierField::new();
    for item in solved {
        let (mode, h) = item?;
        out.entries.insert(mode, h);
    }
    Ok(out)
}

/// Finite section of the representation on `e_{k,l}`, `0 <= k <= k_rep`,
/// `|l| <= l_rep`.
///
/// `U e_{k,l} = e^{-2 pi i l theta} e_{k+1,l}`, `V e_{k,l} = e_{k,l+1}`, both
/// cut off at the edge; `Kop` and `Lop` are the diagonal labels.
#[derive(Debug, Clone)]
pub struct TruncatedAlgebraRep {
    pub k_rep: usize,
    pub l_rep: usize,
    pub theta: f64,
    pub u: DMatrix<Complex64>,
    pub v: DMatrix<Complex64>,
    pub k_label: Vec<f64>,
    pub l_label: Vec<f64>,
    /// `phase[l + l_rep] = e^{-2 pi i l theta}`, built by repeated
    /// multiplication.
    pub phase: Vec<Complex64>,
}

impl TruncatedAlgebraRep {
    pub fn new(k_rep: usize, l_rep: usize, theta: f64) -> Self {
        let width = 2 * l_rep + 1;
        let dim = (k_rep + 1) * width;
        let omega = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * theta);
        let mut phase = vec![Complex64::new(1.0, 0.0); width];
        for l in l_rep + 1..width {
            phase[l] = phase[l - 1] * omega.conj();
        }
        for l in (0..l_rep).rev() {
            phase[l] = phase[l + 1] * omega;
        }
        let mut u = DMatrix::zeros(dim, dim);
        let mut v = DMatrix::zeros(dim, dim);
        let mut k_label = vec![0.0; dim];
        let mut l_label = vec![0.0; dim];
        let idx = |k: usize, l: usize| k * width + l;
        for k in 0..=k_rep {
            for l in 0..width {
                k_label[idx(k, l)] = k as f64;
                l_label[idx(k, l)] = l as f64 - l_rep as f64;
                if k < k_rep {
                    u[(idx(k + 1, l), idx(k, l))] = phase[l];
                }
                if l + 1 < width {
                    v[(idx(k, l + 1), idx(k, l))] = Complex64::new(1.0, 0.0);
                }
            }
        }
        TruncatedAlgebraRep {
            k_rep,
            l_rep,
            theta,
            u,
            v,
            k_label,
            l_label,
            phase,
        }
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn index(&self, k: usize, l: i64) -> usize {
        k * (2 * self.l_rep + 1) + (l + self.l_rep as i64) as usize
    }

    /// `e^{2 pi i theta}`.
    pub fn omega(&self) -> Complex64 {
        Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * self.theta)
    }

    /// `f(Kop + shift)` for a function of the radial label.
    pub fn diag_k(&self, f: impl Fn(f64) -> Complex64, shift: f64) -> DMatrix<Complex64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            self.dim(),
            self.k_label.iter().map(|k| f(k + shift)),
        ))
    }

    /// Projection onto the `l = 0` column `span{e_(k,0)}`.
    pub fn q0(&self) -> DMatrix<Complex64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            self.dim(),
            self.l_label.iter().map(|l| Complex64::new(if *l == 0.0 { 1.0 } else { 0.0 }, 0.0)),
        ))
    }

    /// `tr(x Q0)`.
    pub fn trace(&self, x: &DMatrix<Complex64>) -> Complex64 {
        (0..=self.k_rep).map(|k| self.index(k, 0)).map(|i| x[(i, i)]).sum()
    }

    fn interior(&self, col: usize, margin: usize) -> bool {
        let width = 2 * self.l_rep + 1;
        let (k, l) = (col / width, col % width);
        k + margin <= self.k_rep && l + margin < width && l >= margin
    }
}

/// Coefficient function of the radial label: arbitrary on `k < knots.len()`,
/// constant afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct EventuallyConstant {
    pub knots: Vec<Complex64>,
    pub tail: Complex64,
}

impl EventuallyConstant {
    pub fn at(&self, k: f64) -> Complex64 {
        if k < 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        self.knots.get(k as usize).copied().unwrap_or(self.tail)
    }

    fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut c = || Complex64::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
        let knots = (0..3).map(|_| c()).collect();
        EventuallyConstant { knots, tail: c() }
    }
}

/// Polynomial element
/// `sum V^m U^n f+_{m,n}(Kop) + sum f-_{m,n}(Kop) (U*)^n V^m` with `n >= 1`
/// in the second sum.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialElement {
    pub plus: Vec<((i64, usize), EventuallyConstant)>,
    pub minus: Vec<((i64, usize), EventuallyConstant)>,
}

impl PolynomialElement {
    /// Random terms with `|m| <= max_m`, `n <= max_n`, distinct indices.
    pub fn random<R: Rng + ?Sized>(max_m: i64, max_n: usize, rng: &mut R) -> Self {
        let pick = |min_n: usize, rng: &mut R| {
            let mut terms: Vec<((i64, usize), EventuallyConstant)> = Vec::new();
            for _ in 0..3 {
                let key = (rng.random_range(-max_m..=max_m), rng.random_range(min_n..=max_n));
                if terms.iter().all(|(k, _)| *k != key) {
                    terms.push((key, EventuallyConstant::random(rng)));
                }
            }
            terms
        };
        let plus = pick(0, rng);
        let minus = pick(1, rng);
        PolynomialElement { plus, minus }
    }

    pub fn max_m(&self) -> i64 {
        self.plus.iter().chain(&self.minus).map(|((m, _), _)| m.abs()).max().unwrap_or(0)
    }

    pub fn max_n(&self) -> usize {
        self.plus.iter().chain(&self.minus).map(|((_, n), _)| *n).max().unwrap_or(0)
    }

    pub fn matrix(&self, rep: &TruncatedAlgebraRep) -> DMatrix<Complex64> {
        let dim = rep.dim();
        let width = 2 * rep.l_rep + 1;
        // every factor is a weighted partial shift, so columns are tracked
        // as a single (row, weight) pair
        type Step = Option<(usize, Complex64)>;
        let one = Complex64::new(1.0, 0.0);
        let u = |s: Step| {
            s.and_then(|(i, w)| (i / width < rep.k_rep).then(|| (i + width, w * rep.phase[i % width])))
        };
        let u_star = |s: Step| {
            s.and_then(|(i, w)| (i >= width).then(|| (i - width, w * rep.phase[i % width].conj())))
        };
        let v = |m: i64, s: Step| {
            s.and_then(|(i, w)| {
                let l = (i % width) as i64 + m;
                (0..width as i64).contains(&l).then(|| ((i / width) * width + l as usize, w))
            })
        };
        let diag = |f: &EventuallyConstant, s: Step| s.map(|(i, w)| (i, w * f.at(rep.k_label[i])));
        let mut out = DMatrix::zeros(dim, dim);
        for col in 0..dim {
            for ((m, n), f) in &self.plus {
                let mut s = diag(f, Some((col, one)));
                for _ in 0..*n {
                    s = u(s);
                }
                if let Some((row, w)) = v(*m, s) {
                    out[(row, col)] += w;
                }
            }
            for ((m, n), f) in &self.minus {
                let mut s = v(*m, Some((col, one)));
                for _ in 0..*n {
                    s = u_star(s);
                }
                if let Some((row, w)) = diag(f, s) {
                    out[(row, col)] += w;
                }
            }
        }
        out
    }
}

/// Findings of the algebra checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgebraReport {
    pub theta: f64,
    /// Largest `|VU - omega UV|` entry on interior columns.
    pub commutation_residual: f64,
    /// Largest entry of `f(Kop) U - U f(Kop+1)` and `f(Kop) V - V f(Kop)`.
    pub diagonal_residual: f64,
    pub polynomial_samples: usize,
    /// Largest `|extracted - constructed|` over positive-sector coefficients.
    pub plus_extraction_error: f64,
    /// Largest relative error over negative-sector coefficients.
    pub minus_extraction_error: f64,
    pub trace_samples: usize,
    pub trace_violations: usize,
    /// Largest `|tau(ab)| / (||a|| tau(b*b)^{1/2})` seen.
    pub trace_worst_ratio: f64,
}

/// Runs the commutation, diagonal-commutation, coefficient-extraction and
/// trace checks.
pub fn algebra_sanity<R: Rng + ?Sized>(
    rep: &TruncatedAlgebraRep,
    polynomial_samples: usize,
    trace_samples: usize,
    rng: &mut R,
) -> AlgebraReport {
    let omega = rep.omega();
    let vu = &rep.v * &rep.u;
    let uv = (&rep.u * &rep.v) * omega;
    let mut commutation_residual: f64 = 0.0;
    for col in (0..rep.dim()).filter(|c| rep.interior(*c, 1)) {
        for row in 0..rep.dim() {
            commutation_residual = commutation_residual.max((vu[(row, col)] - uv[(row, col)]).norm());
        }
    }

    let samples: [fn(f64) -> Complex64; 3] = [
        |k| Complex64::new(1.0 / (1.0 + k), 0.0),
        |k| Complex64::new(k * k - 3.0, 0.5 * k),
        |k| Complex64::from_polar(1.0, 0.3 * k),
    ];
    let mut diagonal_residual: f64 = 0.0;
    for f in samples {
        let lhs = rep.diag_k(f, 0.0) * &rep.u;
        let rhs = &rep.u * rep.diag_k(f, 1.0);
        let lv = rep.diag_k(f, 0.0) * &rep.v;
        let rv = &rep.v * rep.diag_k(f, 0.0);
        diagonal_residual = diagonal_residual
            .max((lhs - rhs).iter().map(|z| z.norm()).fold(0.0, f64::max))
            .max((lv - rv).iter().map(|z| z.norm()).fold(0.0, f64::max));
    }

    let max_m = (rep.l_rep as i64 - 1).clamp(0, 2);
    let max_n = rep.k_rep.saturating_sub(2).min(3);
    let mut plus_extraction_error: f64 = 0.0;
    let mut minus_extraction_error: f64 = 0.0;
    for _ in 0..polynomial_samples {
        let a = PolynomialElement::random(max_m, max_n, rng);
        let mat = a.matrix(rep);
        for ((m, n), f) in &a.plus {
            for k in 0..=rep.k_rep - n {
                // <e_{k+n, m}, a e_{k, 0}>
                let got = mat[(rep.index(k + n, *m), rep.index(k, 0))];
                plus_extraction_error = plus_extraction_error.max((got - f.at(k as f64)).norm());
            }
        }
        for ((m, n), f) in &a.minus {
            let unwind = rep.phase[(*m + rep.l_rep as i64) as usize].conj().powu(*n as u32);
            for k in *n..=rep.k_rep {
                // <e_{k-n, m}, a e_{k, 0}> = f(k-n) conj(phase(m))^n
                let got = mat[(rep.index(k - n, *m), rep.index(k, 0))] / unwind;
                let want = f.at((k - n) as f64);
                minus_extraction_error = minus_extraction_error.max((got - want).norm() / want.norm());
            }
        }
    }

    let mut trace_violations = 0;
    let mut trace_worst_ratio: f64 = 0.0;
    for _ in 0..trace_samples {
        let a = PolynomialElement::random(max_m, max_n, rng).matrix(rep);
        let b = PolynomialElement::random(max_m, max_n, rng).matrix(rep);
        let lhs = rep.trace(&(&a * &b)).norm();
        let a_norm = a.clone().singular_values().max();
        let bb = rep.trace(&(b.adjoint() * &b)).re.max(0.0);
        let rhs = a_norm * bb.sqrt();
        let ratio = if rhs > 0.0 { lhs / rhs } else { 0.0 };
        trace_worst_ratio = trace_worst_ratio.max(ratio);
        if lhs > rhs * (1.0 + 1e-12) {
            trace_violations += 1;
        }
    }

    AlgebraReport {
        theta: rep.theta,
        commutation_residual,
        diagonal_residual,
        polynomial_samples,
        plus_extraction_error,
        minus_extraction_error,
        trace_samples,
        trace_violations,
        trace_worst_ratio,
    }
}
