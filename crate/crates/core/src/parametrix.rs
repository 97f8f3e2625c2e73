//! The per-mode first-order system, its explicit inverse and a dense
//! linear-solve oracle.
//!
//! Unknowns are pairs `h(k) = (g(k), f(k))` for `k = 0..=k_max`, with `g` in
//! the space weighted by `a_n` and `f` in the one weighted by `a_{n+1}`. The
//! system is
//!
//! ```text
//! A(k+1) [h(k+1) - C(k) h(k)] = (r1(k), r2(k))      k < k_max
//! a_n(0) f(0) + m g(0)       = q0
//! h(inf) parallel to K(inf)
//! ```
//!
//! where `h(inf) = T h(k_max)` uses the seeding tail transfer of the kernel
//! solution.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solutions::{dot, perp, KernelSolution};
use crate::transfer::{build_a, build_b, build_c, ModeIndex};
use crate::weights::Families;

/// Largest `k_max` accepted by the variation-of-constants path.
pub const VARIATION_MAX_K: usize = 32;

/// A finite real sequence living in the space weighted by `a_level`.
///
/// `values[j]` is the entry at radial index `j + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSeq {
    pub level: usize,
    pub offset: usize,
    pub values: Vec<f64>,
}

impl WeightedSeq {
    pub fn new(level: usize, offset: usize, values: Vec<f64>) -> Self {
        WeightedSeq {
            level,
            offset,
            values,
        }
    }

    pub fn zeros(level: usize, offset: usize, len: usize) -> Self {
        Self::new(level, offset, vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `sum_j values(j)^2 / a_level(j + offset)`.
    pub fn norm_sq(&self, fam: &Families) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(j, v)| v * v / fam.a(self.level, j + self.offset))
            .sum()
    }

    pub fn norm(&self, fam: &Families) -> f64 {
        self.norm_sq(fam).sqrt()
    }

    fn check_tag(&self, level: usize, offset: usize, len: usize, what: &str) -> Result<()> {
        if self.level != level || self.offset != offset || self.len() != len {
            return Err(Error::Shape(format!(
                "{what}: expected level {level}, offset {offset}, length {len}; got level {}, offset {}, length {}",
                self.level,
                self.offset,
                self.len()
            )));
        }
        Ok(())
    }

    fn sub(&self, other: &WeightedSeq) -> WeightedSeq {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        WeightedSeq::new(self.level, self.offset, values)
    }
}

/// Right-hand side of the per-mode system.
///
/// `r1(k)` sits at level `n+1`, index `k`; `r2(k)` at level `n`, index
/// `k+1`; `q0` at level `n`, index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhsPair {
    pub r1: WeightedSeq,
    pub r2: WeightedSeq,
    pub q0: f64,
}

impl RhsPair {
    pub fn zeros(mode: ModeIndex, k_max: usize) -> Self {
        RhsPair {
            r1: WeightedSeq::zeros(mode.n + 1, 0, k_max),
            r2: WeightedSeq::zeros(mode.n, 1, k_max),
            q0: 0.0,
        }
    }

    /// Uniform entries in `[-1, 1]` on `k < support`, zero beyond.
    pub fn random<R: Rng + ?Sized>(mode: ModeIndex, k_max: usize, support: usize, rng: &mut R) -> Self {
        let mut out = Self::zeros(mode, k_max);
        for k in 0..support.min(k_max) {
            out.r1.values[k] = rng.random_range(-1.0..=1.0);
            out.r2.values[k] = rng.random_range(-1.0..=1.0);
        }
        out.q0 = rng.random_range(-1.0..=1.0);
        out
    }

    pub fn k_max(&self) -> usize {
        self.r1.len()
    }

    /// `(q0, r2(0), ..., r2(k_max-1))` at level `n`, offset 0.
    pub fn rho(&self) -> WeightedSeq {
        let mut values = Vec::with_capacity(self.r2.len() + 1);
        values.push(self.q0);
        values.extend_from_slice(&self.r2.values);
        WeightedSeq::new(self.r2.level, 0, values)
    }

    pub fn norm(&self, fam: &Families) -> f64 {
        (self.r1.norm_sq(fam) + self.rho().norm_sq(fam)).sqrt()
    }

    pub fn sub(&self, other: &RhsPair) -> RhsPair {
        RhsPair {
            r1: self.r1.sub(&other.r1),
            r2: self.r2.sub(&other.r2),
            q0: self.q0 - other.q0,
        }
    }

    fn check(&self, mode: ModeIndex, k_max: usize) -> Result<()> {
        self.r1.check_tag(mode.n + 1, 0, k_max, "r1")?;
        self.r2.check_tag(mode.n, 1, k_max, "r2")
    }
}

/// Solution pair `(g, f)` on `k = 0..=k_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionPair {
    pub g: WeightedSeq,
    pub f: WeightedSeq,
}

impl SolutionPair {
    pub fn zeros(mode: ModeIndex, k_max: usize) -> Self {
        SolutionPair {
            g: WeightedSeq::zeros(mode.n, 0, k_max + 1),
            f: WeightedSeq::zeros(mode.n + 1, 0, k_max + 1),
        }
    }

    pub fn from_table(mode: ModeIndex, table: &[[f64; 2]]) -> Self {
        SolutionPair {
            g: WeightedSeq::new(mode.n, 0, table.iter().map(|v| v[0]).collect()),
            f: WeightedSeq::new(mode.n + 1, 0, table.iter().map(|v| v[1]).collect()),
        }
    }

    pub fn k_max(&self) -> usize {
        self.g.len() - 1
    }

    pub fn at(&self, k: usize) -> [f64; 2] {
        [self.g.values[k], self.f.values[k]]
    }

    pub fn norm(&self, fam: &Families) -> f64 {
        (self.g.norm_sq(fam) + self.f.norm_sq(fam)).sqrt()
    }

    pub fn sub(&self, other: &SolutionPair) -> SolutionPair {
        SolutionPair {
            g: self.g.sub(&other.g),
            f: self.f.sub(&other.f),
        }
    }

    fn check(&self, mode: ModeIndex) -> Result<()> {
        let len = self.g.len();
        if len < 2 {
            return Err(Error::Shape("solution tables need k_max >= 1".to_string()));
        }
        self.g.check_tag(mode.n, 0, len, "g")?;
        self.f.check_tag(mode.n + 1, 0, len, "f")
    }
}

/// Boundary data extracted from a solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    /// `|g(inf) K2(inf) - f(inf) K1(inf)|`.
    pub residual: f64,
    /// Least-squares multiplier of `K(inf)`.
    pub beta: f64,
    /// Residual allowed by the seeding tail and `tol_tail`.
    pub allowance: f64,
}

impl BoundaryReport {
    pub fn within_allowance(&self) -> bool {
        self.residual <= self.allowance
    }
}

pub fn boundary_residual(h: &SolutionPair, sol: &KernelSolution) -> BoundaryReport {
    let last = h.at(h.k_max());
    let h_inf = sol.tail_transfer.apply(last);
    let k_inf = sol.k_inf;
    let k_norm = k_inf[0].hypot(k_inf[1]);
    let residual = (h_inf[0] * k_inf[1] - h_inf[1] * k_inf[0]).abs();
    let beta = if k_norm > 0.0 {
        dot(h_inf, k_inf) / (k_norm * k_norm)
    } else {
        0.0
    };
    let allowance = sol.tol_tail * h_inf[0].hypot(h_inf[1]) * k_norm
        + sol.tail_bound.exp_m1() * last[0].hypot(last[1]) * k_norm;
    BoundaryReport {
        residual,
        beta,
        allowance,
    }
}

/// `A(k+1) [h(k+1) - C(k) h(k)]` for `k < k_max`, and the regularity row
/// `a_n(0) f(0) + m g(0)`.
pub fn apply_a(mode: ModeIndex, fam: &Families, h: &SolutionPair) -> Result<RhsPair> {
    h.check(mode)?;
    let k_max = h.k_max();
    let mut out = RhsPair::zeros(mode, k_max);
    for k in 0..k_max {
        let step = build_c(mode, k, fam).apply(h.at(k));
        let next = h.at(k + 1);
        let v = build_a(mode, k, fam).apply([next[0] - step[0], next[1] - step[1]]);
        out.r1.values[k] = v[0];
        out.r2.values[k] = v[1];
    }
    out.q0 = fam.a(mode.n, 0) * h.f.values[0] + mode.mf() * h.g.values[0];
    Ok(out)
}

/// Kernel operator families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    /// Upper sums against `K`, prefactor `I`.
    X,
    /// Lower sums against `I`, prefactor `K`.
    Y,
    /// `m = 0`: lower sums with `c2` products, level `n` to level `n+1`.
    Z,
    /// `m = 0`: upper sums with `c1` products, level `n+1` to level `n`.
    W,
}

/// Applies one of the kernel operators.
///
/// For `X`, `Y` the input component `beta` is 1 (the `rho` sequence at level
/// `n`, length `k_max+1`) or 2 (`r1` at level `n+1`, length `k_max`), and
/// the output component `alpha` selects `g` (1) or `f` (2):
///
/// ```text
/// X^{a,2} r(k) = I_a(k) sum_{l >= k}   P(l) K2(l) r(l) / a_{n+1}(l)
/// Y^{a,2} r(k) = K_a(k) sum_{l <  k}   P(l) I2(l) r(l) / a_{n+1}(l)
/// X^{a,1} r(k) = I_a(k) sum_{i >  k}   P(i) K1(i) r(i) / a_n(i)
/// Y^{a,1} r(k) = K_a(k) sum_{i <= k}   P(i) I1(i) r(i) / a_n(i)
/// ```
///
/// with `P(l) = prod_{j<l} c1(j)/c2(j)`. `Z` and `W` ignore `alpha`, `beta`:
///
/// ```text
/// Z r(k) =  sum_{i <= k} prod_{j=i}^{k-1} c2(j) r(i) / a_n(i)
/// W r(k) = -sum_{l >= k} prod_{j=k}^{l-1} c1(j) r(l) / a_{n+1}(l)
/// ```
pub fn apply_xyz(
    kind: KernelKind,
    alpha: usize,
    beta: usize,
    sol: &KernelSolution,
    fam: &Families,
    r: &WeightedSeq,
) -> Result<WeightedSeq> {
    let n = sol.mode.n;
    let k_max = sol.k_max;
    match kind {
        KernelKind::Z => {
            r.check_tag(n, 0, k_max + 1, "Z input")?;
            let mut out = WeightedSeq::zeros(n + 1, 0, k_max + 1);
            let mut acc = 0.0;
            for k in 0..=k_max {
                if k > 0 {
                    acc *= fam.c2(n, k - 1);
                }
                acc += r.values[k] / fam.a(n, k);
                out.values[k] = acc;
            }
            Ok(out)
        }
        KernelKind::W => {
            r.check_tag(n + 1, 0, k_max, "W input")?;
            let mut out = WeightedSeq::zeros(n, 0, k_max + 1);
            let mut acc = 0.0;
            for k in (0..k_max).rev() {
                acc = fam.c1(n, k) * acc - r.values[k] / fam.a(n + 1, k);
                out.values[k] = acc;
            }
            Ok(out)
        }
        KernelKind::X | KernelKind::Y => {
            if !(1..=2).contains(&alpha) || !(1..=2).contains(&beta) {
                return Err(Error::Shape(format!("component indices ({alpha}, {beta})")));
            }
            let (in_level, in_len) = if beta == 1 { (n, k_max + 1) } else { (n + 1, k_max) };
            r.check_tag(in_level, 0, in_len, "kernel input")?;
            let (against, prefactor) = match kind {
                KernelKind::X => (&sol.k, &sol.i),
                _ => (&sol.i, &sol.k),
            };
            let weights: Vec<f64> = (0..in_len)
                .map(|i| sol.ratio_prefix[i] * against[i][beta - 1] * r.values[i] / fam.a(in_level, i))
                .collect();
            // X sums i >= k + shift, Y sums i < k + shift
            let shift = if beta == 1 { 1 } else { 0 };
            let mut suffix = vec![0.0; in_len + 1];
            for i in (0..in_len).rev() {
                suffix[i] = suffix[i + 1] + weights[i];
            }
            let mut prefix = vec![0.0; in_len + 1];
            for i in 0..in_len {
                prefix[i + 1] = prefix[i] + weights[i];
            }
            let mut out = WeightedSeq::zeros(n + alpha - 1, 0, k_max + 1);
            for k in 0..=k_max {
                let split = (k + shift).min(in_len);
                let sum = match kind {
                    KernelKind::X => suffix[split],
                    _ => prefix[split],
                };
                out.values[k] = prefactor[k][alpha - 1] * sum;
            }
            Ok(out)
        }
    }
}

/// Output of the parametrix for one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametrixResult {
    pub mode: ModeIndex,
    pub h: SolutionPair,
    /// Coefficient of `I(k)` in `h(k)`.
    pub e1: Vec<f64>,
    /// Coefficient of `K(k)` in `h(k)`.
    pub e2: Vec<f64>,
    pub beta: f64,
    pub boundary_residual: f64,
    pub boundary_allowance: f64,
}

/// Explicit inverse of the per-mode system.
///
/// For `m != 0`, `h = (1/tau) [X^{a,2} r1 + Y^{a,2} r1 - X^{a,1} rho - Y^{a,1} rho]`
/// componentwise. For `m = 0`, `h = (W r1, Z rho)`.
pub fn apply_q(sol: &KernelSolution, fam: &Families, r: &RhsPair) -> Result<ParametrixResult> {
    let mode = sol.mode;
    let k_max = sol.k_max;
    r.check(mode, k_max)?;
    let rho = r.rho();
    let (h, e1, e2) = if mode.m == 0 {
        let g = apply_xyz(KernelKind::W, 1, 2, sol, fam, &r.r1)?;
        let f = apply_xyz(KernelKind::Z, 2, 1, sol, fam, &rho)?;
        let e1 = g.values.iter().zip(&sol.i).map(|(g, i)| g / i[0]).collect();
        let e2 = f.values.iter().zip(&sol.k).map(|(f, k)| f / k[1]).collect();
        (SolutionPair { g, f }, e1, e2)
    } else {
        let inv_tau = 1.0 / sol.tau;
        let mut comps = Vec::with_capacity(2);
        for alpha in 1..=2 {
            let x2 = apply_xyz(KernelKind::X, alpha, 2, sol, fam, &r.r1)?;
            let y2 = apply_xyz(KernelKind::Y, alpha, 2, sol, fam, &r.r1)?;
            let x1 = apply_xyz(KernelKind::X, alpha, 1, sol, fam, &rho)?;
            let y1 = apply_xyz(KernelKind::Y, alpha, 1, sol, fam, &rho)?;
            let values = (0..=k_max)
                .map(|k| inv_tau * (x2.values[k] + y2.values[k] - x1.values[k] - y1.values[k]))
                .collect();
            comps.push(WeightedSeq::new(mode.n + alpha - 1, 0, values));
        }
        let f = comps.pop().expect("two components");
        let g = comps.pop().expect("two components");
        // the coefficients themselves, without the prefactors
        let mut e1 = vec![0.0; k_max + 1];
        let mut e2 = vec![0.0; k_max + 1];
        let mut upper = 0.0;
        for k in (0..=k_max).rev() {
            let up2 = if k < k_max {
                sol.ratio_prefix[k] * sol.k[k][1] * r.r1.values[k] / fam.a(mode.n + 1, k)
            } else {
                0.0
            };
            upper += up2;
            e1[k] = upper;
            upper -= if k > 0 {
                sol.ratio_prefix[k] * sol.k[k][0] * rho.values[k] / fam.a(mode.n, k)
            } else {
                0.0
            };
        }
        let mut lower = 0.0;
        for k in 0..=k_max {
            lower -= sol.ratio_prefix[k] * sol.i[k][0] * rho.values[k] / fam.a(mode.n, k);
            e2[k] = lower;
            if k < k_max {
                lower += sol.ratio_prefix[k] * sol.i[k][1] * r.r1.values[k] / fam.a(mode.n + 1, k);
            }
        }
        e1.iter_mut().chain(e2.iter_mut()).for_each(|v| *v *= inv_tau);
        (SolutionPair { g, f }, e1, e2)
    };
    let report = boundary_residual(&h, sol);
    Ok(ParametrixResult {
        mode,
        h,
        e1,
        e2,
        beta: report.beta,
        boundary_residual: report.residual,
        boundary_allowance: report.allowance,
    })
}

/// Variation-of-constants form of the inverse, for small `k_max`.
///
/// `h(k) = P(k) sum_{i<=k} P(i)^{-1} A(i)^{-1} r(i) + alpha I(k)` with the
/// particular initial vector `(0, q0/a_n(0))` and `alpha` fixed by the
/// boundary row.
pub fn apply_q_variation(sol: &KernelSolution, fam: &Families, r: &RhsPair) -> Result<SolutionPair> {
    let mode = sol.mode;
    let k_max = sol.k_max;
    if k_max > VARIATION_MAX_K {
        return Err(Error::Shape(format!(
            "variation-of-constants path limited to k_max <= {VARIATION_MAX_K}"
        )));
    }
    r.check(mode, k_max)?;
    let mut partial = crate::transfer::Mat2::IDENTITY;
    let mut u = [0.0, r.q0 / fam.a(mode.n, 0)];
    let mut particular = vec![u];
    for k in 0..k_max {
        partial = build_c(mode, k, fam) * partial;
        let step = crate::transfer::invert(&build_a(mode, k, fam))?.apply([r.r1.values[k], r.r2.values[k]]);
        let back = crate::transfer::invert(&partial)?.apply(step);
        u = [u[0] + back[0], u[1] + back[1]];
        particular.push(partial.apply(u));
    }
    // <P(inf) u + alpha I(inf), K(inf)^perp> = 0  <=>  alpha = <u, K(0)^perp> / tau
    let alpha = dot(u, perp(sol.k[0])) / sol.tau;
    let table: Vec<[f64; 2]> = particular
        .iter()
        .zip(&sol.i)
        .map(|(p, i)| [p[0] + alpha * i[0], p[1] + alpha * i[1]])
        .collect();
    Ok(SolutionPair::from_table(mode, &table))
}

/// Dense solution of the truncated constrained system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub h: SolutionPair,
    /// Smallest singular value of the row-equilibrated system.
    pub smin: f64,
}

fn oracle_matrix(sol: &KernelSolution, fam: &Families, with_boundary: bool) -> DMatrix<f64> {
    let mode = sol.mode;
    let k_max = sol.k_max;
    let size = 2 * (k_max + 1);
    let mut mat = DMatrix::<f64>::zeros(size, size);
    mat[(0, 0)] = mode.mf();
    mat[(0, 1)] = fam.a(mode.n, 0);
    for k in 0..k_max {
        let a = build_a(mode, k, fam);
        let b = build_b(mode, k, fam);
        for row in 0..2 {
            for col in 0..2 {
                mat[(1 + 2 * k + row, 2 * (k + 1) + col)] = a.0[row][col];
                mat[(1 + 2 * k + row, 2 * k + col)] = -b.0[row][col];
            }
        }
    }
    if with_boundary {
        // <T h(k_max), K(inf)^perp> = <h(k_max), T^t K(inf)^perp>
        let w = sol.tail_transfer.transpose().apply(perp(sol.k_inf));
        mat[(size - 1, 2 * k_max)] = w[0];
        mat[(size - 1, 2 * k_max + 1)] = w[1];
    }
    mat
}

/// Divides each row by its largest entry; returns the scales.
fn equilibrate(mat: &mut DMatrix<f64>) -> Vec<f64> {
    (0..mat.nrows())
        .map(|row| {
            let scale = mat.row(row).amax();
            if scale > 0.0 {
                mat.row_mut(row).scale_mut(1.0 / scale);
                scale
            } else {
                1.0
            }
        })
        .collect()
}

/// Row-equilibrated, LU-factorized truncated system for one mode.
pub struct OracleSystem {
    mode: ModeIndex,
    k_max: usize,
    matrix: DMatrix<f64>,
    scales: Vec<f64>,
    lu: LU<f64, Dyn, Dyn>,
}

impl OracleSystem {
    pub fn new(sol: &KernelSolution, fam: &Families) -> Self {
        let mut matrix = oracle_matrix(sol, fam, true);
        let scales = equilibrate(&mut matrix);
        let lu = matrix.clone().lu();
        OracleSystem {
            mode: sol.mode,
            k_max: sol.k_max,
            matrix,
            scales,
            lu,
        }
    }

    /// Smallest singular value of the equilibrated matrix.
    pub fn smin(&self) -> f64 {
        self.matrix.singular_values().min()
    }

    pub fn solve(&self, r: &RhsPair) -> Result<SolutionPair> {
        let (mode, k_max) = (self.mode, self.k_max);
        r.check(mode, k_max)?;
        let mut rhs = DVector::<f64>::zeros(2 * (k_max + 1));
        rhs[0] = r.q0;
        for k in 0..k_max {
            rhs[1 + 2 * k] = r.r1.values[k];
            rhs[2 + 2 * k] = r.r2.values[k];
        }
        for (v, s) in rhs.iter_mut().zip(&self.scales) {
            *v /= s;
        }
        let x = self.lu.solve(&rhs).ok_or_else(|| Error::SingularSystem {
            m: mode.m,
            n: mode.n,
            smin: self.smin(),
        })?;
        let table: Vec<[f64; 2]> = (0..=k_max).map(|k| [x[2 * k], x[2 * k + 1]]).collect();
        Ok(SolutionPair::from_table(mode, &table))
    }
}

/// Solves the `2(k_max+1)` square system by LU after row equilibration.
pub fn oracle_solve(sol: &KernelSolution, fam: &Families, r: &RhsPair) -> Result<OracleSolution> {
    let system = OracleSystem::new(sol, fam);
    let smin = system.smin();
    if !(smin > 0.0) {
        return Err(Error::SingularSystem {
            m: sol.mode.m,
            n: sol.mode.n,
            smin,
        });
    }
    Ok(OracleSolution {
        h: system.solve(r)?,
        smin,
    })
}

/// Null space of the system without its boundary row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullSpaceReport {
    /// Number of singular values below `1e-12` times the largest.
    pub dimension: usize,
    /// `|cos|` of the angle between the null vector and the stacked `I` table.
    pub cosine_with_i: f64,
}

pub fn null_space_without_boundary(sol: &KernelSolution, fam: &Families) -> NullSpaceReport {
    let mut mat = oracle_matrix(sol, fam, false);
    equilibrate(&mut mat);
    let svd = mat.svd(false, true);
    let values = &svd.singular_values;
    let smax = values.max();
    let dimension = values.iter().filter(|s| **s <= 1e-12 * smax).count();
    let (idx, _) = values.argmin();
    let v_t = svd.v_t.expect("requested right singular vectors");
    let null = v_t.row(idx);
    let stacked: Vec<f64> = sol.i.iter().flat_map(|v| [v[0], v[1]]).collect();
    let stacked = DVector::from_vec(stacked);
    let cosine = null.transpose().dot(&stacked).abs() / (null.norm() * stacked.norm());
    NullSpaceReport {
        dimension,
        cosine_with_i: cosine,
    }
}

/// Relative weighted residual `||A Q r - r|| / ||r||`.
pub fn right_inverse_residual(sol: &KernelSolution, fam: &Families, r: &RhsPair) -> Result<f64> {
    let q = apply_q(sol, fam, r)?;
    let back = apply_a(sol.mode, fam, &q.h)?;
    Ok(back.sub(r).norm(fam) / r.norm(fam))
}
