//! Acceptance run on the default families and the default mode grid.
//!
//! Prints one PASS/FAIL line per criterion. Exits nonzero when the set of
//! failing criteria differs from `EXPECTED_FAILURES`.

use std::process::ExitCode;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use qtorus::analysis::{decay_scan, default_grid, BOUND_SLACK, FUBINI_TOL};
use qtorus::dirac::{algebra_sanity, mode_equivalence_gap, FourierField, TruncatedAlgebraRep};
use qtorus::parametrix::{
    apply_a, apply_q, boundary_residual, null_space_without_boundary, OracleSystem, RhsPair,
    SolutionPair,
};
use qtorus::solutions::{
    choose_k_infinity, epsilon, solve_kernel, verify_lemma_suite, wronskian_residuals, BoundaryRule,
    KernelSolution, Truncation, DEFAULT_SLACK,
};
use qtorus::weights::eval_s;
use qtorus::{Families, ModeIndex};

const K_MAX: usize = 128;
const FIXTURES_PER_MODE: usize = 10;
const FIXTURE_SUPPORT: usize = 64;
const SEED: u64 = 20_240_601;

/// Criteria known to fail; see the project notes for the analysis.
const EXPECTED_FAILURES: &[u32] = &[6];

struct Outcome {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
}

struct ModeRun {
    sol: KernelSolution,
    fixtures: Vec<RhsPair>,
}

fn solve(fam: &Families, mode: ModeIndex, k_max: usize) -> KernelSolution {
    let bd = choose_k_infinity(mode, &BoundaryRule::Default).expect("default rule");
    solve_kernel(mode, fam, &bd, &Truncation::default().with_k_max(k_max)).expect("kernel solve")
}

fn fixtures(mode: ModeIndex) -> Vec<RhsPair> {
    let seed = SEED ^ ((mode.m as u64) << 8) ^ mode.n as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..FIXTURES_PER_MODE)
        .map(|_| RhsPair::random(mode, K_MAX, FIXTURE_SUPPORT, &mut rng))
        .collect()
}

fn rel(a: &SolutionPair, b: &SolutionPair, fam: &Families) -> f64 {
    a.sub(b).norm(fam) / b.norm(fam)
}

fn right_inverse(fam: &Families, grid: &[ModeIndex]) -> (Outcome, Vec<ModeRun>) {
    let start = Instant::now();
    let runs: Vec<(ModeRun, f64)> = grid
        .par_iter()
        .map(|&mode| {
            let sol = solve(fam, mode, K_MAX);
            let fixtures = fixtures(mode);
            let worst = fixtures
                .iter()
                .map(|r| {
                    let q = apply_q(&sol, fam, r).expect("parametrix");
                    let back = apply_a(mode, fam, &q.h).expect("operator");
                    back.sub(r).norm(fam) / r.norm(fam)
                })
                .fold(0.0, f64::max);
            (ModeRun { sol, fixtures }, worst)
        })
        .collect();
    let elapsed = start.elapsed().as_secs_f64();
    let worst = runs.iter().map(|(_, w)| *w).fold(0.0, f64::max);
    let passed = worst <= 1e-9 && elapsed < 30.0;
    let outcome = Outcome {
        id: 1,
        name: "right inverse",
        passed,
        detail: format!(
            "max residual {worst:.2e} over {} fixtures, {elapsed:.2} s",
            runs.len() * FIXTURES_PER_MODE
        ),
    };
    (outcome, runs.into_iter().map(|(r, _)| r).collect())
}

fn oracle_equivalence(fam: &Families, runs: &[ModeRun]) -> Outcome {
    let worst = runs
        .par_iter()
        .map(|run| {
            let system = OracleSystem::new(&run.sol, fam);
            run.fixtures
                .iter()
                .map(|r| {
                    let q = apply_q(&run.sol, fam, r).expect("parametrix").h;
                    let o = system.solve(r).expect("oracle");
                    rel(&q, &o, fam)
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Outcome {
        id: 2,
        name: "oracle equivalence",
        passed: worst <= 1e-8,
        detail: format!("max relative gap {worst:.2e}"),
    }
}

fn kernel_triviality(fam: &Families, runs: &[ModeRun]) -> Outcome {
    let stats: Vec<(f64, f64, usize, f64)> = runs
        .par_iter()
        .map(|run| {
            let sol = &run.sol;
            let smin = OracleSystem::new(sol, fam).smin();
            let i = SolutionPair::from_table(sol.mode, &sol.i);
            let ai = apply_a(sol.mode, fam, &i).expect("operator");
            let a_res = ai.norm(fam) / i.norm(fam);
            let null = null_space_without_boundary(sol, fam);
            (smin, a_res, null.dimension, null.cosine_with_i)
        })
        .collect();
    let smin = stats.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let a_res = stats.iter().map(|s| s.1).fold(0.0, f64::max);
    let dims_ok = stats.iter().all(|s| s.2 == 1);
    let cos = stats.iter().map(|s| s.3).fold(f64::INFINITY, f64::min);
    Outcome {
        id: 3,
        name: "kernel triviality",
        passed: smin > 0.0 && a_res <= 1e-12 && dims_ok && cos >= 1.0 - 1e-8,
        detail: format!(
            "min smin {smin:.2e}, max A I residual {a_res:.2e}, null dim 1 everywhere: {dims_ok}, min cosine 1 - {:.2e}",
            1.0 - cos
        ),
    }
}

fn wronskian(runs: &[ModeRun]) -> Outcome {
    let worst = runs
        .iter()
        .flat_map(|run| wronskian_residuals(&run.sol))
        .fold(0.0, f64::max);
    Outcome {
        id: 4,
        name: "wronskian identity",
        passed: worst <= 1e-12,
        detail: format!("max relative error {worst:.2e}"),
    }
}

fn lemma_suite(fam: &Families) -> Outcome {
    let modes: Vec<ModeIndex> = (1..=32i64)
        .flat_map(|m| (0..=16usize).map(move |n| ModeIndex::new(m, n)))
        .collect();
    let reports: Vec<_> = modes
        .par_iter()
        .map(|&mode| verify_lemma_suite(&solve(fam, mode, K_MAX), fam, DEFAULT_SLACK).expect("lemma suite"))
        .collect();
    let violations: usize = reports.iter().map(|r| r.violations()).sum();
    let checked: usize = reports
        .iter()
        .flat_map(|r| r.clauses.iter().filter(|c| !c.informational).map(|c| c.checked))
        .sum();
    let first = reports.iter().find_map(|r| {
        r.first_counterexample()
            .map(|(c, k)| format!(", first at {} k = {k} ({})", r.mode, c.name))
    });
    Outcome {
        id: 5,
        name: "lemma suite",
        passed: violations == 0,
        detail: format!(
            "{violations} violations in {checked} checks over {} modes{}",
            modes.len(),
            first.unwrap_or_default()
        ),
    }
}

fn hs_bounds(fam: &Families, grid: &[ModeIndex]) -> Outcome {
    let table = decay_scan(grid, fam, &BoundaryRule::Default, &Truncation::default()).expect("scan");
    let x_ok = table.rows.iter().all(|r| r.x_pass);
    let y_ok = table.rows.iter().all(|r| r.y_pass);
    let zw_ok = table.rows.iter().all(|r| r.zw_pass);
    let mut worst_pair = [0.0f64; 4];
    let mut names = [""; 4];
    for r in &table.rows {
        for (j, p) in r.fubini.iter().enumerate() {
            worst_pair[j] = worst_pair[j].max(p.relative_gap);
            names[j] = if names[j].is_empty() { &p.name } else { names[j] };
        }
    }
    let fubini_ok = worst_pair.iter().all(|g| *g <= FUBINI_TOL);
    let pairs: Vec<String> = names
        .iter()
        .zip(worst_pair)
        .map(|(n, g)| format!("{n} {g:.1e}"))
        .collect();
    Outcome {
        id: 6,
        name: "hilbert-schmidt bounds",
        passed: x_ok && y_ok && zw_ok && fubini_ok,
        detail: format!(
            "X bounds {x_ok}, Y bounds {y_ok}, Z/W bounds {zw_ok} (slack {BOUND_SLACK:e}); exchange pairs [{}]",
            pairs.join(", ")
        ),
    }
}

fn decay(fam: &Families, grid: &[ModeIndex]) -> Outcome {
    let table = decay_scan(grid, fam, &BoundaryRule::Default, &Truncation::default()).expect("scan");
    let proxy = |m: i64, n: usize| table.row(m, n).expect("grid mode").proxy;
    let ns = [0usize, 1, 2, 4, 8, 16];
    let ms: Vec<i64> = grid.iter().map(|g| g.m).collect();
    let along_m = ns.iter().all(|&n| proxy(32, n) < proxy(1, n) && proxy(-32, n) < proxy(-1, n));
    let along_n = ms.iter().all(|&m| proxy(m, 16) < proxy(m, 0));
    let eps_ok = grid.iter().all(|mode| {
        let e = epsilon(*mode, fam, 1e-12).expect("epsilon").value;
        e <= eval_s(&fam.weights, mode.n).expect("s").value
    });
    Outcome {
        id: 7,
        name: "decay",
        passed: along_m && along_n && eps_ok,
        detail: format!(
            "proxy(32,n) < proxy(1,n): {along_m}, proxy(m,16) < proxy(m,0): {along_n}, epsilon <= s(n): {eps_ok}"
        ),
    }
}

fn mode_equivalence(fam: &Families, grid: &[ModeIndex]) -> Outcome {
    let k_max = 32;
    let mut worst: f64 = 0.0;
    for &mode in grid {
        for at in [0usize, 1, 5, 17, 31, 32] {
            for on_g in [true, false] {
                let mut g = vec![0.0; k_max + 1];
                let mut f = vec![0.0; k_max + 1];
                if on_g {
                    g[at] = 1.0;
                } else {
                    f[at] = 1.0;
                }
                let mut field = FourierField::new();
                field.insert(mode, g, f).expect("field");
                worst = worst.max(mode_equivalence_gap(&field, fam).expect("paths"));
            }
        }
    }
    Outcome {
        id: 8,
        name: "operator mode equivalence",
        passed: worst <= 1e-14,
        detail: format!("max entrywise gap {worst:.2e} on impulse fields"),
    }
}

fn algebra() -> Outcome {
    let thetas = [0.0, 0.25, (5f64.sqrt() - 1.0) / 2.0];
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut passed = true;
    let mut parts = Vec::new();
    for theta in thetas {
        let rep = TruncatedAlgebraRep::new(10, 5, theta);
        let r = algebra_sanity(&rep, 20, 100, &mut rng);
        let ok = r.commutation_residual <= 1e-15
            && r.diagonal_residual == 0.0
            && r.plus_extraction_error == 0.0
            && r.minus_extraction_error <= 1e-14
            && r.trace_violations == 0;
        passed &= ok;
        parts.push(format!(
            "theta {theta:.4}: comm {:.1e}, plus {:.1e}, minus {:.1e}, trace {}/{}",
            r.commutation_residual,
            r.plus_extraction_error,
            r.minus_extraction_error,
            r.trace_samples - r.trace_violations,
            r.trace_samples
        ));
    }
    Outcome {
        id: 9,
        name: "algebra sanity",
        passed,
        detail: parts.join("; "),
    }
}

fn boundary(fam: &Families, runs: &[ModeRun]) -> Outcome {
    let stats: Vec<(bool, f64, bool)> = runs
        .par_iter()
        .map(|run| {
            let mode = run.sol.mode;
            let wide = solve(fam, mode, 2 * K_MAX);
            let mut within = true;
            let mut drift: f64 = 0.0;
            let mut finite = true;
            for r in &run.fixtures {
                let q = apply_q(&run.sol, fam, r).expect("parametrix");
                let report = boundary_residual(&q.h, &run.sol);
                within &= report.within_allowance();
                let mut padded = RhsPair::zeros(mode, 2 * K_MAX);
                padded.r1.values[..K_MAX].copy_from_slice(&r.r1.values);
                padded.r2.values[..K_MAX].copy_from_slice(&r.r2.values);
                padded.q0 = r.q0;
                let beta_wide = apply_q(&wide, fam, &padded).expect("parametrix").beta;
                finite &= q.beta.is_finite() && beta_wide.is_finite();
                drift = drift.max((beta_wide - q.beta).abs() / q.beta.abs());
            }
            (within, drift, finite)
        })
        .collect();
    let within = stats.iter().all(|s| s.0);
    let drift = stats.iter().map(|s| s.1).fold(0.0, f64::max);
    let finite = stats.iter().all(|s| s.2);
    Outcome {
        id: 10,
        name: "boundary condition",
        passed: within && finite && drift <= 1e-6,
        detail: format!("residuals within allowance: {within}, beta finite: {finite}, max drift under doubling {drift:.2e}"),
    }
}

fn main() -> ExitCode {
    let fam = Families::default();
    let grid = default_grid();
    let (first, runs) = right_inverse(&fam, &grid);
    let mut outcomes = vec![first];
    let steps: Vec<Box<dyn Fn() -> Outcome + '_>> = vec![
        Box::new(|| oracle_equivalence(&fam, &runs)),
        Box::new(|| kernel_triviality(&fam, &runs)),
        Box::new(|| wronskian(&runs)),
        Box::new(|| lemma_suite(&fam)),
        Box::new(|| hs_bounds(&fam, &grid)),
        Box::new(|| decay(&fam, &grid)),
        Box::new(|| mode_equivalence(&fam, &grid)),
        Box::new(algebra),
        Box::new(|| boundary(&fam, &runs)),
    ];
    for step in steps {
        let start = Instant::now();
        let o = step();
        eprintln!("criterion {} took {:.2} s", o.id, start.elapsed().as_secs_f64());
        outcomes.push(o);
    }
    for o in &outcomes {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        let note = if !o.passed && EXPECTED_FAILURES.contains(&o.id) {
            " [expected]"
        } else {
            ""
        };
        println!("criterion {:>2} {tag} {}: {}{note}", o.id, o.name, o.detail);
    }
    let failing: Vec<u32> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    let total = outcomes.len();
    println!("{} of {total} criteria passed", total - failing.len());
    if failing == EXPECTED_FAILURES {
        ExitCode::SUCCESS
    } else {
        println!("failing set {failing:?} differs from expected {EXPECTED_FAILURES:?}");
        ExitCode::FAILURE
    }
}
