use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use qtorus::analysis::{decay_scan, DecayTable, HsReport, BOUND_SLACK};
use qtorus::parametrix::{apply_a, apply_q, OracleSystem, RhsPair, WeightedSeq};
use qtorus::solutions::{
    choose_k_infinity, independence_margin, solve_kernel, verify_lemma_suite, wronskian_residuals,
    LemmaReport,
};
use qtorus::weights::{eval_s, validate_hypotheses, HypothesisCheck};
use qtorus::{Families, KernelSolution, ModeIndex};

use crate::config::{ExperimentConfig, Format};

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Violation,
}

impl Outcome {
    fn from_ok(ok: bool) -> Self {
        if ok {
            Outcome::Ok
        } else {
            Outcome::Violation
        }
    }
}

pub struct RunContext {
    pub cfg: ExperimentConfig,
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    generated_at: u64,
    command: &'a str,
    #[serde(flatten)]
    body: T,
}

fn write_json<T: Serialize>(dir: &Path, name: &str, command: &str, body: T) -> Result<PathBuf> {
    let generated_at = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(&Envelope {
        generated_at,
        command,
        body,
    })?;
    fs::write(&path, text + "\n").with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

fn prepare(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn kernel(ctx: &RunContext, fam: &Families, mode: ModeIndex) -> qtorus::Result<KernelSolution> {
    choose_k_infinity(mode, &ctx.cfg.rule())
        .and_then(|bd| solve_kernel(mode, fam, &bd, &ctx.cfg.truncation()))
        .map_err(|e| e.at_mode(mode.m, mode.n))
}

// ---------------------------------------------------------------- validate

#[derive(Serialize)]
struct ValidateBody<'a> {
    passed: bool,
    families: &'a Families,
    checks: &'a [HypothesisCheck],
}

pub fn validate(ctx: &RunContext) -> Result<Outcome> {
    let fam = ctx.cfg.families();
    let report = validate_hypotheses(&fam.weights, &fam.coeffs);
    for e in &report.entries {
        println!("{:<4} {:<24} {}", if e.passed { "ok" } else { "FAIL" }, e.name, e.witness);
    }
    prepare(&ctx.out_dir)?;
    let body = ValidateBody {
        passed: report.all_passed(),
        families: &fam,
        checks: &report.entries,
    };
    let path = write_json(&ctx.out_dir, "validate.json", "validate", body)?;
    println!("report written to {}", path.display());
    Ok(Outcome::from_ok(report.all_passed()))
}

// ------------------------------------------------------------------- solve

/// Right-hand side for one mode: `r1` at level `n+1` from `k = 0`, `r2` at
/// level `n` from `k = 1`, and the scalar `q0`. Short sequences are padded
/// with zeros up to `k_max`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RhsRecord {
    pub m: i64,
    pub n: usize,
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
    #[serde(default)]
    pub q0: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RhsFile {
    pub modes: Vec<RhsRecord>,
}

impl RhsRecord {
    fn to_pair(&self, k_max: usize) -> Result<RhsPair> {
        let mode = ModeIndex::new(self.m, self.n);
        if self.r1.len() > k_max || self.r2.len() > k_max {
            bail!(
                "rhs for mode ({}, {}) is longer than k_max = {k_max}",
                self.m,
                self.n
            );
        }
        let pad = |v: &[f64]| {
            let mut out = v.to_vec();
            out.resize(k_max, 0.0);
            out
        };
        Ok(RhsPair {
            r1: WeightedSeq::new(mode.n + 1, 0, pad(&self.r1)),
            r2: WeightedSeq::new(mode.n, 1, pad(&self.r2)),
            q0: self.q0,
        })
    }
}

#[derive(Serialize)]
struct ModeSolution {
    m: i64,
    n: usize,
    passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    residual: Option<f64>,
    oracle_gap: Option<f64>,
    boundary_residual: Option<f64>,
    boundary_allowance: Option<f64>,
    beta: Option<f64>,
    tau: Option<f64>,
    g: Vec<f64>,
    f: Vec<f64>,
}

impl ModeSolution {
    fn failed(mode: ModeIndex, error: String) -> Self {
        ModeSolution {
            m: mode.m,
            n: mode.n,
            passed: false,
            error: Some(error),
            residual: None,
            oracle_gap: None,
            boundary_residual: None,
            boundary_allowance: None,
            beta: None,
            tau: None,
            g: Vec::new(),
            f: Vec::new(),
        }
    }
}

#[derive(Serialize)]
struct SolveBody {
    seed: Option<u64>,
    k_max: usize,
    tol_residual: f64,
    failures: usize,
    modes: Vec<ModeSolution>,
}

/// Relative when `scale > 0`, absolute otherwise.
fn relative(diff: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

fn solve_mode(ctx: &RunContext, fam: &Families, mode: ModeIndex, r: &RhsPair) -> ModeSolution {
    let tol = ctx.cfg.truncation.tol_residual;
    let run = || -> qtorus::Result<ModeSolution> {
        let sol = kernel(ctx, fam, mode)?;
        let q = apply_q(&sol, fam, r)?;
        let back = apply_a(mode, fam, &q.h)?;
        let residual = relative(back.sub(r).norm(fam), r.norm(fam));
        let oracle = OracleSystem::new(&sol, fam).solve(r)?;
        let oracle_gap = relative(q.h.sub(&oracle).norm(fam), oracle.norm(fam));
        let within = q.boundary_residual <= q.boundary_allowance;
        Ok(ModeSolution {
            m: mode.m,
            n: mode.n,
            passed: residual <= tol && within,
            error: None,
            residual: Some(residual),
            oracle_gap: Some(oracle_gap),
            boundary_residual: Some(q.boundary_residual),
            boundary_allowance: Some(q.boundary_allowance),
            beta: Some(q.beta),
            tau: Some(sol.tau),
            g: q.h.g.values,
            f: q.h.f.values,
        })
    };
    run().unwrap_or_else(|e| ModeSolution::failed(mode, e.at_mode(mode.m, mode.n).to_string()))
}

pub fn solve(ctx: &RunContext, rhs: Option<&Path>, seed: u64) -> Result<Outcome> {
    let fam = ctx.cfg.families();
    let k_max = ctx.cfg.truncation.k_max;
    let (inputs, seed_used): (Vec<(ModeIndex, RhsPair)>, Option<u64>) = match rhs {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read rhs {}", path.display()))?;
            let file: RhsFile =
                serde_json::from_str(&text).with_context(|| format!("cannot parse rhs {}", path.display()))?;
            let mut inputs = file
                .modes
                .iter()
                .map(|rec| Ok((ModeIndex::new(rec.m, rec.n), rec.to_pair(k_max)?)))
                .collect::<Result<Vec<_>>>()?;
            inputs.sort_by_key(|(mode, _)| *mode);
            if inputs.windows(2).any(|w| w[0].0 == w[1].0) {
                bail!("rhs file lists a mode twice");
            }
            (inputs, None)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let support = k_max.div_ceil(2);
            let inputs = ctx
                .cfg
                .modes()
                .into_iter()
                .map(|mode| (mode, RhsPair::random(mode, k_max, support, &mut rng)))
                .collect();
            (inputs, Some(seed))
        }
    };
    let modes: Vec<ModeSolution> = inputs.par_iter().map(|(mode, r)| solve_mode(ctx, &fam, *mode, r)).collect();
    let failures = modes.iter().filter(|s| !s.passed).count();
    let worst = modes.iter().filter_map(|s| s.residual).fold(0.0, f64::max);
    for s in modes.iter().filter(|s| !s.passed) {
        match &s.error {
            Some(e) => println!("FAIL {e}"),
            None => println!(
                "FAIL mode ({}, {}): residual {:.3e}, boundary residual {:.3e} (allowance {:.3e})",
                s.m,
                s.n,
                s.residual.unwrap_or(f64::NAN),
                s.boundary_residual.unwrap_or(f64::NAN),
                s.boundary_allowance.unwrap_or(f64::NAN)
            ),
        }
    }
    println!(
        "{} modes solved, {failures} failures, max residual {worst:.3e} (tolerance {:.1e})",
        modes.len(),
        ctx.cfg.truncation.tol_residual
    );
    prepare(&ctx.out_dir)?;
    let body = SolveBody {
        seed: seed_used,
        k_max,
        tol_residual: ctx.cfg.truncation.tol_residual,
        failures,
        modes,
    };
    let path = write_json(&ctx.out_dir, "solve.json", "solve", body)?;
    println!("solutions written to {}", path.display());
    Ok(Outcome::from_ok(failures == 0))
}

// -------------------------------------------------------------------- scan

#[derive(Serialize)]
struct LemmaSummary {
    modes_checked: usize,
    checks: usize,
    violations: usize,
    first_counterexample: Option<String>,
}

#[derive(Serialize)]
struct ScanBody<'a> {
    k_max: usize,
    slack: f64,
    bound_failures: Vec<String>,
    exchange_mismatches: usize,
    envelopes_monotone: bool,
    lemma: LemmaSummary,
    table: &'a DecayTable,
}

/// Long-format rows `(m, n, kernel, hs_sq, bound, tail, pass)`.
fn hs_rows(r: &HsReport) -> Vec<(String, f64, f64, f64, bool)> {
    let mut rows = Vec::new();
    let bound_ok = |v: f64, b: f64| v <= b * (1.0 + BOUND_SLACK);
    if let (Some(x), Some(y), Some(bx), Some(tx), Some(ty)) = (r.hs_x, r.hs_y, r.bound_x, r.tail_x, r.tail_y) {
        for a in 0..2 {
            for b in 0..2 {
                let name = format!("hs_X{}{}", a + 1, b + 1);
                rows.push((name, x[a][b], bx[a][b], tx[a][b], bound_ok(x[a][b], bx[a][b])));
            }
        }
        // each Y kernel shares the bound of the X kernel it exchanges into
        for a in 0..2 {
            for b in 0..2 {
                let bound = bx[b][a];
                let name = format!("hs_Y{}{}", a + 1, b + 1);
                rows.push((name, y[a][b], bound, ty[a][b], bound_ok(y[a][b], bound)));
            }
        }
    }
    if let Some(z) = r.hs_z {
        rows.push(("hs_Z".into(), z, r.bound_zw, r.tail_zw, bound_ok(z, r.bound_zw)));
    }
    if let Some(w) = r.hs_w {
        rows.push(("hs_W".into(), w, r.bound_zw, r.tail_zw, bound_ok(w, r.bound_zw)));
    }
    rows
}

fn write_hs_csv(dir: &Path, table: &DecayTable) -> Result<PathBuf> {
    let path = dir.join("hs_table.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(["m", "n", "kernel", "hs_sq", "bound", "tail", "pass", "proxy"])?;
    for r in &table.rows {
        for (name, v, b, t, ok) in hs_rows(r) {
            w.write_record([
                r.mode.m.to_string(),
                r.mode.n.to_string(),
                name,
                format!("{v:.17e}"),
                format!("{b:.17e}"),
                format!("{t:.3e}"),
                ok.to_string(),
                format!("{:.17e}", r.proxy),
            ])?;
        }
    }
    w.flush()?;
    Ok(path)
}

fn non_increasing(env: &[(u64, f64)]) -> bool {
    env.windows(2).all(|p| p[1].1 <= p[0].1)
}

pub fn scan(ctx: &RunContext) -> Result<Outcome> {
    let fam = ctx.cfg.families();
    let modes = ctx.cfg.modes();
    let table = match decay_scan(&modes, &fam, &ctx.cfg.rule(), &ctx.cfg.truncation()) {
        Ok(t) => t,
        Err(e) => {
            println!("FAIL {e}");
            return Ok(Outcome::Violation);
        }
    };
    let slack = ctx.cfg.checks.slack;
    let lemma: Vec<qtorus::Result<LemmaReport>> = modes
        .par_iter()
        .filter(|mode| mode.m != 0)
        .map(|&mode| verify_lemma_suite(&kernel(ctx, &fam, mode)?, &fam, slack))
        .collect();
    let lemma = lemma.into_iter().collect::<qtorus::Result<Vec<_>>>();
    let lemma = match lemma {
        Ok(l) => l,
        Err(e) => {
            println!("FAIL {e}");
            return Ok(Outcome::Violation);
        }
    };
    let violations: usize = lemma.iter().map(|r| r.violations()).sum();
    let checks: usize = lemma
        .iter()
        .flat_map(|r| r.clauses.iter().filter(|c| !c.informational).map(|c| c.checked))
        .sum();
    let first_counterexample = lemma.iter().find_map(|r| {
        r.first_counterexample().map(|(c, k)| {
            format!(
                "mode ({}, {}) clause {}/{} at k = {k} (margin {:.3e})",
                r.mode.m, r.mode.n, c.group, c.name, c.worst_margin
            )
        })
    });
    let mut bound_failures = Vec::new();
    for r in &table.rows {
        for (name, v, b, _, ok) in hs_rows(r) {
            if !ok {
                bound_failures.push(format!("mode ({}, {}) {name}: {v:.6e} > {b:.6e}", r.mode.m, r.mode.n));
            }
        }
    }
    let exchange_mismatches = table.rows.iter().flat_map(|r| &r.fubini).filter(|p| !p.passed).count();
    let envelopes_monotone = non_increasing(&table.envelope_m) && non_increasing(&table.envelope_n);

    println!(
        "{} modes scanned; proxy envelope over |m|: {}; over n: {}",
        table.rows.len(),
        fmt_envelope(&table.envelope_m),
        fmt_envelope(&table.envelope_n)
    );
    println!(
        "HS bounds: {} failures; exchanged-sum mismatches: {exchange_mismatches}",
        bound_failures.len()
    );
    for f in &bound_failures {
        println!("FAIL {f}");
    }
    println!(
        "lemma suite: {violations} violations in {checks} checks over {} modes",
        lemma.len()
    );
    if let Some(c) = &first_counterexample {
        println!("FAIL first counterexample: {c}");
    }

    prepare(&ctx.out_dir)?;
    if ctx.cfg.output.wants(Format::Csv) {
        let path = write_hs_csv(&ctx.out_dir, &table)?;
        println!("HS table written to {}", path.display());
    }
    if ctx.cfg.output.wants(Format::Json) {
        let ok = violations == 0 && bound_failures.is_empty();
        let body = ScanBody {
            k_max: ctx.cfg.truncation.k_max,
            slack,
            bound_failures,
            exchange_mismatches,
            envelopes_monotone,
            lemma: LemmaSummary {
                modes_checked: lemma.len(),
                checks,
                violations,
                first_counterexample,
            },
            table: &table,
        };
        let path = write_json(&ctx.out_dir, "scan.json", "scan", body)?;
        println!("scan report written to {}", path.display());
        return Ok(Outcome::from_ok(ok));
    }
    Ok(Outcome::from_ok(violations == 0 && bound_failures.is_empty()))
}

fn fmt_envelope(env: &[(u64, f64)]) -> String {
    env.iter()
        .map(|(i, v)| format!("{i}:{v:.3e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

// -------------------------------------------------------------------- dump

#[derive(Serialize)]
struct DumpMode {
    m: i64,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    tau: Option<f64>,
    epsilon: Option<f64>,
    s_n: Option<f64>,
    seed_index: Option<usize>,
    tail_bound: Option<f64>,
    i_inf: Option<[f64; 2]>,
    k_inf: Option<[f64; 2]>,
    independence_margin: Option<f64>,
    max_wronskian_error: Option<f64>,
    table: Option<String>,
}

#[derive(Serialize)]
struct DumpBody {
    k_max: usize,
    modes: Vec<DumpMode>,
}

fn dump_table(dir: &Path, sol: &KernelSolution, fam: &Families) -> Result<String> {
    let mode = sol.mode;
    let name = format!("kernel_m{}_n{}.csv", mode.m, mode.n);
    let path = dir.join(&name);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(["k", "a_n", "a_n1", "c1", "c2", "i1", "i2", "k1", "k2"])?;
    for k in 0..=sol.k_max {
        let row = [
            fam.a(mode.n, k),
            fam.a(mode.n + 1, k),
            fam.c1(mode.n, k),
            fam.c2(mode.n, k),
            sol.i[k][0],
            sol.i[k][1],
            sol.k[k][0],
            sol.k[k][1],
        ];
        let mut rec = vec![k.to_string()];
        rec.extend(row.iter().map(|v| format!("{v:.17e}")));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(name)
}

pub fn dump(ctx: &RunContext) -> Result<Outcome> {
    let fam = ctx.cfg.families();
    prepare(&ctx.out_dir)?;
    let solved: Vec<(ModeIndex, qtorus::Result<KernelSolution>)> = ctx
        .cfg
        .modes()
        .into_par_iter()
        .map(|mode| (mode, kernel(ctx, &fam, mode)))
        .collect();
    let mut modes = Vec::new();
    let mut ok = true;
    for (mode, sol) in solved {
        let entry = match sol {
            Ok(sol) => {
                let table = if ctx.cfg.output.wants(Format::Csv) {
                    Some(dump_table(&ctx.out_dir, &sol, &fam)?)
                } else {
                    None
                };
                DumpMode {
                    m: mode.m,
                    n: mode.n,
                    error: None,
                    tau: Some(sol.tau),
                    epsilon: Some(sol.epsilon.value),
                    s_n: eval_s(&fam.weights, mode.n).ok().map(|s| s.value),
                    seed_index: Some(sol.seed_index),
                    tail_bound: Some(sol.tail_bound),
                    i_inf: Some(sol.i_inf),
                    k_inf: Some(sol.k_inf),
                    independence_margin: Some(independence_margin(&sol)),
                    max_wronskian_error: Some(wronskian_residuals(&sol).into_iter().fold(0.0, f64::max)),
                    table,
                }
            }
            Err(e) => {
                ok = false;
                println!("FAIL {e}");
                DumpMode {
                    m: mode.m,
                    n: mode.n,
                    error: Some(e.to_string()),
                    tau: None,
                    epsilon: None,
                    s_n: None,
                    seed_index: None,
                    tail_bound: None,
                    i_inf: None,
                    k_inf: None,
                    independence_margin: None,
                    max_wronskian_error: None,
                    table: None,
                }
            }
        };
        modes.push(entry);
    }
    println!("{} kernel tables dumped to {}", modes.len(), ctx.out_dir.display());
    if ctx.cfg.output.wants(Format::Json) {
        let body = DumpBody {
            k_max: ctx.cfg.truncation.k_max,
            modes,
        };
        write_json(&ctx.out_dir, "dump.json", "dump", body)?;
    }
    Ok(Outcome::from_ok(ok))
}
