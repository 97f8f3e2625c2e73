use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use qtorus::solutions::{CustomBoundary, DEFAULT_SLACK};
use qtorus::weights::{CoefficientKind, PowerLaw};
use qtorus::{BoundaryRule, CoefficientFamily, Families, ModeIndex, Truncation, WeightFamily};

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub weights: WeightsConfig,
    pub coeffs: CoeffsConfig,
    pub boundary: BoundaryConfig,
    pub grid: GridConfig,
    pub truncation: TruncationConfig,
    pub checks: ChecksConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    #[default]
    Power,
    Table,
}

/// `a_n(k) = lambda (n+1)^p (k+1)^q`; with `kind = "table"` the rows of
/// `table` override it on their range.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsConfig {
    pub kind: WeightKind,
    pub lambda: f64,
    pub p: f64,
    pub q: f64,
    pub table: Option<Vec<Vec<f64>>>,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        let law = PowerLaw::DEFAULT;
        WeightsConfig {
            kind: WeightKind::Power,
            lambda: law.lambda,
            p: law.p,
            q: law.q,
            table: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CoeffKind {
    Unit,
    #[default]
    Geometric,
    Table,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoeffTable {
    pub c1: Vec<Vec<f64>>,
    pub c2: Vec<Vec<f64>>,
}

/// `c_i(k) = 1 - t_i^{k+1}`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoeffsConfig {
    pub kind: CoeffKind,
    pub t1: f64,
    pub t2: f64,
    pub kappa: f64,
    pub table: Option<CoeffTable>,
}

impl Default for CoeffsConfig {
    fn default() -> Self {
        CoeffsConfig {
            kind: CoeffKind::Geometric,
            t1: 0.5,
            t2: 0.5,
            kappa: 2.0,
            table: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    #[default]
    Default,
    Custom,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundaryConfig {
    pub rule: RuleKind,
    pub strict: bool,
    pub custom: Vec<CustomBoundary>,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        BoundaryConfig {
            rule: RuleKind::Default,
            strict: true,
            custom: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub m_list: Vec<i64>,
    pub n_list: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            m_list: vec![0, 1, -1, 2, -2, 4, -4, 8, -8, 16, -16, 32, -32],
            n_list: vec![0, 1, 2, 4, 8, 16],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruncationConfig {
    pub k_max: usize,
    pub tol_prod: f64,
    pub tol_tail: f64,
    pub tol_residual: f64,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        let t = Truncation::default();
        TruncationConfig {
            k_max: t.k_max,
            tol_prod: t.tol_prod,
            tol_tail: t.tol_tail,
            tol_residual: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksConfig {
    pub slack: f64,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        ChecksConfig { slack: DEFAULT_SLACK }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: "qtorus-out".to_string(),
            formats: vec![Format::Json, Format::Csv],
        }
    }
}

impl OutputConfig {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

impl ExperimentConfig {
    /// Reads and checks a config file; `None` gives the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg: ExperimentConfig = match path {
            None => ExperimentConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("cannot parse config {}", p.display()))?
            }
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        let t = &self.truncation;
        for (name, v) in [
            ("tol_prod", t.tol_prod),
            ("tol_tail", t.tol_tail),
            ("tol_residual", t.tol_residual),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                bail!("truncation.{name} must be positive, got {v}");
            }
        }
        if t.k_max == 0 {
            bail!("truncation.k_max must be at least 1");
        }
        if !(self.checks.slack >= 0.0 && self.checks.slack.is_finite()) {
            bail!("checks.slack must be non-negative, got {}", self.checks.slack);
        }
        if self.grid.m_list.is_empty() || self.grid.n_list.is_empty() {
            bail!("grid.m_list and grid.n_list must be nonempty");
        }
        if self.weights.kind == WeightKind::Table && self.weights.table.is_none() {
            bail!("weights.kind = \"table\" needs weights.table");
        }
        if self.coeffs.kind == CoeffKind::Table && self.coeffs.table.is_none() {
            bail!("coeffs.kind = \"table\" needs coeffs.table with c1 and c2");
        }
        if self.boundary.rule == RuleKind::Default && !self.boundary.custom.is_empty() {
            bail!("boundary.custom entries need boundary.rule = \"custom\"");
        }
        Ok(())
    }

    pub fn families(&self) -> Families {
        let w = &self.weights;
        let law = PowerLaw {
            lambda: w.lambda,
            p: w.p,
            q: w.q,
        };
        let weights = match (&w.kind, &w.table) {
            (WeightKind::Table, Some(table)) => WeightFamily::Tabulated {
                table: table.clone(),
                tail: law,
            },
            _ => WeightFamily::Power(law),
        };
        let c = &self.coeffs;
        let kind = match (&c.kind, &c.table) {
            (CoeffKind::Unit, _) => CoefficientKind::Unit,
            (CoeffKind::Table, Some(t)) => CoefficientKind::Tabulated {
                c1: t.c1.clone(),
                c2: t.c2.clone(),
                t1: c.t1,
                t2: c.t2,
            },
            _ => CoefficientKind::GeometricGap { t1: c.t1, t2: c.t2 },
        };
        Families::new(weights, CoefficientFamily { kind, kappa: c.kappa })
    }

    pub fn rule(&self) -> BoundaryRule {
        match self.boundary.rule {
            RuleKind::Default => BoundaryRule::Default,
            RuleKind::Custom => BoundaryRule::Custom {
                entries: self.boundary.custom.clone(),
                strict: self.boundary.strict,
            },
        }
    }

    pub fn truncation(&self) -> Truncation {
        Truncation {
            k_max: self.truncation.k_max,
            tol_prod: self.truncation.tol_prod,
            tol_tail: self.truncation.tol_tail,
            ..Truncation::default()
        }
    }

    /// Grid modes in `(m, n)` order without repeats.
    pub fn modes(&self) -> Vec<ModeIndex> {
        let mut out: Vec<ModeIndex> = self
            .grid
            .m_list
            .iter()
            .flat_map(|&m| self.grid.n_list.iter().map(move |&n| ModeIndex::new(m, n)))
            .collect();
        out.sort();
        out.dedup();
        out
    }
}
