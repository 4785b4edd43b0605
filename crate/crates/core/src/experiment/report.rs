use std::fmt::Write as _;

use super::{Check, ExperimentConfig, Tolerances, ALL_CHECKS};
use crate::identify::{relative, MartingaleStat, TestStat};
use crate::measures::io::fmt_f64;
use crate::stats::MeanSe;

/// Verdict of one check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckResult {
    pub check: Check,
    pub passed: bool,
}

/// Statistics of one run. A `None` field means the check was not run.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub config: String,
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    pub degree: usize,
    pub y0: Option<f64>,
    /// Largest transfer discrepancy over paths and test functions.
    pub transfer_max: Option<f64>,
    /// `E[M_T^2]`, `E[C_T]` and the mean/SE of their pathwise difference.
    pub bracket: Option<(f64, f64, MeanSe)>,
    /// Paths violating `J = K` (or the `p*` count), and the total `K` atoms.
    pub classification: Option<(usize, usize)>,
    pub y_rel_error: Option<f64>,
    pub z_rel_error: Option<f64>,
    /// `(||H||_nuc, ||U||_nuc, ||H - l 1_K||_nud, ||U||_nud)`.
    pub u_split: Option<(f64, f64, f64, f64)>,
    pub martingale: Option<MartingaleStat>,
    pub pathwise: Option<MartingaleStat>,
    pub orthogonality: Option<TestStat>,
    pub residual: Option<MeanSe>,
    pub results: Vec<CheckResult>,
}

const COLUMNS: [&str; 40] = [
    "config",
    "paths",
    "steps",
    "seed",
    "degree",
    "y0",
    "transfer_max",
    "transfer_pass",
    "bracket_lhs",
    "bracket_rhs",
    "bracket_se",
    "bracket_pass",
    "j_equals_k",
    "k_atoms",
    "classification_pass",
    "y_rel_error",
    "y_pass",
    "z_rel_error",
    "z_pass",
    "martingale_mean",
    "martingale_se",
    "martingale_sup",
    "martingale_pass",
    "pathwise_mean",
    "pathwise_se",
    "pathwise_sup",
    "pathwise_pass",
    "h_nuc_l2",
    "u_nuc_l2",
    "h_nud_residual",
    "u_nud_l2",
    "u_pass",
    "orthogonality_mean",
    "orthogonality_se",
    "orthogonality_pass",
    "residual_mean",
    "residual_se",
    "residual_pass",
    "checks_run",
    "all_pass",
];

fn f(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

impl Report {
    pub(super) fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            config: cfg.name.clone(),
            paths: cfg.run.paths,
            steps: cfg.run.steps,
            seed: cfg.run.seed,
            degree: cfg.run.degree,
            y0: None,
            transfer_max: None,
            bracket: None,
            classification: None,
            y_rel_error: None,
            z_rel_error: None,
            u_split: None,
            martingale: None,
            pathwise: None,
            orthogonality: None,
            residual: None,
            results: Vec::new(),
        }
    }

    /// Fills `results` from the statistics present, in check order.
    ///
    /// Mean-zero tests accept `|mean| <= k SE + pathwise`, so runs that are
    /// exact up to rounding (zero SE) are not failed by the rounding.
    pub fn evaluate(&mut self, tol: &Tolerances) {
        let k = tol.se_multiplier;
        let zero = |mean: f64, se: f64, k: f64| mean.abs() <= k * se + tol.pathwise;
        self.results = ALL_CHECKS
            .into_iter()
            .filter_map(|check| {
                let passed = match check {
                    Check::Transfer => self.transfer_max.map(|m| m <= tol.pathwise)?,
                    Check::Bracket => self.bracket.map(|b| zero(b.2.mean, b.2.se, k))?,
                    Check::Classification => self.classification.map(|c| c.0 == 0)?,
                    Check::Y => self.y_rel_error.map(|e| e <= tol.relative)?,
                    Check::Z => self.z_rel_error.map(|e| e <= tol.relative)?,
                    Check::U => self.u_split.map(|(hc, uc, hd, ud)| {
                        relative(hc, uc) <= tol.relative && relative(hd, ud) <= tol.relative
                    })?,
                    Check::Martingale => self
                        .martingale
                        .map(|m| zero(m.terminal.mean, m.terminal.se, k))?,
                    Check::Pathwise => self.pathwise.map(|m| m.sup <= tol.pathwise)?,
                    Check::Orthogonality => self.orthogonality.map(|o| zero(o.mean, o.se, k))?,
                    Check::Residual => self.residual.map(|r| zero(r.mean, r.se, tol.residual_se))?,
                };
                Some(CheckResult { check, passed })
            })
            .collect();
    }

    pub fn all_pass(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn passed(&self, check: Check) -> Option<bool> {
        self.results
            .iter()
            .find(|r| r.check == check)
            .map(|r| r.passed)
    }

    fn pass_cell(&self, check: Check) -> String {
        self.passed(check).map(|p| p.to_string()).unwrap_or_default()
    }

    fn row(&self) -> Vec<String> {
        let b = self.bracket;
        let (m, pw) = (self.martingale, self.pathwise);
        let u = self.u_split;
        let checks: Vec<&str> = self.results.iter().map(|r| r.check.name()).collect();
        vec![
            self.config.clone(),
            self.paths.to_string(),
            self.steps.to_string(),
            self.seed.to_string(),
            self.degree.to_string(),
            f(self.y0),
            f(self.transfer_max),
            self.pass_cell(Check::Transfer),
            f(b.map(|b| b.0)),
            f(b.map(|b| b.1)),
            f(b.map(|b| b.2.se)),
            self.pass_cell(Check::Bracket),
            self.classification
                .map(|c| (c.0 == 0).to_string())
                .unwrap_or_default(),
            self.classification.map(|c| c.1.to_string()).unwrap_or_default(),
            self.pass_cell(Check::Classification),
            f(self.y_rel_error),
            self.pass_cell(Check::Y),
            f(self.z_rel_error),
            self.pass_cell(Check::Z),
            f(m.map(|m| m.terminal.mean)),
            f(m.map(|m| m.terminal.se)),
            f(m.map(|m| m.sup)),
            self.pass_cell(Check::Martingale),
            f(pw.map(|m| m.terminal.mean)),
            f(pw.map(|m| m.terminal.se)),
            f(pw.map(|m| m.sup)),
            self.pass_cell(Check::Pathwise),
            f(u.map(|u| u.0)),
            f(u.map(|u| u.1)),
            f(u.map(|u| u.2)),
            f(u.map(|u| u.3)),
            self.pass_cell(Check::U),
            f(self.orthogonality.map(|o| o.mean)),
            f(self.orthogonality.map(|o| o.se)),
            self.pass_cell(Check::Orthogonality),
            f(self.residual.map(|r| r.mean)),
            f(self.residual.map(|r| r.se)),
            self.pass_cell(Check::Residual),
            checks.join(";"),
            self.all_pass().to_string(),
        ]
    }

    /// Header plus one row.
    pub fn to_csv(&self) -> String {
        let mut out = COLUMNS.join(",");
        out.push('\n');
        out.push_str(&self.row().join(","));
        out.push('\n');
        out
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "experiment: {}", self.config);
        let _ = writeln!(
            s,
            "paths: {}  steps: {}  seed: {}  degree: {}",
            self.paths, self.steps, self.seed, self.degree
        );
        if let Some(y0) = self.y0 {
            let _ = writeln!(s, "Y_0: {}", fmt_f64(y0));
        }
        for r in &self.results {
            let verdict = if r.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(s, "{verdict} {:<14} {}", r.check.name(), self.detail(r.check));
        }
        let verdict = if self.all_pass() { "PASS" } else { "FAIL" };
        let _ = writeln!(s, "result: {verdict}");
        s
    }

    fn detail(&self, check: Check) -> String {
        let e = |x: f64| format!("{x:.3e}");
        match check {
            Check::Transfer => format!("max discrepancy {}", e(self.transfer_max.unwrap_or(0.0))),
            Check::Bracket => self.bracket.map_or_else(String::new, |(l, r, d)| {
                format!("E[M_T^2] {} E[C_T] {} diff SE {}", e(l), e(r), e(d.se))
            }),
            Check::Classification => self.classification.map_or_else(String::new, |(v, k)| {
                format!("{v} violating paths, {k} K-atoms")
            }),
            Check::Y => format!("relative error {}", e(self.y_rel_error.unwrap_or(0.0))),
            Check::Z => format!("relative error {}", e(self.z_rel_error.unwrap_or(0.0))),
            Check::U => self.u_split.map_or_else(String::new, |(hc, uc, hd, ud)| {
                format!(
                    "nu^c ratio {}  nu^d ratio {}",
                    e(relative(hc, uc)),
                    e(relative(hd, ud))
                )
            }),
            Check::Martingale | Check::Pathwise => {
                let m = if check == Check::Martingale {
                    self.martingale
                } else {
                    self.pathwise
                };
                m.map_or_else(String::new, |m| {
                    format!(
                        "terminal mean {} SE {}  sup {}",
                        e(m.terminal.mean),
                        e(m.terminal.se),
                        e(m.sup)
                    )
                })
            }
            Check::Orthogonality => self.orthogonality.map_or_else(String::new, |o| {
                format!("mean {} SE {}", e(o.mean), e(o.se))
            }),
            Check::Residual => self.residual.map_or_else(String::new, |r| {
                format!("mean {} SE {}", e(r.mean), e(r.se))
            }),
        }
    }
}
