//! Run reports: one self-describing text document per run, plus an optional
//! tab-separated row for batch sweeps.
//!
//! The document starts with a format-version header and is organised in
//! `[section]` blocks of `key = value` lines. Floats are printed in their
//! shortest round-trip form so identical runs give identical bytes; only the
//! `duration_seconds` line depends on the machine.

use std::fmt::Write as _;
use std::time::Duration;

use crate::analysis::{CheckStatus, CriteriaReport};
use crate::config::ExperimentConfig;

pub const REPORT_FORMAT: &str = "swkey-report";
pub const REPORT_VERSION: u32 = 1;
/// Name of the only machine-dependent field.
pub const DURATION_KEY: &str = "duration_seconds";

/// Code metadata echoed in reports.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeMetadata {
    pub spec: String,
    pub n: usize,
    pub m: usize,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub code: CodeMetadata,
    pub criteria: CriteriaReport,
    pub duration: Duration,
    pub version: String,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

impl RunReport {
    /// The full report document.
    pub fn render(&self) -> String {
        let mut out = self.render_without_duration();
        let _ = writeln!(out, "[run]");
        let _ = writeln!(out, "{DURATION_KEY} = {:.6}", self.duration.as_secs_f64());
        let _ = writeln!(out, "version = {}", self.version);
        out
    }

    /// The document minus the `[run]` block; byte-identical across replays.
    pub fn render_without_duration(&self) -> String {
        let mut out = String::new();
        let c = &self.criteria;
        let _ = writeln!(out, "# {REPORT_FORMAT} v{REPORT_VERSION}");
        let _ = writeln!(out, "[config]");
        out.push_str(&self.config.to_string());
        let ext = self.config.extraction();
        let _ = writeln!(out, "[extraction]");
        let _ = writeln!(out, "xi = {}\neps_prime = {}\nepsilon = {}", ext.xi, ext.eps_prime, ext.epsilon);
        let _ = writeln!(out, "[code]");
        let _ = writeln!(
            out,
            "spec = {}\nn = {}\nm = {}\nrate = {}",
            self.code.spec, self.code.n, self.code.m, self.code.rate
        );
        let _ = writeln!(out, "[criteria]");
        let _ = writeln!(out, "model = {}", c.model);
        let _ = writeln!(out, "reference_terminal = {}", c.reference_terminal);
        let _ = writeln!(out, "key_range = {}", c.key_range);
        let _ = writeln!(out, "log_key_range_bits = {}", c.log_key_range_bits);
        let _ = writeln!(out, "rate_bits_per_symbol = {}", c.rate_bits_per_symbol);
        let _ = writeln!(out, "capacity_bits_per_symbol = {}", c.capacity_bits_per_symbol);
        let _ = writeln!(out, "capacity_gap = {}", c.capacity_gap);
        let _ = writeln!(out, "floor_discrepancy = {}", opt(c.floor_discrepancy));
        if let Some(e) = &c.exact {
            let _ = writeln!(out, "[exact]");
            let _ = writeln!(out, "mismatch_prob = {}", e.mismatch_prob);
            let _ = writeln!(out, "reconstruction_failure_prob = {}", e.reconstruction_failure_prob);
            let _ = writeln!(out, "leakage_bits = {}", e.leakage_bits);
            let _ = writeln!(out, "key_entropy_bits = {}", e.key_entropy_bits);
            let _ = writeln!(out, "fallback_prob = {}", opt(e.fallback_prob));
        }
        if let Some(e) = &c.empirical {
            let _ = writeln!(out, "[empirical]");
            let _ = writeln!(out, "trials = {}", e.trials);
            let _ = writeln!(out, "mismatches = {}", e.mismatches);
            let _ = writeln!(out, "mismatch_freq = {}", e.mismatch_freq);
            let _ = writeln!(out, "mismatch_halfwidth95 = {}", e.mismatch_halfwidth);
            let _ = writeln!(out, "reconstruction_failures = {}", e.reconstruction_failures);
            let _ = writeln!(out, "fallbacks = {}", e.fallbacks);
            let _ = writeln!(out, "plugin_entropy_bits = {}", e.plugin_entropy_bits);
            if let Some(chi) = &e.chi_square {
                let _ = writeln!(out, "chi_square = {}", chi.statistic);
                let _ = writeln!(out, "chi_square_dof = {}", chi.dof);
                let _ = writeln!(out, "chi_square_critical99 = {}", chi.critical_99);
            }
        }
        let _ = writeln!(out, "[checks]");
        for check in &c.checks {
            let _ = writeln!(out, "{} = {} # {}", check.name, check.status.as_str(), check.detail);
        }
        let _ = writeln!(out, "[flags]");
        let _ = writeln!(out, "flags = {}", c.flags.join(","));
        out
    }

    pub fn passed(&self) -> bool {
        self.criteria.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn tsv_header() -> &'static str {
        "model\tcode\tn\tm\tkey_range\trate\tcapacity\tgap\texact_mismatch\tleakage\tkey_entropy\tempirical_mismatch\thalfwidth\ttrials\tchecks"
    }

    /// One tab-separated row summarising the run.
    pub fn tsv_row(&self) -> String {
        let c = &self.criteria;
        let exact = c.exact.as_ref();
        let emp = c.empirical.as_ref();
        let checks = if self.passed() { "pass" } else { "fail" };
        [
            c.model.clone(),
            self.code.spec.clone(),
            self.code.n.to_string(),
            self.code.m.to_string(),
            c.key_range.to_string(),
            c.rate_bits_per_symbol.to_string(),
            c.capacity_bits_per_symbol.to_string(),
            c.capacity_gap.to_string(),
            opt(exact.map(|e| e.mismatch_prob)),
            opt(exact.map(|e| e.leakage_bits)),
            opt(exact.map(|e| e.key_entropy_bits)),
            opt(emp.map(|e| e.mismatch_freq)),
            opt(emp.map(|e| e.mismatch_halfwidth)),
            emp.map_or_else(|| "0".to_string(), |e| e.trials.to_string()),
            checks.to_string(),
        ]
        .join("\t")
    }
}

/// Drops the machine-dependent duration line from a rendered report.
pub fn strip_duration(rendered: &str) -> String {
    rendered
        .lines()
        .filter(|l| !l.starts_with(DURATION_KEY))
        .map(|l| format!("{l}\n"))
        .collect()
}

/// Recovers the echoed config block of a rendered report.
pub fn config_echo(rendered: &str) -> Option<String> {
    let start = rendered.find("[config]\n")? + "[config]\n".len();
    let end = rendered[start..].find("\n[")? + start + 1;
    Some(rendered[start..end].to_string())
}
