//! Experiment orchestration behind the command-line tool.

use std::fmt::Write as _;
use std::time::Instant;

use crate::analysis::{self, CriteriaReport};
use crate::code::{make_code, CodeSpec, LinearCode};
use crate::config::ExperimentConfig;
use crate::protocol::Protocol;
use crate::report::{CodeMetadata, RunReport};
use crate::source::{self, SourceModel};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CAP: i32 = 3;

/// Exit code for an error: 2 for bad configuration, 3 for an exceeded
/// enumeration cap.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::CapExceeded { .. } => EXIT_CAP,
        Error::Io(_) => EXIT_FAILURE,
        _ => EXIT_CONFIG,
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start {workers} worker threads: {e}")))
}

/// Runs a configured experiment on `workers` threads (0 = one per core).
/// Results do not depend on `workers`.
pub fn run_experiment(config: &ExperimentConfig, workers: usize) -> Result<RunReport> {
    pool(workers)?.install(|| run_experiment_here(config))
}

/// The acceptance suite on `workers` threads.
pub fn run_acceptance(workers: usize) -> Result<Vec<crate::acceptance::CriterionResult>> {
    Ok(pool(workers)?.install(crate::acceptance::run_all))
}

/// Runs on the current rayon pool.
pub fn run_experiment_here(config: &ExperimentConfig) -> Result<RunReport> {
    let start = Instant::now();
    config.validate()?;
    let code = make_code(&config.code)?;
    let ext = config.extraction();
    let mut criteria = if config.mode.exact() {
        analysis::verify_criteria(&config.model, &code, &ext)?
    } else {
        CriteriaReport::skeleton(&config.model, &code, &ext)?
    };
    if config.mode.empirical() {
        let protocol = Protocol::new(&code, &config.model, &ext)?;
        let tally = analysis::run_trials(&protocol, config.n_trials, config.master_seed)?;
        analysis::attach_empirical(&mut criteria, &tally)?;
    }
    Ok(RunReport {
        config: config.clone(),
        code: CodeMetadata {
            spec: config.code.to_string(),
            n: code.n(),
            m: code.m(),
            rate: code.rate(),
        },
        criteria,
        duration: start.elapsed(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    })
}

/// Rate, decoding error and capacity of a code on a BSC.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeInfo {
    pub spec: String,
    pub n: usize,
    pub m: usize,
    pub rate: f64,
    pub p: f64,
    /// `None` when the exact computation exceeds its cap.
    pub error_prob: Option<f64>,
    pub capacity: f64,
    /// `capacity - rate`.
    pub rate_gap: f64,
    /// `m/n - h(p)`: syndrome rate above the Slepian-Wolf limit.
    pub syndrome_gap: f64,
    pub notice: Option<String>,
}

impl CodeInfo {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "code          {}", self.spec);
        let _ = writeln!(out, "n             {}", self.n);
        let _ = writeln!(out, "m             {}", self.m);
        let _ = writeln!(out, "rate          {:.6}", self.rate);
        let _ = writeln!(out, "p             {}", self.p);
        match self.error_prob {
            Some(pe) => {
                let _ = writeln!(out, "P_e           {pe:.6e}");
            }
            None => {
                let _ = writeln!(out, "P_e           not computed");
            }
        }
        let _ = writeln!(out, "capacity      {:.6}", self.capacity);
        let _ = writeln!(out, "rate gap      {:.6}", self.rate_gap);
        let _ = writeln!(out, "syndrome gap  {:.6}", self.syndrome_gap);
        if let Some(notice) = &self.notice {
            let _ = writeln!(out, "notice        {notice}");
        }
        out
    }
}

pub fn code_info(spec: &CodeSpec, p: f64) -> Result<CodeInfo> {
    let h = source::binary_entropy(p)?;
    if !(p > 0.0 && p < 0.5) {
        return Err(Error::InvalidParameter(format!("crossover probability must be in (0, 1/2), got {p}")));
    }
    let code = make_code(spec)?;
    let (error_prob, notice) = match code.exact_bsc_error_prob(p) {
        Ok(pe) => (Some(pe), None),
        Err(e @ Error::CapExceeded { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    Ok(CodeInfo {
        spec: spec.to_string(),
        n: code.n(),
        m: code.m(),
        rate: code.rate(),
        p,
        error_prob,
        capacity: 1.0 - h,
        rate_gap: 1.0 - h - code.rate(),
        syndrome_gap: code.m() as f64 / code.n() as f64 - h,
        notice,
    })
}

/// Key capacity of a model, with the key rate a code achieves when given.
#[derive(Clone, Debug, PartialEq)]
pub struct CapacityRow {
    pub model: String,
    pub capacity: f64,
    pub code: Option<String>,
    pub rate: Option<f64>,
    pub gap: Option<f64>,
}

impl CapacityRow {
    pub fn render(&self) -> String {
        let mut out = format!("model     {}\ncapacity  {:.6}\n", self.model, self.capacity);
        if let (Some(code), Some(rate), Some(gap)) = (&self.code, self.rate, self.gap) {
            let _ = writeln!(out, "code      {code}\nrate      {rate:.6}\ngap       {gap:.6}");
        }
        out
    }
}

/// Key rate `log2(M)/n` of `code` for a model.
fn key_rate(model: &SourceModel, code: &LinearCode, config: &ExperimentConfig) -> Result<f64> {
    let protocol = Protocol::new(code, model, &config.extraction())?;
    Ok((protocol.key_range().size() as f64).log2() / code.n() as f64)
}

pub fn capacity_row(config: &ExperimentConfig, with_code: bool) -> Result<CapacityRow> {
    let capacity = source::capacity(&config.model);
    let mut row = CapacityRow {
        model: config.model.name().to_string(),
        capacity,
        code: None,
        rate: None,
        gap: None,
    };
    if with_code {
        let code = make_code(&config.code)?;
        let rate = key_rate(&config.model, &code, config)?;
        row.code = Some(config.code.to_string());
        row.rate = Some(rate);
        row.gap = Some(capacity - rate);
    }
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Mode;
    use crate::report::strip_duration;
    use crate::source::{Model1Params, Model2Params, Model3Params};

    fn model1_config() -> ExperimentConfig {
        ExperimentConfig::new(SourceModel::Model1(Model1Params::new(0.05).unwrap()), CodeSpec::Hamming(3))
    }

    #[test]
    fn model1_exact_report() {
        let report = run_experiment(&model1_config(), 2).unwrap();
        let exact = report.criteria.exact.as_ref().unwrap();
        assert!((exact.mismatch_prob - 0.04438).abs() < 1e-5);
        assert!(exact.leakage_bits < 1e-12);
        assert!(report.passed());
        let text = report.render();
        assert!(text.starts_with("# swkey-report v1\n"));
        assert!(text.contains("mismatch_prob = 0.0443805421875"));
    }

    #[test]
    fn replays_are_identical() {
        let mut c = model1_config();
        c.mode = Mode::Both;
        c.n_trials = 3000;
        c.master_seed = 11;
        let a = run_experiment(&c, 1).unwrap().render();
        let b = run_experiment(&c, 4).unwrap().render();
        assert_eq!(strip_duration(&a), strip_duration(&b));
        let echo = crate::report::config_echo(&a).unwrap();
        assert_eq!(ExperimentConfig::parse(&echo).unwrap(), c);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::cap("a", "b")), EXIT_CAP);
        let mut c = model1_config();
        c.code = CodeSpec::Hamming(4);
        let err = run_experiment(&c, 1).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_CAP);
        assert!(err.to_string().contains("n=15 > 10"));
    }

    #[test]
    fn code_info_examples() {
        let info = code_info(&CodeSpec::Hamming(3), 0.05).unwrap();
        assert!((info.rate - 4.0 / 7.0).abs() < 1e-15);
        assert!((info.error_prob.unwrap() - 0.04438).abs() < 1e-5);
        let info = code_info(&CodeSpec::Repetition(5), 0.1).unwrap();
        let majority: f64 = (3..=5)
            .map(|k| {
                let c = [1.0, 5.0, 10.0, 10.0, 5.0, 1.0][k];
                c * 0.1f64.powi(k as i32) * 0.9f64.powi(5 - k as i32)
            })
            .sum();
        assert!((info.error_prob.unwrap() - majority).abs() < 1e-15);
        assert!((majority - 0.00856).abs() < 1e-5);
        let spec = CodeSpec::RandomLinear { n: 10, m: 5, seed: 7 };
        assert_eq!(code_info(&spec, 0.1).unwrap(), code_info(&spec, 0.1).unwrap());
        let big = code_info(&CodeSpec::Hamming(5), 0.1).unwrap();
        assert!(big.error_prob.is_none() && big.notice.is_some());
        assert!(code_info(&CodeSpec::Hamming(3), 0.5).is_err());
    }

    #[test]
    fn capacities() {
        let row = capacity_row(&model1_config(), true).unwrap();
        assert!((row.capacity - 0.713603).abs() < 1e-6);
        assert!((row.rate.unwrap() - 4.0 / 7.0).abs() < 1e-15);
        let c = ExperimentConfig::new(SourceModel::Model2(Model2Params::new(0.1, 0.3).unwrap()), CodeSpec::Hamming(3));
        assert!((capacity_row(&c, false).unwrap().capacity - 0.4558).abs() < 1e-4);
        let c = ExperimentConfig::new(
            SourceModel::Model3(Model3Params::new(vec![0.03, 0.05]).unwrap()),
            CodeSpec::Hamming(3),
        );
        assert!((capacity_row(&c, false).unwrap().capacity - 0.7136).abs() < 1e-4);
    }
}
