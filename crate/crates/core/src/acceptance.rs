//! The acceptance suite: ten pass/fail criteria covering exact secrecy,
//! uniformity and agreement identities, Monte-Carlo consistency, table
//! structure and reproducibility. Shared by the `acceptance` test target and
//! the `swkey verify` command.

use std::time::{Duration, Instant};

use crate::analysis::{self, exact_outcome_distribution, EXACT_TOLERANCE};
use crate::bits::BitVector;
use crate::code::{make_code, CodeSpec, LinearCode};
use crate::config::{ExperimentConfig, Mode};
use crate::keys::{
    audit_regular_subsets, ExtractionParams, KeyRange, Membership, RegularSubsetTable, TypeRule,
};
use crate::protocol::Protocol;
use crate::report::{config_echo, strip_duration};
use crate::runner;
use crate::source::{
    binary_entropy, Model1Params, Model2Params, Model3Params, Model4Params, SequenceTuple, SourceModel,
};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct CriterionResult {
    pub id: u8,
    pub title: &'static str,
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl CriterionResult {
    /// One summary line: `criterion 3 [PASS] title: detail (1.2s)`.
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} [{}] {}: {} ({:.2}s)",
            self.id,
            if self.pass { "PASS" } else { "FAIL" },
            self.title,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

fn timed(id: u8, title: &'static str, body: impl FnOnce() -> Result<(bool, String)>) -> CriterionResult {
    let start = Instant::now();
    let (pass, detail) = body().unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionResult {
        id,
        title,
        pass,
        detail,
        elapsed: start.elapsed(),
    }
}

fn code(spec: &str) -> Result<LinearCode> {
    make_code(&spec.parse()?)
}

fn model1(p: f64) -> Result<SourceModel> {
    Ok(SourceModel::Model1(Model1Params::new(p)?))
}

fn model2(p: f64, q: f64) -> Result<SourceModel> {
    Ok(SourceModel::Model2(Model2Params::new(p, q)?))
}

fn model3(links: &[f64]) -> Result<SourceModel> {
    Ok(SourceModel::Model3(Model3Params::new(links.to_vec())?))
}

fn model4(p: f64, q: f64) -> Result<SourceModel> {
    Ok(SourceModel::Model4(Model4Params::new(p, q)?))
}

fn ext(xi: f64, eps_prime: f64) -> ExtractionParams {
    ExtractionParams {
        xi,
        eps_prime,
        epsilon: ExtractionParams::DEFAULT_EPSILON,
    }
}

/// Regular-subset settings with nontrivial tables at small `n`.
const M2: (f64, f64) = (0.1, 0.3);
const M2_EXT: (f64, f64) = (0.15, 0.2);
const M4: (f64, f64) = (0.1, 0.3);
const M4_EXT: (f64, f64) = (0.1, 0.22);

/// Catalog codes with `n <= 10`.
pub const SMALL_CATALOG: &[&str] = &[
    "hamming(2)",
    "hamming(3)",
    "repetition(3)",
    "repetition(5)",
    "repetition(7)",
    "repetition(9)",
    "random_linear(6,3,11)",
    "random_linear(8,4,3)",
    "random_linear(10,5,7)",
];

pub fn criterion_1() -> CriterionResult {
    timed(1, "exact secrecy, model 1", || {
        let mut worst_leak: f64 = 0.0;
        let mut slowest = Duration::ZERO;
        let mut pass = true;
        for spec in ["hamming(3)", "repetition(3)"] {
            let c = code(spec)?;
            for p in [0.05, 0.11] {
                let start = Instant::now();
                let m = model1(p)?;
                let out = exact_outcome_distribution(&m, &c, &ExtractionParams::defaults_for(&m))?;
                let leak = out.leakage(1);
                let took = start.elapsed();
                pass &= leak <= EXACT_TOLERANCE && took < Duration::from_secs(10);
                worst_leak = worst_leak.max(leak);
                slowest = slowest.max(took);
            }
        }
        Ok((
            pass,
            format!("max I(K1;F) = {worst_leak:.2e}, slowest case {:.3}s", slowest.as_secs_f64()),
        ))
    })
}

pub fn criterion_2() -> CriterionResult {
    timed(2, "exact uniformity, all models", || {
        let start = Instant::now();
        let cases: Vec<(SourceModel, &str, ExtractionParams)> = vec![
            (model1(0.05)?, "hamming(3)", ExtractionParams::defaults_for(&model1(0.05)?)),
            (model1(0.1)?, "repetition(9)", ExtractionParams::defaults_for(&model1(0.1)?)),
            (model1(0.1)?, "random_linear(10,5,7)", ExtractionParams::defaults_for(&model1(0.1)?)),
            (model2(M2.0, M2.1)?, "hamming(3)", ext(M2_EXT.0, M2_EXT.1)),
            (model2(M2.0, M2.1)?, "random_linear(10,4,1)", ext(M2_EXT.0, M2_EXT.1)),
            (model3(&[0.03, 0.05])?, "hamming(3)", ExtractionParams::defaults_for(&model1(0.05)?)),
            (model3(&[0.05, 0.1, 0.02])?, "repetition(5)", ExtractionParams::defaults_for(&model1(0.1)?)),
            (model4(M4.0, M4.1)?, "hamming(3)", ext(M4_EXT.0, M4_EXT.1)),
            (model4(M4.0, M4.1)?, "random_linear(8,3,5)", ext(M4_EXT.0, M4_EXT.1)),
        ];
        let mut worst: f64 = 0.0;
        for (m, spec, e) in &cases {
            let out = exact_outcome_distribution(m, &code(spec)?, e)?;
            let log_m = (out.key_range.size() as f64).log2();
            for t in [1, out.reference_terminal] {
                worst = worst.max((out.key_entropy(t) - log_m).abs());
            }
        }
        let took = start.elapsed();
        Ok((
            worst <= EXACT_TOLERANCE && took < Duration::from_secs(60),
            format!(
                "{} configurations, max |H(K)-log|K|| = {worst:.2e}, total {:.2}s",
                cases.len(),
                took.as_secs_f64()
            ),
        ))
    })
}

pub fn criterion_3() -> CriterionResult {
    timed(3, "mismatch identity, model 1", || {
        let mut worst: f64 = 0.0;
        let mut cases = 0;
        for spec in SMALL_CATALOG {
            let c = code(spec)?;
            for p in [0.01, 0.05, 0.1] {
                let m = model1(p)?;
                let out = exact_outcome_distribution(&m, &c, &ExtractionParams::defaults_for(&m))?;
                worst = worst.max((out.mismatch_prob() - c.exact_bsc_error_prob(p)?).abs());
                cases += 1;
            }
        }
        let c = code("hamming(3)")?;
        let m = model1(0.05)?;
        let reference = exact_outcome_distribution(&m, &c, &ExtractionParams::defaults_for(&m))?.mismatch_prob();
        Ok((
            worst <= EXACT_TOLERANCE && (reference - 0.04438).abs() < 5e-6,
            format!("{cases} cases, max deviation {worst:.2e}; hamming(3) p=0.05: {reference:.6}"),
        ))
    })
}

/// Seed of the Monte-Carlo run.
pub const MONTE_CARLO_SEED: u64 = 1000;
pub const MONTE_CARLO_TRIALS: u64 = 100_000;

pub fn criterion_4() -> CriterionResult {
    timed(4, "Monte-Carlo consistency, model 1", || {
        let start = Instant::now();
        let c = code("hamming(3)")?;
        let m = model1(0.05)?;
        let e = ExtractionParams::defaults_for(&m);
        let exact = c.exact_bsc_error_prob(0.05)?;
        let protocol = Protocol::new(&c, &m, &e)?;
        let tally = analysis::run_trials(&protocol, MONTE_CARLO_TRIALS, MONTE_CARLO_SEED)?;
        let est = tally.estimates()?;
        let n = est.trials as f64;
        let bound = 4.0 * (exact * (1.0 - exact) / n).sqrt();
        let dev = (est.mismatch_freq - exact).abs();
        let chi = est
            .chi_square
            .ok_or_else(|| Error::InvalidInput("no key histogram".to_string()))?;
        let took = start.elapsed();
        Ok((
            dev <= bound && chi.uniform_not_rejected && took < Duration::from_secs(30),
            format!(
                "freq {:.5} vs exact {exact:.5} (|dev| {dev:.2e} <= {bound:.2e}); chi2 {:.2} <= {:.2} (dof {})",
                est.mismatch_freq, chi.statistic, chi.critical_99, chi.dof
            ),
        ))
    })
}

/// `(code, p, epsilon)` with `m/n >= h(p)` and `m/n < h(p) + epsilon`.
pub const RATE_CASES: &[(&str, f64, f64)] = &[
    ("hamming(3)", 0.08, 0.05),
    ("repetition(3)", 0.15, 0.1),
    ("repetition(5)", 0.2, 0.1),
];

pub fn criterion_5() -> CriterionResult {
    timed(5, "rate bound, model 1", || {
        let mut pass = true;
        let mut parts = Vec::new();
        for &(spec, p, eps) in RATE_CASES {
            let c = code(spec)?;
            let n = c.n() as f64;
            let h = binary_entropy(p)?;
            let m = model1(p)?;
            let e = ExtractionParams {
                epsilon: eps,
                ..ExtractionParams::defaults_for(&m)
            };
            let out = exact_outcome_distribution(&m, &c, &e)?;
            let key_rate = out.key_entropy(1) / n;
            let gap = (1.0 - h) - key_rate;
            let code_gap = (1.0 - h) - c.rate();
            let choice_ok = c.m() as f64 / n >= h;
            let ok = choice_ok && key_rate > 1.0 - h - eps && (gap - code_gap).abs() <= EXACT_TOLERANCE;
            pass &= ok;
            parts.push(format!("{spec} p={p} eps={eps}: m/n={:.3}>=h={h:.3}, gap {gap:.4}", c.m() as f64 / n));
        }
        Ok((pass, parts.join("; ")))
    })
}

pub fn criterion_6() -> CriterionResult {
    timed(6, "model 2 structure", || {
        let m = model2(M2.0, M2.1)?;
        let params = Model2Params::new(M2.0, M2.1)?;
        let e = ext(M2_EXT.0, M2_EXT.1);
        let mut pass = true;
        let mut subsets = 0;
        for spec in ["hamming(3)", "random_linear(10,4,1)", "random_linear(12,5,2)"] {
            let c = code(spec)?;
            let table = RegularSubsetTable::for_model2(&c, &params, &e)?;
            let rule = TypeRule::Marginal {
                alpha: params.x1_one_prob(),
                xi: e.xi,
            };
            match audit_regular_subsets(&c, &table, &rule) {
                Ok(summary) => {
                    pass &= summary.subsets > 0;
                    subsets += summary.subsets;
                }
                Err(msg) => return Ok((false, format!("{spec}: {msg}"))),
            }
        }
        let mut worst_leak: f64 = 0.0;
        for spec in ["hamming(3)", "random_linear(10,4,1)"] {
            let out = exact_outcome_distribution(&m, &code(spec)?, &e)?;
            worst_leak = worst_leak.max(out.leakage(1));
        }
        pass &= worst_leak <= EXACT_TOLERANCE;

        // uniform source: reconstruction law is Model 1's, and every
        // successful reconstruction of an assigned sequence agrees
        let c = code("hamming(3)")?;
        let half = model2(0.1, 0.5)?;
        let e_half = ext(0.0, 0.3);
        let reduced = exact_outcome_distribution(&half, &c, &e_half)?;
        let m1 = model1(0.1)?;
        let m1_mismatch = exact_outcome_distribution(&m1, &c, &ExtractionParams::defaults_for(&m1))?.mismatch_prob();
        let reduction_dev = (reduced.reconstruction_failure - m1_mismatch).abs();
        pass &= reduction_dev <= EXACT_TOLERANCE;
        let protocol = Protocol::new(&c, &half, &e_half)?;
        let table = protocol.table().ok_or_else(|| Error::InvalidInput("no table".to_string()))?;
        let n = c.n();
        for x1 in 0..1u64 << n {
            let x1 = BitVector::from_u64(x1, n);
            let membership = table.membership(&x1)?;
            pass &= membership != Membership::Atypical;
            for v in 0..1u64 << n {
                let x2 = &x1 ^ &BitVector::from_u64(v, n);
                let out = protocol.run_on(SequenceTuple::new(vec![x1.clone(), x2])?, v)?;
                if out.reconstruction_ok() && matches!(membership, Membership::Assigned { .. }) {
                    pass &= out.keys_agree();
                }
            }
        }
        Ok((
            pass,
            format!(
                "{subsets} audited subsets; max I(K1;F) = {worst_leak:.2e}; q=1/2 reconstruction law deviation {reduction_dev:.2e}"
            ),
        ))
    })
}

pub fn criterion_7() -> CriterionResult {
    timed(7, "model 3 chain law", || {
        let c = code("hamming(3)")?;
        let m = model3(&[0.03, 0.05])?;
        let e = ExtractionParams::defaults_for(&m);
        let out = exact_outcome_distribution(&m, &c, &e)?;
        let direct = 1.0 - out.reconstruction_failure;
        let product = (1.0 - c.exact_bsc_error_prob(0.03)?) * (1.0 - c.exact_bsc_error_prob(0.05)?);
        let agree = 1.0 - out.mismatch_prob();
        let law_ok = (direct - product).abs() <= EXACT_TOLERANCE;
        let bound_ok = agree >= product - EXACT_TOLERANCE;

        // d = 2 against Model 1: exact laws and per-realization runs
        let two = model3(&[0.1])?;
        let one = model1(0.1)?;
        let e1 = ExtractionParams::defaults_for(&one);
        let a = exact_outcome_distribution(&one, &c, &e1)?;
        let b = exact_outcome_distribution(&two, &c, &e1)?;
        let mut same = a.joint == b.joint && a.reconstruction_failure == b.reconstruction_failure;
        let pa = Protocol::new(&c, &one, &e1)?;
        let pb = Protocol::new(&c, &two, &e1)?;
        let n = c.n();
        for x1 in 0..1u64 << n {
            for x2 in 0..1u64 << n {
                let t = SequenceTuple::new(vec![BitVector::from_u64(x1, n), BitVector::from_u64(x2, n)])?;
                same &= pa.run_on(t.clone(), 0)? == pb.run_on(t, 0)?;
            }
        }
        Ok((
            law_ok && bound_ok && same,
            format!(
                "Pr(all correct) {direct:.15} vs product {product:.15}; Pr(K1=K2=K3) {agree:.6}; d=2 identical: {same}"
            ),
        ))
    })
}

/// Conditional typicality straight from its definition: per-symbol sums of
/// log-probabilities for each marginal and for the pair.
fn display_cond_typical(x: &BitVector, y: &BitVector, params: &Model4Params, xi: f64) -> bool {
    let n = x.len() as f64;
    let pxy = |a: bool, b: bool| params.symbol_pmf(a, false, b) + params.symbol_pmf(a, true, b);
    let px = |a: bool| pxy(a, false) + pxy(a, true);
    let py = |b: bool| pxy(false, b) + pxy(true, b);
    let ent = |ps: &[f64]| -ps.iter().map(|p| p * p.log2()).sum::<f64>();
    let hx = ent(&[px(false), px(true)]);
    let hy = ent(&[py(false), py(true)]);
    let hxy = ent(&[pxy(false, false), pxy(false, true), pxy(true, false), pxy(true, true)]);
    let within = |log_sum: f64, h: f64| {
        let rate = -log_sum / n;
        rate >= h - xi - 1e-12 && rate <= h + xi + 1e-12
    };
    let lx: f64 = x.iter().map(|a| px(a).log2()).sum();
    let ly: f64 = y.iter().map(|b| py(b).log2()).sum();
    let lxy: f64 = x.iter().zip(y.iter()).map(|(a, b)| pxy(a, b).log2()).sum();
    within(lx, hx) && within(ly, hy) && within(lxy, hxy)
}

pub fn criterion_8() -> CriterionResult {
    timed(8, "model 4 privacy", || {
        let m = model4(M4.0, M4.1)?;
        let e = ext(M4_EXT.0, M4_EXT.1);
        let mut worst_leak: f64 = 0.0;
        for spec in ["hamming(3)", "random_linear(8,3,5)"] {
            let out = exact_outcome_distribution(&m, &code(spec)?, &e)?;
            worst_leak = worst_leak.max(out.leakage(1));
        }

        let params = Model4Params::new(M4.0, M4.1)?;
        let c = code("random_linear(6,2,3)")?;
        let n = c.n();
        let mut mismatches = 0;
        let mut typical_pairs = 0;
        for xi in [0.05, 0.1, 0.2, 0.3] {
            for y in 0..1u64 << n {
                let y = BitVector::from_u64(y, n);
                let rule = TypeRule::Conditional {
                    pair: params.x1_x3_pmf(),
                    context: y.clone(),
                    xi,
                };
                let table = RegularSubsetTable::build(&c, &rule, KeyRange::power_of_two(n, 1))?;
                if audit_regular_subsets(&c, &table, &rule).is_err() {
                    mismatches += 1;
                }
                for x in 0..1u64 << n {
                    let x = BitVector::from_u64(x, n);
                    let in_table = table.membership(&x)? != Membership::Atypical;
                    let direct = display_cond_typical(&x, &y, &params, xi);
                    typical_pairs += usize::from(direct);
                    mismatches += usize::from(in_table != direct);
                }
            }
        }
        Ok((
            worst_leak <= EXACT_TOLERANCE && mismatches == 0 && typical_pairs > 0,
            format!(
                "max I(K1;X3,F) = {worst_leak:.2e}; n=6 table vs definition: {mismatches} disagreements over {typical_pairs} typical pairs"
            ),
        ))
    })
}

pub fn criterion_9() -> CriterionResult {
    timed(9, "monotone improvement with block length", || {
        let m = model1(0.05)?;
        let e = ExtractionParams::defaults_for(&m);
        let values = [3, 5, 7]
            .iter()
            .map(|&n| Ok(exact_outcome_distribution(&m, &LinearCode::repetition(n)?, &e)?.mismatch_prob()))
            .collect::<Result<Vec<f64>>>()?;
        let decreasing = values.windows(2).all(|w| w[1] < w[0]);
        Ok((
            decreasing,
            format!(
                "repetition(3,5,7), p=0.05: {:.6e}, {:.6e}, {:.6e}",
                values[0], values[1], values[2]
            ),
        ))
    })
}

/// Configurations replayed across worker counts.
pub fn determinism_configs() -> Result<Vec<ExperimentConfig>> {
    let mut out = Vec::new();
    let mut c = ExperimentConfig::new(model2(M2.0, M2.1)?, "random_linear(10,4,1)".parse::<CodeSpec>()?);
    c.xi = Some(M2_EXT.0);
    c.eps_prime = Some(M2_EXT.1);
    c.mode = Mode::Both;
    c.n_trials = 20_000;
    c.master_seed = 99;
    out.push(c);
    let mut c = ExperimentConfig::new(model4(M4.0, M4.1)?, CodeSpec::Hamming(3));
    c.xi = Some(M4_EXT.0);
    c.eps_prime = Some(M4_EXT.1);
    c.mode = Mode::Both;
    c.n_trials = 20_000;
    c.master_seed = 5;
    out.push(c);
    let mut c = ExperimentConfig::new(model3(&[0.03, 0.05])?, CodeSpec::Hamming(3));
    c.mode = Mode::Empirical;
    c.n_trials = 20_000;
    c.master_seed = 1;
    out.push(c);
    Ok(out)
}

pub fn criterion_10() -> CriterionResult {
    timed(10, "determinism across worker counts", || {
        let mut pass = true;
        let configs = determinism_configs()?;
        for config in &configs {
            let reference = strip_duration(&runner::run_experiment(config, 1)?.render());
            for workers in [2, 8] {
                pass &= strip_duration(&runner::run_experiment(config, workers)?.render()) == reference;
            }
            // the echoed config replays to the same report
            let echo = config_echo(&reference).ok_or_else(|| Error::InvalidInput("no config echo".to_string()))?;
            let replay = ExperimentConfig::parse(&echo)?;
            pass &= strip_duration(&runner::run_experiment(&replay, 2)?.render()) == reference;
        }
        Ok((
            pass,
            format!("{} configurations x workers 1, 2, 8 plus config replay", configs.len()),
        ))
    })
}

pub fn criteria() -> [fn() -> CriterionResult; 10] {
    [
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
        criterion_9,
        criterion_10,
    ]
}

/// Runs every criterion in order.
pub fn run_all() -> Vec<CriterionResult> {
    criteria().iter().map(|f| f()).collect()
}
