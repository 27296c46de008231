//! Exact and Monte-Carlo evaluation of key agreement, secrecy and uniformity.
//!
//! The exact path enumerates every source realization at small block length
//! and builds the joint law of all keys and the full transcript. Fallback keys
//! are folded in analytically as independent uniform draws, so no randomness
//! enters the oracle. The empirical path runs seeded protocol trials in
//! parallel and reports frequencies with Wald intervals.

use std::collections::BTreeMap;

use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::bits::BitVector;
use crate::code::LinearCode;
use crate::keys::{ExtractionParams, KeyRange, Membership, RegularSubsetTable};
use crate::protocol::{Protocol, ProtocolOutcome};
use crate::seed::{stream_rng, trial_seed, Stream};
use crate::source::{self, SourceModel};
use crate::{Error, Result};

/// Tolerance for identities that hold exactly in exact arithmetic.
pub const EXACT_TOLERANCE: f64 = 1e-12;
/// Models 1 and 2 enumerate `(x1, v)`: `2^{2n}` terms.
pub const MAX_EXACT_PAIR_LENGTH: usize = 10;
/// Model 3 enumerates `x1` and all link noises: `2^{dn}` terms.
pub const MAX_EXACT_CHAIN_BITS: usize = 22;
/// Model 4 enumerates `(x3, x1, v)`: `2^{3n}` terms.
pub const MAX_EXACT_HELPER_LENGTH: usize = 8;
/// Histograms are kept only for key ranges up to this size.
pub const MAX_HISTOGRAM_BINS: u64 = 1 << 20;

const TRIAL_CHUNK: u64 = 1024;

/// Neumaier compensated sum. Millions of tiny terms are accumulated per
/// outcome; plain summation drifts past the exactness tolerance.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl std::iter::Sum<f64> for CompensatedSum {
    fn sum<I: Iterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Self::default();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

type Accumulator<L> = BTreeMap<L, CompensatedSum>;

fn finish<L: Ord>(acc: Accumulator<L>) -> BTreeMap<L, f64> {
    acc.into_iter().map(|(l, s)| (l, s.value())).collect()
}

/// A finite distribution with unique, ordered labels.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDistribution<L: Ord> {
    probs: BTreeMap<L, f64>,
}

impl<L: Ord + Clone> DiscreteDistribution<L> {
    /// Rejects negative or non-finite masses and totals off 1 by more than
    /// [`EXACT_TOLERANCE`].
    pub fn new(probs: BTreeMap<L, f64>) -> Result<Self> {
        if let Some(bad) = probs.values().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidInput(format!("probability {bad} is not a nonnegative number")));
        }
        let total = probs.values().copied().sum::<CompensatedSum>().value();
        if (total - 1.0).abs() > EXACT_TOLERANCE {
            return Err(Error::InvalidInput(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Sums masses of repeated labels.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (L, f64)>) -> Result<Self> {
        let mut acc = Accumulator::new();
        for (label, p) in pairs {
            acc.entry(label).or_default().add(p);
        }
        Self::new(finish(acc))
    }

    pub fn uniform(labels: impl IntoIterator<Item = L>) -> Result<Self> {
        let labels: Vec<L> = labels.into_iter().collect();
        let p = 1.0 / labels.len() as f64;
        Self::from_pairs(labels.into_iter().map(|l| (l, p)))
    }

    pub fn prob(&self, label: &L) -> f64 {
        self.probs.get(label).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&L, f64)> {
        self.probs.iter().map(|(l, &p)| (l, p))
    }

    /// Support size.
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Shannon entropy in bits.
    pub fn entropy(&self) -> f64 {
        entropy_of(self.probs.values().copied())
    }

    /// Push-forward under `f`.
    pub fn map<M: Ord + Clone>(&self, f: impl Fn(&L) -> M) -> DiscreteDistribution<M> {
        let mut acc = Accumulator::new();
        for (label, &p) in &self.probs {
            acc.entry(f(label)).or_default().add(p);
        }
        DiscreteDistribution { probs: finish(acc) }
    }

    /// Probability of an event.
    pub fn prob_of(&self, event: impl Fn(&L) -> bool) -> f64 {
        self.probs
            .iter()
            .filter(|(l, _)| event(l))
            .map(|(_, &p)| p)
            .sum::<CompensatedSum>()
            .value()
    }
}

fn entropy_of(probs: impl Iterator<Item = f64>) -> f64 {
    -probs
        .filter(|&p| p > 0.0)
        .map(|p| p * p.log2())
        .sum::<CompensatedSum>()
        .value()
}

pub fn entropy<L: Ord + Clone>(dist: &DiscreteDistribution<L>) -> f64 {
    dist.entropy()
}

/// `I(A ∧ B) = H(A) + H(B) - H(A, B)`, clipped at zero against rounding.
pub fn mutual_information<A: Ord + Clone, B: Ord + Clone>(joint: &DiscreteDistribution<(A, B)>) -> f64 {
    let ha = joint.map(|(a, _)| a.clone()).entropy();
    let hb = joint.map(|(_, b)| b.clone()).entropy();
    (ha + hb - joint.entropy()).max(0.0)
}

/// One atom of the exact outcome law: every held key and the transcript.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OutcomeLabel {
    /// Keys of the key-holding terminals in terminal order.
    pub keys: Vec<u64>,
    /// The full transcript packed into one integer: syndromes in sending
    /// order, preceded by the revealed `x3` in Model 4.
    pub transcript: u64,
}

/// Exact law of a protocol.
#[derive(Clone, Debug)]
pub struct ExactOutcome {
    pub joint: DiscreteDistribution<OutcomeLabel>,
    /// Terminals whose keys appear in the labels.
    pub key_terminals: Vec<usize>,
    /// Terminal holding the reference key (the terminal whose observation is
    /// reconstructed).
    pub reference_terminal: usize,
    pub key_range: KeyRange,
    /// `Pr(some reconstruction differs from the target)`.
    pub reconstruction_failure: f64,
    /// `Pr(terminal 1 falls back)`; regular-subset models only.
    pub fallback_prob: Option<f64>,
}

impl ExactOutcome {
    fn slot(&self, terminal: usize) -> usize {
        self.key_terminals
            .iter()
            .position(|&t| t == terminal)
            .unwrap_or_else(|| panic!("terminal {terminal} holds no key"))
    }

    /// `Pr(not all keys equal)`.
    pub fn mismatch_prob(&self) -> f64 {
        self.joint.prob_of(|l| l.keys.iter().any(|&k| k != l.keys[0]))
    }

    /// `Pr(K_a != K_b)`.
    pub fn pair_mismatch_prob(&self, a: usize, b: usize) -> f64 {
        let (a, b) = (self.slot(a), self.slot(b));
        self.joint.prob_of(|l| l.keys[a] != l.keys[b])
    }

    pub fn key_marginal(&self, terminal: usize) -> DiscreteDistribution<u64> {
        let s = self.slot(terminal);
        self.joint.map(|l| l.keys[s])
    }

    /// Joint law of one key with the transcript.
    pub fn key_transcript(&self, terminal: usize) -> DiscreteDistribution<(u64, u64)> {
        let s = self.slot(terminal);
        self.joint.map(|l| (l.keys[s], l.transcript))
    }

    pub fn key_entropy(&self, terminal: usize) -> f64 {
        self.key_marginal(terminal).entropy()
    }

    /// `I(K_t ∧ F)`; in Model 4 the transcript carries `x3`, so this is
    /// `I(K_t ∧ X3, F)`.
    pub fn leakage(&self, terminal: usize) -> f64 {
        mutual_information(&self.key_transcript(terminal))
    }
}

/// Word-level lookup tables for a short code.
struct WordTables {
    syndrome: Vec<u64>,
    column: Vec<u64>,
    leader: Vec<u64>,
}

impl WordTables {
    fn new(code: &LinearCode) -> Result<Self> {
        let n = code.n();
        let words = 1u64 << n;
        let mut syndrome = Vec::with_capacity(words as usize);
        let mut column = Vec::with_capacity(words as usize);
        for w in 0..words {
            let idx = code.standard_array_index(&BitVector::from_u64(w, n))?;
            syndrome.push(idx.coset);
            column.push(idx.column);
        }
        let leader = (0..code.num_cosets()).map(|s| code.leader_by_index(s).to_u64()).collect();
        Ok(Self {
            syndrome,
            column,
            leader,
        })
    }

    /// `y ⊕ f_P(s ⊕ P y)`.
    fn reconstruct(&self, s: u64, y: u64) -> u64 {
        y ^ self.leader[(s ^ self.syndrome[y as usize]) as usize]
    }
}

/// `p^{|w|} (1-p)^{n-|w|}` for every word of length `n`.
fn bernoulli_table(n: usize, p: f64) -> Vec<f64> {
    let by_weight: Vec<f64> = (0..=n).map(|w| p.powi(w as i32) * (1.0 - p).powi((n - w) as i32)).collect();
    (0..1u64 << n).map(|w| by_weight[w.count_ones() as usize]).collect()
}

type Partial<L> = (Accumulator<L>, [CompensatedSum; 2]);

/// Merges partition results in partition order.
fn merge_partials<L: Ord + Clone>(partials: Vec<Partial<L>>) -> (BTreeMap<L, f64>, [f64; 2]) {
    let mut total: Accumulator<L> = BTreeMap::new();
    let mut scalars = [CompensatedSum::default(); 2];
    for (part, s) in partials {
        for (label, p) in part {
            let slot = total.entry(label).or_default();
            slot.add(p.sum);
            slot.add(p.carry);
        }
        for (acc, x) in scalars.iter_mut().zip(s) {
            acc.add(x.sum);
            acc.add(x.carry);
        }
    }
    (finish(total), scalars.map(|s| s.value()))
}

/// Exact joint law of all keys and the transcript.
///
/// Feasibility caps: `n <= 10` for Models 1 and 2, `d n <= 22` for Model 3,
/// `n <= 8` for Model 4. Work is split over the outermost enumeration
/// variable and merged in a fixed order, so the result is bit-identical for
/// any number of worker threads.
pub fn exact_outcome_distribution(
    model: &SourceModel,
    code: &LinearCode,
    ext: &ExtractionParams,
) -> Result<ExactOutcome> {
    let n = code.n();
    match model {
        SourceModel::Model1(p) => {
            if n > MAX_EXACT_PAIR_LENGTH {
                return Err(Error::cap("exact model1 enumeration", format!("n={n} > {MAX_EXACT_PAIR_LENGTH}")));
            }
            exact_chain(code, &[p.p()])
        }
        SourceModel::Model3(p) => {
            let bits = p.d() * n;
            if bits > MAX_EXACT_CHAIN_BITS {
                return Err(Error::cap(
                    "exact model3 enumeration",
                    format!("d*n={bits} > {MAX_EXACT_CHAIN_BITS}"),
                ));
            }
            exact_chain(code, p.link_probs())
        }
        SourceModel::Model2(_) => {
            if n > MAX_EXACT_PAIR_LENGTH {
                return Err(Error::cap("exact model2 enumeration", format!("n={n} > {MAX_EXACT_PAIR_LENGTH}")));
            }
            exact_regular(model, code, ext)
        }
        SourceModel::Model4(_) => {
            if n > MAX_EXACT_HELPER_LENGTH {
                return Err(Error::cap(
                    "exact model4 enumeration",
                    format!("n={n} > {MAX_EXACT_HELPER_LENGTH}"),
                ));
            }
            exact_regular(model, code, ext)
        }
    }
}

/// Models 1 and 3 (Model 1 is the chain with one link): `X1` uniform,
/// `X_{l+1} = X_l ⊕ V_l`, standard-array keys.
fn exact_chain(code: &LinearCode, links: &[f64]) -> Result<ExactOutcome> {
    let n = code.n();
    let m = code.m();
    let d = links.len() + 1;
    let target = links
        .iter()
        .enumerate()
        .fold(0, |best, (i, &p)| if p > links[best] { i } else { best })
        + 1;
    let tables = WordTables::new(code)?;
    let noise: Vec<Vec<f64>> = links.iter().map(|&p| bernoulli_table(n, p)).collect();
    let x1_prob = 0.5f64.powi(n as i32);
    let mask = (1u64 << n) - 1;
    let noise_bits = (d - 1) * n;

    let partials: Vec<_> = (0..1u64 << n)
        .into_par_iter()
        .map(|x1| {
            let mut acc: Accumulator<OutcomeLabel> = BTreeMap::new();
            let mut failure = CompensatedSum::default();
            let mut xs = vec![0u64; d];
            let mut syn = vec![0u64; d];
            for noise_word in 0..1u64 << noise_bits {
                xs[0] = x1;
                let mut prob = x1_prob;
                for l in 0..d - 1 {
                    let v = (noise_word >> (n * (d - 2 - l))) & mask;
                    prob *= noise[l][v as usize];
                    xs[l + 1] = xs[l] ^ v;
                }
                let mut transcript = 0u64;
                for t in 0..d {
                    syn[t] = tables.syndrome[xs[t] as usize];
                    if t + 1 < d {
                        transcript = transcript << m | syn[t];
                    }
                }
                let x_target = xs[target - 1];
                let mut keys = Vec::with_capacity(d);
                let mut failed = false;
                for i in 1..=d {
                    let mut est = xs[i - 1];
                    if i < target {
                        for l in i + 1..=target {
                            est = tables.reconstruct(syn[l - 1], est);
                        }
                    } else {
                        for l in (target..i).rev() {
                            est = tables.reconstruct(syn[l - 1], est);
                        }
                    }
                    failed |= est != x_target;
                    keys.push(tables.column[est as usize]);
                }
                if failed {
                    failure.add(prob);
                }
                acc.entry(OutcomeLabel { keys, transcript }).or_default().add(prob);
            }
            (acc, [failure, CompensatedSum::default()])
        })
        .collect();
    let (joint, [failure, _]) = merge_partials(partials);
    Ok(ExactOutcome {
        joint: DiscreteDistribution::new(joint)?,
        key_terminals: (1..=d).collect(),
        reference_terminal: target,
        key_range: KeyRange::power_of_two(n, code.k()),
        reconstruction_failure: failure,
        fallback_prob: None,
    })
}

/// Models 2 and 4. With `W = X1 ⊕ V` distributed Bernoulli(q) and independent
/// of `V` (and of `X3` in Model 4), terminal 2's side information is `W` and
/// its reconstruction is `x1 ⊕ v ⊕ f_P(P v)`.
fn exact_regular(model: &SourceModel, code: &LinearCode, ext: &ExtractionParams) -> Result<ExactOutcome> {
    let n = code.n();
    let m = code.m();
    let (p, q) = match model {
        SourceModel::Model2(params) => (params.p(), params.q()),
        SourceModel::Model4(params) => (params.p(), params.q()),
        _ => unreachable!("standard-array models use exact_chain"),
    };
    // shared validation and key range
    let proto = Protocol::new(code, model, ext)?;
    let range = proto.key_range();
    let big_m = range.size();
    let tables = WordTables::new(code)?;
    let pv = bernoulli_table(n, p);
    let pw = bernoulli_table(n, q);
    let residual: Vec<u64> = (0..1u64 << n)
        .map(|v| v ^ tables.leader[tables.syndrome[v as usize] as usize])
        .collect();
    let lookup = |table: &RegularSubsetTable, x: u64| match table.membership_word(x) {
        Membership::Assigned { index, .. } => Some(u64::from(index)),
        _ => None,
    };

    type Raw = Accumulator<(Option<u64>, Option<u64>, u64)>;
    // one partition: all (x1, v) for a fixed outer variable
    let accumulate = |table: &RegularSubsetTable, x1_range: std::ops::Range<u64>, prefix: u64, scale: f64| {
        let mut raw: Raw = BTreeMap::new();
        let mut failure = CompensatedSum::default();
        let mut fallback = CompensatedSum::default();
        for x1 in x1_range {
            let k1 = lookup(table, x1);
            let transcript = prefix << m | tables.syndrome[x1 as usize];
            for v in 0..1u64 << n {
                let prob = scale * pw[(x1 ^ v) as usize] * pv[v as usize];
                let eps = residual[v as usize];
                let k2 = lookup(table, x1 ^ eps);
                if eps != 0 {
                    failure.add(prob);
                }
                if k1.is_none() {
                    fallback.add(prob);
                }
                raw.entry((k1, k2, transcript)).or_default().add(prob);
            }
        }
        (expand_fallbacks(raw, big_m), [failure, fallback])
    };

    let partials: Vec<_> = match model {
        SourceModel::Model2(params) => {
            let table = proto.table().cloned().map_or_else(
                || RegularSubsetTable::for_model2(code, params, ext),
                Ok,
            )?;
            (0..1u64 << n)
                .into_par_iter()
                .map(|x1| accumulate(&table, x1..x1 + 1, 0, 1.0))
                .collect()
        }
        SourceModel::Model4(params) => {
            let x3_prob = 0.5f64.powi(n as i32);
            (0..1u64 << n)
                .into_par_iter()
                .map(|x3| {
                    let table = RegularSubsetTable::for_model4(code, params, ext, &BitVector::from_u64(x3, n))
                        .expect("parameters were validated when the protocol was built");
                    accumulate(&table, 0..1u64 << n, x3, x3_prob)
                })
                .collect()
        }
        _ => unreachable!(),
    };
    let (joint, [failure, fallback]) = merge_partials(partials);
    let key_terminals = vec![1, 2];
    Ok(ExactOutcome {
        joint: DiscreteDistribution::new(joint)?,
        key_terminals,
        reference_terminal: 1,
        key_range: range,
        reconstruction_failure: failure,
        fallback_prob: Some(fallback),
    })
}

/// Replaces each fallback slot by `M` equally weighted uniform key values.
fn expand_fallbacks(
    raw: Accumulator<(Option<u64>, Option<u64>, u64)>,
    big_m: u64,
) -> Accumulator<OutcomeLabel> {
    let mut out: Accumulator<OutcomeLabel> = BTreeMap::new();
    let values = |k: Option<u64>| -> Vec<u64> {
        match k {
            Some(k) => vec![k],
            None => (0..big_m).collect(),
        }
    };
    for ((k1, k2, transcript), prob) in raw {
        let prob = prob.value();
        let (a, b) = (values(k1), values(k2));
        let share = prob / (a.len() * b.len()) as f64;
        for &x in &a {
            for &y in &b {
                out.entry(OutcomeLabel {
                    keys: vec![x, y],
                    transcript,
                })
                .or_default()
                .add(share);
            }
        }
    }
    out
}

/// Outcome of a named check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
}

impl CheckStatus {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "fail",
            CheckStatus::NotApplicable => "n/a",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

impl Check {
    fn new(name: &str, status: CheckStatus, detail: String) -> Self {
        Self {
            name: name.to_string(),
            status,
            detail,
        }
    }
}

/// Exactly computed criteria.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactCriteria {
    pub mismatch_prob: f64,
    pub reconstruction_failure_prob: f64,
    /// `I(K ∧ F)` of the reference key (Model 4: `I(K ∧ X3, F)`).
    pub leakage_bits: f64,
    pub key_entropy_bits: f64,
    pub fallback_prob: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: u64,
    pub critical_99: f64,
    pub uniform_not_rejected: bool,
}

/// Monte-Carlo estimates. Leakage is never estimated empirically.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalCriteria {
    pub trials: u64,
    pub mismatches: u64,
    pub mismatch_freq: f64,
    /// Wald 95% halfwidth `1.96 sqrt(f (1 - f) / N)`.
    pub mismatch_halfwidth: f64,
    pub reconstruction_failures: u64,
    pub fallbacks: u64,
    /// Plug-in entropy of the observed reference-key frequencies. Biased low;
    /// for display only.
    pub plugin_entropy_bits: f64,
    pub chi_square: Option<ChiSquareTest>,
}

/// Agreement, secrecy and uniformity of one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct CriteriaReport {
    pub model: String,
    pub n: usize,
    pub m: usize,
    pub reference_terminal: usize,
    pub key_range: u64,
    pub log_key_range_bits: f64,
    pub rate_bits_per_symbol: f64,
    pub capacity_bits_per_symbol: f64,
    /// Capacity minus rate.
    pub capacity_gap: f64,
    /// Models 2 and 4: `(I - eps') - rate`, at most `1/n` unless clamped.
    pub floor_discrepancy: Option<f64>,
    pub exact: Option<ExactCriteria>,
    pub empirical: Option<EmpiricalCriteria>,
    pub checks: Vec<Check>,
    pub flags: Vec<String>,
}

impl CriteriaReport {
    /// Rate and capacity fields for a configuration, with no measurements.
    pub fn skeleton(model: &SourceModel, code: &LinearCode, ext: &ExtractionParams) -> Result<Self> {
        let proto = Protocol::new(code, model, ext)?;
        let range = proto.key_range();
        let n = code.n();
        let log_m = (range.size() as f64).log2();
        let rate = log_m / n as f64;
        let capacity = source::capacity(model);
        let regular = matches!(model, SourceModel::Model2(_) | SourceModel::Model4(_));
        let mut flags = Vec::new();
        if range.clamped() {
            flags.push("key_range_clamped".to_string());
        }
        let reference_terminal = match model {
            SourceModel::Model3(p) => source::worst_link(p),
            _ => 1,
        };
        Ok(Self {
            model: model.name().to_string(),
            n,
            m: code.m(),
            reference_terminal,
            key_range: range.size(),
            log_key_range_bits: log_m,
            rate_bits_per_symbol: rate,
            capacity_bits_per_symbol: capacity,
            capacity_gap: capacity - rate,
            floor_discrepancy: regular.then_some((capacity - ext.eps_prime) - rate),
            exact: None,
            empirical: None,
            checks: Vec::new(),
            flags,
        })
    }

    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }
}

/// `Pr(decoding failure)` of each link, by the coset-weight oracle.
fn link_error_probs(code: &LinearCode, links: &[f64]) -> Result<Vec<f64>> {
    links.iter().map(|&p| code.exact_bsc_error_prob(p)).collect()
}

/// Exact criteria with the standard checks.
pub fn verify_criteria(model: &SourceModel, code: &LinearCode, ext: &ExtractionParams) -> Result<CriteriaReport> {
    let mut report = CriteriaReport::skeleton(model, code, ext)?;
    let outcome = exact_outcome_distribution(model, code, ext)?;
    let reference = outcome.reference_terminal;
    let exact = ExactCriteria {
        mismatch_prob: outcome.mismatch_prob(),
        reconstruction_failure_prob: outcome.reconstruction_failure,
        leakage_bits: outcome.leakage(reference),
        key_entropy_bits: outcome.key_entropy(reference),
        fallback_prob: outcome.fallback_prob,
    };
    let n = code.n() as f64;
    let mut checks = vec![
        Check::new(
            "uniformity",
            CheckStatus::from_bool((exact.key_entropy_bits - report.log_key_range_bits).abs() <= EXACT_TOLERANCE),
            format!("H(K)={:.15}, log|K|={:.15}", exact.key_entropy_bits, report.log_key_range_bits),
        ),
        Check::new(
            "secrecy",
            CheckStatus::from_bool(exact.leakage_bits <= EXACT_TOLERANCE),
            format!("I(K;F)={:.3e}", exact.leakage_bits),
        ),
    ];
    match model {
        SourceModel::Model1(_) | SourceModel::Model3(_) => {
            let links: Vec<f64> = match model {
                SourceModel::Model1(p) => vec![p.p()],
                SourceModel::Model3(p) => p.link_probs().to_vec(),
                _ => unreachable!(),
            };
            let p_worst = links[reference.min(links.len()) - 1];
            let h = source::binary_entropy(p_worst)?;
            let rate = exact.key_entropy_bits / n;
            let status = if (code.m() as f64) <= n * (h + ext.epsilon) {
                CheckStatus::from_bool(rate > 1.0 - h - ext.epsilon)
            } else {
                CheckStatus::NotApplicable
            };
            checks.push(Check::new(
                "rate_bound",
                status,
                format!("H(K)/n={rate:.6} vs 1-h(p)-eps={:.6}", 1.0 - h - ext.epsilon),
            ));
            let link_pe = link_error_probs(code, &links)?;
            let success: f64 = link_pe.iter().map(|pe| 1.0 - pe).product();
            if links.len() == 1 {
                checks.push(Check::new(
                    "mismatch_identity",
                    CheckStatus::from_bool((exact.mismatch_prob - link_pe[0]).abs() <= EXACT_TOLERANCE),
                    format!("Pr(K1!=K2)={:.15}, P_e={:.15}", exact.mismatch_prob, link_pe[0]),
                ));
            } else {
                let direct = 1.0 - exact.reconstruction_failure_prob;
                checks.push(Check::new(
                    "chain_law",
                    CheckStatus::from_bool((direct - success).abs() <= EXACT_TOLERANCE),
                    format!("Pr(all correct)={direct:.15}, link product={success:.15}"),
                ));
                let agree = 1.0 - exact.mismatch_prob;
                checks.push(Check::new(
                    "agreement_bound",
                    CheckStatus::from_bool(agree >= success - EXACT_TOLERANCE),
                    format!("Pr(all keys equal)={agree:.15} >= {success:.15}"),
                ));
            }
        }
        SourceModel::Model2(_) | SourceModel::Model4(_) => {
            let gap = report.floor_discrepancy.expect("set for regular-subset models");
            let status = if outcome.key_range.clamped() {
                CheckStatus::NotApplicable
            } else {
                CheckStatus::from_bool((-EXACT_TOLERANCE..=1.0 / n + EXACT_TOLERANCE).contains(&gap))
            };
            checks.push(Check::new(
                "rate_floor",
                status,
                format!("(I-eps')-log2(M)/n={gap:.6}, bound 1/n={:.6}", 1.0 / n),
            ));
        }
    }
    report.exact = Some(exact);
    report.checks.extend(checks);
    Ok(report)
}

/// Streaming tallies over protocol outcomes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrialTally {
    pub trials: u64,
    pub mismatches: u64,
    pub reconstruction_failures: u64,
    pub fallbacks: u64,
    /// Reference-key counts; `None` once the key range is too large.
    pub histogram: Option<Vec<u64>>,
    key_range: u64,
}

impl TrialTally {
    pub fn new(key_range: u64) -> Self {
        Self {
            key_range,
            histogram: (key_range <= MAX_HISTOGRAM_BINS).then(|| vec![0; key_range as usize]),
            ..Self::default()
        }
    }

    pub fn add(&mut self, outcome: &ProtocolOutcome) {
        self.trials += 1;
        self.mismatches += u64::from(!outcome.keys_agree());
        self.reconstruction_failures += u64::from(!outcome.reconstruction_ok());
        self.fallbacks += u64::from(outcome.used_fallback(1));
        if let (Some(h), Some(k)) = (&mut self.histogram, outcome.key(outcome.target)) {
            h[k.value as usize] += 1;
        }
    }

    pub fn merge(&mut self, other: &TrialTally) {
        self.trials += other.trials;
        self.mismatches += other.mismatches;
        self.reconstruction_failures += other.reconstruction_failures;
        self.fallbacks += other.fallbacks;
        if let (Some(a), Some(b)) = (&mut self.histogram, &other.histogram) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn key_range(&self) -> u64 {
        self.key_range
    }

    pub fn estimates(&self) -> Result<EmpiricalCriteria> {
        if self.trials == 0 {
            return Err(Error::InvalidInput("no trials to estimate from".to_string()));
        }
        let n = self.trials as f64;
        let f = self.mismatches as f64 / n;
        let (plugin_entropy_bits, chi_square) = match &self.histogram {
            Some(h) => (
                entropy_of(h.iter().map(|&c| c as f64 / n)),
                chi_square_uniform(h),
            ),
            None => (f64::NAN, None),
        };
        Ok(EmpiricalCriteria {
            trials: self.trials,
            mismatches: self.mismatches,
            mismatch_freq: f,
            mismatch_halfwidth: 1.96 * (f * (1.0 - f) / n).sqrt(),
            reconstruction_failures: self.reconstruction_failures,
            fallbacks: self.fallbacks,
            plugin_entropy_bits,
            chi_square,
        })
    }
}

/// Pearson chi-square test of a histogram against the uniform law.
pub fn chi_square_uniform(counts: &[u64]) -> Option<ChiSquareTest> {
    if counts.len() < 2 {
        return None;
    }
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    if expected <= 0.0 {
        return None;
    }
    let statistic = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum::<f64>();
    let dof = counts.len() as u64 - 1;
    let critical_99 = ChiSquared::new(dof as f64).ok()?.inverse_cdf(0.99);
    Some(ChiSquareTest {
        statistic,
        dof,
        critical_99,
        uniform_not_rejected: statistic <= critical_99,
    })
}

/// Estimates from a batch of outcomes.
pub fn empirical_estimates(batch: &[ProtocolOutcome]) -> Result<EmpiricalCriteria> {
    let first = batch
        .first()
        .ok_or_else(|| Error::InvalidInput("empty batch".to_string()))?;
    let mut tally = TrialTally::new(first.key_range.size());
    for outcome in batch {
        tally.add(outcome);
    }
    tally.estimates()
}

/// One seeded trial: the source stream of trial `index` under `master_seed`.
pub fn run_trial(protocol: &Protocol<'_>, master_seed: u64, index: u64) -> Result<ProtocolOutcome> {
    let mut rng = stream_rng(trial_seed(master_seed, index), Stream::Source);
    protocol.run(&mut rng)
}

/// Runs `n_trials` seeded trials on the current rayon pool and tallies them.
/// Trials are cut into fixed chunks whose tallies are merged in chunk order.
pub fn run_trials(protocol: &Protocol<'_>, n_trials: u64, master_seed: u64) -> Result<TrialTally> {
    let chunks = n_trials.div_ceil(TRIAL_CHUNK);
    let key_range = protocol.key_range().size();
    let partials: Vec<Result<TrialTally>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut tally = TrialTally::new(key_range);
            for index in c * TRIAL_CHUNK..((c + 1) * TRIAL_CHUNK).min(n_trials) {
                tally.add(&run_trial(protocol, master_seed, index)?);
            }
            Ok(tally)
        })
        .collect();
    let mut total = TrialTally::new(key_range);
    for part in partials {
        total.merge(&part?);
    }
    Ok(total)
}

/// Adds empirical estimates and their flags to a report.
pub fn attach_empirical(report: &mut CriteriaReport, tally: &TrialTally) -> Result<()> {
    let est = tally.estimates()?;
    report.flags.push("plugin_entropy_biased".to_string());
    report.flags.push("leakage_exact_only".to_string());
    if est.chi_square.is_none() {
        report.flags.push("histogram_skipped".to_string());
    } else if (tally.trials as f64) < 5.0 * tally.key_range() as f64 {
        report.flags.push("chi_square_low_counts".to_string());
    }
    if let Some(chi) = &est.chi_square {
        report.checks.push(Check::new(
            "empirical_uniformity",
            CheckStatus::from_bool(chi.uniform_not_rejected),
            format!("chi2={:.3}, dof={}, critical99={:.3}", chi.statistic, chi.dof, chi.critical_99),
        ));
    }
    if let Some(exact) = &report.exact {
        let p = exact.mismatch_prob;
        let sigma = (p * (1.0 - p) / est.trials as f64).sqrt();
        let dev = (est.mismatch_freq - p).abs();
        report.checks.push(Check::new(
            "empirical_mismatch",
            CheckStatus::from_bool(dev <= 4.0 * sigma),
            format!("|freq-exact|={dev:.3e}, 4 sigma={:.3e}", 4.0 * sigma),
        ));
    }
    report.empirical = Some(est);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::{Model1Params, Model2Params, Model3Params, Model4Params};

    fn m1(p: f64) -> SourceModel {
        SourceModel::Model1(Model1Params::new(p).unwrap())
    }

    fn defaults(model: &SourceModel) -> ExtractionParams {
        ExtractionParams::defaults_for(model)
    }

    #[test]
    fn entropy_examples() {
        let point = DiscreteDistribution::from_pairs([(0u8, 1.0)]).unwrap();
        assert_eq!(point.entropy(), 0.0);
        let u = DiscreteDistribution::uniform(0..16u32).unwrap();
        assert!((u.entropy() - 4.0).abs() < 1e-15);
        let b = DiscreteDistribution::from_pairs([(0, 0.9), (1, 0.1)]).unwrap();
        assert!((b.entropy() - 0.468_995_593_589_281_2).abs() < 1e-12);
        assert!(DiscreteDistribution::from_pairs([(0, 0.5), (1, 0.4)]).is_err());
        assert!(DiscreteDistribution::from_pairs([(0, 1.5), (1, -0.5)]).is_err());
    }

    #[test]
    fn mutual_information_examples() {
        let product =
            DiscreteDistribution::from_pairs((0..2).flat_map(|a| (0..3).map(move |b| ((a, b), 1.0 / 6.0)))).unwrap();
        assert!(mutual_information(&product).abs() < 1e-15);
        let same = DiscreteDistribution::from_pairs((0..4).map(|x| ((x, x), 0.25))).unwrap();
        assert!((mutual_information(&same) - 2.0).abs() < 1e-15);
        let p = 0.11;
        let bsc = DiscreteDistribution::from_pairs([
            ((0, 0), (1.0 - p) / 2.0),
            ((0, 1), p / 2.0),
            ((1, 0), p / 2.0),
            ((1, 1), (1.0 - p) / 2.0),
        ])
        .unwrap();
        let h = -(p * p.log2() + (1.0 - p) * (1.0 - p).log2());
        assert!((mutual_information(&bsc) - (1.0 - h)).abs() < 1e-12);
        assert!((mutual_information(&bsc) - 0.50005).abs() < 1e-4);
    }

    #[test]
    fn model1_exact_law() {
        let code = LinearCode::hamming(3).unwrap();
        let model = m1(0.05);
        let out = exact_outcome_distribution(&model, &code, &defaults(&model)).unwrap();
        let k1 = out.key_marginal(1);
        assert_eq!(k1.len(), 16);
        for (_, p) in k1.iter() {
            assert!((p - 1.0 / 16.0).abs() < 1e-15);
        }
        assert!(out.leakage(1) < EXACT_TOLERANCE);
        let pe = code.exact_bsc_error_prob(0.05).unwrap();
        assert!((out.mismatch_prob() - pe).abs() < EXACT_TOLERANCE);
        assert!((out.mismatch_prob() - 0.04438).abs() < 1e-5);
        assert!((out.reconstruction_failure - out.mismatch_prob()).abs() < 1e-15);
    }

    /// Direct per-realization recomputation through the protocol engine.
    #[test]
    fn exact_law_matches_protocol_replay() {
        let code = LinearCode::repetition(3).unwrap();
        let model = SourceModel::Model3(Model3Params::new(vec![0.1, 0.2]).unwrap());
        let proto = Protocol::new(&code, &model, &defaults(&model)).unwrap();
        let out = exact_outcome_distribution(&model, &code, &defaults(&model)).unwrap();
        let mut replay: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
        for x1 in 0..8u64 {
            for v1 in 0..8u64 {
                for v2 in 0..8u64 {
                    let x1b = BitVector::from_u64(x1, 3);
                    let x2 = &x1b ^ &BitVector::from_u64(v1, 3);
                    let x3 = &x2 ^ &BitVector::from_u64(v2, 3);
                    let t = crate::source::SequenceTuple::new(vec![x1b, x2, x3]).unwrap();
                    let prob = crate::source::joint_pmf(&model, &t).unwrap();
                    let o = proto.run_on(t, 0).unwrap();
                    let keys: Vec<u64> = o.keys.iter().map(|k| k.unwrap().value).collect();
                    *replay.entry(keys).or_insert(0.0) += prob;
                }
            }
        }
        let keys_only = out.joint.map(|l| l.keys.clone());
        for (k, p) in &replay {
            assert!((keys_only.prob(k) - p).abs() < 1e-15);
        }
        assert_eq!(keys_only.len(), replay.len());
    }

    #[test]
    fn model2_exact_secrecy_and_uniformity() {
        let code = LinearCode::random_linear(10, 4, 1).unwrap();
        let model = SourceModel::Model2(Model2Params::new(0.1, 0.3).unwrap());
        let ext = ExtractionParams { xi: 0.15, eps_prime: 0.2, epsilon: 0.01 };
        let r = verify_criteria(&model, &code, &ext).unwrap();
        let e = r.exact.as_ref().unwrap();
        assert!(e.leakage_bits < EXACT_TOLERANCE);
        assert!((e.key_entropy_bits - r.log_key_range_bits).abs() < EXACT_TOLERANCE);
        assert!(e.fallback_prob.unwrap() > 0.0 && e.fallback_prob.unwrap() < 1.0);
        assert!(r.all_checks_pass(), "{:?}", r.checks);
    }

    #[test]
    fn model4_exact_privacy() {
        let code = LinearCode::hamming(3).unwrap();
        let model = SourceModel::Model4(Model4Params::new(0.1, 0.3).unwrap());
        let ext = ExtractionParams { xi: 0.1, eps_prime: 0.22, epsilon: 0.01 };
        let r = verify_criteria(&model, &code, &ext).unwrap();
        let e = r.exact.as_ref().unwrap();
        assert!(e.leakage_bits < EXACT_TOLERANCE);
        assert!(r.all_checks_pass(), "{:?}", r.checks);
        assert!(e.fallback_prob.unwrap() < 1.0);
    }

    #[test]
    fn model3_chain_checks() {
        let code = LinearCode::hamming(3).unwrap();
        let model = SourceModel::Model3(Model3Params::new(vec![0.03, 0.05]).unwrap());
        let r = verify_criteria(&model, &code, &defaults(&model)).unwrap();
        assert_eq!(r.reference_terminal, 2);
        assert!(r.all_checks_pass(), "{:?}", r.checks);
        assert!(r.checks.iter().any(|c| c.name == "chain_law" && c.status == CheckStatus::Pass));
    }

    #[test]
    fn model3_two_terminals_equals_model1() {
        let code = LinearCode::hamming(3).unwrap();
        let a = verify_criteria(&m1(0.1), &code, &defaults(&m1(0.1))).unwrap();
        let model = SourceModel::Model3(Model3Params::new(vec![0.1]).unwrap());
        let mut b = verify_criteria(&model, &code, &defaults(&m1(0.1))).unwrap();
        b.model = a.model.clone();
        assert_eq!(a, b);
    }

    #[test]
    fn repetition_rate_example() {
        let code = LinearCode::repetition(3).unwrap();
        let r = verify_criteria(&m1(0.1), &code, &defaults(&m1(0.1))).unwrap();
        assert!((r.rate_bits_per_symbol - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.capacity_bits_per_symbol - 0.531).abs() < 1e-3);
        assert!((r.capacity_gap - 0.198).abs() < 1e-3);
    }

    #[test]
    fn caps_are_enforced() {
        let code = LinearCode::hamming(4).unwrap();
        assert!(matches!(
            exact_outcome_distribution(&m1(0.05), &code, &defaults(&m1(0.05))),
            Err(Error::CapExceeded { .. })
        ));
        let code = LinearCode::random_linear(9, 4, 1).unwrap();
        let model = SourceModel::Model4(Model4Params::new(0.1, 0.3).unwrap());
        assert!(matches!(
            exact_outcome_distribution(&model, &code, &defaults(&model)),
            Err(Error::CapExceeded { .. })
        ));
    }

    #[test]
    fn fallback_expansion_spreads_mass() {
        let mut raw: Accumulator<_> = BTreeMap::new();
        raw.entry((None, Some(1), 7)).or_default().add(0.5);
        raw.entry((None, None, 7)).or_default().add(0.5);
        let out = finish(expand_fallbacks(raw, 2));
        let total: f64 = out.values().sum();
        assert!((total - 1.0).abs() < 1e-15);
        let get = |a, b| out[&OutcomeLabel { keys: vec![a, b], transcript: 7 }];
        assert_eq!(get(0, 1), 0.25 + 0.125);
        assert_eq!(get(0, 0), 0.125);
    }

    #[test]
    fn empirical_zero_noise_has_no_mismatch() {
        let code = LinearCode::hamming(3).unwrap();
        let model = SourceModel::Model3(Model3Params::new(vec![1e-12]).unwrap());
        let proto = Protocol::new(&code, &model, &defaults(&model)).unwrap();
        let tally = run_trials(&proto, 2000, 1).unwrap();
        let est = tally.estimates().unwrap();
        assert_eq!(est.mismatches, 0);
        assert_eq!(est.mismatch_halfwidth, 0.0);
        assert!(empirical_estimates(&[]).is_err());
    }

    #[test]
    fn empirical_tracks_exact() {
        let code = LinearCode::hamming(3).unwrap();
        let model = m1(0.05);
        let proto = Protocol::new(&code, &model, &defaults(&model)).unwrap();
        let tally = run_trials(&proto, 100_000, 2024).unwrap();
        let mut report = verify_criteria(&model, &code, &defaults(&model)).unwrap();
        attach_empirical(&mut report, &tally).unwrap();
        assert!(report.all_checks_pass(), "{:?}", report.checks);
        let batch: Vec<_> = (0..500).map(|i| run_trial(&proto, 2024, i).unwrap()).collect();
        let est = empirical_estimates(&batch).unwrap();
        assert_eq!(est.trials, 500);
    }

    #[test]
    fn chi_square_reference() {
        let t = chi_square_uniform(&[100, 100, 100, 100]).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.dof, 3);
        assert!((t.critical_99 - 11.3449).abs() < 1e-3);
        assert!(!chi_square_uniform(&[400, 0, 0, 0]).unwrap().uniform_not_rejected);
    }

    #[test]
    fn trials_do_not_depend_on_thread_count() {
        let code = LinearCode::hamming(3).unwrap();
        let model = SourceModel::Model4(Model4Params::new(0.1, 0.3).unwrap());
        let ext = ExtractionParams { xi: 0.1, eps_prime: 0.22, epsilon: 0.01 };
        let proto = Protocol::new(&code, &model, &ext).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_trials(&proto, 5000, 77).unwrap())
        };
        assert_eq!(run(1), run(3));
    }
}
