//! The four correlated binary source models: parameters, exact pmfs,
//! seeded samplers, typicality tests and closed-form key capacities.
//!
//! Terminal `t` (1-based in the documentation) observes `SequenceTuple::seqs[t - 1]`.

use std::ops::RangeInclusive;

use rand::Rng;

use crate::bits::BitVector;
use crate::{Error, Result};

/// Absolute slack applied to typicality comparisons so that sequences whose
/// normalized log-probability sits exactly on a boundary are not lost to
/// rounding.
pub const TYPICALITY_TOLERANCE: f64 = 1e-12;

fn check_open(name: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if v > lo && v < hi {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must lie in ({lo}, {hi}), got {v}"
        )))
    }
}

/// Doubly symmetric binary source: `X1 = X2 + V`, `X2` uniform, `V ~ Bern(p)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Model1Params {
    p: f64,
}

impl Model1Params {
    pub fn new(p: f64) -> Result<Self> {
        check_open("p", p, 0.0, 0.5)?;
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

/// `X1 = X2 + V` with `X2 ~ Bern(q)` and `V ~ Bern(p)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Model2Params {
    p: f64,
    q: f64,
}

impl Model2Params {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        check_open("p", p, 0.0, 0.5)?;
        check_open("q", q, 0.0, 1.0)?;
        Ok(Self { p, q })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// `Pr(X1 = 1) = p + q - 2pq`.
    pub fn x1_one_prob(&self) -> f64 {
        self.p + self.q - 2.0 * self.p * self.q
    }
}

/// Markov chain `X1 - X2 - ... - Xd` of binary symmetric links.
#[derive(Clone, Debug, PartialEq)]
pub struct Model3Params {
    link_probs: Vec<f64>,
}

impl Model3Params {
    /// `link_probs[i]` is the crossover probability between terminals `i + 1`
    /// and `i + 2`.
    pub fn new(link_probs: Vec<f64>) -> Result<Self> {
        if link_probs.is_empty() {
            return Err(Error::InvalidParameter(
                "model 3 needs at least two terminals (one link)".to_string(),
            ));
        }
        for (i, &p) in link_probs.iter().enumerate() {
            check_open(&format!("p_{}", i + 1), p, 0.0, 0.5)?;
        }
        Ok(Self { link_probs })
    }

    /// Number of terminals.
    pub fn d(&self) -> usize {
        self.link_probs.len() + 1
    }

    pub fn link_probs(&self) -> &[f64] {
        &self.link_probs
    }
}

/// Three terminals with `X1 = X2 + X3 + V`; terminal 3 is a helper.
///
/// From the joint pmf table: `X3` is uniform, `X2 + X3 ~ Bern(q)` independent
/// of `X3`, and `V ~ Bern(p)` independent of `(X2, X3)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Model4Params {
    p: f64,
    q: f64,
}

impl Model4Params {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        check_open("p", p, 0.0, 0.5)?;
        check_open("q", q, 0.0, 1.0)?;
        Ok(Self { p, q })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// The eight-entry table `P(x1, x2, x3)`.
    pub fn symbol_pmf(&self, x1: bool, x2: bool, x3: bool) -> f64 {
        let (p, q) = (self.p, self.q);
        match (x1, x2 ^ x3) {
            (false, false) => (1.0 - p) * (1.0 - q) / 2.0,
            (false, true) => p * q / 2.0,
            (true, false) => p * (1.0 - q) / 2.0,
            (true, true) => q * (1.0 - p) / 2.0,
        }
    }

    /// Pair pmf of `(X1, X3)`, obtained by summing the table over `x2`.
    pub fn x1_x3_pmf(&self) -> BinaryJointPmf {
        let mut probs = [[0.0; 2]; 2];
        for (a, row) in probs.iter_mut().enumerate() {
            for (b, cell) in row.iter_mut().enumerate() {
                *cell = [false, true]
                    .iter()
                    .map(|&x2| self.symbol_pmf(a == 1, x2, b == 1))
                    .sum();
            }
        }
        BinaryJointPmf::new(probs).expect("table marginal is a valid pmf")
    }
}

/// One of the four source models.
#[derive(Clone, Debug, PartialEq)]
pub enum SourceModel {
    Model1(Model1Params),
    Model2(Model2Params),
    Model3(Model3Params),
    Model4(Model4Params),
}

impl SourceModel {
    /// Number of terminals.
    pub fn terminals(&self) -> usize {
        match self {
            SourceModel::Model1(_) | SourceModel::Model2(_) => 2,
            SourceModel::Model3(m) => m.d(),
            SourceModel::Model4(_) => 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SourceModel::Model1(_) => "model1",
            SourceModel::Model2(_) => "model2",
            SourceModel::Model3(_) => "model3",
            SourceModel::Model4(_) => "model4",
        }
    }

    /// Probability of one symbol tuple `(x1, ..., xd)`.
    pub fn symbol_pmf(&self, symbols: &[bool]) -> f64 {
        match self {
            SourceModel::Model1(m) => {
                if symbols[0] == symbols[1] {
                    (1.0 - m.p) / 2.0
                } else {
                    m.p / 2.0
                }
            }
            SourceModel::Model2(m) => {
                let (p, q) = (m.p, m.q);
                match (symbols[0], symbols[1]) {
                    (false, false) => (1.0 - p) * (1.0 - q),
                    (false, true) => p * q,
                    (true, false) => p * (1.0 - q),
                    (true, true) => q * (1.0 - p),
                }
            }
            SourceModel::Model3(m) => m
                .link_probs
                .iter()
                .zip(symbols.windows(2))
                .fold(0.5, |acc, (&p, w)| acc * if w[0] == w[1] { 1.0 - p } else { p }),
            SourceModel::Model4(m) => m.symbol_pmf(symbols[0], symbols[1], symbols[2]),
        }
    }
}

/// Per-terminal observation sequences of common length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceTuple {
    seqs: Vec<BitVector>,
}

impl SequenceTuple {
    pub fn new(seqs: Vec<BitVector>) -> Result<Self> {
        let n = seqs
            .first()
            .map(BitVector::len)
            .ok_or_else(|| Error::InvalidInput("empty sequence tuple".to_string()))?;
        if let Some(bad) = seqs.iter().find(|s| s.len() != n) {
            return Err(Error::LengthMismatch {
                what: "terminal sequence".to_string(),
                expected: n,
                found: bad.len(),
            });
        }
        Ok(Self { seqs })
    }

    pub fn n(&self) -> usize {
        self.seqs[0].len()
    }

    pub fn terminals(&self) -> usize {
        self.seqs.len()
    }

    /// Sequence of terminal `t`, 1-based.
    pub fn terminal(&self, t: usize) -> &BitVector {
        &self.seqs[t - 1]
    }

    pub fn seqs(&self) -> &[BitVector] {
        &self.seqs
    }
}

fn bernoulli_seq<R: Rng + ?Sized>(rng: &mut R, n: usize, p: f64) -> BitVector {
    let mut v = BitVector::zeros(n);
    for i in 0..n {
        if rng.gen_bool(p) {
            v.set(i, true);
        }
    }
    v
}

/// Draws `n` i.i.d. symbol tuples from the model.
///
/// Draw order is part of the reproducibility contract: Models 1/2 draw `X2`
/// then `V`; Model 3 draws `X1` then `V1, ..., V_{d-1}`; Model 4 draws `X3`,
/// then `W = X2 + X3`, then `V`.
pub fn sample<R: Rng + ?Sized>(model: &SourceModel, n: usize, rng: &mut R) -> Result<SequenceTuple> {
    if n == 0 {
        return Err(Error::InvalidParameter("block length must be positive".to_string()));
    }
    let seqs = match model {
        SourceModel::Model1(m) => {
            let x2 = bernoulli_seq(rng, n, 0.5);
            let v = bernoulli_seq(rng, n, m.p);
            vec![&x2 ^ &v, x2]
        }
        SourceModel::Model2(m) => {
            let x2 = bernoulli_seq(rng, n, m.q);
            let v = bernoulli_seq(rng, n, m.p);
            vec![&x2 ^ &v, x2]
        }
        SourceModel::Model3(m) => {
            let mut seqs = vec![bernoulli_seq(rng, n, 0.5)];
            for &p in &m.link_probs {
                let v = bernoulli_seq(rng, n, p);
                let next = seqs.last().expect("nonempty") ^ &v;
                seqs.push(next);
            }
            seqs
        }
        SourceModel::Model4(m) => {
            let x3 = bernoulli_seq(rng, n, 0.5);
            let w = bernoulli_seq(rng, n, m.q);
            let v = bernoulli_seq(rng, n, m.p);
            let x2 = &x3 ^ &w;
            let x1 = &w ^ &v;
            vec![x1, x2, x3]
        }
    };
    SequenceTuple::new(seqs)
}

/// Exact probability of a sequence tuple under the model.
pub fn joint_pmf(model: &SourceModel, tuple: &SequenceTuple) -> Result<f64> {
    if tuple.terminals() != model.terminals() {
        return Err(Error::InvalidInput(format!(
            "{} expects {} terminals, tuple has {}",
            model.name(),
            model.terminals(),
            tuple.terminals()
        )));
    }
    let mut symbols = vec![false; tuple.terminals()];
    let mut prob = 1.0;
    for i in 0..tuple.n() {
        for (s, seq) in symbols.iter_mut().zip(tuple.seqs()) {
            *s = seq.get(i);
        }
        prob *= model.symbol_pmf(&symbols);
    }
    Ok(prob)
}

pub(crate) fn hb(p: f64) -> f64 {
    let term = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.log2() };
    term(p) + term(1.0 - p)
}

/// Binary entropy in bits, with `0 log 0 = 0`.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "probability must lie in [0, 1], got {p}"
        )));
    }
    Ok(hb(p))
}

/// Closed-form secret (Models 1-3) or private (Model 4) key capacity, bits/symbol.
pub fn capacity(model: &SourceModel) -> f64 {
    match model {
        SourceModel::Model1(m) => 1.0 - hb(m.p),
        SourceModel::Model2(m) => hb(m.x1_one_prob()) - hb(m.p),
        SourceModel::Model3(m) => 1.0 - hb(m.link_probs[worst_link(m) - 1]),
        SourceModel::Model4(m) => hb(m.p + m.q - 2.0 * m.p * m.q) - hb(m.p),
    }
}

/// 1-based index of the noisiest link, smallest index on ties.
pub fn worst_link(params: &Model3Params) -> usize {
    let mut best = 0;
    for (i, &p) in params.link_probs.iter().enumerate() {
        if p > params.link_probs[best] {
            best = i;
        }
    }
    best + 1
}

/// `-(1/n) log2 P^n(x)` for an i.i.d. Bernoulli(alpha) source, as a function
/// of the weight only.
pub fn normalized_log_prob(n: usize, weight: usize, alpha: f64) -> f64 {
    let w = weight as f64;
    let n = n as f64;
    let ones = if weight == 0 { 0.0 } else { -w * alpha.log2() };
    let zeros = if weight as f64 == n { 0.0 } else { -(n - w) * (1.0 - alpha).log2() };
    (ones + zeros) / n
}

/// Weights of the typical sequences of length `n`; the set is an interval
/// because the normalized log-probability is affine in the weight.
pub fn typical_weight_range(n: usize, alpha: f64, xi: f64) -> Option<RangeInclusive<usize>> {
    assert!(alpha > 0.0 && alpha < 1.0, "symbol probability must lie in (0, 1)");
    let h = hb(alpha);
    let ok = |w: usize| (normalized_log_prob(n, w, alpha) - h).abs() <= xi + TYPICALITY_TOLERANCE;
    let lo = (0..=n).find(|&w| ok(w))?;
    let hi = (lo..=n).rev().find(|&w| ok(w))?;
    Some(lo..=hi)
}

/// Whether `x` is typical with constant `xi` for a Bernoulli(alpha) source.
pub fn is_typical(x: &BitVector, alpha: f64, xi: f64) -> bool {
    typical_weight_range(x.len(), alpha, xi).is_some_and(|r| r.contains(&x.weight()))
}

/// Joint pmf of a pair of binary variables, `probs[a][b] = P(X = a, Y = b)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinaryJointPmf {
    probs: [[f64; 2]; 2],
}

/// Counts `[[n00, n01], [n10, n11]]` of symbol pairs.
pub fn joint_type(x: &BitVector, y: &BitVector) -> [[usize; 2]; 2] {
    assert_eq!(x.len(), y.len(), "joint type needs equal lengths");
    let mut counts = [[0usize; 2]; 2];
    for (a, b) in x.iter().zip(y.iter()) {
        counts[usize::from(a)][usize::from(b)] += 1;
    }
    counts
}

impl BinaryJointPmf {
    pub fn new(probs: [[f64; 2]; 2]) -> Result<Self> {
        let total: f64 = probs.iter().flatten().sum();
        if probs.iter().flatten().any(|&p| !(0.0..=1.0).contains(&p)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("not a pmf: {probs:?}")));
        }
        Ok(Self { probs })
    }

    pub fn prob(&self, a: bool, b: bool) -> f64 {
        self.probs[usize::from(a)][usize::from(b)]
    }

    /// `Pr(X = 1)`.
    pub fn x_one_prob(&self) -> f64 {
        self.probs[1][0] + self.probs[1][1]
    }

    /// `Pr(Y = 1)`.
    pub fn y_one_prob(&self) -> f64 {
        self.probs[0][1] + self.probs[1][1]
    }

    /// `H(X, Y)` in bits.
    pub fn joint_entropy(&self) -> f64 {
        self.probs
            .iter()
            .flatten()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.log2())
            .sum()
    }

    /// Joint typicality of `(x, y)`: both marginals typical and the pair's
    /// normalized log-probability within `xi` of `H(X, Y)`.
    pub fn is_jointly_typical(&self, x: &BitVector, y: &BitVector, xi: f64) -> bool {
        assert_eq!(x.len(), y.len(), "joint typicality needs equal lengths");
        if !marginal_typical(y, self.y_one_prob(), xi) || !marginal_typical(x, self.x_one_prob(), xi) {
            return false;
        }
        let counts = joint_type(x, y);
        let mut log_prob = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                if counts[a][b] > 0 {
                    let p = self.probs[a][b];
                    if p == 0.0 {
                        return false;
                    }
                    log_prob += counts[a][b] as f64 * p.log2();
                }
            }
        }
        let n = x.len() as f64;
        (-log_prob / n - self.joint_entropy()).abs() <= xi + TYPICALITY_TOLERANCE
    }
}

/// Marginal typicality that also handles degenerate marginals: a constant
/// source only admits its single sequence.
fn marginal_typical(x: &BitVector, alpha: f64, xi: f64) -> bool {
    if alpha <= 0.0 {
        x.weight() == 0
    } else if alpha >= 1.0 {
        x.weight() == x.len()
    } else {
        is_typical(x, alpha, xi)
    }
}

/// Whether `x` is `X1|X3`-typical with respect to `y` under Model 4.
pub fn is_cond_typical(x: &BitVector, y: &BitVector, model4: &Model4Params, xi: f64) -> bool {
    model4.x1_x3_pmf().is_jointly_typical(x, y, xi)
}
