//! Key extraction: standard-array column keys and regular-subset keys.
//!
//! A regular subset is a block of exactly `M` typical sequences of one type
//! (or one joint type with a conditioning sequence) inside one coset. All of
//! its members are equiprobable, so the position inside the block is a
//! uniform key even given the coset, i.e. given the published syndrome.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::bits::BitVector;
use crate::code::LinearCode;
use crate::source::{self, joint_type, BinaryJointPmf, Model2Params, Model4Params, SourceModel};
use crate::{Error, Result};

/// Largest block length for which a regular-subset table is built.
pub const MAX_TABLE_LENGTH: usize = 20;
/// Largest code dimension `n - m` for which a regular-subset table is built.
pub const MAX_TABLE_DIMENSION: usize = 16;

/// Slack used when flooring `2^{n(I - eps')}` so that exact powers of two are
/// not lost to rounding.
const FLOOR_SLACK: f64 = 1e-9;

/// Number of key values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeyRange {
    size: u64,
    n: usize,
    exponent: f64,
    clamped: bool,
}

impl KeyRange {
    /// A key range of exactly `2^bits` values (standard-array keys).
    pub fn power_of_two(n: usize, bits: usize) -> Self {
        Self {
            size: 1u64 << bits,
            n,
            exponent: bits as f64,
            clamped: false,
        }
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    /// `(1/n) log2 M`.
    pub fn nominal_rate(&self) -> f64 {
        (self.size as f64).log2() / self.n as f64
    }

    /// The unrounded exponent `n (I - eps')`.
    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    /// Set when the exponent was at most one and `M` was forced to 2.
    pub fn clamped(&self) -> bool {
        self.clamped
    }
}

/// `M = floor(2^{n (info_rate - eps_prime)})`, at least 2.
pub fn key_range(n: usize, info_rate: f64, eps_prime: f64) -> Result<KeyRange> {
    let exponent = n as f64 * (info_rate - eps_prime);
    if !(exponent > 0.0) {
        return Err(Error::NoKey(format!(
            "n={n}, info rate {info_rate}, eps'={eps_prime} gives a nonpositive key exponent {exponent}"
        )));
    }
    if exponent >= 63.0 {
        return Err(Error::cap("key range", format!("exponent {exponent} >= 63")));
    }
    let raw = (exponent.exp2() + FLOOR_SLACK).floor() as u64;
    Ok(KeyRange {
        size: raw.max(2),
        n,
        exponent,
        clamped: exponent <= 1.0,
    })
}

/// How a key value was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    /// Read from the sequence (standard-array column or regular-subset index).
    Indexed,
    /// Drawn uniformly because the sequence is not in any regular subset.
    Fallback,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct KeyValue {
    pub value: u64,
    pub provenance: Provenance,
}

impl KeyValue {
    pub fn indexed(value: u64) -> Self {
        Self {
            value,
            provenance: Provenance::Indexed,
        }
    }
}

/// Key of a sequence: its standard-array column.
pub fn extract_key_standard_array(code: &LinearCode, x: &BitVector) -> Result<KeyValue> {
    Ok(KeyValue::indexed(code.standard_array_index(x)?.column))
}

/// Typicality constants for regular-subset extraction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtractionParams {
    /// Typicality constant.
    pub xi: f64,
    /// Rate back-off: `M = 2^{n (I - eps_prime)}`.
    pub eps_prime: f64,
    /// Target reliability/secrecy/uniformity slack.
    pub epsilon: f64,
}

impl ExtractionParams {
    pub const DEFAULT_XI: f64 = 0.05;
    pub const DEFAULT_EPSILON: f64 = 0.01;
    /// Margin added above the smallest admissible `eps_prime` when none is given.
    pub const DEFAULT_EPS_PRIME_MARGIN: f64 = 0.05;

    /// Defaults for a model: `eps_prime` is set just above its lower bound.
    pub fn defaults_for(model: &SourceModel) -> Self {
        let xi = Self::DEFAULT_XI;
        let epsilon = Self::DEFAULT_EPSILON;
        Self {
            xi,
            epsilon,
            eps_prime: Self::min_eps_prime(model, xi, epsilon) + Self::DEFAULT_EPS_PRIME_MARGIN,
        }
    }

    /// Lower bound on `eps_prime`: `xi + epsilon` (Model 2), `2 xi + epsilon`
    /// (Model 4), zero otherwise.
    pub fn min_eps_prime(model: &SourceModel, xi: f64, epsilon: f64) -> f64 {
        match model {
            SourceModel::Model2(_) => xi + epsilon,
            SourceModel::Model4(_) => 2.0 * xi + epsilon,
            _ => 0.0,
        }
    }

    pub fn validate_for(&self, model: &SourceModel) -> Result<()> {
        if !(self.xi >= 0.0) || !(self.epsilon > 0.0) || !self.eps_prime.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "need xi >= 0 and epsilon > 0, got xi={}, epsilon={}",
                self.xi, self.epsilon
            )));
        }
        let bound = Self::min_eps_prime(model, self.xi, self.epsilon);
        match model {
            SourceModel::Model2(_) if self.eps_prime <= bound => Err(Error::InvalidParameter(format!(
                "model2 requires eps' > xi + epsilon: eps'={} <= {} + {}",
                self.eps_prime, self.xi, self.epsilon
            ))),
            SourceModel::Model4(_) if self.eps_prime <= bound => Err(Error::InvalidParameter(format!(
                "model4 requires eps' > 2 xi + epsilon: eps'={} <= 2*{} + {}",
                self.eps_prime, self.xi, self.epsilon
            ))),
            _ => Ok(()),
        }
    }
}

/// Which sequences are typical and how they are grouped into types.
#[derive(Clone, Debug, PartialEq)]
pub enum TypeRule {
    /// i.i.d. Bernoulli(alpha) source; type = weight.
    Marginal { alpha: f64, xi: f64 },
    /// Conditional typicality with respect to `context`; type = joint type
    /// `(ones of x where context is 0, ones of x where context is 1)`.
    Conditional {
        pair: BinaryJointPmf,
        context: BitVector,
        xi: f64,
    },
}

impl TypeRule {
    /// Type key of `x`: its weight, or its joint type with the context.
    pub fn type_of(&self, x: &BitVector) -> (usize, usize) {
        match self {
            TypeRule::Marginal { .. } => (x.weight(), 0),
            TypeRule::Conditional { context, .. } => {
                let c = joint_type(x, context);
                (c[1][0], c[1][1])
            }
        }
    }

    /// Validates the conditioning sequence length; returns it if present.
    fn check(&self, n: usize) -> Result<Option<BitVector>> {
        match self {
            TypeRule::Marginal { .. } => Ok(None),
            TypeRule::Conditional { context, .. } => {
                context.check_len(n, "conditioning sequence")?;
                Ok(Some(context.clone()))
            }
        }
    }

    pub fn is_typical(&self, x: &BitVector) -> bool {
        match self {
            TypeRule::Marginal { alpha, xi } => source::is_typical(x, *alpha, *xi),
            TypeRule::Conditional { pair, context, xi } => pair.is_jointly_typical(x, context, *xi),
        }
    }
}

/// Where a sequence sits in a regular-subset table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Membership {
    Atypical,
    /// Typical, but left over after cutting its type group into blocks.
    Unassigned,
    Assigned { coset: u32, subset: u32, index: u32 },
}

/// Regular subsets of a single coset. Enough to key one protocol run, since
/// both the sender's sequence and the receiver's reconstruction lie in the
/// published coset.
#[derive(Clone, Debug)]
pub struct CosetPartition {
    coset: u64,
    n: usize,
    key_range: KeyRange,
    subsets: Vec<Vec<u64>>,
    leftover: Vec<u64>,
    lookup: HashMap<u64, (u32, u32)>,
}

impl CosetPartition {
    pub fn build(code: &LinearCode, rule: &TypeRule, key_range: KeyRange, coset: u64) -> Result<Self> {
        if code.k() > MAX_TABLE_DIMENSION || code.n() > 64 {
            return Err(Error::cap(
                "regular-subset partition",
                format!("n={}, n-m={} (limits n <= 64, n-m <= {MAX_TABLE_DIMENSION})", code.n(), code.k()),
            ));
        }
        if coset >= code.num_cosets() {
            return Err(Error::InvalidInput(format!("coset {coset} out of range")));
        }
        rule.check(code.n())?;
        Ok(Self::build_with(code, rule, key_range, coset, &mut BTreeMap::new()))
    }

    fn build_with(
        code: &LinearCode,
        rule: &TypeRule,
        key_range: KeyRange,
        coset: u64,
        memo: &mut BTreeMap<(usize, usize), bool>,
    ) -> Self {
        let n = code.n();
        let k = code.k();
        let gen_words: Vec<u64> = code.generator().rows().iter().map(BitVector::to_u64).collect();
        let leader = code.leader_by_index(coset).to_u64();
        let block = key_range.size() as usize;

        let mut groups: BTreeMap<(usize, usize), Vec<u64>> = BTreeMap::new();
        // walk the coset in Gray-code order
        let mut word = leader;
        for u in 0..1u64 << k {
            if u > 0 {
                let t = u.trailing_zeros() as usize;
                word ^= gen_words[k - 1 - t];
            }
            let x = BitVector::from_u64(word, n);
            let ty = rule.type_of(&x);
            // typicality depends on the (joint) type only
            if *memo.entry(ty).or_insert_with(|| rule.is_typical(&x)) {
                groups.entry(ty).or_default().push(word);
            }
        }

        let mut subsets = Vec::new();
        let mut leftover = Vec::new();
        let mut lookup = HashMap::new();
        for (_, mut members) in groups {
            members.sort_unstable();
            let full = members.len() / block * block;
            for chunk in members[..full].chunks_exact(block) {
                let subset = subsets.len() as u32;
                for (index, &w) in chunk.iter().enumerate() {
                    lookup.insert(w, (subset, index as u32));
                }
                subsets.push(chunk.to_vec());
            }
            leftover.extend_from_slice(&members[full..]);
        }
        leftover.sort_unstable();
        Self {
            coset,
            n,
            key_range,
            subsets,
            leftover,
            lookup,
        }
    }

    pub fn coset(&self) -> u64 {
        self.coset
    }

    pub fn key_range(&self) -> KeyRange {
        self.key_range
    }

    pub fn num_subsets(&self) -> usize {
        self.subsets.len()
    }

    /// Membership of `x`; sequences outside this coset are reported as an error.
    pub fn membership(&self, code: &LinearCode, x: &BitVector) -> Result<Membership> {
        x.check_len(self.n, "sequence")?;
        if code.syndrome_index(x)? != self.coset {
            return Err(Error::InvalidInput(format!("sequence {x} is not in coset {}", self.coset)));
        }
        let w = x.to_u64();
        Ok(match self.lookup.get(&w) {
            Some(&(subset, index)) => Membership::Assigned {
                coset: self.coset as u32,
                subset,
                index,
            },
            None if self.leftover.binary_search(&w).is_ok() => Membership::Unassigned,
            None => Membership::Atypical,
        })
    }

    /// Key of `x` as in [`extract_key_regular`].
    pub fn extract_key<R: Rng + ?Sized>(
        &self,
        code: &LinearCode,
        x: &BitVector,
        local_rng: &mut R,
    ) -> Result<KeyValue> {
        Ok(membership_key(self.membership(code, x)?, self.key_range, local_rng))
    }
}

fn membership_key<R: Rng + ?Sized>(m: Membership, range: KeyRange, local_rng: &mut R) -> KeyValue {
    match m {
        Membership::Assigned { index, .. } => KeyValue::indexed(u64::from(index)),
        Membership::Atypical | Membership::Unassigned => KeyValue {
            value: local_rng.gen_range(0..range.size()),
            provenance: Provenance::Fallback,
        },
    }
}

/// Partition of typical sequences of each coset into regular subsets.
#[derive(Clone, Debug)]
pub struct RegularSubsetTable {
    n: usize,
    key_range: KeyRange,
    context: Option<BitVector>,
    /// `subsets[i][j]` lists the members of subset `j` of coset `i`, as integers.
    subsets: Vec<Vec<Vec<u64>>>,
    membership: Vec<Membership>,
}

impl RegularSubsetTable {
    /// Builds the table for an arbitrary type rule.
    ///
    /// Within each coset, typical members are grouped by type (types in
    /// ascending order), each group is sorted lexicographically and cut into
    /// consecutive blocks of exactly `M`; the remainder is left unassigned.
    pub fn build(code: &LinearCode, rule: &TypeRule, key_range: KeyRange) -> Result<Self> {
        let n = code.n();
        if n > MAX_TABLE_LENGTH || code.k() > MAX_TABLE_DIMENSION {
            return Err(Error::cap(
                "regular-subset table",
                format!(
                    "n={n}, n-m={} (limits n <= {MAX_TABLE_LENGTH}, n-m <= {MAX_TABLE_DIMENSION})",
                    code.k()
                ),
            ));
        }
        let context = rule.check(n)?;
        let mut membership = vec![Membership::Atypical; 1usize << n];
        let mut memo = BTreeMap::new();
        let mut subsets = Vec::with_capacity(code.num_cosets() as usize);

        for coset in 0..code.num_cosets() {
            let part = CosetPartition::build_with(code, rule, key_range, coset, &mut memo);
            for &w in &part.leftover {
                membership[w as usize] = Membership::Unassigned;
            }
            for (&w, &(subset, index)) in &part.lookup {
                membership[w as usize] = Membership::Assigned {
                    coset: coset as u32,
                    subset,
                    index,
                };
            }
            subsets.push(part.subsets);
        }

        Ok(Self {
            n,
            key_range,
            context,
            subsets,
            membership,
        })
    }

    /// Table for Model 2: `X1`-typical sequences grouped by weight.
    pub fn for_model2(code: &LinearCode, params: &Model2Params, ext: &ExtractionParams) -> Result<Self> {
        let model = SourceModel::Model2(*params);
        ext.validate_for(&model)?;
        let range = key_range(code.n(), source::capacity(&model), ext.eps_prime)?;
        let rule = TypeRule::Marginal {
            alpha: params.x1_one_prob(),
            xi: ext.xi,
        };
        Self::build(code, &rule, range)
    }

    /// Table for Model 4 given the revealed helper sequence `x3`.
    pub fn for_model4(
        code: &LinearCode,
        params: &Model4Params,
        ext: &ExtractionParams,
        x3: &BitVector,
    ) -> Result<Self> {
        let model = SourceModel::Model4(*params);
        ext.validate_for(&model)?;
        let range = key_range(code.n(), source::capacity(&model), ext.eps_prime)?;
        let rule = TypeRule::Conditional {
            pair: params.x1_x3_pmf(),
            context: x3.clone(),
            xi: ext.xi,
        };
        Self::build(code, &rule, range)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn key_range(&self) -> KeyRange {
        self.key_range
    }

    pub fn context(&self) -> Option<&BitVector> {
        self.context.as_ref()
    }

    pub fn num_cosets(&self) -> usize {
        self.subsets.len()
    }

    /// `N_i`: number of regular subsets in coset `i`.
    pub fn subsets_in_coset(&self, coset: usize) -> usize {
        self.subsets[coset].len()
    }

    /// Members of subset `j` of coset `i`, in key order.
    pub fn subset(&self, coset: usize, subset: usize) -> impl Iterator<Item = BitVector> + '_ {
        self.subsets[coset][subset]
            .iter()
            .map(move |&w| BitVector::from_u64(w, self.n))
    }

    /// `b_{i,j,k}`.
    pub fn member(&self, coset: usize, subset: usize, index: usize) -> BitVector {
        BitVector::from_u64(self.subsets[coset][subset][index], self.n)
    }

    pub fn membership(&self, x: &BitVector) -> Result<Membership> {
        x.check_len(self.n, "sequence")?;
        Ok(self.membership[x.to_u64() as usize])
    }

    pub(crate) fn membership_word(&self, word: u64) -> Membership {
        self.membership[word as usize]
    }

    /// Total number of sequences inside regular subsets.
    pub fn assigned_count(&self) -> usize {
        self.subsets.iter().flatten().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.iter().all(Vec::is_empty)
    }
}

/// Counts from a successful table audit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AuditSummary {
    pub subsets: usize,
    pub assigned: usize,
    pub typical: usize,
}

/// Brute-force audit over `{0,1}^n`: subsets are disjoint, have exactly `M`
/// members of one type, contain only typical members of their coset, and the
/// membership index agrees with the subset lists.
pub fn audit_regular_subsets(
    code: &LinearCode,
    table: &RegularSubsetTable,
    rule: &TypeRule,
) -> std::result::Result<AuditSummary, String> {
    let n = code.n();
    let block = table.key_range().size() as usize;
    let mut seen = vec![false; 1 << n];
    let mut subsets = 0;
    for i in 0..table.num_cosets() {
        for j in 0..table.subsets_in_coset(i) {
            subsets += 1;
            let members: Vec<BitVector> = table.subset(i, j).collect();
            if members.len() != block {
                return Err(format!("subset ({i},{j}) has {} members, expected {block}", members.len()));
            }
            let ty = rule.type_of(&members[0]);
            for (k, x) in members.iter().enumerate() {
                let w = x.to_u64() as usize;
                if std::mem::replace(&mut seen[w], true) {
                    return Err(format!("{x} appears in two subsets"));
                }
                if rule.type_of(x) != ty {
                    return Err(format!("subset ({i},{j}) mixes types"));
                }
                if !rule.is_typical(x) {
                    return Err(format!("{x} in subset ({i},{j}) is not typical"));
                }
                if code.syndrome_index(x).map_err(|e| e.to_string())? != i as u64 {
                    return Err(format!("{x} is not in coset {i}"));
                }
                let expected = Membership::Assigned {
                    coset: i as u32,
                    subset: j as u32,
                    index: k as u32,
                };
                if table.membership(x).map_err(|e| e.to_string())? != expected {
                    return Err(format!("membership of {x} disagrees with subset ({i},{j})"));
                }
            }
        }
    }
    let mut typical = 0;
    for w in 0..1u64 << n {
        let x = BitVector::from_u64(w, n);
        let is_typical = rule.is_typical(&x);
        typical += usize::from(is_typical);
        let ok = match table.membership(&x).map_err(|e| e.to_string())? {
            Membership::Atypical => !is_typical,
            Membership::Unassigned => is_typical && !seen[w as usize],
            Membership::Assigned { .. } => seen[w as usize],
        };
        if !ok {
            return Err(format!("membership of {x} is inconsistent"));
        }
    }
    Ok(AuditSummary {
        subsets,
        assigned: seen.iter().filter(|&&b| b).count(),
        typical,
    })
}

/// Builds the regular-subset table for Model 2, or for Model 4 given `x3`.
pub fn build_regular_subsets(
    code: &LinearCode,
    model: &SourceModel,
    ext: &ExtractionParams,
    x3: Option<&BitVector>,
) -> Result<RegularSubsetTable> {
    match (model, x3) {
        (SourceModel::Model2(p), _) => RegularSubsetTable::for_model2(code, p, ext),
        (SourceModel::Model4(p), Some(x3)) => RegularSubsetTable::for_model4(code, p, ext, x3),
        (SourceModel::Model4(_), None) => Err(Error::InvalidInput(
            "model4 tables need the helper sequence x3".to_string(),
        )),
        (other, _) => Err(Error::InvalidInput(format!(
            "{} uses standard-array keys, not regular subsets",
            other.name()
        ))),
    }
}

/// Key of a sequence: its index within its regular subset, or a uniform draw
/// from `local_rng` when it is in none.
pub fn extract_key_regular<R: Rng + ?Sized>(
    table: &RegularSubsetTable,
    x: &BitVector,
    local_rng: &mut R,
) -> Result<KeyValue> {
    Ok(membership_key(table.membership(x)?, table.key_range(), local_rng))
}
