//! End-to-end key agreement for the four source models.
//!
//! Each run is one-shot: public messages are broadcast in a fixed order, every
//! terminal reconstructs the target sequence from its own observation and the
//! transcript, and reads its key off the shared standard array or
//! regular-subset table.

use std::fmt;

use rand::Rng;

use crate::bits::BitVector;
use crate::code::LinearCode;
use crate::keys::{
    self, CosetPartition, ExtractionParams, KeyRange, KeyValue, Membership, Provenance, RegularSubsetTable,
    TypeRule,
};
use crate::seed::{stream_rng, Stream};
use crate::source::{self, Model1Params, Model2Params, Model3Params, Model4Params, SequenceTuple, SourceModel};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MessageKind {
    Syndrome,
    RevealedObservation,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Syndrome => "syndrome",
            MessageKind::RevealedObservation => "revealed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Message {
    /// Sending terminal, 1-based.
    pub terminal: usize,
    pub kind: MessageKind,
    pub payload: BitVector,
}

/// The public transcript `F`: all broadcasts, in order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Transcript {
    n: usize,
    m: usize,
    messages: Vec<Message>,
}

impl Transcript {
    pub fn new(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            messages: Vec::new(),
        }
    }

    /// Appends a message; syndromes must have length `m`, revealed
    /// observations length `n`.
    pub fn push(&mut self, terminal: usize, kind: MessageKind, payload: BitVector) -> Result<()> {
        let expected = match kind {
            MessageKind::Syndrome => self.m,
            MessageKind::RevealedObservation => self.n,
        };
        payload.check_len(expected, kind.as_str())?;
        self.messages.push(Message {
            terminal,
            kind,
            payload,
        });
        Ok(())
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Syndrome sent by `terminal`, if any.
    pub fn syndrome_of(&self, terminal: usize) -> Option<&BitVector> {
        self.messages
            .iter()
            .find(|msg| msg.terminal == terminal && msg.kind == MessageKind::Syndrome)
            .map(|msg| &msg.payload)
    }
}

impl fmt::Display for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, msg) in self.messages.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "T{} {} {}", msg.terminal, msg.kind.as_str(), msg.payload)?;
        }
        Ok(())
    }
}

/// Everything produced by one protocol run.
#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolOutcome {
    pub sources: SequenceTuple,
    pub transcript: Transcript,
    /// Per terminal (index `t - 1`); `None` for terminals that hold no key.
    pub keys: Vec<Option<KeyValue>>,
    /// Each terminal's estimate of the target sequence.
    pub reconstructions: Vec<Option<BitVector>>,
    /// Terminal whose observation is reconstructed everywhere.
    pub target: usize,
    pub key_range: KeyRange,
}

impl ProtocolOutcome {
    pub fn key(&self, terminal: usize) -> Option<KeyValue> {
        self.keys[terminal - 1]
    }

    /// All key-holding terminals agree.
    pub fn keys_agree(&self) -> bool {
        let mut held = self.keys.iter().flatten().map(|k| k.value);
        match held.next() {
            Some(first) => held.all(|v| v == first),
            None => true,
        }
    }

    /// Every reconstruction equals the target sequence.
    pub fn reconstruction_ok(&self) -> bool {
        let target = self.sources.terminal(self.target);
        self.reconstructions.iter().flatten().all(|x| x == target)
    }

    pub fn used_fallback(&self, terminal: usize) -> bool {
        matches!(self.key(terminal), Some(k) if k.provenance == Provenance::Fallback)
    }
}

/// How Model 2/4 keys are looked up.
#[derive(Clone, Debug)]
enum Keyer {
    StandardArray,
    /// Full Model 2 table, when small enough to precompute.
    Table(RegularSubsetTable),
    /// Regular subsets of the published coset only, built per run.
    PerCoset,
}

/// A protocol prepared for one code, model and extraction setting.
#[derive(Clone, Debug)]
pub struct Protocol<'a> {
    code: &'a LinearCode,
    model: SourceModel,
    ext: ExtractionParams,
    key_range: KeyRange,
    keyer: Keyer,
}

impl<'a> Protocol<'a> {
    pub fn new(code: &'a LinearCode, model: &SourceModel, ext: &ExtractionParams) -> Result<Self> {
        let n = code.n();
        let (key_range, keyer) = match model {
            SourceModel::Model1(_) | SourceModel::Model3(_) => {
                if code.k() > 63 {
                    return Err(Error::cap("standard-array key", format!("n-m={} > 63", code.k())));
                }
                (KeyRange::power_of_two(n, code.k()), Keyer::StandardArray)
            }
            SourceModel::Model2(params) => {
                ext.validate_for(model)?;
                let range = keys::key_range(n, source::capacity(model), ext.eps_prime)?;
                let keyer = if n <= keys::MAX_TABLE_LENGTH && code.k() <= keys::MAX_TABLE_DIMENSION {
                    Keyer::Table(RegularSubsetTable::for_model2(code, params, ext)?)
                } else {
                    Keyer::PerCoset
                };
                (range, keyer)
            }
            SourceModel::Model4(_) => {
                ext.validate_for(model)?;
                let range = keys::key_range(n, source::capacity(model), ext.eps_prime)?;
                (range, Keyer::PerCoset)
            }
        };
        if matches!(keyer, Keyer::PerCoset) && (code.k() > keys::MAX_TABLE_DIMENSION || n > 64) {
            return Err(Error::cap(
                "regular-subset partition",
                format!("n={n}, n-m={} (limits n <= 64, n-m <= {})", code.k(), keys::MAX_TABLE_DIMENSION),
            ));
        }
        Ok(Self {
            code,
            model: model.clone(),
            ext: *ext,
            key_range,
            keyer,
        })
    }

    pub fn code(&self) -> &LinearCode {
        self.code
    }

    pub fn model(&self) -> &SourceModel {
        &self.model
    }

    pub fn key_range(&self) -> KeyRange {
        self.key_range
    }

    /// The precomputed Model 2 table, if any.
    pub fn table(&self) -> Option<&RegularSubsetTable> {
        match &self.keyer {
            Keyer::Table(t) => Some(t),
            _ => None,
        }
    }

    /// Samples the sources from `rng`, then runs with terminal-local
    /// randomness derived from the next output of `rng`.
    pub fn run<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ProtocolOutcome> {
        let sources = source::sample(&self.model, self.code.n(), rng)?;
        let local_seed = rng.next_u64();
        self.run_on(sources, local_seed)
    }

    /// Runs on given observations. `local_seed` seeds the fallback stream of
    /// each terminal.
    pub fn run_on(&self, sources: SequenceTuple, local_seed: u64) -> Result<ProtocolOutcome> {
        if sources.terminals() != self.model.terminals() {
            return Err(Error::InvalidInput(format!(
                "{} needs {} sequences, got {}",
                self.model.name(),
                self.model.terminals(),
                sources.terminals()
            )));
        }
        sources.terminal(1).check_len(self.code.n(), "observation")?;
        match &self.model {
            SourceModel::Model1(_) => self.run_standard(sources, 1),
            SourceModel::Model3(params) => {
                let j = source::worst_link(params);
                self.run_standard(sources, j)
            }
            SourceModel::Model2(_) | SourceModel::Model4(_) => self.run_regular(sources, local_seed),
        }
    }

    /// Models 1 and 3: terminals `1..d-1` publish syndromes, everyone chains
    /// ML estimates towards `x_target`, keys are standard-array columns.
    fn run_standard(&self, sources: SequenceTuple, target: usize) -> Result<ProtocolOutcome> {
        let code = self.code;
        let d = sources.terminals();
        let mut transcript = Transcript::new(code.n(), code.m());
        for t in 1..d {
            transcript.push(t, MessageKind::Syndrome, code.syndrome(sources.terminal(t))?)?;
        }
        let syndrome = |t: usize| transcript.syndrome_of(t).expect("terminal published its syndrome");

        let mut keys = Vec::with_capacity(d);
        let mut reconstructions = Vec::with_capacity(d);
        for i in 1..=d {
            let mut est = sources.terminal(i).clone();
            if i < target {
                for l in i + 1..=target {
                    est = code.ml_reconstruct(syndrome(l), &est)?;
                }
            } else {
                for l in (target..i).rev() {
                    est = code.ml_reconstruct(syndrome(l), &est)?;
                }
            }
            keys.push(Some(keys::extract_key_standard_array(code, &est)?));
            reconstructions.push(Some(est));
        }
        Ok(ProtocolOutcome {
            sources,
            transcript,
            keys,
            reconstructions,
            target,
            key_range: self.key_range,
        })
    }

    /// Models 2 and 4: terminal 1 publishes its syndrome (after terminal 3
    /// reveals `x3` in Model 4); terminal 2 reconstructs `x1` and both index
    /// into regular subsets.
    fn run_regular(&self, sources: SequenceTuple, local_seed: u64) -> Result<ProtocolOutcome> {
        let code = self.code;
        let x1 = sources.terminal(1);
        let mut transcript = Transcript::new(code.n(), code.m());
        let (side_info, rule) = match &self.model {
            SourceModel::Model4(params) => {
                let x3 = sources.terminal(3);
                transcript.push(3, MessageKind::RevealedObservation, x3.clone())?;
                let rule = TypeRule::Conditional {
                    pair: params.x1_x3_pmf(),
                    context: x3.clone(),
                    xi: self.ext.xi,
                };
                (sources.terminal(2) ^ x3, rule)
            }
            SourceModel::Model2(params) => {
                let rule = TypeRule::Marginal {
                    alpha: params.x1_one_prob(),
                    xi: self.ext.xi,
                };
                (sources.terminal(2).clone(), rule)
            }
            _ => unreachable!("standard-array models are handled by run_standard"),
        };
        let s = code.syndrome(x1)?;
        transcript.push(1, MessageKind::Syndrome, s.clone())?;
        let x_hat = code.ml_reconstruct(&s, &side_info)?;

        let membership = |x: &BitVector, part: &Option<CosetPartition>| -> Result<Membership> {
            match (&self.keyer, part) {
                (Keyer::Table(table), _) => table.membership(x),
                (_, Some(part)) => part.membership(code, x),
                _ => unreachable!("per-coset keyer always builds a partition"),
            }
        };
        let part = match self.keyer {
            Keyer::PerCoset => Some(CosetPartition::build(code, &rule, self.key_range, s.to_u64())?),
            _ => None,
        };
        let range = self.key_range;
        let key_for = |t: usize, x: &BitVector| -> Result<KeyValue> {
            let m = membership(x, &part)?;
            Ok(match m {
                Membership::Assigned { index, .. } => KeyValue::indexed(u64::from(index)),
                Membership::Atypical | Membership::Unassigned => KeyValue {
                    value: stream_rng(local_seed, Stream::Terminal(t)).gen_range(0..range.size()),
                    provenance: Provenance::Fallback,
                },
            })
        };
        let k1 = key_for(1, x1)?;
        let k2 = key_for(2, &x_hat)?;

        let mut keys = vec![Some(k1), Some(k2)];
        let mut reconstructions = vec![Some(x1.clone()), Some(x_hat)];
        if sources.terminals() == 3 {
            // the helper only reveals; it extracts nothing
            keys.push(None);
            reconstructions.push(None);
        }
        Ok(ProtocolOutcome {
            sources,
            transcript,
            keys,
            reconstructions,
            target: 1,
            key_range: range,
        })
    }
}

pub fn run_model1<R: Rng + ?Sized>(code: &LinearCode, params: Model1Params, rng: &mut R) -> Result<ProtocolOutcome> {
    Protocol::new(code, &SourceModel::Model1(params), &ExtractionParams::defaults_for(&SourceModel::Model1(params)))?
        .run(rng)
}

pub fn run_model2<R: Rng + ?Sized>(
    code: &LinearCode,
    params: Model2Params,
    ext: &ExtractionParams,
    rng: &mut R,
) -> Result<ProtocolOutcome> {
    Protocol::new(code, &SourceModel::Model2(params), ext)?.run(rng)
}

pub fn run_model3<R: Rng + ?Sized>(code: &LinearCode, params: Model3Params, rng: &mut R) -> Result<ProtocolOutcome> {
    let model = SourceModel::Model3(params);
    Protocol::new(code, &model, &ExtractionParams::defaults_for(&model))?.run(rng)
}

pub fn run_model4<R: Rng + ?Sized>(
    code: &LinearCode,
    params: Model4Params,
    ext: &ExtractionParams,
    rng: &mut R,
) -> Result<ProtocolOutcome> {
    Protocol::new(code, &SourceModel::Model4(params), ext)?.run(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m1(p: f64) -> SourceModel {
        SourceModel::Model1(Model1Params::new(p).unwrap())
    }

    fn m3(p: &[f64]) -> SourceModel {
        SourceModel::Model3(Model3Params::new(p.to_vec()).unwrap())
    }

    fn tuple(seqs: &[&BitVector]) -> SequenceTuple {
        SequenceTuple::new(seqs.iter().map(|s| (*s).clone()).collect()).unwrap()
    }

    fn word(v: u64, n: usize) -> BitVector {
        BitVector::from_u64(v, n)
    }

    /// `f_P(P v) == v`: the noise is its coset leader.
    fn decodes(code: &LinearCode, v: &BitVector) -> bool {
        code.coset_leader(&code.syndrome(v).unwrap()).unwrap() == *v
    }

    #[test]
    fn model1_transcript_shape() {
        let code = LinearCode::hamming(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = run_model1(&code, Model1Params::new(0.1).unwrap(), &mut rng).unwrap();
        assert_eq!(out.transcript.len(), 1);
        let msg = &out.transcript.messages()[0];
        assert_eq!((msg.terminal, msg.kind), (1, MessageKind::Syndrome));
        assert_eq!(msg.payload, code.syndrome(out.sources.terminal(1)).unwrap());
        assert_eq!(out.key_range.size(), 16);
    }

    #[test]
    fn model1_zero_noise_agrees() {
        let code = LinearCode::hamming(3).unwrap();
        let proto = Protocol::new(&code, &m1(0.1), &ExtractionParams::defaults_for(&m1(0.1))).unwrap();
        for x in 0..128 {
            let x = word(x, 7);
            let out = proto.run_on(tuple(&[&x, &x]), 0).unwrap();
            assert!(out.keys_agree() && out.reconstruction_ok());
        }
    }

    #[test]
    fn model1_mismatch_iff_decoding_failure() {
        let code = LinearCode::hamming(3).unwrap();
        let proto = Protocol::new(&code, &m1(0.1), &ExtractionParams::defaults_for(&m1(0.1))).unwrap();
        for x1 in 0..128 {
            let x1 = word(x1, 7);
            for v in 0..128 {
                let v = word(v, 7);
                let out = proto.run_on(tuple(&[&x1, &(&x1 ^ &v)]), 0).unwrap();
                assert_eq!(!out.keys_agree(), !decodes(&code, &v));
                assert_eq!(out.reconstruction_ok(), decodes(&code, &v));
                if v.weight() <= 1 {
                    assert!(out.keys_agree());
                }
            }
        }
    }

    #[test]
    fn model3_with_two_terminals_is_model1() {
        for code in [LinearCode::hamming(3).unwrap(), LinearCode::repetition(5).unwrap()] {
            let n = code.n();
            let ext = ExtractionParams::defaults_for(&m1(0.1));
            let a = Protocol::new(&code, &m1(0.1), &ext).unwrap();
            let b = Protocol::new(&code, &m3(&[0.1]), &ext).unwrap();
            for x1 in 0..1u64 << n {
                for x2 in 0..1u64 << n {
                    let t = tuple(&[&word(x1, n), &word(x2, n)]);
                    assert_eq!(a.run_on(t.clone(), 9).unwrap(), b.run_on(t, 9).unwrap());
                }
            }
        }
    }

    #[test]
    fn model3_zero_noise_and_chain_events() {
        let code = LinearCode::hamming(3).unwrap();
        let model = m3(&[0.03, 0.05]);
        let proto = Protocol::new(&code, &model, &ExtractionParams::defaults_for(&model)).unwrap();
        for x1 in [0u64, 0b1011001, 0b1111111] {
            let x1 = word(x1, 7);
            for v1 in 0..128 {
                let v1 = word(v1, 7);
                for v2 in 0..128 {
                    let v2 = word(v2, 7);
                    let x2 = &x1 ^ &v1;
                    let x3 = &x2 ^ &v2;
                    let out = proto.run_on(tuple(&[&x1, &x2, &x3]), 0).unwrap();
                    assert_eq!(out.target, 2);
                    assert_eq!(out.transcript.len(), 2);
                    assert_eq!(out.reconstruction_ok(), decodes(&code, &v1) && decodes(&code, &v2));
                    if out.reconstruction_ok() {
                        assert!(out.keys_agree());
                    }
                    if v1.weight() + v2.weight() == 0 {
                        assert!(out.keys_agree());
                    }
                }
            }
        }
    }

    #[test]
    fn model3_forward_chain_and_equal_links() {
        let code = LinearCode::hamming(3).unwrap();
        // worst link is the last one: terminals 1 and 2 chain forward to x3
        let model = m3(&[0.01, 0.02, 0.04]);
        let proto = Protocol::new(&code, &model, &ExtractionParams::defaults_for(&model)).unwrap();
        let x1 = word(0b0110101, 7);
        let x2 = &x1 ^ &word(0b0000100, 7);
        let x3 = &x2 ^ &word(0b0100000, 7);
        let x4 = &x3 ^ &word(0b0000001, 7);
        let out = proto.run_on(tuple(&[&x1, &x2, &x3, &x4]), 0).unwrap();
        assert_eq!(out.target, 3);
        assert_eq!(out.transcript.len(), 3);
        assert!(out.reconstruction_ok() && out.keys_agree());

        let equal = m3(&[0.05, 0.05, 0.05]);
        let proto = Protocol::new(&code, &equal, &ExtractionParams::defaults_for(&equal)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = proto.run(&mut rng).unwrap();
        assert_eq!(out.target, 1);
        let x1 = out.sources.terminal(1);
        if out.reconstruction_ok() {
            assert!(out.reconstructions.iter().flatten().all(|x| x == x1));
        }
    }

    fn model2_protocol<'a>(code: &'a LinearCode, q: f64, ext: &ExtractionParams) -> Protocol<'a> {
        let model = SourceModel::Model2(Model2Params::new(0.1, q).unwrap());
        Protocol::new(code, &model, ext).unwrap()
    }

    #[test]
    fn model2_agreement_on_success_exhaustive() {
        let code = LinearCode::hamming(3).unwrap();
        let ext = ExtractionParams { xi: 0.15, eps_prime: 0.2, epsilon: 0.01 };
        let proto = model2_protocol(&code, 0.3, &ext);
        let table = proto.table().unwrap();
        assert!(!table.is_empty());
        for x1 in 0..128 {
            let x1 = word(x1, 7);
            let assigned = matches!(table.membership(&x1).unwrap(), Membership::Assigned { .. });
            for v in 0..128 {
                let v = word(v, 7);
                let out = proto.run_on(tuple(&[&x1, &(&x1 ^ &v)]), 5).unwrap();
                assert_eq!(out.used_fallback(1), !assigned);
                if out.reconstruction_ok() && assigned {
                    assert!(out.keys_agree());
                    assert!(!out.used_fallback(2));
                }
            }
        }
    }

    #[test]
    fn model2_uniform_source_zero_noise() {
        let code = LinearCode::random_linear(10, 4, 1).unwrap();
        let ext = ExtractionParams { xi: 0.0, eps_prime: 0.3, epsilon: 0.01 };
        let proto = model2_protocol(&code, 0.5, &ext);
        let table = proto.table().unwrap();
        let mut checked = 0;
        for x in 0..1024 {
            let x = word(x, 10);
            if matches!(table.membership(&x).unwrap(), Membership::Assigned { .. }) {
                let out = proto.run_on(tuple(&[&x, &x]), 0).unwrap();
                assert!(out.keys_agree());
                assert_eq!(out.key(1).unwrap().provenance, Provenance::Indexed);
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn model2_double_fallback_agrees_one_in_m() {
        let code = LinearCode::hamming(3).unwrap();
        let ext = ExtractionParams { xi: 0.15, eps_prime: 0.2, epsilon: 0.01 };
        let proto = model2_protocol(&code, 0.3, &ext);
        let table = proto.table().unwrap();
        let x1 = (0..128)
            .map(|v| word(v, 7))
            .find(|x| !matches!(table.membership(x).unwrap(), Membership::Assigned { .. }))
            .unwrap();
        let m = proto.key_range().size() as f64;
        let trials = 20_000;
        let agree = (0..trials)
            .filter(|&seed| {
                let out = proto.run_on(tuple(&[&x1, &x1]), seed).unwrap();
                assert!(out.used_fallback(1) && out.used_fallback(2));
                out.keys_agree()
            })
            .count() as f64
            / trials as f64;
        let sd = ((1.0 / m) * (1.0 - 1.0 / m) / trials as f64).sqrt();
        assert!((agree - 1.0 / m).abs() < 4.0 * sd, "agreement {agree}, 1/M = {}", 1.0 / m);
    }

    #[test]
    fn model2_rejects_small_eps_prime() {
        let code = LinearCode::hamming(3).unwrap();
        let model = SourceModel::Model2(Model2Params::new(0.1, 0.3).unwrap());
        let ext = ExtractionParams { xi: 0.1, eps_prime: 0.1, epsilon: 0.01 };
        assert!(matches!(Protocol::new(&code, &model, &ext), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn model2_large_code_uses_per_coset_lookup() {
        let code = LinearCode::random_linear(24, 12, 3).unwrap();
        let ext = ExtractionParams { xi: 0.1, eps_prime: 0.15, epsilon: 0.01 };
        let proto = model2_protocol(&code, 0.3, &ext);
        assert!(proto.table().is_none());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = proto.run(&mut rng).unwrap();
        assert_eq!(out.keys.len(), 2);
    }

    fn model4_protocol(code: &LinearCode) -> Protocol<'_> {
        let model = SourceModel::Model4(Model4Params::new(0.1, 0.3).unwrap());
        let ext = ExtractionParams { xi: 0.1, eps_prime: 0.22, epsilon: 0.01 };
        Protocol::new(code, &model, &ext).unwrap()
    }

    #[test]
    fn model4_transcript_and_helper() {
        let code = LinearCode::hamming(3).unwrap();
        let proto = model4_protocol(&code);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let out = proto.run(&mut rng).unwrap();
        let msgs = out.transcript.messages();
        assert_eq!(msgs.len(), 2);
        assert_eq!((msgs[0].terminal, msgs[0].kind), (3, MessageKind::RevealedObservation));
        assert_eq!(&msgs[0].payload, out.sources.terminal(3));
        assert_eq!((msgs[1].terminal, msgs[1].kind), (1, MessageKind::Syndrome));
        assert!(out.key(3).is_none());
        assert!(out.reconstructions[2].is_none());
    }

    #[test]
    fn model4_mismatch_given_assignment() {
        let code = LinearCode::hamming(3).unwrap();
        let proto = model4_protocol(&code);
        let params = Model4Params::new(0.1, 0.3).unwrap();
        let ext = ExtractionParams { xi: 0.1, eps_prime: 0.22, epsilon: 0.01 };
        for (x3, w) in [(0b1100101u64, 0b0010000u64), (0, 0), (0b0101010, 0b1000001)] {
            let x3 = word(x3, 7);
            let table = RegularSubsetTable::for_model4(&code, &params, &ext, &x3).unwrap();
            let x2 = &x3 ^ &word(w, 7);
            for v in 0..128 {
                let v = word(v, 7);
                let x1 = &(&x2 ^ &x3) ^ &v;
                let out = proto.run_on(tuple(&[&x1, &x2, &x3]), 1).unwrap();
                assert_eq!(out.reconstruction_ok(), decodes(&code, &v));
                if v.weight() == 0 {
                    assert_eq!(out.reconstructions[1].as_ref(), Some(&x1));
                }
                let assigned = matches!(table.membership(&x1).unwrap(), Membership::Assigned { .. });
                // a failed reconstruction is another member of the same coset
                // and may still land on the same index
                if !out.keys_agree() {
                    assert!(!decodes(&code, &v) || !assigned);
                }
                if assigned && decodes(&code, &v) {
                    assert!(out.keys_agree());
                }
            }
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let code = LinearCode::hamming(3).unwrap();
        let proto = model4_protocol(&code);
        let a: Vec<_> = (0..20)
            .map(|s| proto.run(&mut ChaCha8Rng::seed_from_u64(s)).unwrap())
            .collect();
        let b: Vec<_> = (0..20)
            .map(|s| proto.run(&mut ChaCha8Rng::seed_from_u64(s)).unwrap())
            .collect();
        assert_eq!(a, b);
        assert_eq!(a[0].transcript.to_string(), b[0].transcript.to_string());
    }

    #[test]
    fn transcript_validates_lengths() {
        let mut t = Transcript::new(7, 3);
        assert!(t.push(1, MessageKind::Syndrome, word(0, 3)).is_ok());
        assert!(t.push(1, MessageKind::Syndrome, word(0, 7)).is_err());
        assert!(t.push(3, MessageKind::RevealedObservation, word(0, 7)).is_ok());
        assert_eq!(t.to_string(), "T1 syndrome 000; T3 revealed 0000000");
    }

    #[test]
    fn wrong_terminal_count_rejected() {
        let code = LinearCode::hamming(3).unwrap();
        let proto = Protocol::new(&code, &m1(0.1), &ExtractionParams::defaults_for(&m1(0.1))).unwrap();
        let x = word(0, 7);
        assert!(proto.run_on(tuple(&[&x, &x, &x]), 0).is_err());
    }
}
