//! Binary linear codes: the code catalog, syndromes, coset-leader decoding
//! and standard-array indexing.
//!
//! Conventions:
//!
//! * A syndrome `P x^T` is turned into an integer big-endian, parity row 0 in
//!   the most significant position. That integer is the coset (row) index of
//!   the standard array.
//! * The generator is systematic on the non-pivot columns of the reduced
//!   parity check ("information positions"); a codeword's message word is read
//!   there, first information position most significant. That integer is the
//!   column index of the standard array.
//! * Coset leaders are minimum weight; ties go to the lexicographically
//!   smallest vector.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bits::{BitMatrix, BitVector, Combinations};
use crate::{Error, Result};

/// Largest number of parity checks for which a coset-leader table is built.
pub const MAX_PARITY_CHECKS: usize = 24;
/// Largest block length for which `2^n` noise vectors are enumerated.
pub const MAX_ENUMERATION_LENGTH: usize = 24;
/// Largest Hamming code parameter accepted by the catalog.
pub const MAX_HAMMING_R: usize = 16;

/// Selects a code from the catalog.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CodeSpec {
    /// The `(2^r - 1, 2^r - 1 - r)` Hamming code.
    Hamming(usize),
    /// The `(n, 1)` repetition code, `n` odd.
    Repetition(usize),
    /// A uniformly random `m x n` parity check drawn from a seeded generator.
    RandomLinear { n: usize, m: usize, seed: u64 },
    /// A parity check read from a text file.
    File(PathBuf),
}

impl fmt::Display for CodeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodeSpec::Hamming(r) => write!(f, "hamming({r})"),
            CodeSpec::Repetition(n) => write!(f, "repetition({n})"),
            CodeSpec::RandomLinear { n, m, seed } => write!(f, "random_linear({n},{m},{seed})"),
            CodeSpec::File(path) => write!(f, "file({})", path.display()),
        }
    }
}

impl FromStr for CodeSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidInput(format!("unrecognised code specifier {s:?}"));
        let open = s.find('(').ok_or_else(bad)?;
        if !s.ends_with(')') {
            return Err(bad());
        }
        let name = s[..open].trim();
        let inner = &s[open + 1..s.len() - 1];
        let ints = || -> Result<Vec<u64>> {
            inner
                .split(',')
                .map(|t| t.trim().parse::<u64>().map_err(|_| bad()))
                .collect()
        };
        match name {
            "hamming" => match ints()?.as_slice() {
                [r] => Ok(CodeSpec::Hamming(*r as usize)),
                _ => Err(bad()),
            },
            "repetition" => match ints()?.as_slice() {
                [n] => Ok(CodeSpec::Repetition(*n as usize)),
                _ => Err(bad()),
            },
            "random_linear" => match ints()?.as_slice() {
                [n, m, seed] => Ok(CodeSpec::RandomLinear {
                    n: *n as usize,
                    m: *m as usize,
                    seed: *seed,
                }),
                _ => Err(bad()),
            },
            "file" | "from_file" if !inner.trim().is_empty() => {
                Ok(CodeSpec::File(PathBuf::from(inner.trim())))
            }
            _ => Err(bad()),
        }
    }
}

/// Position of a sequence in the standard array.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StandardArrayIndex {
    /// Syndrome as an integer; selects the coset (row).
    pub coset: u64,
    /// Message word of the codeword component; selects the column.
    pub column: u64,
}

/// An `(n, n - m)` binary linear code with its decoding tables.
///
/// Immutable after construction.
#[derive(Clone)]
pub struct LinearCode {
    n: usize,
    m: usize,
    parity_check: BitMatrix,
    generator: BitMatrix,
    info_positions: Vec<usize>,
    /// Syndrome integer of each unit vector.
    columns: Vec<u64>,
    leader_start: Vec<u32>,
    leader_weight: Vec<u16>,
    leader_positions: Vec<u32>,
}

impl fmt::Debug for LinearCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearCode")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("parity_check", &self.parity_check)
            .finish_non_exhaustive()
    }
}

impl PartialEq for LinearCode {
    fn eq(&self, other: &Self) -> bool {
        self.parity_check == other.parity_check
    }
}

impl Eq for LinearCode {}

/// Builds a code from the catalog.
pub fn make_code(spec: &CodeSpec) -> Result<LinearCode> {
    match spec {
        CodeSpec::Hamming(r) => LinearCode::hamming(*r),
        CodeSpec::Repetition(n) => LinearCode::repetition(*n),
        CodeSpec::RandomLinear { n, m, seed } => LinearCode::random_linear(*n, *m, *seed),
        CodeSpec::File(path) => {
            let text = std::fs::read_to_string(path)?;
            LinearCode::from_parity_text(&text)
        }
    }
}

impl LinearCode {
    pub fn hamming(r: usize) -> Result<Self> {
        if !(2..=MAX_HAMMING_R).contains(&r) {
            return Err(Error::InvalidParameter(format!(
                "hamming(r) needs 2 <= r <= {MAX_HAMMING_R}, got {r}"
            )));
        }
        let n = (1usize << r) - 1;
        let mut p = BitMatrix::zeros(r, n);
        for col in 0..n {
            let label = col + 1;
            for row in 0..r {
                if (label >> (r - 1 - row)) & 1 == 1 {
                    p.set(row, col, true);
                }
            }
        }
        Self::from_parity_check(p)
    }

    pub fn repetition(n: usize) -> Result<Self> {
        if n < 3 || n.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "repetition(n) needs odd n >= 3, got {n}"
            )));
        }
        let rows = (1..n)
            .map(|c| BitVector::from_positions(n, [0, c]))
            .collect();
        Self::from_parity_check(BitMatrix::from_rows(rows)?)
    }

    pub fn random_linear(n: usize, m: usize, seed: u64) -> Result<Self> {
        if m == 0 || m >= n {
            return Err(Error::InvalidParameter(format!(
                "random_linear needs 0 < m < n, got n={n}, m={m}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = BitMatrix::zeros(m, n);
        for r in 0..m {
            for c in 0..n {
                if rng.gen::<bool>() {
                    p.set(r, c, true);
                }
            }
        }
        Self::from_parity_check(p)
    }

    /// Parses the parity-check text format: a header line `n m`, then `m`
    /// lines of `n` characters from `{0,1}`.
    pub fn from_parity_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidInput("empty parity-check file".to_string()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::InvalidInput(format!("bad header field {t:?}")))
            })
            .collect::<Result<_>>()?;
        let [n, m] = dims[..] else {
            return Err(Error::InvalidInput(format!(
                "header must be \"n m\", got {header:?}"
            )));
        };
        let mut rows = Vec::with_capacity(m);
        for (i, line) in lines.by_ref().take(m).enumerate() {
            let line = line.trim_end_matches('\r');
            let row: BitVector = line.parse()?;
            if row.len() != n {
                return Err(Error::InvalidInput(format!(
                    "row {} has {} symbols, expected {n}",
                    i + 1,
                    row.len()
                )));
            }
            rows.push(row);
        }
        if rows.len() != m {
            return Err(Error::InvalidInput(format!(
                "expected {m} parity rows, found {}",
                rows.len()
            )));
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::InvalidInput(
                "unexpected content after parity rows".to_string(),
            ));
        }
        if m == 0 {
            return Err(Error::InvalidParameter("m must be positive".to_string()));
        }
        Self::from_parity_check(BitMatrix::from_rows(rows)?)
    }

    /// Writes the parity check in the text format accepted by
    /// [`LinearCode::from_parity_text`].
    pub fn to_parity_text(&self) -> String {
        let mut out = format!("{} {}\n", self.n, self.m);
        for row in self.parity_check.rows() {
            out.push_str(&row.to_string());
            out.push('\n');
        }
        out
    }

    /// Validates a parity check and derives the generator and leader table.
    pub fn from_parity_check(parity_check: BitMatrix) -> Result<Self> {
        let n = parity_check.num_cols();
        let m = parity_check.num_rows();
        if m >= n {
            return Err(Error::InvalidParameter(format!(
                "code dimension n - m must be positive (n={n}, m={m})"
            )));
        }
        if m > MAX_PARITY_CHECKS {
            return Err(Error::cap(
                "coset-leader table",
                format!("m={m} > {MAX_PARITY_CHECKS}"),
            ));
        }
        let (reduced, pivots) = parity_check.rref();
        if pivots.len() < m {
            return Err(Error::RankDeficient {
                rank: pivots.len(),
                rows: m,
            });
        }

        let info_positions: Vec<usize> = (0..n).filter(|c| !pivots.contains(c)).collect();
        let generator_rows = info_positions
            .iter()
            .map(|&f| {
                let mut g = BitVector::zeros(n);
                g.set(f, true);
                for (r, &pc) in pivots.iter().enumerate() {
                    if reduced.get(r, f) {
                        g.set(pc, true);
                    }
                }
                g
            })
            .collect();
        let generator = BitMatrix::from_rows(generator_rows)?;
        if !parity_check.mul_transpose(&generator)?.is_zero() {
            return Err(Error::InvalidInput(
                "derived generator is not orthogonal to the parity check".to_string(),
            ));
        }

        let columns = (0..n)
            .map(|c| {
                (0..m).fold(0u64, |acc, r| {
                    (acc << 1) | u64::from(parity_check.get(r, c))
                })
            })
            .collect();

        let mut code = Self {
            n,
            m,
            parity_check,
            generator,
            info_positions,
            columns,
            leader_start: Vec::new(),
            leader_weight: Vec::new(),
            leader_positions: Vec::new(),
        };
        code.fill_leaders();
        Ok(code)
    }

    /// Breadth-first by weight; within a weight, increasing lexicographic
    /// order. The first vector reaching a syndrome is its leader.
    fn fill_leaders(&mut self) {
        let size = 1usize << self.m;
        let mut start = vec![u32::MAX; size];
        let mut weight = vec![0u16; size];
        let mut positions = Vec::new();
        let mut filled = 0usize;
        'outer: for w in 0..=self.n {
            for combo in Combinations::new(self.n, w) {
                // bit index b is position n - 1 - b; emit ascending positions
                let syn = combo
                    .iter()
                    .fold(0u64, |acc, &b| acc ^ self.columns[self.n - 1 - b])
                    as usize;
                if start[syn] == u32::MAX {
                    start[syn] = positions.len() as u32;
                    weight[syn] = w as u16;
                    positions.extend(combo.iter().rev().map(|&b| (self.n - 1 - b) as u32));
                    filled += 1;
                    if filled == size {
                        break 'outer;
                    }
                }
            }
        }
        debug_assert_eq!(filled, size, "full-rank parity check reaches every syndrome");
        self.leader_start = start;
        self.leader_weight = weight;
        self.leader_positions = positions;
    }

    /// Block length.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of parity checks.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Code dimension `n - m`.
    pub fn k(&self) -> usize {
        self.n - self.m
    }

    pub fn rate(&self) -> f64 {
        self.k() as f64 / self.n as f64
    }

    pub fn parity_check(&self) -> &BitMatrix {
        &self.parity_check
    }

    pub fn generator(&self) -> &BitMatrix {
        &self.generator
    }

    pub fn info_positions(&self) -> &[usize] {
        &self.info_positions
    }

    pub fn num_cosets(&self) -> u64 {
        1u64 << self.m
    }

    /// Syndrome integer of a single position's unit vector.
    pub fn column_syndrome(&self, pos: usize) -> u64 {
        self.columns[pos]
    }

    /// `P x^T` as an integer (row 0 most significant).
    pub fn syndrome_index(&self, x: &BitVector) -> Result<u64> {
        x.check_len(self.n, "sequence")?;
        Ok(x.ones().fold(0u64, |acc, p| acc ^ self.columns[p]))
    }

    /// `P x^T` as a vector of length `m`.
    pub fn syndrome(&self, x: &BitVector) -> Result<BitVector> {
        Ok(BitVector::from_u64(self.syndrome_index(x)?, self.m))
    }

    /// Weight of the leader of coset `index`.
    pub fn leader_weight(&self, index: u64) -> usize {
        self.leader_weight[index as usize] as usize
    }

    /// The coset leader for a syndrome integer.
    pub fn leader_by_index(&self, index: u64) -> BitVector {
        let i = index as usize;
        let start = self.leader_start[i] as usize;
        let w = self.leader_weight[i] as usize;
        BitVector::from_positions(
            self.n,
            self.leader_positions[start..start + w].iter().map(|&p| p as usize),
        )
    }

    /// `f_P(s)`: the minimum-weight member of the coset with syndrome `s`.
    pub fn coset_leader(&self, s: &BitVector) -> Result<BitVector> {
        s.check_len(self.m, "syndrome")?;
        Ok(self.leader_by_index(s.to_u64()))
    }

    /// Maximum likelihood estimate of a sequence with syndrome `s_target`
    /// given side information `y` observed through a BSC.
    pub fn ml_reconstruct(&self, s_target: &BitVector, y: &BitVector) -> Result<BitVector> {
        s_target.check_len(self.m, "syndrome")?;
        let diff = s_target.to_u64() ^ self.syndrome_index(y)?;
        Ok(y ^ &self.leader_by_index(diff))
    }

    /// Codeword `u G` for a message word of length `n - m`.
    pub fn encode(&self, message: &BitVector) -> Result<BitVector> {
        message.check_len(self.k(), "message")?;
        let mut out = BitVector::zeros(self.n);
        for t in message.ones() {
            out ^= self.generator.row(t);
        }
        Ok(out)
    }

    /// Reads the message word of a codeword from the information positions.
    pub fn message_of(&self, codeword: &BitVector) -> Result<BitVector> {
        codeword.check_len(self.n, "codeword")?;
        let mut u = BitVector::zeros(self.k());
        for (t, &f) in self.info_positions.iter().enumerate() {
            if codeword.get(f) {
                u.set(t, true);
            }
        }
        Ok(u)
    }

    fn check_column_width(&self) -> Result<()> {
        if self.k() > 63 {
            return Err(Error::cap(
                "standard-array column index",
                format!("n - m = {} > 63", self.k()),
            ));
        }
        Ok(())
    }

    /// Row and column of `x` in the standard array: `x = e_i + c_j`.
    pub fn standard_array_index(&self, x: &BitVector) -> Result<StandardArrayIndex> {
        self.check_column_width()?;
        let coset = self.syndrome_index(x)?;
        let codeword = x ^ &self.leader_by_index(coset);
        let column = self.message_of(&codeword)?.to_u64();
        Ok(StandardArrayIndex { coset, column })
    }

    /// Inverse of [`LinearCode::standard_array_index`].
    pub fn standard_array_entry(&self, index: StandardArrayIndex) -> Result<BitVector> {
        self.check_column_width()?;
        if index.coset >= self.num_cosets() || index.column >= 1u64 << self.k() {
            return Err(Error::InvalidInput(format!(
                "standard-array index {index:?} out of range"
            )));
        }
        let codeword = self.encode(&BitVector::from_u64(index.column, self.k()))?;
        Ok(&codeword ^ &self.leader_by_index(index.coset))
    }

    /// Exact block error probability of coset-leader decoding on a BSC(p),
    /// by enumerating all `2^n` noise vectors.
    pub fn exact_bsc_error_prob(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 0.5) {
            return Err(Error::InvalidParameter(format!(
                "crossover probability must lie in (0, 1/2), got {p}"
            )));
        }
        let failures = self.decoding_failures_by_weight()?;
        Ok(failures
            .iter()
            .enumerate()
            .map(|(w, &count)| {
                count as f64 * p.powi(w as i32) * (1.0 - p).powi((self.n - w) as i32)
            })
            .sum())
    }

    /// Number of noise vectors of each weight that the leader table fails to
    /// correct, by Gray-code enumeration of `{0,1}^n`.
    pub fn decoding_failures_by_weight(&self) -> Result<Vec<u64>> {
        let n = self.n;
        if n > MAX_ENUMERATION_LENGTH {
            return Err(Error::cap(
                "exact error probability",
                format!("n={n} > {MAX_ENUMERATION_LENGTH}"),
            ));
        }
        let leaders: Vec<u64> = (0..self.num_cosets())
            .map(|i| self.leader_by_index(i).to_u64())
            .collect();
        let mut failures = vec![0u64; n + 1];
        let (mut v, mut syn, mut w) = (0u64, 0u64, 0usize);
        for t in 1u64..1u64 << n {
            let b = t.trailing_zeros() as usize;
            v ^= 1 << b;
            syn ^= self.columns[n - 1 - b];
            if v >> b & 1 == 1 {
                w += 1;
            } else {
                w -= 1;
            }
            if leaders[syn as usize] != v {
                failures[w] += 1;
            }
        }
        Ok(failures)
    }
}
