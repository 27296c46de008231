//! Bit vectors and bit matrices over GF(2).
//!
//! Bits are stored most-significant first: position 0 of a vector is the
//! leftmost symbol when printed, and for vectors of at most 64 symbols the
//! integer view ([`BitVector::to_u64`]) places position 0 in the highest bit.
//! Integer order and lexicographic order therefore coincide.

use std::fmt;
use std::ops::{BitXor, BitXorAssign};
use std::str::FromStr;

use crate::Error;

const WORD: usize = 64;

fn words_for(len: usize) -> usize {
    len.div_ceil(WORD)
}

fn mask(pos: usize) -> u64 {
    1u64 << (WORD - 1 - pos % WORD)
}

/// A fixed-length sequence of binary symbols.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitVector {
    len: usize,
    words: Vec<u64>,
}

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; words_for(len)],
        }
    }

    /// Builds a vector from the low `len` bits of `value`, position 0 taken from
    /// bit `len - 1`.
    pub fn from_u64(value: u64, len: usize) -> Self {
        assert!(len <= WORD, "from_u64 supports at most 64 symbols");
        let mut v = Self::zeros(len);
        if len > 0 {
            let masked = if len == WORD {
                value
            } else {
                value & ((1u64 << len) - 1)
            };
            v.words[0] = masked << (WORD - len);
        }
        v
    }

    /// Builds a vector from a slice of 0/1 symbols.
    pub fn from_bits(bits: &[u8]) -> Result<Self, Error> {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            match b {
                0 => {}
                1 => v.set(i, true),
                other => {
                    return Err(Error::InvalidInput(format!(
                        "binary symbol expected, found {other}"
                    )))
                }
            }
        }
        Ok(v)
    }

    /// A vector with ones at the given positions.
    pub fn from_positions(len: usize, positions: impl IntoIterator<Item = usize>) -> Self {
        let mut v = Self::zeros(len);
        for p in positions {
            v.set(p, true);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, pos: usize) -> bool {
        assert!(pos < self.len, "bit index {pos} out of range for length {}", self.len);
        self.words[pos / WORD] & mask(pos) != 0
    }

    pub fn set(&mut self, pos: usize, value: bool) {
        assert!(pos < self.len, "bit index {pos} out of range for length {}", self.len);
        if value {
            self.words[pos / WORD] |= mask(pos);
        } else {
            self.words[pos / WORD] &= !mask(pos);
        }
    }

    pub fn flip(&mut self, pos: usize) {
        assert!(pos < self.len, "bit index {pos} out of range for length {}", self.len);
        self.words[pos / WORD] ^= mask(pos);
    }

    /// Hamming weight.
    pub fn weight(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Inner product over GF(2).
    pub fn dot(&self, other: &Self) -> bool {
        assert_eq!(self.len, other.len, "length mismatch in dot product");
        self.words
            .iter()
            .zip(&other.words)
            .fold(0u32, |acc, (a, b)| acc ^ (a & b).count_ones())
            & 1
            == 1
    }

    /// Integer view, position 0 most significant. Only for `len <= 64`.
    pub fn to_u64(&self) -> u64 {
        assert!(self.len <= WORD, "to_u64 supports at most 64 symbols");
        if self.len == 0 {
            0
        } else {
            self.words[0] >> (WORD - self.len)
        }
    }

    /// Positions holding a one, ascending.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut rest = w;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let lead = rest.leading_zeros() as usize;
                rest &= !(1u64 << (WORD - 1 - lead));
                Some(wi * WORD + lead)
            })
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn to_bits(&self) -> Vec<u8> {
        self.iter().map(u8::from).collect()
    }

    pub(crate) fn check_len(&self, expected: usize, what: &str) -> Result<(), Error> {
        if self.len == expected {
            Ok(())
        } else {
            Err(Error::LengthMismatch {
                what: what.to_string(),
                expected,
                found: self.len,
            })
        }
    }
}

impl BitXorAssign<&BitVector> for BitVector {
    fn bitxor_assign(&mut self, rhs: &BitVector) {
        assert_eq!(self.len, rhs.len, "length mismatch in xor");
        for (a, b) in self.words.iter_mut().zip(&rhs.words) {
            *a ^= b;
        }
    }
}

impl BitXor<&BitVector> for &BitVector {
    type Output = BitVector;

    fn bitxor(self, rhs: &BitVector) -> BitVector {
        let mut out = self.clone();
        out ^= rhs;
        out
    }
}

impl fmt::Display for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitVector({self})")
    }
}

impl FromStr for BitVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0u8),
                '1' => Ok(1u8),
                other => Err(Error::InvalidInput(format!(
                    "binary symbol expected, found {other:?}"
                ))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_bits(&bits)
    }
}

/// A dense binary matrix stored as row vectors.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMatrix {
    cols: usize,
    rows: Vec<BitVector>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            cols,
            rows: vec![BitVector::zeros(cols); rows],
        }
    }

    pub fn from_rows(rows: Vec<BitVector>) -> Result<Self, Error> {
        let cols = rows.first().map(BitVector::len).ok_or_else(|| {
            Error::InvalidInput("matrix must have at least one row".to_string())
        })?;
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::LengthMismatch {
                what: "matrix row".to_string(),
                expected: cols,
                found: bad.len(),
            });
        }
        Ok(Self { cols, rows })
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &BitVector {
        &self.rows[r]
    }

    pub fn rows(&self) -> &[BitVector] {
        &self.rows
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.rows[r].get(c)
    }

    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        self.rows[r].set(c, value)
    }

    /// Computes `self * x^T`; the result has one symbol per row.
    pub fn mul_vec(&self, x: &BitVector) -> Result<BitVector, Error> {
        x.check_len(self.cols, "vector")?;
        let mut out = BitVector::zeros(self.rows.len());
        for (r, row) in self.rows.iter().enumerate() {
            if row.dot(x) {
                out.set(r, true);
            }
        }
        Ok(out)
    }

    /// Computes `self * other^T`.
    pub fn mul_transpose(&self, other: &BitMatrix) -> Result<BitMatrix, Error> {
        if self.cols != other.cols {
            return Err(Error::LengthMismatch {
                what: "matrix columns".to_string(),
                expected: self.cols,
                found: other.cols,
            });
        }
        let mut out = BitMatrix::zeros(self.rows.len(), other.rows.len());
        for (r, a) in self.rows.iter().enumerate() {
            for (c, b) in other.rows.iter().enumerate() {
                out.set(r, c, a.dot(b));
            }
        }
        Ok(out)
    }

    pub fn is_zero(&self) -> bool {
        self.rows.iter().all(|r| r.weight() == 0)
    }

    /// Reduced row echelon form together with the pivot column of each
    /// nonzero row, in row order.
    pub fn rref(&self) -> (BitMatrix, Vec<usize>) {
        let mut rows = self.rows.clone();
        let mut pivots = Vec::new();
        let mut next = 0;
        for col in 0..self.cols {
            if next == rows.len() {
                break;
            }
            let Some(found) = (next..rows.len()).find(|&r| rows[r].get(col)) else {
                continue;
            };
            rows.swap(next, found);
            let pivot_row = rows[next].clone();
            for (r, row) in rows.iter_mut().enumerate() {
                if r != next && row.get(col) {
                    *row ^= &pivot_row;
                }
            }
            pivots.push(col);
            next += 1;
        }
        (
            BitMatrix {
                cols: self.cols,
                rows,
            },
            pivots,
        )
    }

    pub fn rank(&self) -> usize {
        self.rref().1.len()
    }
}

impl fmt::Debug for BitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.rows.iter().map(|r| r.to_string())).finish()
    }
}

/// Iterates all `len`-symbol vectors of a given weight, as integers in
/// increasing order (hence lexicographic order of the vectors).
///
/// Bit indices are counted from the least significant end, so index `b`
/// corresponds to position `len - 1 - b`.
pub(crate) struct Combinations {
    len: usize,
    idx: Vec<usize>,
    done: bool,
}

impl Combinations {
    pub(crate) fn new(len: usize, weight: usize) -> Self {
        Self {
            len,
            idx: (0..weight).collect(),
            done: weight > len,
        }
    }
}

impl Iterator for Combinations {
    /// Ascending bit indices (least significant first).
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let current = self.idx.clone();
        // colex successor
        let w = self.idx.len();
        let mut j = 0;
        loop {
            if j == w {
                self.done = true;
                break;
            }
            let limit = if j + 1 < w { self.idx[j + 1] } else { self.len };
            if self.idx[j] + 1 < limit {
                self.idx[j] += 1;
                for (t, slot) in self.idx.iter_mut().take(j).enumerate() {
                    *slot = t;
                }
                break;
            }
            j += 1;
        }
        Some(current)
    }
}
