//! Sign thresholding into bit-packed codes, Hamming distance and exhaustive
//! Hamming ranking.
//!
//! Codes are packed into `u64` words, most significant bit first: bit `k`
//! of a code lives in word `k / 64` at position `63 - k % 64`. A set bit
//! encodes `+1`, a clear bit `-1`. Pad bits past `bits` are always zero,
//! so XOR/popcount over whole words counts only significant bits.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Real;
use crate::types::Modality;

#[inline]
pub fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

/// `n` bit-packed `b`-bit codes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeTable {
    bits: usize,
    words_per_code: usize,
    words: Vec<u64>,
}

impl CodeTable {
    pub fn with_capacity(bits: usize, n: usize) -> Result<Self> {
        if bits == 0 {
            return Err(Error::invalid("codes need at least one bit"));
        }
        Ok(CodeTable {
            bits,
            words_per_code: words_for(bits),
            words: Vec::with_capacity(n * words_for(bits)),
        })
    }

    /// Builds a table from `±1`-style booleans (`true` ≡ `+1`).
    pub fn from_bool_rows<R: AsRef<[bool]>>(bits: usize, rows: &[R]) -> Result<Self> {
        let mut t = CodeTable::with_capacity(bits, rows.len())?;
        for r in rows {
            t.push_bools(r.as_ref())?;
        }
        Ok(t)
    }

    pub fn push_bools(&mut self, row: &[bool]) -> Result<()> {
        if row.len() != self.bits {
            return Err(Error::Length {
                op: "CodeTable::push",
                left: row.len(),
                right: self.bits,
            });
        }
        let start = self.words.len();
        self.words.resize(start + self.words_per_code, 0);
        for (k, _) in row.iter().enumerate().filter(|(_, &b)| b) {
            self.words[start + k / 64] |= 1u64 << (63 - k % 64);
        }
        Ok(())
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.words.len() / self.words_per_code
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words_per_code(&self) -> usize {
        self.words_per_code
    }

    /// Packed words of code `i`.
    pub fn code(&self, i: usize) -> &[u64] {
        &self.words[i * self.words_per_code..(i + 1) * self.words_per_code]
    }

    pub fn bit(&self, i: usize, k: usize) -> bool {
        self.code(i)[k / 64] >> (63 - k % 64) & 1 == 1
    }

    /// Code `i` as a `±1` vector.
    pub fn signs(&self, i: usize) -> Vec<i8> {
        (0..self.bits).map(|k| if self.bit(i, k) { 1 } else { -1 }).collect()
    }

    /// Text form: `"n b"`, then one line of `b` characters in `{0,1}` per code.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.len() * (self.bits + 1) + 16);
        let _ = writeln!(s, "{} {}", self.len(), self.bits);
        for i in 0..self.len() {
            for k in 0..self.bits {
                s.push(if self.bit(i, k) { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::parse(origin, 1, "missing header"))?;
        let nums: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(origin, 1, format!("malformed header '{header}', expected 'n b'")))?;
        let [n, bits] = nums[..] else {
            return Err(Error::parse(origin, 1, format!("malformed header '{header}', expected 'n b'")));
        };
        let mut t = CodeTable::with_capacity(bits, n).map_err(|e| Error::parse(origin, 1, e.to_string()))?;
        let mut row = vec![false; bits];
        for i in 0..n {
            let ln = i + 2;
            let line = lines
                .next()
                .ok_or_else(|| Error::parse(origin, ln, format!("expected {n} codes, file ends after {i}")))?
                .trim_end_matches('\r');
            if line.chars().count() != bits {
                return Err(Error::parse(
                    origin,
                    ln,
                    format!("code has {} characters, expected {bits}", line.chars().count()),
                ));
            }
            for (slot, c) in row.iter_mut().zip(line.chars()) {
                *slot = match c {
                    '1' => true,
                    '0' => false,
                    other => return Err(Error::parse(origin, ln, format!("invalid code character '{other}'"))),
                };
            }
            t.push_bools(&row)?;
        }
        if let Some((extra, _)) = lines.enumerate().find(|(_, l)| !l.trim().is_empty()) {
            return Err(Error::parse(origin, n + 2 + extra, "unexpected data after the last code"));
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

/// Sign thresholding: bit `k` is set iff `z_k > 0`; zero maps to `-1`.
pub fn binarize<T: Real>(z: &Matrix<T>) -> Result<CodeTable> {
    if !z.is_finite() {
        return Err(Error::NonFinite("binarize"));
    }
    let mut t = CodeTable::with_capacity(z.cols(), z.rows())?;
    let mut row = vec![false; z.cols()];
    for r in z.row_iter() {
        for (b, &v) in row.iter_mut().zip(r) {
            *b = v > T::zero();
        }
        t.push_bools(&row)?;
    }
    Ok(t)
}

#[inline]
fn popcount_xor(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Number of differing bits between two packed `bits`-wide codes.
pub fn hamming_distance(a: &[u64], b: &[u64], bits: usize) -> Result<u32> {
    let w = words_for(bits);
    if a.len() != w || b.len() != w {
        return Err(Error::Length {
            op: "hamming_distance",
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(popcount_xor(a, b))
}

/// Database codes searched by exhaustive Hamming scan.
#[derive(Clone, Debug)]
pub struct HammingIndex {
    codes: CodeTable,
    pub modality: Modality,
    ids: Option<Vec<usize>>,
}

impl HammingIndex {
    pub fn new(codes: CodeTable, modality: Modality) -> Self {
        HammingIndex {
            codes,
            modality,
            ids: None,
        }
    }

    /// Index whose items are reported under the given identifiers.
    pub fn with_ids(codes: CodeTable, modality: Modality, ids: Vec<usize>) -> Result<Self> {
        if ids.len() != codes.len() {
            return Err(Error::Length {
                op: "HammingIndex::with_ids",
                left: ids.len(),
                right: codes.len(),
            });
        }
        Ok(HammingIndex {
            codes,
            modality,
            ids: Some(ids),
        })
    }

    pub fn codes(&self) -> &CodeTable {
        &self.codes
    }

    pub fn bits(&self) -> usize {
        self.codes.bits()
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn id(&self, pos: usize) -> usize {
        self.ids.as_ref().map_or(pos, |ids| ids[pos])
    }
}

/// Every database item as `(id, distance)`, ascending by distance then id.
pub fn rank_database(query: &[u64], index: &HammingIndex) -> Result<Vec<(usize, u32)>> {
    if query.len() != index.codes.words_per_code() {
        return Err(Error::Length {
            op: "rank_database (query words vs index words)",
            left: query.len(),
            right: index.codes.words_per_code(),
        });
    }
    let mut ranked: Vec<(usize, u32)> = (0..index.len())
        .map(|pos| (index.id(pos), popcount_xor(query, index.codes.code(pos))))
        .collect();
    ranked.sort_unstable_by_key(|&(id, d)| (d, id));
    Ok(ranked)
}

/// [`rank_database`] with a width check against a whole query table.
pub fn rank_for(queries: &CodeTable, qi: usize, index: &HammingIndex) -> Result<Vec<(usize, u32)>> {
    if queries.bits() != index.bits() {
        return Err(Error::Length {
            op: "rank (query bits vs database bits)",
            left: queries.bits(),
            right: index.bits(),
        });
    }
    rank_database(queries.code(qi), index)
}
