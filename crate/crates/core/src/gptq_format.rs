//! GPTQ 4-bit weight container.
//!
//! Layout (all little-nibble-first inside a `u32`):
//!
//! * `qweight[k/8][n]`: nibble `i` of word `(w, c)` is the code of element `(8w + i, c)`.
//! * `scales[k/g][n]`: binary16 scale per group and column.
//! * `zeros[k/g][n/8]`: nibble `j` of word `(gr, wc)` is the zero point of group `gr`,
//!   column `8wc + j`.
//! * `perm`: optional activation-order permutation of `0..k`, stored verbatim.
//!
//! A weight dequantizes as `w = s * (q - z)`. There is no `+1` offset on the
//! stored zero point.
//!
//! # `GQ4S` file format
//!
//! Little-endian throughout:
//!
//! ```text
//! "GQ4S" | version: u32 = 1 | k: u32 | n: u32 | g: u32 | flags: u32 (bit 0 = perm present)
//! qweight: u32[k/8 * n]   row-major
//! scales:  u16[k/g * n]   raw binary16 patterns, row-major
//! zeros:   u32[k/g * n/8] row-major
//! perm:    u32[k]         only if flags bit 0 is set
//! ```

use std::io::{Read, Write};

use thiserror::Error;

use crate::f16core::{f32_to_f16, Half, Half2};

pub const MAGIC: &[u8; 4] = b"GQ4S";
pub const VERSION: u32 = 1;
const FLAG_PERM: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("code {value} out of range [0, 15] at {what}[{row}][{col}]")]
    Range {
        what: &'static str,
        row: usize,
        col: usize,
        value: u32,
    },
    #[error("perm is not a permutation of 0..{k}: {reason}")]
    Perm { k: usize, reason: String },
    #[error("index ({row}, {col}) out of bounds for {k}x{n} weight")]
    Index {
        row: usize,
        col: usize,
        k: usize,
        n: usize,
    },
    #[error("malformed GQ4S data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Packed 4-bit weight matrix of logical shape `k x n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedWeight {
    k: usize,
    n: usize,
    group_size: usize,
    qweight: Vec<u32>,
    scales: Vec<Half>,
    zeros: Vec<u32>,
    perm: Option<Vec<u32>>,
}

/// Unpacked contents of a [`QuantizedWeight`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Unpacked {
    /// `k x n` codes, row-major.
    pub codes: Vec<u8>,
    /// `k/g x n` scales, row-major.
    pub scales: Vec<Half>,
    /// `k/g x n` zero points, row-major.
    pub zeros: Vec<u8>,
    pub perm: Option<Vec<u32>>,
}

fn check_shape(k: usize, n: usize, g: usize) -> Result<(), FormatError> {
    if k == 0 || n == 0 || g == 0 {
        return Err(FormatError::Shape(format!(
            "k={k}, n={n}, g={g} must all be positive"
        )));
    }
    if k % 8 != 0 {
        return Err(FormatError::Shape(format!("k={k} is not a multiple of 8")));
    }
    if n % 8 != 0 {
        return Err(FormatError::Shape(format!("n={n} is not a multiple of 8")));
    }
    if k % g != 0 {
        return Err(FormatError::Shape(format!(
            "group size {g} does not divide k={k}"
        )));
    }
    Ok(())
}

fn check_perm(perm: &[u32], k: usize) -> Result<(), FormatError> {
    if perm.len() != k {
        return Err(FormatError::Perm {
            k,
            reason: format!("length {}", perm.len()),
        });
    }
    let mut seen = vec![false; k];
    for &p in perm {
        let p = p as usize;
        if p >= k {
            return Err(FormatError::Perm {
                k,
                reason: format!("index {p} out of range"),
            });
        }
        if std::mem::replace(&mut seen[p], true) {
            return Err(FormatError::Perm {
                k,
                reason: format!("index {p} repeated"),
            });
        }
    }
    Ok(())
}

#[inline]
fn nibble(word: u32, i: usize) -> u8 {
    ((word >> (4 * i)) & 0xF) as u8
}

impl QuantizedWeight {
    /// Packs `k x n` codes, `k/g x n` scales and `k/g x n` zero points (all row-major).
    pub fn pack(
        k: usize,
        n: usize,
        group_size: usize,
        codes: &[u8],
        scales: &[Half],
        zeros: &[u8],
        perm: Option<Vec<u32>>,
    ) -> Result<Self, FormatError> {
        check_shape(k, n, group_size)?;
        let groups = k / group_size;
        let expect = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(FormatError::Shape(format!(
                    "{what} has {got} entries, expected {want}"
                )))
            }
        };
        expect("codes", codes.len(), k * n)?;
        expect("scales", scales.len(), groups * n)?;
        expect("zeros", zeros.len(), groups * n)?;
        if let Some(p) = &perm {
            check_perm(p, k)?;
        }

        let mut qweight = vec![0u32; k / 8 * n];
        for (idx, &q) in codes.iter().enumerate() {
            let (row, col) = (idx / n, idx % n);
            if q > 15 {
                return Err(FormatError::Range {
                    what: "codes",
                    row,
                    col,
                    value: q as u32,
                });
            }
            qweight[row / 8 * n + col] |= (q as u32) << (4 * (row % 8));
        }
        let mut packed_zeros = vec![0u32; groups * n / 8];
        for (idx, &z) in zeros.iter().enumerate() {
            let (gr, col) = (idx / n, idx % n);
            if z > 15 {
                return Err(FormatError::Range {
                    what: "zeros",
                    row: gr,
                    col,
                    value: z as u32,
                });
            }
            packed_zeros[gr * (n / 8) + col / 8] |= (z as u32) << (4 * (col % 8));
        }
        Ok(QuantizedWeight {
            k,
            n,
            group_size,
            qweight,
            scales: scales.to_vec(),
            zeros: packed_zeros,
            perm,
        })
    }

    /// Builds a container from already-packed words.
    pub fn from_raw(
        k: usize,
        n: usize,
        group_size: usize,
        qweight: Vec<u32>,
        scales: Vec<Half>,
        zeros: Vec<u32>,
        perm: Option<Vec<u32>>,
    ) -> Result<Self, FormatError> {
        check_shape(k, n, group_size)?;
        let groups = k / group_size;
        if qweight.len() != k / 8 * n || scales.len() != groups * n || zeros.len() != groups * n / 8
        {
            return Err(FormatError::Shape(format!(
                "raw arrays ({}, {}, {}) do not match k={k}, n={n}, g={group_size}",
                qweight.len(),
                scales.len(),
                zeros.len()
            )));
        }
        if let Some(p) = &perm {
            check_perm(p, k)?;
        }
        Ok(QuantizedWeight {
            k,
            n,
            group_size,
            qweight,
            scales,
            zeros,
            perm,
        })
    }

    pub fn unpack(&self) -> Unpacked {
        let (k, n) = (self.k, self.n);
        let groups = self.groups();
        let codes = (0..k * n).map(|idx| self.code(idx / n, idx % n)).collect();
        let zeros = (0..groups * n)
            .map(|idx| self.zero(idx / n, idx % n))
            .collect();
        Unpacked {
            codes,
            scales: self.scales.clone(),
            zeros,
            perm: self.perm.clone(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn groups(&self) -> usize {
        self.k / self.group_size
    }

    pub fn qweight(&self) -> &[u32] {
        &self.qweight
    }

    pub fn scales(&self) -> &[Half] {
        &self.scales
    }

    pub fn zeros(&self) -> &[u32] {
        &self.zeros
    }

    pub fn perm(&self) -> Option<&[u32]> {
        self.perm.as_deref()
    }

    #[inline]
    fn code(&self, row: usize, col: usize) -> u8 {
        nibble(self.qweight[row / 8 * self.n + col], row % 8)
    }

    #[inline]
    fn zero(&self, group: usize, col: usize) -> u8 {
        nibble(self.zeros[group * (self.n / 8) + col / 8], col % 8)
    }

    fn check_index(&self, row: usize, col: usize) -> Result<(), FormatError> {
        if row >= self.k || col >= self.n {
            return Err(FormatError::Index {
                row,
                col,
                k: self.k,
                n: self.n,
            });
        }
        Ok(())
    }

    #[inline]
    fn dequant_unchecked(&self, row: usize, col: usize) -> Half {
        let group = row / self.group_size;
        let diff = self.code(row, col) as i32 - self.zero(group, col) as i32;
        if diff == 0 {
            return Half::ZERO;
        }
        let s = self.scales[group * self.n + col];
        f32_to_f16(s.to_f32() * diff as f32)
    }

    /// `s * (q - z)` for element `(row, col)`; the product is rounded once to
    /// binary16 and `q == z` always gives `+0`.
    pub fn dequant_element(&self, row: usize, col: usize) -> Result<Half, FormatError> {
        self.check_index(row, col)?;
        Ok(self.dequant_unchecked(row, col))
    }

    /// Dequantized 4-column tile starting at `col`: for each `k` in `k_lo..k_hi`
    /// yields `[(w[k][col], w[k][col+1]), (w[k][col+2], w[k][col+3])]`.
    pub fn dequant_columns(
        &self,
        col: usize,
        k_lo: usize,
        k_hi: usize,
    ) -> Result<impl Iterator<Item = [Half2; 2]> + '_, FormatError> {
        if col % 4 != 0 {
            return Err(FormatError::Shape(format!(
                "tile column {col} is not a multiple of 4"
            )));
        }
        if k_lo > k_hi || k_hi > self.k || col + 4 > self.n {
            return Err(FormatError::Index {
                row: k_hi.max(k_lo),
                col: col + 3,
                k: self.k,
                n: self.n,
            });
        }
        Ok((k_lo..k_hi).map(move |k| {
            [
                Half2::new(
                    self.dequant_unchecked(k, col),
                    self.dequant_unchecked(k, col + 1),
                ),
                Half2::new(
                    self.dequant_unchecked(k, col + 2),
                    self.dequant_unchecked(k, col + 3),
                ),
            ]
        }))
    }

    /// Full dequantized `k x n` matrix, row-major.
    pub fn dequantize(&self) -> Vec<Half> {
        (0..self.k * self.n)
            .map(|idx| self.dequant_unchecked(idx / self.n, idx % self.n))
            .collect()
    }

    pub fn serialize<W: Write>(&self, mut sink: W) -> Result<(), FormatError> {
        let mut buf = Vec::with_capacity(self.serialized_len());
        buf.extend_from_slice(MAGIC);
        let flags = if self.perm.is_some() { FLAG_PERM } else { 0 };
        for v in [
            VERSION,
            self.k as u32,
            self.n as u32,
            self.group_size as u32,
            flags,
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for w in &self.qweight {
            buf.extend_from_slice(&w.to_le_bytes());
        }
        for s in &self.scales {
            buf.extend_from_slice(&s.to_bits().to_le_bytes());
        }
        for z in &self.zeros {
            buf.extend_from_slice(&z.to_le_bytes());
        }
        if let Some(p) = &self.perm {
            for v in p {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        sink.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        self.serialize(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    fn serialized_len(&self) -> usize {
        24 + 4 * self.qweight.len()
            + 2 * self.scales.len()
            + 4 * self.zeros.len()
            + self.perm.as_ref().map_or(0, |p| 4 * p.len())
    }

    pub fn deserialize<R: Read>(mut source: R) -> Result<Self, FormatError> {
        let mut bytes = Vec::new();
        source.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(FormatError::Format("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(FormatError::Format(format!(
                "unsupported version {version}"
            )));
        }
        let k = cur.u32()? as usize;
        let n = cur.u32()? as usize;
        let g = cur.u32()? as usize;
        let flags = cur.u32()?;
        if flags & !FLAG_PERM != 0 {
            return Err(FormatError::Format(format!("unknown flags {flags:#x}")));
        }
        check_shape(k, n, g)?;
        let groups = k / g;
        let qweight = (0..k / 8 * n)
            .map(|_| cur.u32())
            .collect::<Result<_, _>>()?;
        let scales = (0..groups * n)
            .map(|_| cur.u16().map(Half::from_bits))
            .collect::<Result<_, _>>()?;
        let zeros = (0..groups * n / 8)
            .map(|_| cur.u32())
            .collect::<Result<_, _>>()?;
        let perm = if flags & FLAG_PERM != 0 {
            Some((0..k).map(|_| cur.u32()).collect::<Result<_, _>>()?)
        } else {
            None
        };
        if cur.pos != bytes.len() {
            return Err(FormatError::Format(format!(
                "{} trailing bytes",
                bytes.len() - cur.pos
            )));
        }
        Self::from_raw(k, n, g, qweight, scales, zeros, perm)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos + len;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| FormatError::Format(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
}
