//! Dense matrices over GF(q) with row/column band partitioning.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldElement, FieldError, FieldModulus};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatrixError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{parts} does not divide {len}")]
    NotDivisible { parts: usize, len: usize },
    #[error("ragged block grid: {0}")]
    RaggedGrid(String),
    #[error("matrix is singular")]
    Singular,
    #[error("entry {value} is not a residue mod {q}")]
    EntryOutOfRange { value: u64, q: u64 },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Row-major dense matrix over one prime field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockMatrix {
    rows: usize,
    cols: usize,
    modulus: FieldModulus,
    entries: Vec<u64>,
}

impl BlockMatrix {
    pub fn zeros(rows: usize, cols: usize, modulus: FieldModulus) -> Self {
        BlockMatrix {
            rows,
            cols,
            modulus,
            entries: vec![0; rows * cols],
        }
    }

    pub fn identity(size: usize, modulus: FieldModulus) -> Self {
        let mut m = Self::zeros(size, size, modulus);
        for i in 0..size {
            m.entries[i * size + i] = 1 % modulus.get();
        }
        m
    }

    /// Builds a matrix from row-major residues, each of which must be `< q`.
    pub fn from_residues(
        rows: usize,
        cols: usize,
        modulus: FieldModulus,
        entries: Vec<u64>,
    ) -> Result<Self, MatrixError> {
        if entries.len() != rows * cols {
            return Err(MatrixError::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                entries.len()
            )));
        }
        if let Some(&bad) = entries.iter().find(|v| **v >= modulus.get()) {
            return Err(MatrixError::EntryOutOfRange {
                value: bad,
                q: modulus.get(),
            });
        }
        Ok(BlockMatrix {
            rows,
            cols,
            modulus,
            entries,
        })
    }

    pub fn from_elements(
        rows: usize,
        cols: usize,
        entries: &[FieldElement],
    ) -> Result<Self, MatrixError> {
        let modulus = entries
            .first()
            .map(|e| e.modulus())
            .ok_or_else(|| MatrixError::Dimension("no entries to infer the field from".into()))?;
        let mut raw = Vec::with_capacity(entries.len());
        for e in entries {
            if e.modulus() != modulus {
                return Err(FieldError::ModulusMismatch(modulus.get(), e.modulus().get()).into());
            }
            raw.push(e.value());
        }
        Self::from_residues(rows, cols, modulus, raw)
    }

    pub fn random<R: RngCore + ?Sized>(
        rows: usize,
        cols: usize,
        modulus: FieldModulus,
        rng: &mut R,
    ) -> Self {
        let entries = (0..rows * cols)
            .map(|_| modulus.sample_uniform(rng).value())
            .collect();
        BlockMatrix {
            rows,
            cols,
            modulus,
            entries,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn modulus(&self) -> FieldModulus {
        self.modulus
    }

    /// Row-major residues.
    pub fn residues(&self) -> &[u64] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> FieldElement {
        assert!(
            row < self.rows && col < self.cols,
            "index ({row},{col}) out of bounds"
        );
        self.modulus.element(self.entries[row * self.cols + col])
    }

    pub fn set(&mut self, row: usize, col: usize, value: FieldElement) {
        assert!(
            row < self.rows && col < self.cols,
            "index ({row},{col}) out of bounds"
        );
        assert_eq!(
            value.modulus(),
            self.modulus,
            "element from a different field"
        );
        self.entries[row * self.cols + col] = value.value();
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|v| *v == 0)
    }

    fn same_field(&self, other: &BlockMatrix) -> Result<(), MatrixError> {
        if self.modulus != other.modulus {
            return Err(
                FieldError::ModulusMismatch(self.modulus.get(), other.modulus.get()).into(),
            );
        }
        Ok(())
    }

    /// Exact product over GF(q).
    pub fn matmul(&self, rhs: &BlockMatrix) -> Result<BlockMatrix, MatrixError> {
        let mut count = 0;
        self.matmul_counted(rhs, &mut count)
    }

    /// Naive triple-loop product; adds the number of field multiplications
    /// performed to `mul_count`.
    pub fn matmul_counted(
        &self,
        rhs: &BlockMatrix,
        mul_count: &mut u64,
    ) -> Result<BlockMatrix, MatrixError> {
        self.same_field(rhs)?;
        if self.cols != rhs.rows {
            return Err(MatrixError::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let q = self.modulus;
        let mut out = BlockMatrix::zeros(self.rows, rhs.cols, q);
        for i in 0..self.rows {
            let row = &self.entries[i * self.cols..(i + 1) * self.cols];
            let out_row = &mut out.entries[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in row.iter().enumerate() {
                let rhs_row = &rhs.entries[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o = q.mul_add_raw(*o, a, b);
                }
            }
        }
        *mul_count += (self.rows * self.cols * rhs.cols) as u64;
        Ok(out)
    }

    pub fn add(&self, rhs: &BlockMatrix) -> Result<BlockMatrix, MatrixError> {
        let mut out = self.clone();
        out.add_scaled_assign(rhs, self.modulus.one())?;
        Ok(out)
    }

    pub fn scale(&self, c: FieldElement) -> BlockMatrix {
        assert_eq!(c.modulus(), self.modulus, "scalar from a different field");
        let q = self.modulus;
        BlockMatrix {
            entries: self
                .entries
                .iter()
                .map(|v| q.mul_raw(*v, c.value()))
                .collect(),
            ..*self
        }
    }

    /// `self += c * rhs`.
    pub fn add_scaled_assign(
        &mut self,
        rhs: &BlockMatrix,
        c: FieldElement,
    ) -> Result<(), MatrixError> {
        self.same_field(rhs)?;
        if c.modulus() != self.modulus {
            return Err(FieldError::ModulusMismatch(self.modulus.get(), c.modulus().get()).into());
        }
        if (self.rows, self.cols) != (rhs.rows, rhs.cols) {
            return Err(MatrixError::Dimension(format!(
                "cannot add {}x{} to {}x{}",
                rhs.rows, rhs.cols, self.rows, self.cols
            )));
        }
        let q = self.modulus;
        for (o, &r) in self.entries.iter_mut().zip(&rhs.entries) {
            *o = q.mul_add_raw(*o, r, c.value());
        }
        Ok(())
    }

    /// The sub-matrix of rows `[r0, r1)` and columns `[c0, c1)`.
    pub fn submatrix(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> BlockMatrix {
        let mut entries = Vec::with_capacity((r1 - r0) * (c1 - c0));
        for r in r0..r1 {
            entries.extend_from_slice(&self.entries[r * self.cols + c0..r * self.cols + c1]);
        }
        BlockMatrix {
            rows: r1 - r0,
            cols: c1 - c0,
            modulus: self.modulus,
            entries,
        }
    }

    /// Splits into `m` horizontal bands of equal height.
    pub fn partition_rows(&self, m: usize) -> Result<Vec<BlockMatrix>, MatrixError> {
        if m == 0 || !self.rows.is_multiple_of(m) {
            return Err(MatrixError::NotDivisible {
                parts: m,
                len: self.rows,
            });
        }
        let h = self.rows / m;
        Ok((0..m)
            .map(|a| self.submatrix(a * h, (a + 1) * h, 0, self.cols))
            .collect())
    }

    /// Splits into `n` vertical bands of equal width.
    pub fn partition_cols(&self, n: usize) -> Result<Vec<BlockMatrix>, MatrixError> {
        if n == 0 || !self.cols.is_multiple_of(n) {
            return Err(MatrixError::NotDivisible {
                parts: n,
                len: self.cols,
            });
        }
        let w = self.cols / n;
        Ok((0..n)
            .map(|b| self.submatrix(0, self.rows, b * w, (b + 1) * w))
            .collect())
    }

    /// Places `blocks[a][b]` at row band `a`, column band `b`.
    pub fn assemble_grid(blocks: &[Vec<BlockMatrix>]) -> Result<BlockMatrix, MatrixError> {
        let first = blocks
            .first()
            .and_then(|row| row.first())
            .ok_or_else(|| MatrixError::RaggedGrid("empty grid".into()))?;
        let width = blocks[0].len();
        let modulus = first.modulus;
        let heights: Vec<usize> = blocks.iter().map(|row| row[0].rows).collect();
        let widths: Vec<usize> = blocks[0].iter().map(|b| b.cols).collect();
        for (a, row) in blocks.iter().enumerate() {
            if row.len() != width {
                return Err(MatrixError::RaggedGrid(format!(
                    "row {a} has {} blocks, expected {width}",
                    row.len()
                )));
            }
            for (b, block) in row.iter().enumerate() {
                if block.rows != heights[a] || block.cols != widths[b] {
                    return Err(MatrixError::RaggedGrid(format!(
                        "block ({a},{b}) is {}x{}, expected {}x{}",
                        block.rows, block.cols, heights[a], widths[b]
                    )));
                }
                if block.modulus != modulus {
                    return Err(
                        FieldError::ModulusMismatch(modulus.get(), block.modulus.get()).into(),
                    );
                }
            }
        }
        let rows: usize = heights.iter().sum();
        let cols: usize = widths.iter().sum();
        let mut out = BlockMatrix::zeros(rows, cols, modulus);
        let mut r0 = 0;
        for (a, row) in blocks.iter().enumerate() {
            let mut c0 = 0;
            for (b, block) in row.iter().enumerate() {
                for r in 0..block.rows {
                    let dst = (r0 + r) * cols + c0;
                    out.entries[dst..dst + block.cols]
                        .copy_from_slice(&block.entries[r * block.cols..(r + 1) * block.cols]);
                }
                c0 += widths[b];
            }
            r0 += heights[a];
        }
        Ok(out)
    }

    /// Column `c` as a vector of residues.
    pub fn column(&self, c: usize) -> Vec<u64> {
        (0..self.rows)
            .map(|r| self.entries[r * self.cols + c])
            .collect()
    }

    pub fn to_literal(&self) -> MatrixLiteral {
        MatrixLiteral {
            rows: self.rows,
            cols: self.cols,
            q: self.modulus.get(),
            entries: self.entries.clone(),
        }
    }
}

/// JSON fixture form: `{rows, cols, q, entries}` with row-major integers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixLiteral {
    pub rows: usize,
    pub cols: usize,
    pub q: u64,
    pub entries: Vec<u64>,
}

impl TryFrom<MatrixLiteral> for BlockMatrix {
    type Error = MatrixError;

    fn try_from(lit: MatrixLiteral) -> Result<Self, MatrixError> {
        let modulus = FieldModulus::new(lit.q)?;
        BlockMatrix::from_residues(lit.rows, lit.cols, modulus, lit.entries)
    }
}

impl Serialize for BlockMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_literal().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BlockMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let lit = MatrixLiteral::deserialize(d)?;
        BlockMatrix::try_from(lit).map_err(serde::de::Error::custom)
    }
}

/// PA = LU factorization of a square matrix over GF(q).
#[derive(Clone, Debug)]
pub struct LuFactorization {
    size: usize,
    modulus: FieldModulus,
    /// Unit-lower L below the diagonal, U on and above it.
    packed: Vec<u64>,
    /// `perm[i]` is the original row now at position `i`.
    perm: Vec<usize>,
}

impl LuFactorization {
    pub fn new(mat: &BlockMatrix) -> Result<Self, MatrixError> {
        if mat.rows != mat.cols {
            return Err(MatrixError::Dimension(format!(
                "LU needs a square matrix, got {}x{}",
                mat.rows, mat.cols
            )));
        }
        let n = mat.rows;
        let q = mat.modulus;
        let mut a = mat.entries.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let pivot = (col..n)
                .find(|r| a[r * n + col] != 0)
                .ok_or(MatrixError::Singular)?;
            if pivot != col {
                for c in 0..n {
                    a.swap(pivot * n + c, col * n + c);
                }
                perm.swap(pivot, col);
            }
            let inv = q.inv_raw(a[col * n + col]).expect("pivot is nonzero");
            for r in col + 1..n {
                let factor = q.mul_raw(a[r * n + col], inv);
                a[r * n + col] = factor;
                if factor == 0 {
                    continue;
                }
                for c in col + 1..n {
                    let sub = q.mul_raw(factor, a[col * n + c]);
                    a[r * n + c] = q.sub_raw(a[r * n + c], sub);
                }
            }
        }
        Ok(LuFactorization {
            size: n,
            modulus: q,
            packed: a,
            perm,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Solves `A X = B` for every column of `rhs`.
    pub fn solve(&self, rhs: &BlockMatrix) -> Result<BlockMatrix, MatrixError> {
        let n = self.size;
        if rhs.rows != n || rhs.modulus != self.modulus {
            return Err(MatrixError::Dimension(format!(
                "right-hand side is {}x{} over {}, system is {n}x{n} over {}",
                rhs.rows, rhs.cols, rhs.modulus, self.modulus
            )));
        }
        let q = self.modulus;
        let w = rhs.cols;
        let mut x = vec![0u64; n * w];
        for (i, &src) in self.perm.iter().enumerate() {
            x[i * w..(i + 1) * w].copy_from_slice(&rhs.entries[src * w..(src + 1) * w]);
        }
        // forward substitution with unit-lower L
        for i in 0..n {
            for k in 0..i {
                let l = self.packed[i * n + k];
                if l == 0 {
                    continue;
                }
                for c in 0..w {
                    let sub = q.mul_raw(l, x[k * w + c]);
                    x[i * w + c] = q.sub_raw(x[i * w + c], sub);
                }
            }
        }
        // back substitution with U
        for i in (0..n).rev() {
            for k in i + 1..n {
                let u = self.packed[i * n + k];
                if u == 0 {
                    continue;
                }
                for c in 0..w {
                    let sub = q.mul_raw(u, x[k * w + c]);
                    x[i * w + c] = q.sub_raw(x[i * w + c], sub);
                }
            }
            let inv = q
                .inv_raw(self.packed[i * n + i])
                .expect("U diagonal is nonzero");
            for c in 0..w {
                x[i * w + c] = q.mul_raw(x[i * w + c], inv);
            }
        }
        Ok(BlockMatrix {
            rows: n,
            cols: w,
            modulus: q,
            entries: x,
        })
    }
}
