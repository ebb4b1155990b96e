//! Worker-side computation: encode the shared libraries with the received
//! query and return `U_g = Σ_k Â_k B̂_k`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blockmatrix::{BlockMatrix, MatrixError};
use crate::encoder::Query;
use crate::field::FieldModulus;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkerError {
    #[error("library shape mismatch: {0}")]
    Shape(String),
    #[error("query shape mismatch: {0}")]
    QueryShape(String),
    #[error("query value {value} is not a residue mod {q}")]
    BadResidue { value: u64, q: u64 },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// The single matrix a worker returns, plus its multiplication count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerOutput {
    pub worker: usize,
    pub u: BlockMatrix,
    /// Field multiplications spent in the product-sum step only.
    pub mul_count: u64,
}

/// Wire form `{worker, rows, cols, entries, mul_count}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerOutputWire {
    pub worker: usize,
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<u64>,
    pub mul_count: u64,
}

impl WorkerOutput {
    pub fn to_wire(&self) -> WorkerOutputWire {
        WorkerOutputWire {
            worker: self.worker,
            rows: self.u.rows(),
            cols: self.u.cols(),
            entries: self.u.residues().to_vec(),
            mul_count: self.mul_count,
        }
    }

    pub fn from_wire(wire: WorkerOutputWire, modulus: FieldModulus) -> Result<Self, WorkerError> {
        let u = BlockMatrix::from_residues(wire.rows, wire.cols, modulus, wire.entries)?;
        Ok(WorkerOutput {
            worker: wire.worker,
            u,
            mul_count: wire.mul_count,
        })
    }
}

/// The two libraries every worker stores.
#[derive(Debug, Clone)]
pub struct Libraries {
    pub a: Vec<BlockMatrix>,
    pub b: Vec<BlockMatrix>,
}

impl Libraries {
    /// Checks that all matrices are `alpha x alpha` over one field.
    pub fn new(a: Vec<BlockMatrix>, b: Vec<BlockMatrix>) -> Result<Self, WorkerError> {
        let first = a
            .first()
            .or(b.first())
            .ok_or_else(|| WorkerError::Shape("empty libraries".into()))?;
        let (alpha, q) = (first.rows(), first.modulus());
        for mat in a.iter().chain(&b) {
            if mat.rows() != alpha || mat.cols() != alpha {
                return Err(WorkerError::Shape(format!(
                    "expected {alpha}x{alpha}, found {}x{}",
                    mat.rows(),
                    mat.cols()
                )));
            }
            if mat.modulus() != q {
                return Err(WorkerError::Shape(format!(
                    "mixed fields {} and {}",
                    q,
                    mat.modulus()
                )));
            }
        }
        Ok(Libraries { a, b })
    }

    pub fn alpha(&self) -> usize {
        self.a
            .first()
            .or(self.b.first())
            .map_or(0, BlockMatrix::rows)
    }

    pub fn modulus(&self) -> FieldModulus {
        self.a
            .first()
            .or(self.b.first())
            .expect("non-empty by construction")
            .modulus()
    }

    /// `Ã`: every `A_i` split into `m` row bands, in order `(i, a)`.
    pub fn left_blocks(&self, m: usize) -> Result<Vec<BlockMatrix>, MatrixError> {
        let mut out = Vec::with_capacity(m * self.a.len());
        for mat in &self.a {
            out.extend(mat.partition_rows(m)?);
        }
        Ok(out)
    }

    /// `B̃`: every `B_j` split into `n` column bands, in order `(j, b)`.
    pub fn right_blocks(&self, n: usize) -> Result<Vec<BlockMatrix>, MatrixError> {
        let mut out = Vec::with_capacity(n * self.b.len());
        for mat in &self.b {
            out.extend(mat.partition_cols(n)?);
        }
        Ok(out)
    }
}

fn check_query(libs: &Libraries, query: &Query) -> Result<(), WorkerError> {
    let q = libs.modulus().get();
    let expect = |name: &str, evals: &[Vec<u64>], rows: usize| -> Result<(), WorkerError> {
        if evals.len() != rows || evals.iter().any(|row| row.len() != query.r) {
            return Err(WorkerError::QueryShape(format!(
                "{name} must be {rows} rows of {} evaluations",
                query.r
            )));
        }
        match evals.iter().flatten().find(|v| **v >= q) {
            Some(&value) => Err(WorkerError::BadResidue { value, q }),
            None => Ok(()),
        }
    };
    if query.m == 0 || query.n == 0 || query.r == 0 {
        return Err(WorkerError::QueryShape(
            "m, n and r must be positive".into(),
        ));
    }
    expect("a_evals", &query.a_evals, query.m * libs.a.len())?;
    expect("b_evals", &query.b_evals, query.n * libs.b.len())
}

/// `Â_k = Σ_i Ã_i a_{i,k}` and `B̂_k = Σ_j B̃_j b_{j,k}` for every group `k`.
pub fn encode_libraries(
    libs: &Libraries,
    query: &Query,
) -> Result<(Vec<BlockMatrix>, Vec<BlockMatrix>), WorkerError> {
    check_query(libs, query)?;
    let q = libs.modulus();
    let alpha = libs.alpha();
    let left = libs.left_blocks(query.m)?;
    let right = libs.right_blocks(query.n)?;
    let mut a_hat = vec![BlockMatrix::zeros(alpha / query.m, alpha, q); query.r];
    let mut b_hat = vec![BlockMatrix::zeros(alpha, alpha / query.n, q); query.r];
    for (k, (ak, bk)) in a_hat.iter_mut().zip(b_hat.iter_mut()).enumerate() {
        for (block, evals) in left.iter().zip(&query.a_evals) {
            if evals[k] != 0 {
                ak.add_scaled_assign(block, q.element(evals[k]))?;
            }
        }
        for (block, evals) in right.iter().zip(&query.b_evals) {
            if evals[k] != 0 {
                bk.add_scaled_assign(block, q.element(evals[k]))?;
            }
        }
    }
    Ok((a_hat, b_hat))
}

/// Computes the worker's response to one query.
pub fn respond(libs: &Libraries, query: &Query) -> Result<WorkerOutput, WorkerError> {
    let (a_hat, b_hat) = encode_libraries(libs, query)?;
    let alpha = libs.alpha();
    let mut mul_count = 0;
    let mut u = BlockMatrix::zeros(alpha / query.m, alpha / query.n, libs.modulus());
    for (ak, bk) in a_hat.iter().zip(&b_hat) {
        let prod = ak.matmul_counted(bk, &mut mul_count)?;
        u.add_scaled_assign(&prod, libs.modulus().one())?;
    }
    Ok(WorkerOutput {
        worker: query.worker,
        u,
        mul_count,
    })
}
