//! Reconstruction: interpolate the rational response function from any `R`
//! worker outputs, divide out the partial-fraction residues and reassemble
//! the requested products.
//!
//! Each worker returns `U(x_g)` where
//!
//! ```text
//! U(x) = Σ_{p ∈ S~} γ_p Ã_p B̃_p / (x - f_p) + I(x),   deg I ≤ δ + 2T - 2
//! ```
//!
//! With `M = |S~|` poles and `δ + 2T - 1` polynomial coefficients there are
//! exactly `R` unknowns per matrix entry. The system
//! `[1/(x_g - f_1) .. 1/(x_g - f_M) 1 x_g .. x_g^(δ+2T-2)]` is invertible
//! whenever all poles and points are distinct, so one factorization serves
//! every entry position.

use std::collections::{BTreeMap, HashSet};

use serde_json::{Map, Value};
use thiserror::Error;

use crate::blockmatrix::{BlockMatrix, LuFactorization, MatrixError};
use crate::encoder::EvaluationPlan;
use crate::field::FieldElement;
use crate::instance::{ExpandedSet, Grouping, Pair, ProblemInstance};
use crate::worker::WorkerOutput;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("need {required} worker responses, got {got}")]
    InsufficientResponses { required: usize, got: usize },
    #[error("worker {0} responded more than once")]
    DuplicateWorker(usize),
    #[error("worker {0} has no evaluation point in the plan")]
    UnknownWorker(usize),
    #[error("evaluation point {0} is used twice")]
    DuplicatePoint(u64),
    #[error("evaluation point {0} equals a pole")]
    PointIsPole(u64),
    #[error("expected {expected} evaluation points, got {got}")]
    PointCount { expected: usize, got: usize },
    #[error("pair ({}, {}) is not in group {k}", .pair.0, .pair.1)]
    NotInGroup { pair: Pair, k: usize },
    #[error("worker outputs have inconsistent shapes")]
    ShapeMismatch,
    #[error("block ({}, {}) is missing", .0.0, .0.1)]
    MissingBlock(Pair),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// The function family being interpolated: ordered poles plus a polynomial
/// part of degree at most `poly_degree_bound`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RationalBasisSpec {
    pub poles: Vec<FieldElement>,
    pub poly_degree_bound: usize,
}

impl RationalBasisSpec {
    /// Poles in canonical expanded order and degree bound `δ + 2T - 2`.
    pub fn for_instance(instance: &ProblemInstance, plan: &EvaluationPlan) -> Self {
        RationalBasisSpec {
            poles: plan.poles().to_vec(),
            poly_degree_bound: instance.grouping.delta() + 2 * instance.params.t - 2,
        }
    }

    /// Number of unknown coefficients, which equals the recovery threshold.
    pub fn unknowns(&self) -> usize {
        self.poles.len() + self.poly_degree_bound + 1
    }
}

/// `γ = Π_{p ∈ Q_k \ {target}} (f_target - f_p)`, the residue of
/// `ω_k(x) / (x - f_target)^2` at `f_target`.
pub fn gamma_constant(
    grouping: &Grouping,
    plan: &EvaluationPlan,
    k: usize,
    target: Pair,
) -> Result<FieldElement, DecodeError> {
    let members = grouping.group(k);
    let target_pos = members
        .iter()
        .copied()
        .find(|&p| grouping.pair_at(p) == target)
        .ok_or(DecodeError::NotInGroup { pair: target, k })?;
    let f = plan.pole(target_pos);
    Ok(members
        .iter()
        .filter(|&&p| p != target_pos)
        .fold(f.modulus().one(), |acc, &p| acc * (f - plan.pole(p))))
}

/// Square interpolation matrix, one row per evaluation point.
pub fn build_system(
    basis: &RationalBasisSpec,
    points: &[FieldElement],
) -> Result<BlockMatrix, DecodeError> {
    let size = basis.unknowns();
    if points.len() != size {
        return Err(DecodeError::PointCount {
            expected: size,
            got: points.len(),
        });
    }
    let poles: HashSet<FieldElement> = basis.poles.iter().copied().collect();
    let mut seen = HashSet::new();
    for x in points {
        if poles.contains(x) {
            return Err(DecodeError::PointIsPole(x.value()));
        }
        if !seen.insert(*x) {
            return Err(DecodeError::DuplicatePoint(x.value()));
        }
    }
    let modulus = points[0].modulus();
    let mut mat = BlockMatrix::zeros(size, size, modulus);
    for (row, &x) in points.iter().enumerate() {
        for (col, &f) in basis.poles.iter().enumerate() {
            mat.set(
                row,
                col,
                (x - f).inv().expect("point differs from every pole"),
            );
        }
        let mut power = modulus.one();
        for d in 0..=basis.poly_degree_bound {
            mat.set(row, basis.poles.len() + d, power);
            power *= x;
        }
    }
    Ok(mat)
}

/// Decoded sub-block products keyed by their expanded `(row, col)` index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveredProducts {
    pub blocks: BTreeMap<Pair, BlockMatrix>,
    /// Worker ids whose outputs were used, ascending.
    pub used_workers: Vec<usize>,
}

/// Decodes from at least `R` outputs, using the `R` lowest worker ids.
pub fn solve_and_extract(
    outputs: &[WorkerOutput],
    instance: &ProblemInstance,
    plan: &EvaluationPlan,
) -> Result<RecoveredProducts, DecodeError> {
    let basis = RationalBasisSpec::for_instance(instance, plan);
    let required = basis.unknowns();
    debug_assert_eq!(required, instance.recovery_threshold());

    let mut sorted: Vec<&WorkerOutput> = outputs.iter().collect();
    sorted.sort_by_key(|o| o.worker);
    for pair in sorted.windows(2) {
        if pair[0].worker == pair[1].worker {
            return Err(DecodeError::DuplicateWorker(pair[0].worker));
        }
    }
    if sorted.len() < required {
        return Err(DecodeError::InsufficientResponses {
            required,
            got: sorted.len(),
        });
    }
    let chosen = &sorted[..required];

    let points = chosen
        .iter()
        .map(|o| {
            plan.worker_point(o.worker)
                .ok_or(DecodeError::UnknownWorker(o.worker))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let system = build_system(&basis, &points)?;
    let lu = LuFactorization::new(&system)
        .expect("distinct poles and evaluation points always give an invertible system");

    let (rows, cols) = (chosen[0].u.rows(), chosen[0].u.cols());
    if chosen
        .iter()
        .any(|o| (o.u.rows(), o.u.cols()) != (rows, cols) || o.u.modulus() != system.modulus())
    {
        return Err(DecodeError::ShapeMismatch);
    }
    let modulus = system.modulus();
    let mut rhs_entries = Vec::with_capacity(required * rows * cols);
    for o in chosen {
        rhs_entries.extend_from_slice(o.u.residues());
    }
    let rhs = BlockMatrix::from_residues(required, rows * cols, modulus, rhs_entries)?;
    let coeffs = lu.solve(&rhs)?;

    let grouping = &instance.grouping;
    let mut blocks = BTreeMap::new();
    for (position, entry) in instance.expanded.entries().iter().enumerate() {
        let k = grouping.group_of(position);
        let gamma = gamma_constant(grouping, plan, k, entry.pair())?;
        let scale = gamma
            .inv()
            .expect("gamma is a product of nonzero pole differences");
        let row = &coeffs.residues()[position * rows * cols..(position + 1) * rows * cols];
        let block = BlockMatrix::from_residues(rows, cols, modulus, row.to_vec())?.scale(scale);
        blocks.insert(entry.pair(), block);
    }
    Ok(RecoveredProducts {
        blocks,
        used_workers: chosen.iter().map(|o| o.worker).collect(),
    })
}

/// Reassembles each requested `A_i B_j` from its `m x n` decoded blocks.
pub fn assemble(
    recovered: &RecoveredProducts,
    expanded: &ExpandedSet,
) -> Result<BTreeMap<Pair, BlockMatrix>, DecodeError> {
    let (m, n) = (expanded.m(), expanded.n());
    let mut grids: BTreeMap<Pair, Vec<Vec<Option<BlockMatrix>>>> = BTreeMap::new();
    for entry in expanded.entries() {
        let block = recovered
            .blocks
            .get(&entry.pair())
            .ok_or(DecodeError::MissingBlock(entry.pair()))?;
        let grid = grids
            .entry(entry.source)
            .or_insert_with(|| vec![vec![None; n]; m]);
        grid[entry.block.0 - 1][entry.block.1 - 1] = Some(block.clone());
    }
    let mut out = BTreeMap::new();
    for (source, grid) in grids {
        let blocks: Vec<Vec<BlockMatrix>> = grid
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|b| b.expect("every block position is filled by the expansion"))
                    .collect()
            })
            .collect();
        out.insert(source, BlockMatrix::assemble_grid(&blocks)?);
    }
    Ok(out)
}

/// JSON export: `{"i,j": {rows, cols, q, entries}}`.
pub fn products_to_json(products: &BTreeMap<Pair, BlockMatrix>) -> Value {
    let map: Map<String, Value> = products
        .iter()
        .map(|((i, j), mat)| {
            (
                format!("{i},{j}"),
                serde_json::to_value(mat.to_literal()).expect("literal serializes"),
            )
        })
        .collect();
    Value::Object(map)
}

/// Inverse of [`products_to_json`].
pub fn products_from_json(value: &Value) -> Result<BTreeMap<Pair, BlockMatrix>, String> {
    let obj = value.as_object().ok_or("expected a JSON object")?;
    let mut out = BTreeMap::new();
    for (key, lit) in obj {
        let (i, j) = key
            .split_once(',')
            .ok_or_else(|| format!("bad key {key:?}"))?;
        let pair = (
            i.trim().parse().map_err(|_| format!("bad key {key:?}"))?,
            j.trim().parse().map_err(|_| format!("bad key {key:?}"))?,
        );
        let mat: BlockMatrix = serde_json::from_value(lit.clone()).map_err(|e| e.to_string())?;
        out.insert(pair, mat);
    }
    Ok(out)
}
