//! Exhaustive verification that colluding workers see the same query
//! distribution whatever the desired set is.
//!
//! For tiny fields every noise assignment in `GF(q)^{T r (m L_A + n L_B)}` is
//! enumerated and the joint query tuple of the colluders is histogrammed.
//! Two desired sets are indistinguishable exactly when their histograms
//! coincide. A Monte Carlo marginal test covers fields too large to enumerate.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::encoder::{EncodeError, Encoder, EvaluationPlan, NoiseTensor, PointPolicy};
use crate::field::{rng_for, RngStream};
use crate::instance::{
    DesiredSet, GroupingPolicy, InstanceError, Pair, ProblemInstance, SchemeParams,
};

pub const DEFAULT_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PrivacyError {
    #[error("enumeration needs q^{z_dims} = {size} assignments, budget is {budget}")]
    BudgetExceeded {
        z_dims: usize,
        size: String,
        budget: u64,
    },
    #[error("colluder id {0} is not a worker")]
    UnknownColluder(usize),
    #[error("colluder {0} listed twice")]
    DuplicateColluder(usize),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

/// Whether the noise is drawn uniformly or forced to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    #[default]
    Uniform,
    /// Negative control: the queries become deterministic in `S`.
    Zeroed,
}

/// Histogram of the colluders' concatenated query evaluations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryDistribution {
    pub colluders: Vec<usize>,
    pub q: u64,
    pub z_dims: usize,
    /// Number of noise assignments enumerated (`q^{z_dims}`).
    pub total: u64,
    /// Length of each tuple: `|colluders| r (m L_A + n L_B)`.
    pub tuple_len: usize,
    pub histogram: BTreeMap<Vec<u64>, u64>,
}

impl QueryDistribution {
    /// Every possible tuple appears with the same count.
    pub fn is_uniform(&self) -> bool {
        let Some(support) = (self.q as u128).checked_pow(self.tuple_len as u32) else {
            return false;
        };
        if self.histogram.len() as u128 != support {
            return false;
        }
        let expected = self.total as u128 / support;
        expected * support == self.total as u128
            && self.histogram.values().all(|&c| c as u128 == expected)
    }
}

fn check_colluders(params: &SchemeParams, colluders: &[usize]) -> Result<(), PrivacyError> {
    let mut seen = HashSet::new();
    for &g in colluders {
        if g == 0 || g > params.workers {
            return Err(PrivacyError::UnknownColluder(g));
        }
        if !seen.insert(g) {
            return Err(PrivacyError::DuplicateColluder(g));
        }
    }
    Ok(())
}

fn colluder_tuple(
    encoder: &Encoder<'_>,
    plan: &EvaluationPlan,
    colluders: &[usize],
) -> Result<Vec<u64>, EncodeError> {
    let mut tuple = Vec::new();
    for &g in colluders {
        let x = plan
            .worker_point(g)
            .expect("colluder ids are checked against the plan");
        tuple.extend(encoder.query_at(g, x)?.flat_evals());
    }
    Ok(tuple)
}

/// Enumerates every noise assignment and histograms the colluders' view.
pub fn enumerate_distribution(
    instance: &ProblemInstance,
    plan: &EvaluationPlan,
    colluders: &[usize],
    budget: u64,
    noise: NoiseMode,
) -> Result<QueryDistribution, PrivacyError> {
    let params = &instance.params;
    check_colluders(params, colluders)?;
    let q = params.q.get();
    let z_dims = NoiseTensor::dims(params);
    let total = q
        .checked_pow(z_dims as u32)
        .filter(|&size| size <= budget)
        .ok_or_else(|| PrivacyError::BudgetExceeded {
            z_dims,
            size: (q as u128)
                .checked_pow(z_dims as u32)
                .map_or_else(|| "overflow".into(), |s| s.to_string()),
            budget,
        })?;
    let tuple_len = colluders.len() * params.r * (params.m * params.l_a + params.n * params.l_b);

    let histogram = match noise {
        NoiseMode::Zeroed => {
            let zeros = NoiseTensor::zeros(params);
            let tuple = colluder_tuple(&Encoder::new(instance, plan, &zeros)?, plan, colluders)?;
            BTreeMap::from([(tuple, total)])
        }
        NoiseMode::Uniform => {
            let chunk = 4096u64;
            let chunks = total.div_ceil(chunk);
            let merged = (0..chunks)
                .into_par_iter()
                .map(|c| -> Result<HashMap<Vec<u64>, u64>, PrivacyError> {
                    let mut local = HashMap::new();
                    let mut digits = vec![0u64; z_dims];
                    for index in c * chunk..((c + 1) * chunk).min(total) {
                        let mut rest = index;
                        for d in digits.iter_mut() {
                            *d = rest % q;
                            rest /= q;
                        }
                        let tensor = NoiseTensor::from_flat(params, &digits)?;
                        let tuple = colluder_tuple(
                            &Encoder::new(instance, plan, &tensor)?,
                            plan,
                            colluders,
                        )?;
                        *local.entry(tuple).or_insert(0u64) += 1;
                    }
                    Ok(local)
                })
                .try_reduce(HashMap::new, |mut a, b| {
                    for (k, v) in b {
                        *a.entry(k).or_insert(0) += v;
                    }
                    Ok(a)
                })?;
            merged.into_iter().collect()
        }
    };
    Ok(QueryDistribution {
        colluders: colluders.to_vec(),
        q,
        z_dims,
        total,
        tuple_len,
        histogram,
    })
}

/// Knobs shared by both desired sets in a comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrivacyOptions {
    pub budget: u64,
    pub noise: NoiseMode,
    pub seed: u64,
    pub grouping: GroupingPolicy,
    pub points: PointPolicy,
}

impl Default for PrivacyOptions {
    fn default() -> Self {
        PrivacyOptions {
            budget: DEFAULT_BUDGET,
            noise: NoiseMode::Uniform,
            seed: 0,
            grouping: GroupingPolicy::RoundRobin,
            points: PointPolicy::Random,
        }
    }
}

/// First tuple, in lexicographic order, whose counts differ.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Divergence {
    pub tuple: Vec<u64>,
    pub count_s1: u64,
    pub count_s2: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PrivacyVerdict {
    pub pass: bool,
    /// False when more than `T` colluders were requested; the result is then
    /// an observation, not a guarantee.
    pub in_contract: bool,
    pub method: &'static str,
    pub bins: usize,
    pub bins_s2: usize,
    pub uniform: bool,
    pub z_dims: usize,
    pub q: u64,
    pub colluders: Vec<usize>,
    pub s1: Vec<Pair>,
    pub s2: Vec<Pair>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_divergence: Option<Divergence>,
}

/// Builds the query-side instance and plan for `s`, reusing the seed streams
/// so that both desired sets go through the same assignment procedure.
pub fn query_instance(
    params: SchemeParams,
    s: &DesiredSet,
    options: &PrivacyOptions,
) -> Result<(ProblemInstance, EvaluationPlan), PrivacyError> {
    let instance = ProblemInstance::for_queries(
        params,
        s.clone(),
        options.grouping,
        &mut rng_for(options.seed, RngStream::Grouping),
    )?;
    let plan = EvaluationPlan::assign(
        &params,
        instance.expanded.len(),
        options.points,
        &mut rng_for(options.seed, RngStream::Plan),
    )?;
    Ok((instance, plan))
}

/// Compares the colluders' exact query distributions under `s1` and `s2`.
pub fn privacy_check(
    params: SchemeParams,
    s1: &DesiredSet,
    s2: &DesiredSet,
    colluders: &[usize],
    options: &PrivacyOptions,
) -> Result<PrivacyVerdict, PrivacyError> {
    let (inst1, plan1) = query_instance(params, s1, options)?;
    let (inst2, plan2) = query_instance(params, s2, options)?;
    let d1 = enumerate_distribution(&inst1, &plan1, colluders, options.budget, options.noise)?;
    let d2 = enumerate_distribution(&inst2, &plan2, colluders, options.budget, options.noise)?;

    let first_divergence = d1
        .histogram
        .keys()
        .chain(d2.histogram.keys())
        .filter(|t| d1.histogram.get(*t) != d2.histogram.get(*t))
        .min()
        .map(|t| Divergence {
            tuple: t.clone(),
            count_s1: d1.histogram.get(t).copied().unwrap_or(0),
            count_s2: d2.histogram.get(t).copied().unwrap_or(0),
        });
    Ok(PrivacyVerdict {
        pass: first_divergence.is_none(),
        in_contract: colluders.len() <= params.t,
        method: "exhaustive",
        bins: d1.histogram.len(),
        bins_s2: d2.histogram.len(),
        uniform: d1.is_uniform() && d2.is_uniform(),
        z_dims: d1.z_dims,
        q: d1.q,
        colluders: colluders.to_vec(),
        s1: s1.pairs().to_vec(),
        s2: s2.pairs().to_vec(),
        first_divergence,
    })
}

/// Per-coordinate chi-square statistics of sampled colluder views.
/// A statistical check only; it says nothing about joint dependence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub method: &'static str,
    pub samples: u64,
    pub dof: u64,
    pub chi_square: Vec<f64>,
    /// `dof + 5 sqrt(2 dof)`.
    pub critical: f64,
    pub pass: bool,
}

/// Samples `samples` noise draws and tests each query coordinate seen by the
/// colluders for uniformity over `GF(q)`.
pub fn monte_carlo_marginals<R: RngCore + ?Sized>(
    instance: &ProblemInstance,
    plan: &EvaluationPlan,
    colluders: &[usize],
    samples: u64,
    rng: &mut R,
) -> Result<MonteCarloReport, PrivacyError> {
    let params = &instance.params;
    check_colluders(params, colluders)?;
    let q = params.q.get();
    let tuple_len = colluders.len() * params.r * (params.m * params.l_a + params.n * params.l_b);
    let mut counts = vec![HashMap::<u64, u64>::new(); tuple_len];
    for _ in 0..samples {
        let tensor = NoiseTensor::sample(params, rng);
        let tuple = colluder_tuple(&Encoder::new(instance, plan, &tensor)?, plan, colluders)?;
        for (c, v) in counts.iter_mut().zip(tuple) {
            *c.entry(v).or_insert(0) += 1;
        }
    }
    let expected = samples as f64 / q as f64;
    let chi_square: Vec<f64> = counts
        .iter()
        .map(|c| {
            let seen: f64 = c
                .values()
                .map(|&o| (o as f64 - expected).powi(2) / expected)
                .sum();
            seen + (q - c.len() as u64) as f64 * expected
        })
        .collect();
    let dof = q - 1;
    let critical = dof as f64 + 5.0 * (2.0 * dof as f64).sqrt();
    let pass = chi_square.iter().all(|&x| x <= critical);
    Ok(MonteCarloReport {
        method: "monte_carlo",
        samples,
        dof,
        chi_square,
        critical,
        pass,
    })
}
