//! End-to-end protocol runs with straggler injection and realized costs.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::blockmatrix::{BlockMatrix, MatrixError};
use crate::config::{ConfigError, GridPoint, InstanceConfig, StragglerMode, SweepConfig};
use crate::costmodel::{fpgmm_metrics, ratio_to_f64, ser_ratio, Rational};
use crate::decoder::{assemble, solve_and_extract, DecodeError};
use crate::encoder::{EncodeError, Encoder, EvaluationPlan, NoiseTensor};
use crate::field::{rng_for, RngStream};
use crate::instance::{DesiredSet, Pair, ProblemInstance};
use crate::worker::{respond, Libraries, WorkerError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("straggler model: {0}")]
    Stragglers(String),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Worker(#[from] WorkerError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

impl From<crate::instance::InstanceError> for SimError {
    fn from(e: crate::instance::InstanceError) -> Self {
        SimError::Config(e.into())
    }
}

/// Chooses the non-responding workers for one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StragglerModel {
    pub mode: StragglerMode,
    pub seed: u64,
}

impl StragglerModel {
    pub fn validate(&self, workers: usize) -> Result<(), SimError> {
        match self.mode {
            StragglerMode::FixedCount(k) if k > workers => Err(SimError::Stragglers(format!(
                "fixed_count {k} exceeds N = {workers}"
            ))),
            StragglerMode::Probability(p) if !(0.0..=1.0).contains(&p) => Err(
                SimError::Stragglers(format!("probability {p} is outside [0, 1]")),
            ),
            _ => Ok(()),
        }
    }

    /// 1-based ids of the stragglers, ascending.
    pub fn stragglers(&self, workers: usize) -> Vec<usize> {
        let mut rng = rng_for(self.seed, RngStream::Stragglers);
        let mut ids: Vec<usize> = match self.mode {
            StragglerMode::None => Vec::new(),
            StragglerMode::FixedCount(k) => sample(&mut rng, workers, k)
                .into_iter()
                .map(|i| i + 1)
                .collect(),
            StragglerMode::Probability(p) => (1..=workers).filter(|_| rng.random_bool(p)).collect(),
        };
        ids.sort_unstable();
        ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Audit {
    Passed,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseTimings {
    pub encode_ms: f64,
    pub compute_ms: f64,
    pub decode_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RunParams {
    pub q: u64,
    pub alpha: usize,
    #[serde(rename = "L_A")]
    pub l_a: usize,
    #[serde(rename = "L_B")]
    pub l_b: usize,
    pub m: usize,
    pub n: usize,
    pub r: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "N")]
    pub workers: usize,
    #[serde(rename = "S_size")]
    pub s_size: usize,
}

fn ser_opt_ratio<S: serde::Serializer>(r: &Option<Rational>, s: S) -> Result<S::Ok, S::Error> {
    match r {
        Some(r) => ser_ratio(r, s),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub success: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub params: RunParams,
    #[serde(rename = "S")]
    pub desired: Vec<Pair>,
    pub stragglers: Vec<usize>,
    pub responders: Vec<usize>,
    pub used_workers: Vec<usize>,
    #[serde(rename = "R")]
    pub recovery_threshold: usize,
    #[serde(serialize_with = "ser_ratio")]
    pub theoretical_ndc: Rational,
    #[serde(serialize_with = "ser_ratio")]
    pub theoretical_ncc: Rational,
    /// `(#used · α²/(mn)) / (|S| α²)`.
    #[serde(serialize_with = "ser_opt_ratio")]
    pub realized_ndc: Option<Rational>,
    /// `max mul_count / (|S| α³)` over responders.
    #[serde(serialize_with = "ser_opt_ratio")]
    pub realized_ncc: Option<Rational>,
    pub ndc: Option<f64>,
    pub ncc: Option<f64>,
    pub audit: Audit,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<PhaseTimings>,
}

/// A run plus its decoded products, for callers that inspect them.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub products: Option<BTreeMap<Pair, BlockMatrix>>,
}

/// Random `A_1..A_{L_A}` then `B_1..B_{L_B}` from the libraries stream.
pub fn random_libraries(cfg: &InstanceConfig) -> Result<Libraries, SimError> {
    let q = cfg.params()?.q;
    let mut rng = rng_for(cfg.seed, RngStream::Libraries);
    let a = (0..cfg.l_a)
        .map(|_| BlockMatrix::random(cfg.alpha, cfg.alpha, q, &mut rng))
        .collect();
    let b = (0..cfg.l_b)
        .map(|_| BlockMatrix::random(cfg.alpha, cfg.alpha, q, &mut rng))
        .collect();
    Ok(Libraries::new(a, b)?)
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Runs encode, query, respond (without stragglers) and decode.
///
/// Configuration problems are errors; protocol failures are reported.
pub fn run(cfg: &InstanceConfig) -> Result<RunReport, SimError> {
    run_detailed(cfg).map(|o| o.report)
}

pub fn run_detailed(cfg: &InstanceConfig) -> Result<RunOutcome, SimError> {
    let params = cfg.params()?;
    let desired = cfg.desired_set()?;
    let stragglers_model = StragglerModel {
        mode: cfg.stragglers,
        seed: cfg.seed,
    };
    stragglers_model.validate(params.workers)?;
    let instance = ProblemInstance::new(
        params,
        desired.clone(),
        cfg.grouping_policy,
        &mut rng_for(cfg.seed, RngStream::Grouping),
    )?;
    let libs = random_libraries(cfg)?;
    let s_size = desired.len();
    let cost = fpgmm_metrics(
        params.m as u64,
        params.n as u64,
        params.r as u64,
        params.t as u64,
        s_size as u64,
    )
    .expect("validated parameters");

    let start = Instant::now();
    let plan = EvaluationPlan::assign(
        &params,
        instance.expanded.len(),
        cfg.point_policy,
        &mut rng_for(cfg.seed, RngStream::Plan),
    )?;
    let noise = NoiseTensor::sample(&params, &mut rng_for(cfg.seed, RngStream::Noise));
    let queries = Encoder::new(&instance, &plan, &noise)?.build_queries()?;
    let encode_ms = ms(start);

    let stragglers = stragglers_model.stragglers(params.workers);
    let silent: BTreeSet<usize> = stragglers.iter().copied().collect();
    let start = Instant::now();
    let outputs = queries
        .par_iter()
        .filter(|qry| !silent.contains(&qry.worker))
        .map(|qry| respond(&libs, qry))
        .collect::<Result<Vec<_>, _>>()?;
    let compute_ms = ms(start);
    let responders: Vec<usize> = outputs.iter().map(|o| o.worker).collect();

    let start = Instant::now();
    let decoded = solve_and_extract(&outputs, &instance, &plan).and_then(|rec| {
        let products = assemble(&rec, &instance.expanded)?;
        Ok((rec.used_workers, products))
    });
    let decode_ms = ms(start);

    let mut report = RunReport {
        seed: cfg.seed,
        success: false,
        failure: None,
        params: RunParams {
            q: params.q.get(),
            alpha: params.alpha,
            l_a: params.l_a,
            l_b: params.l_b,
            m: params.m,
            n: params.n,
            r: params.r,
            t: params.t,
            workers: params.workers,
            s_size,
        },
        desired: desired.pairs().to_vec(),
        stragglers,
        responders,
        used_workers: Vec::new(),
        recovery_threshold: instance.recovery_threshold(),
        theoretical_ndc: cost.ndc,
        theoretical_ncc: cost.ncc,
        realized_ndc: None,
        realized_ncc: None,
        ndc: None,
        ncc: None,
        audit: Audit::Skipped,
        timings: cfg.record_timings.then_some(PhaseTimings {
            encode_ms,
            compute_ms,
            decode_ms,
        }),
    };

    let (used, products) = match decoded {
        Ok(v) => v,
        Err(e @ DecodeError::InsufficientResponses { .. }) => {
            report.failure = Some(e.to_string());
            return Ok(RunOutcome {
                report,
                products: None,
            });
        }
        Err(e) => {
            report.failure = Some(format!("decoding failed: {e}"));
            return Ok(RunOutcome {
                report,
                products: None,
            });
        }
    };

    let alpha = params.alpha as u64;
    let block_entries = outputs
        .first()
        .map_or(0, |o| (o.u.rows() * o.u.cols()) as u64);
    let max_mul = outputs.iter().map(|o| o.mul_count).max().unwrap_or(0);
    let realized_ndc = Rational::new(
        used.len() as u64 * block_entries,
        s_size as u64 * alpha * alpha,
    );
    let realized_ncc = Rational::new(max_mul, s_size as u64 * alpha * alpha * alpha);
    report.used_workers = used;
    report.realized_ndc = Some(realized_ndc);
    report.realized_ncc = Some(realized_ncc);
    report.ndc = Some(ratio_to_f64(&realized_ndc));
    report.ncc = Some(ratio_to_f64(&realized_ncc));

    if cfg.audit {
        let truth = ground_truth(&libs, &desired)?;
        if truth == products {
            report.audit = Audit::Passed;
            report.success = true;
        } else {
            report.audit = Audit::Failed;
            report.failure = Some("decoded products differ from direct multiplication".into());
        }
    } else {
        report.success = true;
    }
    Ok(RunOutcome {
        report,
        products: Some(products),
    })
}

/// `A_i B_j` for every `(i, j)` in `S`, computed directly.
pub fn ground_truth(
    libs: &Libraries,
    desired: &DesiredSet,
) -> Result<BTreeMap<Pair, BlockMatrix>, MatrixError> {
    desired
        .pairs()
        .iter()
        .map(|&(i, j)| Ok(((i, j), libs.a[i - 1].matmul(&libs.b[j - 1])?)))
        .collect()
}

/// One sweep entry: a report or the validation error for that point.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRecord {
    pub point: GridPoint,
    pub trial: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<RunReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// The run config of one sweep point and trial. `S` is drawn from `seed`.
pub fn sweep_instance(
    cfg: &SweepConfig,
    point: &GridPoint,
    seed: u64,
) -> Result<InstanceConfig, SimError> {
    let desired = DesiredSet::random(
        cfg.l_a,
        cfg.l_b,
        point.s_size,
        &mut rng_for(seed, RngStream::Desired),
    )?;
    let products = point.s_size * point.m * point.n;
    let threshold =
        products + products.checked_div(point.r).unwrap_or(0) + (2 * point.t).saturating_sub(1);
    Ok(InstanceConfig {
        q: cfg.q,
        alpha: cfg.alpha,
        l_a: cfg.l_a,
        l_b: cfg.l_b,
        m: point.m,
        n: point.n,
        r: point.r,
        t: point.t,
        workers: threshold + cfg.extra_workers,
        desired: desired.pairs().to_vec(),
        seed,
        grouping_policy: cfg.grouping_policy,
        point_policy: cfg.point_policy,
        stragglers: cfg.stragglers,
        audit: cfg.audit,
        record_timings: false,
    })
}

/// Runs every grid point `trials` times. Per-trial seeds are drawn in order
/// from the sweep seed, so results do not depend on scheduling.
pub fn sweep(cfg: &SweepConfig) -> Vec<SweepRecord> {
    let mut seeder = rng_for(cfg.seed, RngStream::Desired);
    let jobs: Vec<(GridPoint, usize, u64)> = cfg
        .grid
        .iter()
        .flat_map(|p| (0..cfg.trials).map(move |t| (*p, t)))
        .map(|(p, t)| (p, t, seeder.next_u64()))
        .collect();
    jobs.into_par_iter()
        .map(|(point, trial, seed)| {
            let result = sweep_instance(cfg, &point, seed).and_then(|inst| run(&inst));
            let (report, error) = match result {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            SweepRecord {
                point,
                trial,
                seed,
                report,
                error,
            }
        })
        .collect()
}

/// One JSON object per line.
pub fn write_jsonl<W: Write, T: Serialize>(records: &[T], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub const SUMMARY_HEADER: [&str; 12] = [
    "m", "n", "r", "T", "S_size", "N", "q", "R", "ndc", "ncc", "success", "seed",
];

/// CSV summary. Unrealized costs and failed points leave cells empty.
pub fn write_csv_summary<W: Write>(records: &[SweepRecord], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for rec in records {
        let p = rec.point;
        let mut row = vec![
            p.m.to_string(),
            p.n.to_string(),
            p.r.to_string(),
            p.t.to_string(),
            p.s_size.to_string(),
        ];
        match &rec.report {
            Some(rep) => {
                let f = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
                row.extend([
                    rep.params.workers.to_string(),
                    rep.params.q.to_string(),
                    rep.recovery_threshold.to_string(),
                    f(rep.ndc),
                    f(rep.ncc),
                    rep.success.to_string(),
                ]);
            }
            None => row.extend([
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                "false".into(),
            ]),
        }
        row.push(rec.seed.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> InstanceConfig {
        InstanceConfig::from_json(
            r#"{"q": 13, "alpha": 4, "L_A": 2, "L_B": 2, "m": 1, "n": 2, "r": 2,
                "T": 1, "N": 7, "S": [[1, 1], [1, 2]], "seed": 42, "grouping_policy": "round_robin"}"#,
        )
        .unwrap()
    }

    #[test]
    fn illustrative_example_succeeds_with_expected_costs() {
        let rep = run(&example()).unwrap();
        assert!(rep.success, "{rep:?}");
        assert_eq!(rep.audit, Audit::Passed);
        assert_eq!(rep.recovery_threshold, 7);
        assert_eq!(rep.used_workers, (1..=7).collect::<Vec<_>>());
        assert_eq!(rep.realized_ndc, Some(Rational::new(7, 4)));
        assert_eq!(rep.realized_ncc, Some(Rational::new(1, 2)));
        assert_eq!(rep.ndc, Some(1.75));
    }

    #[test]
    fn stragglers_beyond_slack_fail_and_within_slack_succeed() {
        let mut cfg = example();
        cfg.workers = 9;
        cfg.stragglers = StragglerMode::FixedCount(2);
        let ok = run(&cfg).unwrap();
        assert!(ok.success);
        assert_eq!(ok.stragglers.len(), 2);
        assert!(ok.used_workers.iter().all(|g| !ok.stragglers.contains(g)));
        cfg.stragglers = StragglerMode::FixedCount(3);
        let bad = run(&cfg).unwrap();
        assert!(!bad.success);
        assert!(bad.failure.unwrap().contains("7"));
        assert_eq!(bad.realized_ndc, None);
    }

    #[test]
    fn straggler_model_validation() {
        let m = StragglerModel {
            mode: StragglerMode::FixedCount(8),
            seed: 0,
        };
        assert!(m.validate(7).is_err());
        let p = StragglerModel {
            mode: StragglerMode::Probability(1.5),
            seed: 0,
        };
        assert!(p.validate(7).is_err());
        let all = StragglerModel {
            mode: StragglerMode::Probability(1.0),
            seed: 0,
        };
        assert_eq!(all.stragglers(5), vec![1, 2, 3, 4, 5]);
        let none = StragglerModel {
            mode: StragglerMode::Probability(0.0),
            seed: 0,
        };
        assert!(none.stragglers(5).is_empty());
    }

    #[test]
    fn invalid_config_is_an_error() {
        let mut cfg = example();
        cfg.r = 3;
        assert!(matches!(run(&cfg), Err(SimError::Config(_))));
        cfg = example();
        cfg.workers = 6;
        assert!(matches!(run(&cfg), Err(SimError::Config(_))));
    }

    #[test]
    fn reports_are_reproducible() {
        let a = serde_json::to_string(&run(&example()).unwrap()).unwrap();
        let b = serde_json::to_string(&run(&example()).unwrap()).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("\"realized_ndc\":\"7/4\""));
    }

    fn cost_sweep() -> SweepConfig {
        SweepConfig::from_json(
            r#"{"q": 2147483647, "alpha": 4, "L_A": 2, "L_B": 2, "seed": 9, "trials": 2,
                "grid": [{"m": 1, "n": 2, "r": 2, "T": 1, "S_size": 2},
                         {"m": 1, "n": 2, "r": 1, "T": 1, "S_size": 2},
                         {"m": 1, "n": 1, "r": 2, "T": 1, "S_size": 1}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn sweep_reproduces_costs_and_collects_errors() {
        let recs = sweep(&cost_sweep());
        assert_eq!(recs.len(), 6);
        let got: Vec<_> = recs[..4]
            .iter()
            .map(|r| {
                let rep = r.report.as_ref().unwrap();
                assert!(rep.success);
                (rep.recovery_threshold, rep.ndc.unwrap(), rep.ncc.unwrap())
            })
            .collect();
        assert_eq!(
            got,
            vec![
                (7, 1.75, 0.5),
                (7, 1.75, 0.5),
                (9, 2.25, 0.25),
                (9, 2.25, 0.25)
            ]
        );
        assert!(recs[4].error.is_some() && recs[5].error.is_some());
        assert_ne!(recs[0].seed, recs[1].seed);
    }

    #[test]
    fn sweep_is_deterministic_and_empty_grid_is_empty() {
        let a = serde_json::to_string(&sweep(&cost_sweep())).unwrap();
        let b = serde_json::to_string(&sweep(&cost_sweep())).unwrap();
        assert_eq!(a, b);
        let mut cfg = cost_sweep();
        cfg.grid.clear();
        assert!(sweep(&cfg).is_empty());
    }

    #[test]
    fn summary_csv_shape() {
        let recs = sweep(&cost_sweep());
        let mut buf = Vec::new();
        write_csv_summary(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "m,n,r,T,S_size,N,q,R,ndc,ncc,success,seed");
        assert_eq!(lines.len(), 7);
        assert!(lines[1].starts_with("1,2,2,1,2,7,2147483647,7,1.75,0.5,true,"));
        assert!(lines[5].starts_with("1,1,2,1,1,,,,,,false,"));
        let mut jl = Vec::new();
        write_jsonl(&recs, &mut jl).unwrap();
        assert_eq!(String::from_utf8(jl).unwrap().lines().count(), 6);
    }
}
