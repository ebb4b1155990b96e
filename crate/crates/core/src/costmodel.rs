//! Closed-form costs of the grouped scheme and of the multi-round baseline,
//! and the exhaustive NCC-bounded NDC minimization used for trade-off curves.
//!
//! All comparisons use exact rationals.

use std::cmp::Ordering;
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Rational = Ratio<u64>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("parameter {0} must be positive")]
    ZeroParameter(&'static str),
    #[error("r={r} does not divide m*n={mn}")]
    GroupsDoNotDivide { r: u64, mn: u64 },
}

/// Recovery threshold, download and computation cost of the grouped scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FpgmmCost {
    pub m: u64,
    pub n: u64,
    pub r: u64,
    pub t: u64,
    pub s_size: u64,
    pub recovery_threshold: u64,
    #[serde(serialize_with = "ser_ratio")]
    pub ndc: Rational,
    #[serde(serialize_with = "ser_ratio")]
    pub ncc: Rational,
}

/// Costs of running a single-product private scheme once per desired product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MrFpmmCost {
    pub m: u64,
    pub n: u64,
    pub p: u64,
    pub t: u64,
    pub s_size: u64,
    pub recovery_threshold: u64,
    #[serde(serialize_with = "ser_ratio")]
    pub ndc: Rational,
    #[serde(serialize_with = "ser_ratio")]
    pub ncc: Rational,
}

/// Serializes a ratio as the string `"num/den"`.
pub fn ser_ratio<S: serde::Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{}/{}", r.numer(), r.denom()))
}

pub fn ratio_to_f64(r: &Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Exact value of the shortest decimal that round-trips to `x`.
pub fn ratio_from_f64(x: f64) -> Option<Rational> {
    if !x.is_finite() || x < 0.0 {
        return None;
    }
    parse_ratio(&format!("{x}"))
}

/// Parses `"7/4"`, `"0.01"` or `"1.5e-2"` into an exact non-negative ratio.
pub fn parse_ratio(text: &str) -> Option<Rational> {
    let text = text.trim();
    if let Some((num, den)) = text.split_once('/') {
        let num: u64 = num.trim().parse().ok()?;
        let den: u64 = den.trim().parse().ok()?;
        return (den != 0).then(|| Rational::new(num, den));
    }
    let (mantissa, exp) = match text.split_once(['e', 'E']) {
        Some((m, e)) => (m, e.parse::<i32>().ok()?),
        None => (text, 0),
    };
    let (int, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int.is_empty() && frac.is_empty()
        || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit())
    {
        return None;
    }
    let digits: u64 = format!("{int}{frac}").parse().ok()?;
    let scale = exp - frac.len() as i32;
    let pow = 10u64.checked_pow(scale.unsigned_abs())?;
    if scale >= 0 {
        Some(Rational::from_integer(digits.checked_mul(pow)?))
    } else {
        Some(Rational::new(digits, pow))
    }
}

fn positive(name: &'static str, v: u64) -> Result<(), CostError> {
    if v == 0 {
        Err(CostError::ZeroParameter(name))
    } else {
        Ok(())
    }
}

/// `R = (r+1)/r |S| m n + 2T - 1`, `D = R / (|S| m n)`, `C = r / (|S| m n)`.
pub fn fpgmm_metrics(m: u64, n: u64, r: u64, t: u64, s_size: u64) -> Result<FpgmmCost, CostError> {
    for (name, v) in [("m", m), ("n", n), ("r", r), ("T", t), ("|S|", s_size)] {
        positive(name, v)?;
    }
    if !(m * n).is_multiple_of(r) {
        return Err(CostError::GroupsDoNotDivide { r, mn: m * n });
    }
    let products = s_size * m * n;
    let recovery_threshold = products + products / r + 2 * t - 1;
    Ok(FpgmmCost {
        m,
        n,
        r,
        t,
        s_size,
        recovery_threshold,
        ndc: Rational::new(recovery_threshold, products),
        ncc: Rational::new(r, products),
    })
}

/// `R~ = min((m+1)(np+T)-1, (n+1)(mp+T)-1, 2mnp+2T-1)`, `D~ = R~/(mn)`,
/// `C~ = 1/(mnp)`. The `|S|` rounds cancel in both normalizations.
pub fn mrfpmm_metrics(
    m: u64,
    n: u64,
    p: u64,
    t: u64,
    s_size: u64,
) -> Result<MrFpmmCost, CostError> {
    for (name, v) in [("m", m), ("n", n), ("p", p), ("T", t), ("|S|", s_size)] {
        positive(name, v)?;
    }
    let recovery_threshold = ((m + 1) * (n * p + t) - 1)
        .min((n + 1) * (m * p + t) - 1)
        .min(2 * m * n * p + 2 * t - 1);
    Ok(MrFpmmCost {
        m,
        n,
        p,
        t,
        s_size,
        recovery_threshold,
        ndc: Rational::new(recovery_threshold, m * n),
        ncc: Rational::new(1, m * n * p),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Fpgmm,
    Mrfpmm,
}

impl Scheme {
    /// Report annotation carried alongside results for this scheme.
    pub fn caveat(self) -> Option<&'static str> {
        match self {
            Scheme::Fpgmm => None,
            Scheme::Mrfpmm => {
                Some("multi-round baseline reveals |S| to the workers; cost comparator only")
            }
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Fpgmm => "fpgmm",
            Scheme::Mrfpmm => "mrfpmm",
        })
    }
}

/// Inclusive upper limits of the parameter search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchLimits {
    pub max_m: u64,
    pub max_n: u64,
    /// Only used by the multi-round baseline; `r` ranges over divisors of `mn`.
    pub max_p: u64,
}

impl Default for SearchLimits {
    fn default() -> Self {
        SearchLimits {
            max_m: 64,
            max_n: 64,
            max_p: 64,
        }
    }
}

/// One feasible parameter choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TradeoffPoint {
    pub scheme: Scheme,
    pub m: u64,
    pub n: u64,
    /// `r` for the grouped scheme, `p` for the baseline.
    pub r_or_p: u64,
    pub t: u64,
    pub s_size: u64,
    pub recovery_threshold: u64,
    #[serde(serialize_with = "ser_ratio")]
    pub ndc: Rational,
    #[serde(serialize_with = "ser_ratio")]
    pub ncc: Rational,
}

impl TradeoffPoint {
    /// Smaller NDC first, then smaller R, then lexicographic `(m, n, r_or_p)`.
    pub fn preference(&self, other: &Self) -> Ordering {
        self.ndc
            .cmp(&other.ndc)
            .then(self.recovery_threshold.cmp(&other.recovery_threshold))
            .then((self.m, self.n, self.r_or_p).cmp(&(other.m, other.n, other.r_or_p)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum TradeoffOutcome {
    Optimal(TradeoffPoint),
    Infeasible,
}

impl TradeoffOutcome {
    pub fn point(&self) -> Option<&TradeoffPoint> {
        match self {
            TradeoffOutcome::Optimal(p) => Some(p),
            TradeoffOutcome::Infeasible => None,
        }
    }
}

/// Every parameter tuple within `limits` whose recovery threshold fits in
/// `worker_cap`, regardless of NCC.
pub fn candidates(
    scheme: Scheme,
    worker_cap: u64,
    t: u64,
    s_size: u64,
    limits: SearchLimits,
) -> Vec<TradeoffPoint> {
    let mut out = Vec::new();
    for m in 1..=limits.max_m {
        for n in 1..=limits.max_n {
            match scheme {
                Scheme::Fpgmm => {
                    for r in (1..=m * n).filter(|r| (m * n) % r == 0) {
                        let c = fpgmm_metrics(m, n, r, t, s_size).expect("r divides mn");
                        if c.recovery_threshold <= worker_cap {
                            out.push(TradeoffPoint {
                                scheme,
                                m,
                                n,
                                r_or_p: r,
                                t,
                                s_size,
                                recovery_threshold: c.recovery_threshold,
                                ndc: c.ndc,
                                ncc: c.ncc,
                            });
                        }
                    }
                }
                Scheme::Mrfpmm => {
                    for p in 1..=limits.max_p {
                        let c = mrfpmm_metrics(m, n, p, t, s_size).expect("positive parameters");
                        if c.recovery_threshold <= worker_cap {
                            out.push(TradeoffPoint {
                                scheme,
                                m,
                                n,
                                r_or_p: p,
                                t,
                                s_size,
                                recovery_threshold: c.recovery_threshold,
                                ndc: c.ndc,
                                ncc: c.ncc,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

fn best_within(candidates: &[TradeoffPoint], ncc_bound: Rational) -> TradeoffOutcome {
    candidates
        .iter()
        .filter(|c| c.ncc <= ncc_bound)
        .min_by(|a, b| a.preference(b))
        .map_or(TradeoffOutcome::Infeasible, |p| {
            TradeoffOutcome::Optimal(*p)
        })
}

/// Minimal NDC subject to `C <= ncc_bound` and `R <= worker_cap`.
pub fn optimize_tradeoff(
    scheme: Scheme,
    ncc_bound: Rational,
    worker_cap: u64,
    t: u64,
    s_size: u64,
    limits: SearchLimits,
) -> TradeoffOutcome {
    best_within(
        &candidates(scheme, worker_cap, t, s_size, limits),
        ncc_bound,
    )
}

/// [`optimize_tradeoff`] for each bound, sharing one enumeration.
pub fn tradeoff_curve(
    scheme: Scheme,
    ncc_bounds: &[Rational],
    worker_cap: u64,
    t: u64,
    s_size: u64,
    limits: SearchLimits,
) -> Vec<TradeoffOutcome> {
    let all = candidates(scheme, worker_cap, t, s_size, limits);
    ncc_bounds.iter().map(|b| best_within(&all, *b)).collect()
}

/// `points` log-spaced bounds from `min` to `max` inclusive.
pub fn log_spaced_bounds(min: f64, max: f64, points: usize) -> Vec<Rational> {
    if points == 0 || min.is_nan() || max.is_nan() || min <= 0.0 || max < min {
        return Vec::new();
    }
    (0..points)
        .map(|i| {
            let frac = if points == 1 {
                0.0
            } else {
                i as f64 / (points - 1) as f64
            };
            let x = (min.ln() + frac * (max.ln() - min.ln())).exp();
            // four significant digits keep the bounds readable
            parse_ratio(&format!("{x:.3e}")).expect("positive finite bound")
        })
        .collect()
}

/// One line of a trade-off table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TradeoffRow {
    pub scheme: Scheme,
    pub ncc_bound: Rational,
    pub worker_cap: u64,
    pub t: u64,
    pub s_size: u64,
    pub outcome: TradeoffOutcome,
}

pub const TRADEOFF_HEADER: [&str; 12] = [
    "scheme",
    "ncc_bound",
    "m",
    "n",
    "r_or_p",
    "T",
    "S_size",
    "R",
    "ndc",
    "ncc",
    "worker_cap",
    "feasible",
];

/// Every scheme, cap and bound combination, in that nesting order.
pub fn tradeoff_table(
    schemes: &[Scheme],
    ncc_bounds: &[Rational],
    worker_caps: &[u64],
    t: u64,
    s_size: u64,
    limits: SearchLimits,
) -> Vec<TradeoffRow> {
    let mut rows = Vec::new();
    for &scheme in schemes {
        for &worker_cap in worker_caps {
            let curve = tradeoff_curve(scheme, ncc_bounds, worker_cap, t, s_size, limits);
            for (&ncc_bound, outcome) in ncc_bounds.iter().zip(curve) {
                rows.push(TradeoffRow {
                    scheme,
                    ncc_bound,
                    worker_cap,
                    t,
                    s_size,
                    outcome,
                });
            }
        }
    }
    rows
}

/// CSV with float costs; infeasible rows leave the parameter cells empty.
pub fn write_tradeoff_csv<W: std::io::Write>(
    rows: &[TradeoffRow],
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRADEOFF_HEADER)?;
    for row in rows {
        let mut rec = vec![
            row.scheme.to_string(),
            ratio_to_f64(&row.ncc_bound).to_string(),
        ];
        match row.outcome {
            TradeoffOutcome::Optimal(p) => rec.extend([
                p.m.to_string(),
                p.n.to_string(),
                p.r_or_p.to_string(),
                row.t.to_string(),
                row.s_size.to_string(),
                p.recovery_threshold.to_string(),
                ratio_to_f64(&p.ndc).to_string(),
                ratio_to_f64(&p.ncc).to_string(),
            ]),
            TradeoffOutcome::Infeasible => rec.extend([
                String::new(),
                String::new(),
                String::new(),
                row.t.to_string(),
                row.s_size.to_string(),
                String::new(),
                String::new(),
                String::new(),
            ]),
        }
        rec.push(row.worker_cap.to_string());
        rec.push(row.outcome.point().is_some().to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
