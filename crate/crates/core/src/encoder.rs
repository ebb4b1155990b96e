//! Master-side encoding: poles and worker points, noise polynomials, the
//! group annihilators `ω_k`, and the per-worker queries.
//!
//! For group `k` with poles `{f_p : p ∈ Q_k}` the encoding functions are
//!
//! ```text
//! a_{i,k}(x) = ω_k(x) · ( Σ_{p ∈ A^k_i} 1/(x - f_p) + Σ_t z^a_{i,k,t} x^(t-1) )
//! b_{j,k}(x) =            Σ_{p ∈ B^k_j} 1/(x - f_p) + Σ_t z^b_{j,k,t} x^(t-1)
//! ```
//!
//! and worker `g` receives their values at its private point `x_g`.

use std::collections::HashSet;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldElement, FieldError, FieldModulus};
use crate::instance::{ProblemInstance, SchemeParams};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("evaluation point {0} coincides with a pole")]
    PoleCollision(u64),
    #[error("plan has {got} poles but the instance has {expected} expanded products")]
    PlanMismatch { expected: usize, got: usize },
    #[error("noise tensor shape does not match the scheme parameters")]
    NoiseShape,
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// How poles and worker points are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointPolicy {
    /// Distinct pseudorandom residues drawn from the seed.
    #[default]
    Random,
    /// Poles `0, 1, .., M-1`, then worker points `M, .., M+N-1`.
    Ascending,
}

/// Master-private evaluation plan. Never sent to workers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvaluationPlan {
    /// Pole of each expanded product, in canonical expanded order.
    poles: Vec<FieldElement>,
    /// `worker_points[g - 1]` is `x_g`.
    worker_points: Vec<FieldElement>,
}

impl EvaluationPlan {
    pub fn assign<R: RngCore + ?Sized>(
        params: &SchemeParams,
        expanded_len: usize,
        policy: PointPolicy,
        rng: &mut R,
    ) -> Result<Self, EncodeError> {
        let q = params.q;
        let total = expanded_len + params.workers;
        let values = match policy {
            PointPolicy::Random => q.sample_distinct(total, &HashSet::new(), rng)?,
            PointPolicy::Ascending => {
                if (total as u128) > q.get() as u128 {
                    return Err(FieldError::InsufficientFieldSize {
                        requested: total,
                        excluded: 0,
                        q: q.get(),
                    }
                    .into());
                }
                (0..total as u64).map(|v| q.element(v)).collect()
            }
        };
        let (poles, points) = values.split_at(expanded_len);
        Ok(EvaluationPlan {
            poles: poles.to_vec(),
            worker_points: points.to_vec(),
        })
    }

    /// Explicit plan; checks distinctness and disjointness.
    pub fn from_parts(
        poles: Vec<FieldElement>,
        worker_points: Vec<FieldElement>,
    ) -> Result<Self, EncodeError> {
        let mut seen = HashSet::new();
        for p in &poles {
            if !seen.insert(*p) {
                return Err(EncodeError::PoleCollision(p.value()));
            }
        }
        for x in &worker_points {
            if !seen.insert(*x) {
                return Err(EncodeError::PoleCollision(x.value()));
            }
        }
        Ok(EvaluationPlan {
            poles,
            worker_points,
        })
    }

    pub fn poles(&self) -> &[FieldElement] {
        &self.poles
    }

    pub fn pole(&self, position: usize) -> FieldElement {
        self.poles[position]
    }

    pub fn worker_points(&self) -> &[FieldElement] {
        &self.worker_points
    }

    /// `x_g` for the 1-based worker id `g`.
    pub fn worker_point(&self, g: usize) -> Option<FieldElement> {
        g.checked_sub(1)
            .and_then(|i| self.worker_points.get(i))
            .copied()
    }
}

/// The uniform noise coefficients `z^a_{i,k,t}` and `z^b_{j,k,t}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseTensor {
    modulus: FieldModulus,
    left_len: usize,
    right_len: usize,
    groups: usize,
    degree: usize,
    z_a: Vec<u64>,
    z_b: Vec<u64>,
}

impl NoiseTensor {
    fn shape(params: &SchemeParams) -> (usize, usize, usize, usize) {
        (
            params.m * params.l_a,
            params.n * params.l_b,
            params.r,
            params.t,
        )
    }

    /// Number of noise symbols `T r (m L_A + n L_B)`.
    pub fn dims(params: &SchemeParams) -> usize {
        let (la, lb, r, t) = Self::shape(params);
        t * r * (la + lb)
    }

    /// Draws every coefficient i.i.d. uniform: all of `z^a` (i, k, t order), then `z^b`.
    pub fn sample<R: RngCore + ?Sized>(params: &SchemeParams, rng: &mut R) -> Self {
        let values: Vec<u64> = (0..Self::dims(params))
            .map(|_| params.q.sample_uniform(rng).value())
            .collect();
        Self::from_flat(params, &values).expect("length matches by construction")
    }

    pub fn zeros(params: &SchemeParams) -> Self {
        Self::from_flat(params, &vec![0; Self::dims(params)])
            .expect("length matches by construction")
    }

    /// Builds from a flat list laid out as in [`NoiseTensor::sample`].
    pub fn from_flat(params: &SchemeParams, values: &[u64]) -> Result<Self, EncodeError> {
        let (la, lb, r, t) = Self::shape(params);
        if values.len() != Self::dims(params) || values.iter().any(|v| *v >= params.q.get()) {
            return Err(EncodeError::NoiseShape);
        }
        let split = la * r * t;
        Ok(NoiseTensor {
            modulus: params.q,
            left_len: la,
            right_len: lb,
            groups: r,
            degree: t,
            z_a: values[..split].to_vec(),
            z_b: values[split..].to_vec(),
        })
    }

    pub fn z_a(&self, i: usize, k: usize, t: usize) -> FieldElement {
        self.modulus
            .element(self.z_a[((i - 1) * self.groups + k) * self.degree + (t - 1)])
    }

    pub fn z_b(&self, j: usize, k: usize, t: usize) -> FieldElement {
        self.modulus
            .element(self.z_b[((j - 1) * self.groups + k) * self.degree + (t - 1)])
    }

    fn horner(&self, coeffs: &[u64], x: FieldElement) -> FieldElement {
        let q = self.modulus;
        let v = coeffs
            .iter()
            .rev()
            .fold(0u64, |acc, c| q.mul_add_raw(*c, acc, x.value()));
        q.element(v)
    }

    /// `a^n_{i,k}(x) = Σ_t z^a_{i,k,t} x^(t-1)`.
    pub fn left_poly(&self, i: usize, k: usize, x: FieldElement) -> FieldElement {
        let start = ((i - 1) * self.groups + k) * self.degree;
        self.horner(&self.z_a[start..start + self.degree], x)
    }

    /// `b^n_{j,k}(x) = Σ_t z^b_{j,k,t} x^(t-1)`.
    pub fn right_poly(&self, j: usize, k: usize, x: FieldElement) -> FieldElement {
        let start = ((j - 1) * self.groups + k) * self.degree;
        self.horner(&self.z_b[start..start + self.degree], x)
    }

    fn matches(&self, params: &SchemeParams) -> bool {
        (self.left_len, self.right_len, self.groups, self.degree) == Self::shape(params)
            && self.modulus == params.q
    }
}

/// What worker `g` receives. Holds no pole and no evaluation point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Query {
    /// 1-based worker id.
    pub worker: usize,
    pub m: usize,
    pub n: usize,
    pub r: usize,
    /// `a_evals[i - 1][k]` is `a_{i,k}(x_g)` as a residue mod q.
    pub a_evals: Vec<Vec<u64>>,
    /// `b_evals[j - 1][k]` is `b_{j,k}(x_g)` as a residue mod q.
    pub b_evals: Vec<Vec<u64>>,
}

impl Query {
    /// Field elements plus the three public integers `m`, `n`, `r`.
    pub fn payload_size(&self) -> usize {
        self.a_evals
            .iter()
            .chain(&self.b_evals)
            .map(Vec::len)
            .sum::<usize>()
            + 3
    }

    /// All evaluations in a fixed order: `a` row by row, then `b`.
    pub fn flat_evals(&self) -> impl Iterator<Item = u64> + '_ {
        self.a_evals.iter().chain(&self.b_evals).flatten().copied()
    }
}

/// Evaluates the encoding functions of one instance under one plan and noise draw.
#[derive(Debug, Clone, Copy)]
pub struct Encoder<'a> {
    instance: &'a ProblemInstance,
    plan: &'a EvaluationPlan,
    noise: &'a NoiseTensor,
}

impl<'a> Encoder<'a> {
    pub fn new(
        instance: &'a ProblemInstance,
        plan: &'a EvaluationPlan,
        noise: &'a NoiseTensor,
    ) -> Result<Self, EncodeError> {
        if plan.poles.len() != instance.expanded.len() {
            return Err(EncodeError::PlanMismatch {
                expected: instance.expanded.len(),
                got: plan.poles.len(),
            });
        }
        if !noise.matches(&instance.params) {
            return Err(EncodeError::NoiseShape);
        }
        Ok(Encoder {
            instance,
            plan,
            noise,
        })
    }

    fn field(&self) -> FieldModulus {
        self.instance.params.q
    }

    /// `ω_k(x) = Π_{p ∈ Q_k} (x - f_p)`.
    pub fn omega(&self, k: usize, x: FieldElement) -> FieldElement {
        omega_eval(self.instance, self.plan, k, x)
    }

    fn reciprocal_sum(
        &self,
        positions: impl Iterator<Item = usize>,
        x: FieldElement,
    ) -> Result<FieldElement, EncodeError> {
        let mut acc = self.field().zero();
        for p in positions {
            let diff = x - self.plan.pole(p);
            acc += diff
                .inv()
                .map_err(|_| EncodeError::PoleCollision(x.value()))?;
        }
        Ok(acc)
    }

    fn check_point(&self, x: FieldElement) -> Result<(), EncodeError> {
        if x.modulus() != self.field() {
            return Err(FieldError::ModulusMismatch(self.field().get(), x.modulus().get()).into());
        }
        if self.plan.poles.contains(&x) {
            return Err(EncodeError::PoleCollision(x.value()));
        }
        Ok(())
    }

    /// `a_{i,k}(x)` for `i ∈ [m L_A]`.
    pub fn a_eval(&self, i: usize, k: usize, x: FieldElement) -> Result<FieldElement, EncodeError> {
        self.check_point(x)?;
        let grouping = &self.instance.grouping;
        let rational = self.reciprocal_sum(grouping.left_set(i, k), x)?;
        Ok(self.omega(k, x) * (rational + self.noise.left_poly(i, k, x)))
    }

    /// `b_{j,k}(x)` for `j ∈ [n L_B]`.
    pub fn b_eval(&self, j: usize, k: usize, x: FieldElement) -> Result<FieldElement, EncodeError> {
        self.check_point(x)?;
        let grouping = &self.instance.grouping;
        let rational = self.reciprocal_sum(grouping.right_set(j, k), x)?;
        Ok(rational + self.noise.right_poly(j, k, x))
    }

    /// The query for worker `g` evaluated at `x`.
    pub fn query_at(&self, g: usize, x: FieldElement) -> Result<Query, EncodeError> {
        let p = &self.instance.params;
        let a_evals = (1..=p.m * p.l_a)
            .map(|i| {
                (0..p.r)
                    .map(|k| self.a_eval(i, k, x).map(FieldElement::value))
                    .collect()
            })
            .collect::<Result<_, _>>()?;
        let b_evals = (1..=p.n * p.l_b)
            .map(|j| {
                (0..p.r)
                    .map(|k| self.b_eval(j, k, x).map(FieldElement::value))
                    .collect()
            })
            .collect::<Result<_, _>>()?;
        Ok(Query {
            worker: g,
            m: p.m,
            n: p.n,
            r: p.r,
            a_evals,
            b_evals,
        })
    }

    /// One query per worker, evaluated at that worker's point.
    pub fn build_queries(&self) -> Result<Vec<Query>, EncodeError> {
        self.plan
            .worker_points
            .par_iter()
            .enumerate()
            .map(|(idx, x)| self.query_at(idx + 1, *x))
            .collect()
    }
}

/// `ω_k(x)` for group `k` of the instance.
pub fn omega_eval(
    instance: &ProblemInstance,
    plan: &EvaluationPlan,
    k: usize,
    x: FieldElement,
) -> FieldElement {
    instance
        .grouping
        .group(k)
        .iter()
        .fold(x.modulus().one(), |acc, &p| acc * (x - plan.pole(p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::SeededRng;
    use crate::instance::{DesiredSet, GroupingPolicy};
    use rand::SeedableRng;

    fn gf(q: u64) -> FieldModulus {
        FieldModulus::new(q).unwrap()
    }

    #[allow(clippy::too_many_arguments)]
    fn params(
        q: u64,
        l_a: usize,
        l_b: usize,
        m: usize,
        n: usize,
        r: usize,
        t: usize,
        workers: usize,
    ) -> SchemeParams {
        SchemeParams {
            alpha: 4,
            l_a,
            l_b,
            m,
            n,
            r,
            t,
            workers,
            q: gf(q),
        }
    }

    fn instance(p: SchemeParams, s: &[(usize, usize)]) -> ProblemInstance {
        let mut rng = SeededRng::seed_from_u64(0);
        ProblemInstance::for_queries(
            p,
            DesiredSet::new(s.iter().copied()).unwrap(),
            GroupingPolicy::RoundRobin,
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn assign_points_distinct_and_disjoint() {
        let p = params(13, 2, 2, 1, 2, 2, 1, 7);
        let mut rng = SeededRng::seed_from_u64(1);
        let plan = EvaluationPlan::assign(&p, 4, PointPolicy::Random, &mut rng).unwrap();
        assert_eq!(plan.poles().len(), 4);
        assert_eq!(plan.worker_points().len(), 7);
        let all: HashSet<_> = plan.poles().iter().chain(plan.worker_points()).collect();
        assert_eq!(all.len(), 11);

        // q = |S~| + N uses every residue once
        let tight = params(11, 2, 2, 1, 2, 2, 1, 7);
        let plan = EvaluationPlan::assign(&tight, 4, PointPolicy::Random, &mut rng).unwrap();
        let all: HashSet<_> = plan.poles().iter().chain(plan.worker_points()).collect();
        assert_eq!(all.len(), 11);

        let small = params(7, 2, 2, 1, 2, 2, 1, 7);
        assert!(EvaluationPlan::assign(&small, 4, PointPolicy::Random, &mut rng).is_err());
        assert!(EvaluationPlan::assign(&small, 4, PointPolicy::Ascending, &mut rng).is_err());
    }

    #[test]
    fn omega_examples() {
        let p = params(7, 1, 1, 1, 1, 1, 1, 2);
        let inst = instance(p, &[(1, 1)]);
        let q = gf(7);
        let plan = EvaluationPlan::from_parts(vec![q.element(2)], vec![q.element(5), q.element(6)])
            .unwrap();
        assert_eq!(omega_eval(&inst, &plan, 0, q.element(5)), q.element(3));
        assert_eq!(omega_eval(&inst, &plan, 0, q.element(2)), q.zero());
    }

    #[test]
    fn omega_roots_are_the_group_poles() {
        let p = params(101, 2, 2, 2, 2, 2, 1, 5);
        let inst = instance(p, &[(1, 1), (2, 1)]);
        let mut rng = SeededRng::seed_from_u64(3);
        let plan =
            EvaluationPlan::assign(&p, inst.expanded.len(), PointPolicy::Random, &mut rng).unwrap();
        for k in 0..2 {
            let roots: Vec<_> = gf(101)
                .elements()
                .filter(|x| omega_eval(&inst, &plan, k, *x).is_zero())
                .collect();
            let mut expected: Vec<_> = inst
                .grouping
                .group(k)
                .iter()
                .map(|&p| plan.pole(p))
                .collect();
            expected.sort();
            assert_eq!(roots, expected);
            assert_eq!(roots.len(), inst.grouping.delta());
        }
    }

    #[test]
    fn empty_index_sets_with_zero_noise_vanish() {
        let p = params(13, 2, 2, 1, 2, 2, 1, 7);
        let inst = instance(p, &[(1, 1), (1, 2)]);
        let mut rng = SeededRng::seed_from_u64(4);
        let plan = EvaluationPlan::assign(&p, 4, PointPolicy::Random, &mut rng).unwrap();
        let noise = NoiseTensor::zeros(&p);
        let enc = Encoder::new(&inst, &plan, &noise).unwrap();
        let x = plan.worker_points()[0];
        // A_2 is never requested; B~_j only appears in group j mod 2
        assert!(enc.a_eval(2, 0, x).unwrap().is_zero());
        assert!(enc.a_eval(2, 1, x).unwrap().is_zero());
        assert!(enc.b_eval(1, 1, x).unwrap().is_zero());
        assert!(!enc.b_eval(1, 0, x).unwrap().is_zero());
    }

    #[test]
    fn single_pole_hand_evaluation() {
        // q=7, one pole f=2, T=1, noise z_a = 3, z_b = 4, x = 5:
        // a = (5-2) * (1/3 + 3) = 3 * (5 + 3) = 24 = 3 mod 7
        // b = 1/3 + 4 = 5 + 4 = 9 = 2 mod 7
        let p = params(7, 1, 1, 1, 1, 1, 1, 2);
        let inst = instance(p, &[(1, 1)]);
        let q = gf(7);
        let plan = EvaluationPlan::from_parts(vec![q.element(2)], vec![q.element(5), q.element(6)])
            .unwrap();
        let noise = NoiseTensor::from_flat(&p, &[3, 4]).unwrap();
        let enc = Encoder::new(&inst, &plan, &noise).unwrap();
        assert_eq!(enc.a_eval(1, 0, q.element(5)).unwrap(), q.element(3));
        assert_eq!(enc.b_eval(1, 0, q.element(5)).unwrap(), q.element(2));
        assert_eq!(
            enc.a_eval(1, 0, q.element(2)),
            Err(EncodeError::PoleCollision(2))
        );
        assert_eq!(
            enc.b_eval(1, 0, q.element(2)),
            Err(EncodeError::PoleCollision(2))
        );
    }

    #[test]
    fn illustrative_rational_structure() {
        // Group 0 of the illustrative instance holds (1,1) and (1,3), i.e. the
        // poles of A1 B_{1,1} and A1 B_{2,1}.
        let p = params(13, 2, 2, 1, 2, 2, 1, 7);
        let inst = instance(p, &[(1, 1), (1, 2)]);
        let q = gf(13);
        let plan = EvaluationPlan::assign(
            &p,
            4,
            PointPolicy::Ascending,
            &mut SeededRng::seed_from_u64(0),
        )
        .unwrap();
        let noise = NoiseTensor::zeros(&p);
        let enc = Encoder::new(&inst, &plan, &noise).unwrap();
        let x = plan.worker_points()[2];
        let (f11, f13) = (plan.pole(0), plan.pole(2));
        let omega = (x - f11) * (x - f13);
        let expected = omega * ((x - f11).inv().unwrap() + (x - f13).inv().unwrap());
        assert_eq!(enc.a_eval(1, 0, x).unwrap(), expected);
        // B~_3 = B_{2,1} has a rational term only in group 0
        assert_eq!(enc.b_eval(3, 0, x).unwrap(), (x - f13).inv().unwrap());
        assert_eq!(enc.b_eval(3, 1, x).unwrap(), q.zero());
    }

    #[test]
    fn queries_have_expected_payload() {
        let p = params(13, 2, 2, 1, 2, 2, 1, 7);
        let inst = instance(p, &[(1, 1), (1, 2)]);
        let mut rng = SeededRng::seed_from_u64(8);
        let plan = EvaluationPlan::assign(&p, 4, PointPolicy::Random, &mut rng).unwrap();
        let noise = NoiseTensor::sample(&p, &mut rng);
        let queries = Encoder::new(&inst, &plan, &noise)
            .unwrap()
            .build_queries()
            .unwrap();
        assert_eq!(queries.len(), 7);
        for (g, query) in queries.iter().enumerate() {
            assert_eq!(query.worker, g + 1);
            assert_eq!((query.m, query.n, query.r), (1, 2, 2));
            assert_eq!(query.a_evals.len(), 2);
            assert_eq!(query.b_evals.len(), 4);
            // r (m L_A + n L_B) + 3
            assert_eq!(query.payload_size(), 2 * (2 + 4) + 3);
        }
        let json = serde_json::to_value(&queries[0]).unwrap();
        let keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, vec!["a_evals", "b_evals", "m", "n", "r", "worker"]);
        assert_ne!(queries[0].a_evals, queries[1].a_evals);
    }

    #[test]
    fn noise_layout_round_trips() {
        let p = params(13, 2, 1, 2, 1, 2, 2, 7);
        let dims = NoiseTensor::dims(&p);
        assert_eq!(dims, 2 * 2 * (4 + 1));
        let flat: Vec<u64> = (0..dims as u64).map(|v| v % 13).collect();
        let z = NoiseTensor::from_flat(&p, &flat).unwrap();
        assert_eq!(z.z_a(1, 0, 1).value(), 0);
        assert_eq!(z.z_a(1, 0, 2).value(), 1);
        assert_eq!(z.z_a(1, 1, 1).value(), 2);
        assert_eq!(z.z_b(1, 0, 1).value(), 16 % 13);
        let x = gf(13).element(3);
        // a^n_{1,1}(3) = 2 + 3*3
        assert_eq!(z.left_poly(1, 1, x), gf(13).element(11));
        assert!(NoiseTensor::from_flat(&p, &flat[1..]).is_err());
    }
}
