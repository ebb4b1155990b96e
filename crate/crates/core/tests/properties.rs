use fpgmm::blockmatrix::BlockMatrix;
use fpgmm::config::InstanceConfig;
use fpgmm::costmodel::{fpgmm_metrics, mrfpmm_metrics, Rational};
use fpgmm::field::{rng_for, FieldModulus, RngStream, SeededRng};
use fpgmm::instance::{DesiredSet, GroupingPolicy};
use fpgmm::simulator::run;
use proptest::prelude::*;
use rand::SeedableRng;

const Q: u64 = 2_147_483_647;

fn divisor_of(mn: usize) -> impl Strategy<Value = usize> {
    let divisors: Vec<usize> = (1..=mn).filter(|d| mn.is_multiple_of(*d)).collect();
    proptest::sample::select(divisors)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn end_to_end_decoding_is_exact(
        (m, n, r) in (1usize..=3, 1usize..=3).prop_flat_map(|(m, n)| (Just(m), Just(n), divisor_of(m * n))),
        t in 1usize..=3,
        s_size in 1usize..=4,
        random_groups in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let desired = DesiredSet::random(2, 2, s_size, &mut rng_for(seed, RngStream::Desired)).unwrap();
        let products = s_size * m * n;
        let cfg = InstanceConfig {
            q: Q,
            alpha: 6,
            l_a: 2,
            l_b: 2,
            m,
            n,
            r,
            t,
            workers: products + products / r + 2 * t - 1,
            desired: desired.pairs().to_vec(),
            seed,
            grouping_policy: if random_groups { GroupingPolicy::Random } else { GroupingPolicy::RoundRobin },
            point_policy: Default::default(),
            stragglers: Default::default(),
            audit: true,
            record_timings: false,
        };
        let report = run(&cfg).unwrap();
        prop_assert!(report.success, "{:?}", report.failure);
        let cost = fpgmm_metrics(m as u64, n as u64, r as u64, t as u64, s_size as u64).unwrap();
        prop_assert_eq!(report.realized_ndc, Some(cost.ndc));
        prop_assert_eq!(report.realized_ncc, Some(cost.ncc));
    }

    #[test]
    fn closed_forms_are_consistent(m in 1u64..40, n in 1u64..40, p in 1u64..40, t in 1u64..5, s in 1u64..10) {
        let c = fpgmm_metrics(m, n, 1, t, s).unwrap();
        prop_assert_eq!(c.ndc * Rational::from_integer(s * m * n), Rational::from_integer(c.recovery_threshold));
        let b = mrfpmm_metrics(m, n, p, t, s).unwrap();
        prop_assert_eq!(b.recovery_threshold, mrfpmm_metrics(n, m, p, t, s).unwrap().recovery_threshold);
        prop_assert!(b.recovery_threshold < 2 * m * n * p + 2 * t);
    }

    #[test]
    fn partition_then_assemble_is_identity(rows in 1usize..4, cols in 1usize..4, m in 1usize..4, n in 1usize..4, seed in any::<u64>()) {
        let q = FieldModulus::new(101).unwrap();
        let mat = BlockMatrix::random(rows * m, cols * n, q, &mut SeededRng::seed_from_u64(seed));
        let grid: Vec<Vec<BlockMatrix>> = mat
            .partition_rows(m)
            .unwrap()
            .iter()
            .map(|band| band.partition_cols(n).unwrap())
            .collect();
        prop_assert_eq!(BlockMatrix::assemble_grid(&grid).unwrap(), mat);
    }
}
