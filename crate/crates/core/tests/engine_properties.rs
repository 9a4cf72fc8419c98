use std::sync::Arc;

use aesim_core::acquisition::{AcquisitionConfig, AcquisitionKind};
use aesim_core::dataset::{generate_synthetic_dataset, ScalarizerKind, SyntheticConfig};
use aesim_core::engine::{
    ExperimentConfig, ExperimentState, InterventionSpec, SeedModel, Source, Specimen, Status, SurrogateConfig,
};
use aesim_core::sampling::{BaseKind, Region};
use proptest::prelude::*;

fn specimen() -> Arc<Specimen> {
    let ds = generate_synthetic_dataset(&SyntheticConfig { height: 20, width: 20, rng_seed: 3, ..Default::default() })
        .unwrap();
    Arc::new(Specimen::new(ds, 8, None, ScalarizerKind::Area).unwrap())
}

#[derive(Debug, Clone)]
enum Op {
    Step,
    Exclude(usize),
    Prioritize(f64, f64, usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => Just(Op::Step),
        1 => (1usize..4).prop_map(Op::Exclude),
        1 => (0.0f64..1.0, 0.0f64..1.0, 1usize..4).prop_map(|(a, b, n)| Op::Prioritize(a, b, n)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn trace_invariants_hold_under_any_op_sequence(
        seed in 0u64..1000,
        kind in prop_oneof![Just(AcquisitionKind::Ei), Just(AcquisitionKind::Ucb), Just(AcquisitionKind::Mu)],
        seed_model in prop_oneof![Just(SeedModel::Gd), Just(SeedModel::Ud), Just(SeedModel::Uls)],
        ops in proptest::collection::vec(op(), 1..14),
    ) {
        let sp = specimen();
        let cfg = ExperimentConfig {
            acquisition: AcquisitionConfig::new(kind),
            seed_model,
            budget: 20,
            master_seed: seed,
            surrogate: SurrogateConfig { init_iters: 20, retrain_iters: 5, step_size: 0.01 },
            ..Default::default()
        };
        let mut s = ExperimentState::init(sp.clone(), cfg).unwrap();
        let [lo, hi] = sp.latent().bbox();
        for op in ops {
            let before = s.to_checkpoint().unwrap();
            let res = match op {
                Op::Step => s.step().map(|_| ()),
                Op::Exclude(n) => s
                    .apply_intervention(&InterventionSpec::Exclusion { centers: None, radius: None, base: BaseKind::Ud }, n)
                    .map(|_| ()),
                Op::Prioritize(a, b, n) => {
                    let x = lo[0] + a * (hi[0] - lo[0]);
                    let y = lo[1] + b * (hi[1] - lo[1]);
                    let w = 0.3 * (hi[0] - lo[0]);
                    let h = 0.3 * (hi[1] - lo[1]);
                    let region = Region::Rectangle { z1_min: x - w, z1_max: x + w, z2_min: y - h, z2_max: y + h };
                    s.apply_intervention(&InterventionSpec::Prioritizing { region, bandwidth: None }, n).map(|_| ())
                }
            };
            if res.is_err() {
                prop_assert_eq!(s.to_checkpoint().unwrap(), before);
            }
        }

        let trace = s.trace();
        let mut seen = vec![false; sp.len()];
        for (i, r) in trace.iter().enumerate() {
            prop_assert_eq!(r.step, i);
            prop_assert!(!seen[r.index]);
            seen[r.index] = true;
            prop_assert_eq!(r.source == Source::Seed, i < 5);
        }
        prop_assert_eq!(&seen[..], s.measured());
        prop_assert_eq!(s.curve().len(), trace.len() - 5 + 1);
        prop_assert!(trace.len() <= 20);
        prop_assert_eq!(s.status() == Status::BudgetExhausted, trace.len() == 20);
    }
}
