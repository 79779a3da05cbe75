use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use rcpb_core::model::{OccupancyVector, Regime, SystemParams};
use rcpb_core::sim::engine::prepare;
use rcpb_core::sim::{step, EventClock, SimState};

const STEPS: u64 = 10_000;

fn policies() -> Vec<(&'static str, Regime)> {
    vec![
        ("constrained", Regime::Constrained { c: 2, mu: 9.0 }),
        ("high_message", Regime::HighMessage { c: 1 }),
        ("power_of_2", Regime::PowerOfD { d: 2 }),
        ("pull", Regime::Pull),
    ]
}

fn steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("sim_step");
    group.throughput(Throughput::Elements(STEPS));
    for n in [500usize, 10_000] {
        for (name, regime) in policies() {
            let params = SystemParams::new(n, 0.9, regime);
            let start = OccupancyVector::from_tail(&[0.9, 0.3, 0.1]).unwrap();
            group.bench_with_input(BenchmarkId::new(name, n), &params, |b, params| {
                b.iter_batched(
                    || {
                        let mut state = SimState::from_occupancy(params.n, params.capacity(), &start);
                        prepare(&mut state, &params.regime);
                        (state, EventClock::new(params, 7))
                    },
                    |(mut state, mut clock)| {
                        for _ in 0..STEPS {
                            black_box(step(&mut state, &mut clock, &params.regime));
                        }
                        state
                    },
                    BatchSize::LargeInput,
                )
            });
        }
    }
    group.finish();
}

criterion_group!(benches, steps);
criterion_main!(benches);
