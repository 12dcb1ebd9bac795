//! Sequential against data-parallel micro stepping on the same fleet.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pem_core::device::PemConfig;
use pem_core::macro_model::{BinGrid, MacroMatrices};
use pem_core::micro::{simulate_micro, Execution, Heterogeneity, MicroFleet, MicroSettings};
use pem_core::signals::{synth_regd_scaled, SignalScale};
use pem_core::thermal::{DeviceParams, ThermalBand};

fn fleet_step(c: &mut Criterion) {
    let params = DeviceParams {
        noise_std: DeviceParams::noise_for_step_std(0.01, 2.0),
        ..DeviceParams::default()
    };
    let grid = BinGrid::new(40, ThermalBand::default()).unwrap();
    let cfg = PemConfig::default();
    let mats = MacroMatrices::build(&params, grid, &cfg, 89.0).unwrap();
    let mut group = c.benchmark_group("micro_600s");
    group.sample_size(10);
    for size in [1000usize, 10_000] {
        let scale = SignalScale {
            target_mean_kw: 0.3 * 6.0 * size as f64,
            amplitude_kw: 0.15 * 6.0 * size as f64,
        };
        let sig = synth_regd_scaled(600.0, 2.0, 4, &scale).unwrap();
        let fleet = MicroFleet::steady_state(size, &params, Heterogeneity::uniform(0.05), &mats, 1).unwrap();
        for (label, execution) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            let settings = MicroSettings {
                t_amb: 89.0,
                execution,
                grid,
            };
            group.bench_with_input(BenchmarkId::new(label, size), &size, |b, _| {
                b.iter(|| {
                    let mut f = fleet.clone();
                    simulate_micro(&mut f, &cfg, &sig, &settings).unwrap()
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, fleet_step);
criterion_main!(benches);
