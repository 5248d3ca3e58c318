//! Test-split errors of the main methods on synthetic benchmarks, one seed per
//! line.
//!
//! cargo run --release -p pcnn-core --example method_errors -- [seeds] [slot minutes]

use std::time::Instant;

use pcnn_core::baselines::InputMode;
use pcnn_core::eval::{compare_methods, CompareOptions, Method};
use pcnn_core::synth::{make_benchmark, SynthConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);
    let minutes: u32 = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let methods = [
        Method::Pcnn,
        Method::Mlp(InputMode::Matrix2d),
        Method::Mlp(InputMode::Vector1d),
        Method::Lr(InputMode::Matrix2d),
        Method::Lr(InputMode::Vector1d),
        Method::Ha(InputMode::Vector1d),
        Method::Knn,
        Method::Arima,
        Method::Sarima,
    ];
    for seed in 0..seeds {
        let bench = make_benchmark(&SynthConfig { seed, ..Default::default() }).expect("benchmark");
        let mut opts = CompareOptions { slot_minutes: vec![minutes], ..Default::default() };
        opts.pcnn.seed = seed;
        let started = Instant::now();
        let cells = compare_methods(&bench.series, &methods, &opts).expect("compare");
        let line: Vec<String> = cells
            .iter()
            .map(|c| match &c.metrics {
                Some(m) => format!("{} mae {:.4} mre {:.4}", c.method, m.mae, m.mre.unwrap_or(f64::NAN)),
                None => format!("{} failed", c.method),
            })
            .collect();
        println!("seed {seed} ({:.1}s): {}", started.elapsed().as_secs_f64(), line.join(" | "));
    }
}
