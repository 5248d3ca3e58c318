//! Prints the congested-slot fraction of the default synthetic generator
//! over a range of seeds, with optional scaling of both peak amplitudes.
//!
//! cargo run --release -p pcnn-core --example calibrate_synth -- [seeds] [amplitude scale]

use pcnn_core::synth::{generate_segment, SynthConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(50);
    let scale: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1.0);

    let mut base = SynthConfig::default();
    base.peaks.iter_mut().for_each(|p| p.amplitude *= scale);
    let fractions: Vec<f64> = (0..seeds)
        .map(|seed| {
            let s = generate_segment(&SynthConfig { seed, ..base.clone() }, 0).expect("valid config");
            s.congested_fraction()
        })
        .collect();
    let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
    let min = fractions.iter().copied().fold(f64::INFINITY, f64::min);
    let max = fractions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!("seeds {seeds}  amplitude scale {scale}");
    println!("congested fraction: mean {mean:.3}  min {min:.3}  max {max:.3}");
    let inside = fractions.iter().filter(|f| (0.25..=0.45).contains(*f)).count();
    println!("{inside}/{seeds} seeds inside [0.25, 0.45]");
}
