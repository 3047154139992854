//! Runs a benchmark configuration and prints the aggregate SI-SDR figures.
//! With an `offscreen` block it also reruns with the crosstalk weight set
//! to zero and prints the paired per-seed differences.
//!
//! cargo run --release -p ssnaps --example calibrate -- presets/bench-2spk.json

use std::time::Instant;

use ssnaps::config::RunConfig;
use ssnaps::mixkit::{run_benchmark, BenchReport, Estimator};

fn summary(label: &str, r: &BenchReport, secs: f64) {
    println!(
        "{label}: mixture {:.3} dB, estimate {:.3} dB, improvement {:.3} dB, on-screen {:.3} dB, off-screen {:.3} dB ({secs:.1} s)",
        r.mean_mixture(),
        r.mean_estimate(),
        r.mean_improvement(),
        r.mean_onscreen(),
        r.mean_offscreen()
    );
}

fn main() -> ssnaps::Result<()> {
    let path = std::env::args().nth(1).expect("usage: calibrate <bench-config.json>");
    let mut cfg = RunConfig::load(&path)?;

    let start = Instant::now();
    let report = run_benchmark(&cfg, Estimator::Ssnaps)?;
    summary("configured", &report, start.elapsed().as_secs_f64());

    if let Some(off) = cfg.offscreen.as_mut() {
        off.g_ctss = 0.0;
        let start = Instant::now();
        let baseline = run_benchmark(&cfg, Estimator::Ssnaps)?;
        summary("g_ctss = 0", &baseline, start.elapsed().as_secs_f64());
        println!("seed source delta_dB");
        for (a, b) in report.scores.iter().zip(&baseline.scores) {
            println!("{} {} {:+.4}", a.seed, a.source, a.estimate_si_sdr - b.estimate_si_sdr);
        }
    }
    Ok(())
}
