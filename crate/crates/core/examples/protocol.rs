//! Runs the simulation protocol and prints lifts.
//!
//! `cargo run --release --example protocol -- <users> <titles> <epochs> <runs>`

use std::time::Instant;

use tweedie_lab::harness::{run_many, ProtocolConfig};

fn main() {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("integer argument"))
        .collect();
    let mut cfg = ProtocolConfig::default();
    if let [users, titles, epochs, runs, ..] = args[..] {
        cfg.world.n_users = users;
        cfg.world.n_titles = titles;
        cfg.train.epochs = epochs;
        cfg.n_runs = runs;
    }
    let start = Instant::now();
    let report = run_many(&cfg).expect("protocol run");
    for k in &report.kinds {
        let mean = k.totals.iter().sum::<f64>() / k.totals.len() as f64;
        println!(
            "{:>10}  mean total {:>14.1}  curve {:?}",
            k.label,
            mean,
            k.mean_curve(cfg.world.n_users)
                .iter()
                .map(|v| v.round())
                .collect::<Vec<_>>()
        );
    }
    for c in &report.comparisons {
        println!(
            "{} vs {}: lift {:+.2}%  p {:?}",
            c.reference, c.baseline, c.lift_pct, c.p_value
        );
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
}
