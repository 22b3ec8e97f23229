//! One paired episode on the default bump field: Fisher feedback versus the
//! straight baseline, sharing the same truth noise.
//!
//! cargo run --release --example fisher_feedback_episode -- [seed] [particles] [beta] [max_iter]

use std::time::Instant;

use dualnav::controller::{fisher_feedback_episode, straight_baseline_episode, EpisodeLog};
use dualnav::scenario::{default_controller, default_scenario, DEFAULT_BETA};

fn summary(name: &str, log: &EpisodeLog) {
    let horizontal: Vec<f64> = log
        .steps
        .iter()
        .map(|s| ((s.truth[0] - s.estimate[0]).powi(2) + (s.truth[1] - s.estimate[1]).powi(2)).sqrt())
        .collect();
    let late = horizontal[11..].iter().sum::<f64>() / (horizontal.len() - 11) as f64;
    let max_x2 = log.steps.iter().map(|s| s.truth[1]).fold(f64::MIN, f64::max);
    let last = log.steps.last().unwrap();
    println!(
        "{name:>8}: trJ_T {:>12.4e}  late err {:>8.2} m  max x2 {:>7.1} m  final ({:.1}, {:.1})  iters {}",
        last.trace_j,
        late,
        max_x2,
        last.truth[0],
        last.truth[1],
        log.steps.iter().map(|s| s.iterations).sum::<usize>(),
    );
}

fn main() -> dualnav::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let particles = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let beta = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(DEFAULT_BETA);
    let scenario = default_scenario();
    let mut cfg = default_controller(beta, particles);
    if let Some(it) = args.get(4).and_then(|s| s.parse().ok()) {
        cfg.solver.max_iterations = it;
    }

    let t = Instant::now();
    let fisher = fisher_feedback_episode(&cfg, &scenario, seed)?;
    let tf = t.elapsed();
    let t = Instant::now();
    let straight = straight_baseline_episode(&cfg, &scenario, seed)?;
    let ts = t.elapsed();

    summary("fisher", &fisher);
    summary("straight", &straight);
    println!("elapsed: fisher {:.2?}, straight {:.2?}", tf, ts);
    for s in &fisher.steps {
        println!(
            "k={:>2} x=({:>7.1},{:>6.1}) e=({:>7.1},{:>6.1}) trJ={:.3e} ess={:.0}",
            s.k, s.truth[0], s.truth[1], s.estimate[0], s.estimate[1], s.trace_j, s.ess
        );
    }
    Ok(())
}
