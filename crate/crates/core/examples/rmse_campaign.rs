//! Small paired campaign on the default field; prints the per-step
//! horizontal RMSE of both arms.
//!
//! cargo run --release --example rmse_campaign -- [runs] [particles] [jobs]

use dualnav::harness::{monte_carlo, Arm};
use dualnav::scenario::{default_controller, default_scenario, DEFAULT_BETA};

fn main() -> dualnav::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let runs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let particles = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let jobs = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);
    let cfg = default_controller(DEFAULT_BETA, particles);
    let c = monte_carlo(&cfg, &default_scenario(), runs, 1, jobs, "rmse_campaign")?;

    println!("{:>3} {:>10} {:>10}", "k", "fisher", "straight");
    for k in 0..c.report.rows.len() {
        println!(
            "{k:>3} {:>10.2} {:>10.2}",
            c.report.horizontal(Arm::Fisher, k),
            c.report.horizontal(Arm::Straight, k)
        );
    }
    let late = 11..c.report.rows.len();
    println!(
        "steps {late:?}: fisher {:.2} m, straight {:.2} m over {} kept runs",
        c.report.mean_horizontal(Arm::Fisher, late.clone()),
        c.report.mean_horizontal(Arm::Straight, late.clone()),
        c.kept.len()
    );
    for e in &c.excluded {
        println!("excluded run {} (seed {}): {}", e.run, e.seed, e.reason);
    }
    Ok(())
}
