//! On a plane the measurement is linear, so the Kalman filter is exact. This
//! runs a straight-arm episode on the tilted plane and compares the particle
//! filter and the inverse Fisher information with the Kalman recursion.
//!
//! cargo run --release --example kalman_equivalence -- [particles] [seed]

use dualnav::controller::straight_baseline_episode;
use dualnav::fisher::{fim_init, fim_step};
use dualnav::harness::kalman_oracle;
use dualnav::particle_filter::ParticleSet;
use dualnav::scenario::{default_controller, plane_scenario};
use dualnav::terrain::PlaneMap;

fn main() -> dualnav::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let particles = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let s = plane_scenario(PlaneMap { a: 0.05, b: 0.02, c: 10.0 });
    let cfg = default_controller(0.0, particles);

    let log = straight_baseline_episode(&cfg, &s, seed)?;
    let observations: Vec<f64> = log.steps.iter().map(|r| r.observation).collect();
    let kf = kalman_oracle(&s.dynamics, &s.terrain, &s.noise, &s.belief, &log.controls(), &observations)?;

    let cloud = ParticleSet::uniform(vec![*s.belief.mean()], 0)?;
    let mut j = fim_init(&s.belief, &cloud, &s.terrain, &s.noise, true)?;
    println!("{:>3} {:>12} {:>12} {:>10} {:>10}", "k", "|pf-kf| x1", "|pf-kf| x2", "kf std x1", "|J^-1-P|");
    for (k, r) in log.steps.iter().enumerate() {
        if k > 0 {
            j = fim_step(&j, &s.dynamics, &s.noise, &cloud, &s.terrain)?;
        }
        let gap = r.estimate - kf.means[k];
        let cov_err = (j.inverse()? - kf.covs[k]).amax();
        println!(
            "{k:>3} {:>12.3} {:>12.3} {:>10.3} {:>10.2e}",
            gap[0].abs(),
            gap[1].abs(),
            kf.std_at(k)[0],
            cov_err
        );
    }
    Ok(())
}
