//! One open-loop solve from the prior cloud, with and without the Fisher
//! term. The weighted information penalty bends the planned path over the
//! bumps north of the corridor.
//!
//! cargo run --release --example trajectory_optimization -- [beta]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dualnav::fisher::fim_init;
use dualnav::ocp::OcpProblem;
use dualnav::particle_filter::ParticleSet;
use dualnav::scenario::{default_ocp, default_scenario, DEFAULT_BETA, DEFAULT_OCP_PARTICLES};
use dualnav::solver::SolverOptions;

fn main() -> dualnav::Result<()> {
    let beta = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(DEFAULT_BETA);
    let s = default_scenario();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let prior = ParticleSet::init(&s.belief, 2000, &mut rng)?;
    let subset = prior.top_k(DEFAULT_OCP_PARTICLES)?;
    let j0 = fim_init(&s.belief, &prior, &s.terrain, &s.noise, false)?;

    for b in [0.0, beta] {
        let cfg = default_ocp(b);
        let problem = OcpProblem::new(&subset, 0, &s.dynamics, &s.terrain, &s.noise, &cfg, j0, &mut rng)?;
        let sol = problem.solve(None, &SolverOptions::default())?;
        let bundle = problem.rollout(&sol.controls)?;
        let c = bundle.breakdown();
        println!(
            "beta {b:e}: {} iterations ({:?}), control {:.3}, fisher {:.3}, terminal {:.3}",
            sol.iterations, sol.termination, c.control, c.fisher, c.terminal
        );
        let path = bundle.mean_path();
        let line: Vec<String> = path.iter().step_by(2).map(|x| format!("({:.0},{:.0})", x[0], x[1])).collect();
        println!("  mean path {}", line.join(" "));
        println!("  trace J_T {:.3e}", bundle.fims.last().expect("rollout has fims").trace());
    }
    Ok(())
}
