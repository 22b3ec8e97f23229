//! Drives the filter by hand on the default bump field along a fixed control
//! sequence: sample the truth, resample, predict, update.
//!
//! cargo run --release --example particle_filter_tracking -- [particles] [seed]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dualnav::plant::{observe, ControlVec};
use dualnav::particle_filter::ParticleSet;
use dualnav::scenario::default_scenario;

fn main() -> dualnav::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let s = default_scenario();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut truth = s.belief.sample(&mut rng);
    let mut set = ParticleSet::init(&s.belief, n, &mut rng)?;
    let z = observe(&truth, &s.terrain, s.noise.sample_observation(&mut rng))?;
    set = set.update(z, &s.terrain, &s.noise)?;

    // accelerate towards the bumps, then coast
    let controls: Vec<ControlVec> = (0..20)
        .map(|k| if k < 3 { ControlVec::new(0.05, 0.1, 0.0) } else { ControlVec::zeros() })
        .collect();
    println!("{:>3} {:>9} {:>9} {:>9} {:>8} {:>8}", "k", "x1", "x2", "height", "err", "ess");
    for (k, u) in controls.iter().enumerate() {
        let e = set.mean() - truth;
        println!(
            "{k:>3} {:>9.1} {:>9.1} {:>9.2} {:>8.2} {:>8.0}",
            truth[0],
            truth[1],
            s.terrain.height_at(truth[0], truth[1])?,
            e[0].hypot(e[1]),
            set.ess()
        );
        truth = s.dynamics.step(&truth, u, &s.noise.sample_process(&mut rng));
        let z = observe(&truth, &s.terrain, s.noise.sample_observation(&mut rng))?;
        let predicted = set.resample_systematic(&mut rng).predict(&s.dynamics, u, &s.noise, &mut rng);
        set = match predicted.update(z, &s.terrain, &s.noise) {
            Ok(updated) => updated,
            Err(err) => {
                println!("step {}: {err}, keeping predicted weights", k + 1);
                predicted
            }
        };
    }
    let e = set.mean() - truth;
    println!("final horizontal error {:.2} m", e[0].hypot(e[1]));
    Ok(())
}
