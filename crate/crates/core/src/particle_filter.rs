//! Bootstrap particle filter over the 6-D vehicle state.
//!
//! A [`ParticleSet`] is the belief `p(X_k | I_k)` consumed by the trajectory
//! optimizer and the Fisher information recursion. Its weighted mean is the
//! state estimate.

use std::io::{self, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::plant::{observe, ControlVec, InitialBelief, LinearDynamics, NoiseModel, StateVec};
use crate::terrain::TerrainMap;

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSet {
    particles: Vec<StateVec>,
    weights: Vec<f64>,
    step: usize,
}

impl ParticleSet {
    /// Builds a set from explicit particles and weights; weights are normalized.
    pub fn new(particles: Vec<StateVec>, weights: Vec<f64>, step: usize) -> Result<Self> {
        if particles.is_empty() || particles.len() != weights.len() {
            return Err(Error::BadCount {
                requested: weights.len(),
                available: particles.len(),
            });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::DegenerateWeights);
        }
        let mut set = ParticleSet {
            particles,
            weights,
            step,
        };
        set.normalize()?;
        Ok(set)
    }

    pub fn uniform(particles: Vec<StateVec>, step: usize) -> Result<Self> {
        let n = particles.len();
        ParticleSet::new(particles, vec![1.0 / n.max(1) as f64; n], step)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particles(&self) -> &[StateVec] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StateVec, f64)> {
        self.particles.iter().zip(self.weights.iter().copied())
    }

    fn normalize(&mut self) -> Result<()> {
        let total: f64 = self.weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::DegenerateWeights);
        }
        let inv = 1.0 / total;
        self.weights.iter_mut().for_each(|w| *w *= inv);
        Ok(())
    }

    /// Resets every weight to `1/N`.
    pub fn reset_weights(&mut self) {
        let w = 1.0 / self.len() as f64;
        self.weights.iter_mut().for_each(|x| *x = w);
    }

    /// `N` iid draws from the prior with uniform weights.
    pub fn init<R: Rng + ?Sized>(belief: &InitialBelief, n: usize, rng: &mut R) -> Result<Self> {
        if n == 0 {
            return Err(Error::BadCount {
                requested: 0,
                available: 0,
            });
        }
        let particles = (0..n).map(|_| belief.sample(rng)).collect();
        ParticleSet::uniform(particles, 0)
    }

    /// Propagates each particle through the dynamics with fresh process noise.
    pub fn predict<R: Rng + ?Sized>(
        &self,
        dyn_: &LinearDynamics,
        u: &ControlVec,
        nm: &NoiseModel,
        rng: &mut R,
    ) -> ParticleSet {
        let particles = self
            .particles
            .iter()
            .map(|x| dyn_.step(x, u, &nm.sample_process(rng)))
            .collect();
        ParticleSet {
            particles,
            weights: self.weights.clone(),
            step: self.step + 1,
        }
    }

    /// Multiplies weights by the Gaussian likelihood of `z`; log-domain with
    /// max-subtraction. Particles whose horizontal position leaves a bounded
    /// map get zero likelihood.
    pub fn update(&self, z: f64, map: &TerrainMap, nm: &NoiseModel) -> Result<ParticleSet> {
        let inv_2r = 0.5 / nm.r();
        let log_w: Vec<f64> = self
            .iter()
            .map(|(x, w)| match observe(x, map, 0.0) {
                Ok(zhat) if w > 0.0 => w.ln() - (z - zhat) * (z - zhat) * inv_2r,
                _ => f64::NEG_INFINITY,
            })
            .collect();
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::DegenerateWeights);
        }
        let weights = log_w.iter().map(|l| (l - max).exp()).collect();
        let mut out = ParticleSet {
            particles: self.particles.clone(),
            weights,
            step: self.step,
        };
        out.normalize()?;
        Ok(out)
    }

    /// Effective sample size `1 / Σ w²`.
    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Systematic resampling: one uniform offset, stratified cumulative sweep.
    pub fn resample_systematic<R: Rng + ?Sized>(&self, rng: &mut R) -> ParticleSet {
        let n = self.len();
        let offset: f64 = rng.random::<f64>() / n as f64;
        let step = 1.0 / n as f64;
        let mut particles = Vec::with_capacity(n);
        let mut cumulative = self.weights[0];
        let mut i = 0;
        for j in 0..n {
            let position = offset + j as f64 * step;
            while position > cumulative && i + 1 < n {
                i += 1;
                cumulative += self.weights[i];
            }
            particles.push(self.particles[i]);
        }
        ParticleSet {
            particles,
            weights: vec![step; n],
            step: self.step,
        }
    }

    /// Weighted mean `Σ wᵢ xᵢ`.
    pub fn mean(&self) -> StateVec {
        self.iter().fold(StateVec::zeros(), |acc, (x, w)| acc + x * w)
    }

    /// Weighted covariance about the weighted mean.
    pub fn covariance(&self) -> nalgebra::Matrix6<f64> {
        let m = self.mean();
        self.iter().fold(nalgebra::Matrix6::zeros(), |acc, (x, w)| {
            let d = x - m;
            acc + d * d.transpose() * w
        })
    }

    /// The `ns` highest-weight particles, renormalized. Ties keep the lower index first.
    pub fn top_k(&self, ns: usize) -> Result<ParticleSet> {
        if ns == 0 || ns > self.len() {
            return Err(Error::BadCount {
                requested: ns,
                available: self.len(),
            });
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.weights[b].total_cmp(&self.weights[a]).then(a.cmp(&b)));
        order.truncate(ns);
        let particles = order.iter().map(|&i| self.particles[i]).collect();
        let weights: Vec<f64> = order.iter().map(|&i| self.weights[i]).collect();
        let mut out = ParticleSet {
            particles,
            weights,
            step: self.step,
        };
        if out.normalize().is_err() {
            out.reset_weights();
        }
        Ok(out)
    }

    /// Writes `k,i,x1,x2,x3,v1,v2,v3,w` rows (no header).
    pub fn write_snapshot<W: Write>(&self, out: &mut W) -> io::Result<()> {
        for (i, (x, w)) in self.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                self.step, i, x[0], x[1], x[2], x[3], x[4], x[5], w
            )?;
        }
        Ok(())
    }
}

pub const SNAPSHOT_HEADER: &str = "k,i,x1,x2,x3,v1,v2,v3,w";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::double_integrator;
    use crate::terrain::PlaneMap;
    use nalgebra::Matrix6;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sv(a: [f64; 6]) -> StateVec {
        StateVec::from(a)
    }

    fn with_weights(w: &[f64]) -> ParticleSet {
        let particles = (0..w.len()).map(|i| sv([i as f64, 0.0, 0.0, 0.0, 0.0, 0.0])).collect();
        ParticleSet::new(particles, w.to_vec(), 0).unwrap()
    }

    #[test]
    fn degenerate_prior_collapses_to_mean() {
        let m0 = [10.0, -5.0, 100.0, 1.0, 0.0, 0.0];
        let belief = InitialBelief::diagonal(m0, [1e-12; 6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set = ParticleSet::init(&belief, 50, &mut rng).unwrap();
        for x in set.particles() {
            assert!((x - sv(m0)).amax() < 1e-4);
        }
    }

    #[test]
    fn single_particle() {
        let belief = InitialBelief::diagonal([0.0; 6], [1.0; 6]).unwrap();
        let set = ParticleSet::init(&belief, 1, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(set.weights(), &[1.0]);
        assert_eq!(set.mean(), set.particles()[0]);
        assert!(matches!(
            ParticleSet::init(&belief, 0, &mut ChaCha8Rng::seed_from_u64(2)),
            Err(Error::BadCount { .. })
        ));
    }

    #[test]
    fn prior_sample_mean_within_clt_band() {
        let sd = [100.0, 50.0, 10.0, 1.0, 0.5, 0.1];
        let belief = InitialBelief::diagonal([0.0, 0.0, 100.0, 0.0, 0.0, 0.0], sd.map(|s| s * s)).unwrap();
        let n = 100_000;
        let set = ParticleSet::init(&belief, n, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let m = set.mean();
        for i in 0..6 {
            assert!((m[i] - belief.mean()[i]).abs() < 3.0 * sd[i] / (n as f64).sqrt(), "coord {i}");
        }
    }

    #[test]
    fn predict_without_noise_is_deterministic_map() {
        let d = double_integrator(10.0).unwrap();
        let nm = NoiseModel::new(Matrix6::zeros(), 1.0).unwrap();
        let zero = ParticleSet::uniform(vec![StateVec::zeros(); 5], 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = zero.predict(&d, &ControlVec::zeros(), &nm, &mut rng);
        assert!(p.particles().iter().all(|x| *x == StateVec::zeros()));
        assert_eq!(p.step(), 1);

        let set = with_weights(&[0.2, 0.3, 0.5]);
        let u = ControlVec::new(0.1, -0.2, 0.0);
        let p = set.predict(&d, &u, &nm, &mut rng);
        for (a, b) in p.particles().iter().zip(set.particles()) {
            assert_eq!(*a, d.drift(b, &u));
        }
        assert_eq!(p.weights(), set.weights());
    }

    #[test]
    fn predict_adds_process_variance() {
        let d = double_integrator(1.0).unwrap();
        let sigma2 = 4.0;
        let nm = NoiseModel::new(Matrix6::identity() * sigma2, 1.0).unwrap();
        let belief = InitialBelief::diagonal([0.0; 6], [1.0, 1.0, 1.0, 0.0, 0.0, 0.0].map(|v: f64| v.max(1e-12))).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let set = ParticleSet::init(&belief, 100_000, &mut rng).unwrap();
        let before = set.covariance();
        let after = set.predict(&d, &ControlVec::zeros(), &nm, &mut rng).covariance();
        // F couples velocity into position; velocity prior is degenerate so the
        // position variance grows by exactly Q along the diagonal.
        for i in 0..6 {
            let inc = after[(i, i)] - before[(i, i)];
            assert!((inc - sigma2).abs() < 0.1 * sigma2, "coord {i}: {inc}");
        }
    }

    #[test]
    fn update_symmetry_and_likelihood_ratio() {
        let flat: TerrainMap = PlaneMap::flat(0.0).into();
        let nm = NoiseModel::new(Matrix6::identity(), 1.0).unwrap();
        let set = ParticleSet::uniform(
            vec![sv([0.0, 0.0, 98.0, 0.0, 0.0, 0.0]), sv([0.0, 0.0, 102.0, 0.0, 0.0, 0.0])],
            0,
        )
        .unwrap();
        let up = set.update(100.0, &flat, &nm).unwrap();
        assert_eq!(up.weights(), &[0.5, 0.5]);

        let set = ParticleSet::uniform(
            vec![sv([0.0, 0.0, 100.0, 0.0, 0.0, 0.0]), sv([0.0, 0.0, 110.0, 0.0, 0.0, 0.0])],
            0,
        )
        .unwrap();
        let up = set.update(100.0, &flat, &nm).unwrap();
        let ratio = up.weights()[0] / up.weights()[1];
        assert!((ratio.ln() - 50.0).abs() < 1e-9);
    }

    #[test]
    fn flat_terrain_ignores_horizontal_position() {
        let flat: TerrainMap = PlaneMap::flat(5.0).into();
        let nm = NoiseModel::new(Matrix6::identity(), 2.0).unwrap();
        let base = vec![sv([0.0, 0.0, 99.0, 0.0, 0.0, 0.0]), sv([0.0, 0.0, 97.0, 0.0, 0.0, 0.0])];
        let shifted = vec![sv([500.0, -30.0, 99.0, 0.0, 0.0, 0.0]), sv([-7.0, 1e3, 97.0, 0.0, 0.0, 0.0])];
        let a = ParticleSet::uniform(base, 0).unwrap().update(95.5, &flat, &nm).unwrap();
        let b = ParticleSet::uniform(shifted, 0).unwrap().update(95.5, &flat, &nm).unwrap();
        assert_eq!(a.weights(), b.weights());
    }

    #[test]
    fn all_weights_zero_is_degenerate() {
        let flat: TerrainMap = PlaneMap::flat(0.0).into();
        let nm = NoiseModel::new(Matrix6::identity(), 1.0).unwrap();
        let set = with_weights(&[1.0, 1.0]);
        assert!(matches!(set.update(f64::NAN, &flat, &nm), Err(Error::DegenerateWeights)));
    }

    #[test]
    fn ess_examples() {
        assert!((with_weights(&[1.0; 8]).ess() - 8.0).abs() < 1e-12);
        assert!((with_weights(&[1.0, 0.0, 0.0]).ess() - 1.0).abs() < 1e-12);
        assert!((with_weights(&[0.5, 0.5, 0.0, 0.0]).ess() - 2.0).abs() < 1e-12);
    }

    fn copies(set: &ParticleSet, out: &ParticleSet) -> Vec<usize> {
        set.particles()
            .iter()
            .map(|p| out.particles().iter().filter(|q| *q == p).count())
            .collect()
    }

    #[test]
    fn resample_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let one = with_weights(&[1.0, 0.0, 0.0, 0.0]);
        let r = one.resample_systematic(&mut rng);
        assert_eq!(copies(&one, &r), vec![4, 0, 0, 0]);
        assert!(r.weights().iter().all(|w| *w == 0.25));

        let uni = with_weights(&[1.0; 7]);
        assert_eq!(copies(&uni, &uni.resample_systematic(&mut rng)), vec![1; 7]);

        // Hand enumeration: positions u0 + j/10 with u0 in (0, 0.1); cumulative
        // boundary 0.7 separates j = 0..6 from j = 7..9.
        let particles: Vec<StateVec> = (0..10).map(|i| sv([i as f64, 0.0, 0.0, 0.0, 0.0, 0.0])).collect();
        let mut w = vec![0.0; 10];
        w[0] = 0.7;
        w[1] = 0.3;
        let set = ParticleSet::new(particles, w, 0).unwrap();
        for _ in 0..50 {
            let c = copies(&set, &set.resample_systematic(&mut rng));
            assert_eq!(&c[..2], &[7, 3]);
        }
    }

    #[test]
    fn mean_examples() {
        let p = sv([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(ParticleSet::uniform(vec![p], 0).unwrap().mean(), p);
        assert_eq!(ParticleSet::uniform(vec![p, -p], 0).unwrap().mean(), StateVec::zeros());
    }

    #[test]
    fn top_k_examples() {
        let set = with_weights(&[0.5, 0.3, 0.2]);
        assert_eq!(set.top_k(3).unwrap(), set);
        let t = set.top_k(2).unwrap();
        assert_eq!(t.particles()[0][0], 0.0);
        assert_eq!(t.particles()[1][0], 1.0);
        assert!((t.weights()[0] - 0.625).abs() < 1e-15 && (t.weights()[1] - 0.375).abs() < 1e-15);
        let uni = with_weights(&[1.0; 6]);
        let t = uni.top_k(3).unwrap();
        assert_eq!(t.particles().iter().map(|p| p[0]).collect::<Vec<_>>(), vec![0.0, 1.0, 2.0]);
        assert!(matches!(set.top_k(0), Err(Error::BadCount { .. })));
        assert!(matches!(set.top_k(4), Err(Error::BadCount { .. })));
    }

    #[test]
    fn resampling_preserves_mean_in_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let belief = InitialBelief::diagonal([0.0; 6], [1.0; 6]).unwrap();
        let base = ParticleSet::init(&belief, 200, &mut rng).unwrap();
        let flat: TerrainMap = PlaneMap { a: 0.5, b: 0.0, c: 0.0 }.into();
        let nm = NoiseModel::new(Matrix6::identity(), 0.5).unwrap();
        let set = base.update(0.3, &flat, &nm).unwrap();
        let target = set.mean();
        let runs = 200;
        let means: Vec<StateVec> = (0..runs)
            .map(|s| set.resample_systematic(&mut ChaCha8Rng::seed_from_u64(1000 + s)).mean())
            .collect();
        let avg = means.iter().fold(StateVec::zeros(), |a, m| a + m) / runs as f64;
        for i in 0..6 {
            let var = means.iter().map(|m| (m[i] - avg[i]).powi(2)).sum::<f64>() / (runs - 1) as f64;
            let se = (var / runs as f64).sqrt().max(1e-12);
            assert!((avg[i] - target[i]).abs() < 3.0 * se, "coord {i}");
        }
    }

    proptest! {
        #[test]
        fn invariants_after_update_and_resample(seed in 0u64..10_000, z in 50.0..150.0f64, n in 1usize..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let belief = InitialBelief::diagonal([0.0, 0.0, 100.0, 0.0, 0.0, 0.0], [100.0, 100.0, 25.0, 1.0, 1.0, 1.0]).unwrap();
            let map: TerrainMap = PlaneMap { a: 0.1, b: -0.3, c: 2.0 }.into();
            let nm = NoiseModel::new(Matrix6::identity(), 1.0).unwrap();
            let set = ParticleSet::init(&belief, n, &mut rng).unwrap();
            let up = set.update(z, &map, &nm).unwrap();
            let total: f64 = up.weights().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert_eq!(up.len(), n);
            prop_assert!(up.weights().iter().all(|w| w.is_finite() && *w >= 0.0));
            let rs = up.resample_systematic(&mut rng);
            prop_assert_eq!(rs.len(), n);
            prop_assert!((rs.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(rs.particles().iter().all(|x| x.iter().all(|c| c.is_finite())));
            // systematic copy counts stay within one of N·wᵢ
            for (i, p) in up.particles().iter().enumerate() {
                let c = rs.particles().iter().filter(|q| *q == p).count() as f64;
                prop_assert!((c - n as f64 * up.weights()[i]).abs() <= 1.0 + 1e-9);
            }
        }
    }
}
