//! Exact linear-Gaussian posterior on plane terrain.

use nalgebra::Matrix6;

use crate::error::{Error, Result};
use crate::plant::{ControlVec, InitialBelief, LinearDynamics, NoiseModel, ObsJacobian, StateVec};
use crate::terrain::{PlaneMap, TerrainMap};

#[derive(Clone, Debug, PartialEq)]
pub struct KalmanOracle {
    /// Posterior means after incorporating `z_0 .. z_k`.
    pub means: Vec<StateVec>,
    pub covs: Vec<Matrix6<f64>>,
    /// Innovations `z_k − ẑ_k` and their variances.
    pub innovations: Vec<f64>,
    pub innovation_vars: Vec<f64>,
}

fn plane_jacobian(p: &PlaneMap) -> ObsJacobian {
    ObsJacobian::new(-p.a, -p.b, 1.0, 0.0, 0.0, 0.0)
}

struct Filter {
    h: ObsJacobian,
    c: f64,
    r: f64,
    mean: StateVec,
    cov: Matrix6<f64>,
}

impl Filter {
    // Joseph-form update.
    fn update(&mut self, z: f64) -> (f64, f64) {
        let ph = self.cov * self.h;
        let s = self.h.dot(&ph) + self.r;
        let k = ph / s;
        let innovation = z - (self.h.dot(&self.mean) - self.c);
        self.mean += k * innovation;
        let ikh = Matrix6::identity() - k * self.h.transpose();
        let cov = ikh * self.cov * ikh.transpose() + k * k.transpose() * self.r;
        self.cov = (cov + cov.transpose()) * 0.5;
        (innovation, s)
    }

    fn predict(&mut self, dyn_: &LinearDynamics, u: &ControlVec, q: &Matrix6<f64>) {
        self.mean = dyn_.drift(&self.mean, u);
        let f = dyn_.transition();
        let cov = f * self.cov * f.transpose() + q;
        self.cov = (cov + cov.transpose()) * 0.5;
    }
}

/// Runs the Kalman filter on `z_0 .. z_T` with `u_0 .. u_{T-1}`: update with
/// `z_0`, then predict and update once per control.
pub fn kalman_oracle(
    dyn_: &LinearDynamics,
    map: &TerrainMap,
    nm: &NoiseModel,
    belief: &InitialBelief,
    controls: &[ControlVec],
    observations: &[f64],
) -> Result<KalmanOracle> {
    let plane = map.as_plane().ok_or(Error::NonPlaneMap)?;
    if observations.len() != controls.len() + 1 {
        return Err(Error::HorizonMismatch {
            expected: controls.len() + 1,
            got: observations.len(),
        });
    }
    let mut filter = Filter {
        h: plane_jacobian(plane),
        c: plane.c,
        r: nm.r(),
        mean: *belief.mean(),
        cov: *belief.cov(),
    };
    let n = observations.len();
    let mut out = KalmanOracle {
        means: Vec::with_capacity(n),
        covs: Vec::with_capacity(n),
        innovations: Vec::with_capacity(n),
        innovation_vars: Vec::with_capacity(n),
    };
    for (k, z) in observations.iter().enumerate() {
        if k > 0 {
            filter.predict(dyn_, &controls[k - 1], nm.q());
        }
        let (nu, s) = filter.update(*z);
        out.means.push(filter.mean);
        out.covs.push(filter.cov);
        out.innovations.push(nu);
        out.innovation_vars.push(s);
    }
    Ok(out)
}

impl KalmanOracle {
    /// Posterior standard deviation of each coordinate at step `k`.
    pub fn std_at(&self, k: usize) -> StateVec {
        StateVec::from_fn(|i, _| self.covs[k][(i, i)].sqrt())
    }
}
