//! Double-integrator vehicle and height-above-terrain sensor.

use nalgebra::{Matrix6, Matrix6x3, SymmetricEigen, Vector3, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::terrain::TerrainMap;

/// `(x1, x2, x3, v1, v2, v3)` in meters and meters per second.
pub type StateVec = Vector6<f64>;
/// Commanded acceleration `(u1, u2, u3)` in m/s².
pub type ControlVec = Vector3<f64>;
/// Row Jacobian of the height sensor with respect to the state.
pub type ObsJacobian = Vector6<f64>;

/// Eigenvalues below this are treated as negative when factoring covariances.
pub const PSD_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearDynamics {
    f: Matrix6<f64>,
    b: Matrix6x3<f64>,
    dt: f64,
}

impl LinearDynamics {
    pub fn transition(&self) -> &Matrix6<f64> {
        &self.f
    }

    pub fn input(&self) -> &Matrix6x3<f64> {
        &self.b
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `F·x + B·u + xi`.
    #[inline]
    pub fn step(&self, x: &StateVec, u: &ControlVec, xi: &StateVec) -> StateVec {
        self.f * x + self.b * u + xi
    }

    /// Noise-free transition.
    #[inline]
    pub fn drift(&self, x: &StateVec, u: &ControlVec) -> StateVec {
        self.f * x + self.b * u
    }
}

/// Zero-order-hold double integrator with step `dt`.
pub fn double_integrator(dt: f64) -> Result<LinearDynamics> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::NonPositiveDt(dt));
    }
    let mut f = Matrix6::identity();
    let mut b = Matrix6x3::zeros();
    for i in 0..3 {
        f[(i, i + 3)] = dt;
        b[(i, i)] = 0.5 * dt * dt;
        b[(i + 3, i)] = dt;
    }
    Ok(LinearDynamics { f, b, dt })
}

pub fn step(dyn_: &LinearDynamics, x: &StateVec, u: &ControlVec, xi: &StateVec) -> StateVec {
    dyn_.step(x, u, xi)
}

/// Symmetric square root factor `L` with `L·Lᵀ = m`, tolerating singular PSD input.
pub fn symmetric_factor(m: &Matrix6<f64>) -> Result<Matrix6<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.min();
    if !min.is_finite() || min < -PSD_TOLERANCE {
        return Err(Error::FactorizationFailure { min_eigenvalue: min });
    }
    let mut v = eig.eigenvectors;
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        v.column_mut(j).scale_mut(s);
    }
    Ok(v)
}

/// Zero-mean Gaussian disturbances: process covariance `Q` and scalar sensor variance `R`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    q: Matrix6<f64>,
    r: f64,
    q_factor: Matrix6<f64>,
    q_inv: Option<Matrix6<f64>>,
}

impl NoiseModel {
    pub fn new(q: Matrix6<f64>, r: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::NonPositiveObservationVariance(r));
        }
        let q = (q + q.transpose()) * 0.5;
        let q_factor = symmetric_factor(&q)?;
        let eig = SymmetricEigen::new(q);
        let q_inv = if eig.eigenvalues.min() > PSD_TOLERANCE {
            q.cholesky().map(|c| c.inverse())
        } else {
            None
        };
        Ok(NoiseModel {
            q,
            r,
            q_factor,
            q_inv,
        })
    }

    pub fn diagonal(q_diag: [f64; 6], r: f64) -> Result<Self> {
        NoiseModel::new(Matrix6::from_diagonal(&Vector6::from(q_diag)), r)
    }

    pub fn q(&self) -> &Matrix6<f64> {
        &self.q
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    /// `Q⁻¹` when `Q` is positive definite.
    pub fn q_inverse(&self) -> Option<&Matrix6<f64>> {
        self.q_inv.as_ref()
    }

    pub fn sample_process<R: Rng + ?Sized>(&self, rng: &mut R) -> StateVec {
        self.q_factor * standard_normal6(rng)
    }

    pub fn sample_observation<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.r.sqrt() * z
    }
}

pub fn sample_process_noise<R: Rng + ?Sized>(nm: &NoiseModel, rng: &mut R) -> StateVec {
    nm.sample_process(rng)
}

pub fn sample_obs_noise<R: Rng + ?Sized>(nm: &NoiseModel, rng: &mut R) -> f64 {
    nm.sample_observation(rng)
}

pub(crate) fn standard_normal6<R: Rng + ?Sized>(rng: &mut R) -> StateVec {
    StateVec::from_fn(|_, _| rng.sample(StandardNormal))
}

/// Gaussian prior `N(m0, P0)` on the initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialBelief {
    mean: StateVec,
    cov: Matrix6<f64>,
    factor: Matrix6<f64>,
}

impl InitialBelief {
    pub fn new(mean: StateVec, cov: Matrix6<f64>) -> Result<Self> {
        let cov = (cov + cov.transpose()) * 0.5;
        let factor = symmetric_factor(&cov)?;
        if cov.cholesky().is_none() {
            return Err(Error::SingularP0);
        }
        Ok(InitialBelief { mean, cov, factor })
    }

    pub fn diagonal(mean: [f64; 6], cov_diag: [f64; 6]) -> Result<Self> {
        InitialBelief::new(
            StateVec::from(mean),
            Matrix6::from_diagonal(&Vector6::from(cov_diag)),
        )
    }

    pub fn mean(&self) -> &StateVec {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix6<f64> {
        &self.cov
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> StateVec {
        self.mean + self.factor * standard_normal6(rng)
    }
}

/// Height above ground `x3 - h(x1, x2) + eta`.
pub fn observe(x: &StateVec, map: &TerrainMap, eta: f64) -> Result<f64> {
    Ok(x[2] - map.height_at(x[0], x[1])? + eta)
}

/// `[-∂h/∂x1, -∂h/∂x2, 1, 0, 0, 0]` at the horizontal position of `x`.
pub fn obs_jacobian(x: &StateVec, map: &TerrainMap) -> Result<ObsJacobian> {
    let (g1, g2) = map.gradient_at(x[0], x[1])?;
    Ok(ObsJacobian::new(-g1, -g2, 1.0, 0.0, 0.0, 0.0))
}
