//! Posterior Fisher information recursion for additive Gaussian noise and
//! linear dynamics, with the observation term taken as a Monte Carlo average
//! over a weighted point cloud.
//!
//! Two algebraically equivalent forms are provided. The block form
//!
//! ```text
//! J' = D22 - D21 (J + D11)⁻¹ D12
//! D11 = Fᵀ Q⁻¹ F,  D12 = -Fᵀ Q⁻¹ = D21ᵀ,  D22 = Q⁻¹ + Î
//! ```
//!
//! and the information-filter form `J' = (Q + F J⁻¹ Fᵀ)⁻¹ + Î`, which also
//! covers singular `Q`.

use nalgebra::{Cholesky, Matrix6, Matrix3};

use crate::error::{Error, Result};
use crate::particle_filter::ParticleSet;
use crate::plant::{InitialBelief, LinearDynamics, NoiseModel, StateVec};
use crate::terrain::TerrainMap;

/// Largest 1-norm condition number accepted for `J + D11`.
pub const MAX_INNER_CONDITION: f64 = 1e12;

const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FimMatrix(Matrix6<f64>);

impl FimMatrix {
    /// Validates symmetry and positive definiteness.
    pub fn new(m: Matrix6<f64>) -> Result<Self> {
        let scale = m.amax().max(1.0);
        if (m - m.transpose()).amax() > SYMMETRY_TOL * scale {
            return Err(Error::Config("information matrix is not symmetric".into()));
        }
        let sym = symmetrize(&m);
        if Cholesky::new(sym).is_none() {
            return Err(Error::FactorizationFailure {
                min_eigenvalue: sym.symmetric_eigenvalues().min(),
            });
        }
        Ok(FimMatrix(sym))
    }

    #[cfg(test)]
    pub(crate) fn from_symmetric(m: Matrix6<f64>) -> Self {
        FimMatrix(m)
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// `J⁻¹`, the Cramér-Rao bound on the estimation error covariance.
    pub fn inverse(&self) -> Result<Matrix6<f64>> {
        spd_inverse(&self.0)
            .ok_or(Error::FactorizationFailure {
                min_eigenvalue: self.0.symmetric_eigenvalues().min(),
            })
    }
}

pub fn symmetrize(m: &Matrix6<f64>) -> Matrix6<f64> {
    (m + m.transpose()) * 0.5
}

/// Accumulated terrain slope moments of a weighted cloud.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct SlopeMoments {
    g1: f64,
    g2: f64,
    g11: f64,
    g12: f64,
    g22: f64,
    total: f64,
}

impl SlopeMoments {
    #[inline]
    pub(crate) fn add(&mut self, w: f64, g1: f64, g2: f64) {
        self.g1 += w * g1;
        self.g2 += w * g2;
        self.g11 += w * g1 * g1;
        self.g12 += w * g1 * g2;
        self.g22 += w * g2 * g2;
        self.total += w;
    }

    /// `Σ wᵢ Hᵢᵀ R⁻¹ Hᵢ` with `H = [-g1, -g2, 1, 0, 0, 0]`.
    pub(crate) fn information(&self, r: f64) -> Matrix6<f64> {
        let inv_r = 1.0 / r;
        let block = Matrix3::new(
            self.g11, self.g12, -self.g1,
            self.g12, self.g22, -self.g2,
            -self.g1, -self.g2, self.total,
        ) * inv_r;
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&block);
        m
    }
}

/// Monte Carlo observation information `Σ wᵢ H(xᵢ)ᵀ R⁻¹ H(xᵢ)`.
///
/// Queries outside a bounded map use the slope at the nearest in-hull point.
pub fn observation_information<'a, I>(points: I, map: &TerrainMap, nm: &NoiseModel) -> Result<Matrix6<f64>>
where
    I: IntoIterator<Item = (&'a StateVec, f64)>,
{
    let mut moments = SlopeMoments::default();
    for (x, w) in points {
        let (c1, c2, _) = map.clamp_to_domain(x[0], x[1]);
        let (g1, g2) = map.gradient_at(c1, c2)?;
        moments.add(w, g1, g2);
    }
    Ok(moments.information(nm.r()))
}

/// `J₀ = P0⁻¹` plus the information of the first observation when
/// `update_at_init` is set.
pub fn fim_init(
    belief: &InitialBelief,
    points: &ParticleSet,
    map: &TerrainMap,
    nm: &NoiseModel,
    update_at_init: bool,
) -> Result<FimMatrix> {
    let p0_inv = spd_inverse(belief.cov()).ok_or(Error::SingularP0)?;
    let mut j = symmetrize(&p0_inv);
    if update_at_init {
        j += observation_information(points.iter(), map, nm)?;
    }
    Ok(FimMatrix(symmetrize(&j)))
}

/// Inverse of a symmetric positive definite matrix, computed on the
/// Jacobi-scaled matrix `D A D` with `D = diag(A)^{-1/2}`.
pub fn spd_inverse(a: &Matrix6<f64>) -> Option<Matrix6<f64>> {
    let d = StateVec::from_fn(|i, _| a[(i, i)]);
    if d.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return None;
    }
    let d = d.map(|v| 1.0 / v.sqrt());
    let scaled = Matrix6::from_fn(|i, j| a[(i, j)] * d[i] * d[j]);
    let inv = Cholesky::new(scaled)?.inverse();
    Some(symmetrize(&Matrix6::from_fn(|i, j| inv[(i, j)] * d[i] * d[j])))
}

fn inverse_checked(a: &Matrix6<f64>) -> Result<Matrix6<f64>> {
    let inv = spd_inverse(a)
        .ok_or(Error::SingularInner {
            condition: f64::INFINITY,
        })?;
    let condition = col_norm1(a) * col_norm1(&inv);
    if !condition.is_finite() || condition > MAX_INNER_CONDITION {
        return Err(Error::SingularInner { condition });
    }
    Ok(inv)
}

// Induced 1-norm: maximum absolute column sum.
fn col_norm1(m: &Matrix6<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Precomputed D-blocks of the recursion for fixed dynamics and noise.
#[derive(Clone, Debug)]
pub struct FimPropagator {
    blocks: Option<Blocks>,
    f: Matrix6<f64>,
    q: Matrix6<f64>,
}

#[derive(Clone, Debug)]
struct Blocks {
    q_inv: Matrix6<f64>,
    d11: Matrix6<f64>,
    d12: Matrix6<f64>,
    d21: Matrix6<f64>,
}

impl FimPropagator {
    pub fn new(dyn_: &LinearDynamics, nm: &NoiseModel) -> Self {
        let f = *dyn_.transition();
        let blocks = nm.q_inverse().map(|q_inv| {
            let ft_qinv = f.transpose() * q_inv;
            let d12 = -ft_qinv;
            Blocks {
                q_inv: *q_inv,
                d11: ft_qinv * f,
                d12,
                d21: d12.transpose(),
            }
        });
        FimPropagator { blocks, f, q: *nm.q() }
    }

    /// Block form; fails with `SingularProcessNoise` when `Q` is singular.
    pub fn step_block(&self, j: &FimMatrix, info: &Matrix6<f64>) -> Result<FimMatrix> {
        let b = self.blocks.as_ref().ok_or(Error::SingularProcessNoise)?;
        let d22 = b.q_inv + info;
        let inner = inverse_checked(&symmetrize(&(j.0 + b.d11)))?;
        let next = d22 - b.d21 * inner * b.d12;
        Ok(FimMatrix(symmetrize(&next)))
    }

    pub fn step_information_form(&self, j: &FimMatrix, info: &Matrix6<f64>) -> Result<FimMatrix> {
        let j_inv = j.inverse()?;
        let predicted = symmetrize(&(self.q + self.f * j_inv * self.f.transpose()));
        let prior_info = spd_inverse(&predicted)
            .ok_or(Error::SingularInner {
                condition: f64::INFINITY,
            })?;
        Ok(FimMatrix(symmetrize(&(prior_info + info))))
    }

    /// The recursion under the block form's contract: `Q` must be invertible
    /// and `J + D11` well conditioned. The value is evaluated through the
    /// equivalent information form, which avoids the cancellation between
    /// `D22` and `D21 (J + D11)⁻¹ D12` when positions and velocities differ in
    /// scale by several orders of magnitude.
    pub fn step(&self, j: &FimMatrix, info: &Matrix6<f64>) -> Result<FimMatrix> {
        let b = self.blocks.as_ref().ok_or(Error::SingularProcessNoise)?;
        inverse_checked(&symmetrize(&(j.0 + b.d11)))?;
        self.step_information_form(j, info)
    }

    /// Information-filter form without preconditions on `Q`.
    pub fn advance(&self, j: &FimMatrix, info: &Matrix6<f64>) -> Result<FimMatrix> {
        self.step_information_form(j, info)
    }
}

/// [`FimPropagator::step`] given a precomputed observation information `info`.
pub fn fim_step_with_info(
    j: &FimMatrix,
    dyn_: &LinearDynamics,
    nm: &NoiseModel,
    info: &Matrix6<f64>,
) -> Result<FimMatrix> {
    FimPropagator::new(dyn_, nm).step(j, info)
}

/// One recursion step with `Î` averaged over the weighted `points` at step k+1.
pub fn fim_step(
    j: &FimMatrix,
    dyn_: &LinearDynamics,
    nm: &NoiseModel,
    points: &ParticleSet,
    map: &TerrainMap,
) -> Result<FimMatrix> {
    let info = observation_information(points.iter(), map, nm)?;
    fim_step_with_info(j, dyn_, nm, &info)
}

/// Information-filter form `(Q + F J⁻¹ Fᵀ)⁻¹ + Î`.
pub fn fim_step_information_form(
    j: &FimMatrix,
    dyn_: &LinearDynamics,
    nm: &NoiseModel,
    info: &Matrix6<f64>,
) -> Result<FimMatrix> {
    FimPropagator::new(dyn_, nm).step_information_form(j, info)
}

/// Advances `J` with the information-filter form; `Q` may be singular.
pub fn fim_advance(
    j: &FimMatrix,
    dyn_: &LinearDynamics,
    nm: &NoiseModel,
    info: &Matrix6<f64>,
) -> Result<FimMatrix> {
    FimPropagator::new(dyn_, nm).advance(j, info)
}

/// `β / tr(J)`.
pub fn fisher_cost(j: &FimMatrix, beta: f64) -> Result<f64> {
    let tr = j.trace();
    if !(tr > 0.0) {
        return Err(Error::NonPositiveTrace(tr));
    }
    Ok(beta / tr)
}
