//! Quantum speed limits and Hamiltonian efficiency.
//!
//! All times use the nominal convention of the solver: a Hamiltonian `H`
//! returned from a unitary logarithm reaches the target at `τ = 1`, since
//! `O = e^{−iH}`. Rescaling `H → H/c` with `τ → cτ` is a pure
//! reparametrization and leaves every ratio below unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_square, commutator, op_norm, ComplexMatrix};
use crate::states::{DensityMatrix, IsospectralPair};

/// Relative size below which a speed or energy spread counts as zero.
const ZERO_SPEED_TOL: f64 = 1e-14;

/// Distances or angles below this mean the two states coincide.
const SAME_STATE_TOL: f64 = 1e-12;

/// Purity tolerance used to decide whether a pair is pure.
const PURE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    MandelstamTammPure,
    BlochAngleMixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QslReport {
    pub t_qsl: f64,
    pub tau: f64,
    /// `tau / t_qsl`; `+∞` when `t_qsl = 0`.
    pub time_ratio: f64,
    pub bound_kind: BoundKind,
}

impl QslReport {
    fn new(t_qsl: f64, tau: f64, bound_kind: BoundKind) -> Self {
        let time_ratio = if t_qsl > 0.0 { tau / t_qsl } else { f64::INFINITY };
        Self {
            t_qsl,
            tau,
            time_ratio,
            bound_kind,
        }
    }

    /// `None` for the degenerate `t_qsl = 0` case.
    pub fn finite_ratio(&self) -> Option<f64> {
        self.time_ratio.is_finite().then_some(self.time_ratio)
    }

    /// The same evolution driven by `H/c` for time `cτ`.
    pub fn rescaled(&self, c: f64) -> Self {
        Self::new(self.t_qsl * c, self.tau * c, self.bound_kind)
    }
}

/// `(H/c, cτ)`: same path, different energy scale.
pub fn rescale(h: &ComplexMatrix, tau: f64, c: f64) -> (ComplexMatrix, f64) {
    (h.unscale(c), tau * c)
}

fn check_dims(h: &ComplexMatrix, rho: &DensityMatrix) -> Result<()> {
    let d = check_square(h)?;
    if d != rho.dim() {
        return Err(Error::DimensionMismatch { left: d, right: rho.dim() });
    }
    Ok(())
}

fn expectation(rho: &DensityMatrix, a: &ComplexMatrix) -> f64 {
    (rho.matrix() * a).trace().re
}

/// `ΔH_ρ = sqrt(tr ρH² − (tr ρH)²)`.
pub fn energy_stddev(h: &ComplexMatrix, rho: &DensityMatrix) -> Result<f64> {
    check_dims(h, rho)?;
    let mean = expectation(rho, h);
    let second = expectation(rho, &(h * h));
    Ok((second - mean * mean).max(0.0).sqrt())
}

/// `‖[H, ρ]‖_HS`, the HS speed of `ρ̇ = −i[H, ρ]`.
pub fn evolution_speed_hs(h: &ComplexMatrix, rho: &DensityMatrix) -> Result<f64> {
    check_dims(h, rho)?;
    Ok(commutator(h, rho.matrix())?.norm())
}

fn require_pure(rho: &DensityMatrix) -> Result<()> {
    if rho.is_pure(PURE_TOL) {
        Ok(())
    } else {
        Err(Error::NotPure { purity: rho.purity() })
    }
}

/// `arccos |⟨ψ|φ⟩|`, evaluated as `atan2(‖φ − ⟨ψ|φ⟩ψ‖, |⟨ψ|φ⟩|)` to stay
/// accurate near zero.
pub fn fubini_study_distance(psi: &DensityMatrix, phi: &DensityMatrix) -> Result<f64> {
    require_pure(psi)?;
    require_pure(phi)?;
    if psi.dim() != phi.dim() {
        return Err(Error::DimensionMismatch { left: psi.dim(), right: phi.dim() });
    }
    let a = psi.dominant_vector();
    let b = phi.dominant_vector();
    let overlap = a.dotc(&b);
    let orthogonal = (&b - &a * overlap).norm();
    Ok(orthogonal.atan2(overlap.norm()))
}

/// Mandelstam–Tamm bound `d_FS / ΔH_ψ`.
pub fn qsl_pure(psi: &DensityMatrix, phi: &DensityMatrix, h: &ComplexMatrix) -> Result<QslReport> {
    let distance = fubini_study_distance(psi, phi)?;
    let spread = energy_stddev(h, psi)?;
    if distance <= SAME_STATE_TOL {
        return Ok(QslReport::new(0.0, 1.0, BoundKind::MandelstamTammPure));
    }
    if spread <= ZERO_SPEED_TOL * h.norm().max(1.0) {
        return Err(Error::NoMotion);
    }
    Ok(QslReport::new(distance / spread, 1.0, BoundKind::MandelstamTammPure))
}

/// Generalized Bloch angle bound `R Θ / ‖[H, ρ]‖_HS`, where `R` is the HS
/// length of the traceless part of `ρ` and `Θ` the angle between the
/// traceless parts of `ρ` and `σ`, so `cos Θ = (tr ρσ − 1/d)/(tr ρ² − 1/d)`.
pub fn qsl_mixed(rho: &DensityMatrix, sigma: &DensityMatrix, h: &ComplexMatrix) -> Result<QslReport> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch { left: rho.dim(), right: sigma.dim() });
    }
    let d = rho.dim();
    let shift = crate::linalg::identity(d).unscale(d as f64);
    let a = rho.matrix() - &shift;
    let b = sigma.matrix() - &shift;
    let radius_sq = a.norm_squared();
    let speed = evolution_speed_hs(h, rho)?;
    if radius_sq <= 0.0 {
        return Ok(QslReport::new(0.0, 1.0, BoundKind::BlochAngleMixed));
    }
    let radius = radius_sq.sqrt();
    let cos = a.dotc(&b).re / radius_sq;
    let sin = (&b - a.scale(cos)).norm() / radius;
    let angle = sin.atan2(cos);
    if angle <= SAME_STATE_TOL {
        return Ok(QslReport::new(0.0, 1.0, BoundKind::BlochAngleMixed));
    }
    if speed <= ZERO_SPEED_TOL * h.norm().max(1.0) {
        return Err(Error::NoMotion);
    }
    Ok(QslReport::new(radius * angle / speed, 1.0, BoundKind::BlochAngleMixed))
}

/// Mandelstam–Tamm for pure pairs, the Bloch-angle bound otherwise.
pub fn qsl_for_pair(pair: &IsospectralPair, h: &ComplexMatrix) -> Result<QslReport> {
    if pair.rho.is_pure(PURE_TOL) && pair.sigma.is_pure(PURE_TOL) {
        qsl_pure(&pair.rho, &pair.sigma, h)
    } else {
        qsl_mixed(&pair.rho, &pair.sigma, h)
    }
}

/// `η = ΔH_ρ / ‖H‖_op`.
pub fn efficiency_eta(h: &ComplexMatrix, rho: &DensityMatrix) -> Result<f64> {
    let spread = energy_stddev(h, rho)?;
    let norm = op_norm(h);
    if norm == 0.0 {
        return Err(Error::ZeroHamiltonian);
    }
    Ok(spread / norm)
}

/// `η★ = sqrt(tr[ρ²H²] − tr[(ρH)²]) / sqrt(tr[ρ²H²] − tr[(ρH)²] + tr[ρH]²)`.
///
/// The first difference equals `½‖[H, ρ]‖²_HS` and is evaluated that way.
pub fn efficiency_eta_star(h: &ComplexMatrix, rho: &DensityMatrix) -> Result<f64> {
    let speed = evolution_speed_hs(h, rho)?;
    let numerator_sq = 0.5 * speed * speed;
    let mean = expectation(rho, h);
    let denominator_sq = numerator_sq + mean * mean;
    if speed <= ZERO_SPEED_TOL * h.norm().max(1.0) || denominator_sq <= 0.0 {
        return Err(Error::NoMotion);
    }
    Ok((numerator_sq / denominator_sq).sqrt())
}
