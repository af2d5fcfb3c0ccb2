//! Dense complex matrix arithmetic and the spectral primitives the solver
//! is built on: Hermitian eigendecomposition, exponentials of Hermitian
//! generators and the principal logarithm of unitaries.

use nalgebra::{Complex, DMatrix, Schur, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type ComplexMatrix = DMatrix<C64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Iteration cap handed to the nalgebra eigensolvers.
const EIGEN_MAX_ITER: usize = 100_000;

/// Components below this modulus are skipped when fixing eigenvector phases.
const GAUGE_TOL: f64 = 1e-8;

/// Every numeric tolerance used by validation and the spectral routines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericPolicy {
    /// Hermiticity check for generators, relative to `max(1, ‖A‖_HS)`.
    pub hermitian_tol: f64,
    /// `‖U†U − I‖_HS` bound for unitaries.
    pub unitary_tol: f64,
    /// Reconstruction bound `‖e^{−iH} − O‖_HS` for the unitary logarithm.
    pub logm_tol: f64,
    /// Eigenphases this close to −π are moved to +π.
    pub branch_snap: f64,
    /// Eigenvalues of a unitary closer than this across the branch cut are rejected.
    pub branch_cluster_tol: f64,
    /// Hermiticity check for density matrices.
    pub state_hermitian_tol: f64,
    /// `|tr ρ − 1|` bound.
    pub trace_tol: f64,
    /// Eigenvalues in `[−negative_eig_tol, 0)` are clamped to zero.
    pub negative_eig_tol: f64,
    /// Absolute eigenvalue gap below which two levels count as degenerate.
    pub degeneracy_tol: f64,
    /// Entrywise bound for two spectra to count as equal.
    pub isospectral_tol: f64,
    /// Generators with `‖H‖_HS` at or below this are treated as zero.
    pub zero_generator_tol: f64,
}

impl NumericPolicy {
    pub const DEFAULT: NumericPolicy = NumericPolicy {
        hermitian_tol: 1e-10,
        unitary_tol: 1e-10,
        logm_tol: 1e-9,
        branch_snap: 1e-12,
        branch_cluster_tol: 1e-7,
        state_hermitian_tol: 1e-12,
        trace_tol: 1e-12,
        negative_eig_tol: 1e-12,
        degeneracy_tol: 1e-8,
        isospectral_tol: 1e-9,
        zero_generator_tol: 1e-12,
    };
}

impl Default for NumericPolicy {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Eigenvalues (descending for Hermitian input) and a unitary matrix whose
/// columns are the matching eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: ComplexMatrix,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `V diag(f(λ)) V†`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> C64) -> ComplexMatrix {
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (k, &lambda) in self.eigenvalues.iter().enumerate() {
            let mut col = scaled.column_mut(k);
            col *= f(lambda);
        }
        scaled * v.adjoint()
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        self.map_spectrum(|l| C64::new(l, 0.0))
    }
}

pub fn identity(dim: usize) -> ComplexMatrix {
    ComplexMatrix::identity(dim, dim)
}

/// Builds a matrix from row-major real and imaginary parts.
pub fn from_parts(re: &[Vec<f64>], im: &[Vec<f64>]) -> Result<ComplexMatrix> {
    let d = re.len();
    if im.len() != d {
        return Err(Error::DimensionMismatch { left: d, right: im.len() });
    }
    for row in re.iter().chain(im) {
        if row.len() != d {
            return Err(Error::NotSquare { rows: d, cols: row.len() });
        }
    }
    let m = ComplexMatrix::from_fn(d, d, |i, j| C64::new(re[i][j], im[i][j]));
    check_finite(&m)?;
    Ok(m)
}

pub fn check_square(a: &ComplexMatrix) -> Result<usize> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::NotSquare { rows: a.nrows(), cols: a.ncols() });
    }
    Ok(a.nrows())
}

pub fn check_finite(a: &ComplexMatrix) -> Result<()> {
    if a.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

fn check_same_dims(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<()> {
    let da = check_square(a)?;
    let db = check_square(b)?;
    if da != db {
        return Err(Error::DimensionMismatch { left: da, right: db });
    }
    Ok(())
}

/// `tr(a† b)`.
pub fn hs_inner(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<C64> {
    check_same_dims(a, b)?;
    Ok(a.dotc(b))
}

pub fn hs_norm(a: &ComplexMatrix) -> f64 {
    a.norm()
}

/// Largest singular value.
pub fn op_norm(a: &ComplexMatrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

pub fn commutator(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    check_same_dims(a, b)?;
    Ok(a * b - b * a)
}

pub fn hadamard(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    check_same_dims(a, b)?;
    Ok(a.component_mul(b))
}

/// `(A + A†)/2`.
pub fn hermitian_part(a: &ComplexMatrix) -> ComplexMatrix {
    (a + a.adjoint()).scale(0.5)
}

pub fn hermiticity_defect(a: &ComplexMatrix) -> f64 {
    (a - a.adjoint()).norm()
}

pub fn unitarity_defect(u: &ComplexMatrix) -> f64 {
    let d = u.nrows();
    (u.adjoint() * u - identity(d)).norm()
}

pub fn check_hermitian(a: &ComplexMatrix, policy: &NumericPolicy) -> Result<usize> {
    let d = check_square(a)?;
    check_finite(a)?;
    let deviation = hermiticity_defect(a);
    if deviation > policy.hermitian_tol * a.norm().max(1.0) {
        return Err(Error::NotHermitian { deviation });
    }
    Ok(d)
}

pub fn check_unitary(u: &ComplexMatrix, policy: &NumericPolicy) -> Result<usize> {
    let d = check_square(u)?;
    check_finite(u)?;
    let deviation = unitarity_defect(u);
    if deviation > policy.unitary_tol {
        return Err(Error::NotUnitary { deviation });
    }
    Ok(d)
}

/// Fixes the phase of every column so that its last component of
/// non-negligible modulus is real and positive.
pub fn fix_column_gauge(v: &mut ComplexMatrix) {
    for mut col in v.column_iter_mut() {
        if let Some(z) = col.iter().rev().find(|z| z.norm() > GAUGE_TOL).copied() {
            let phase = z.conj() / z.norm();
            for x in col.iter_mut() {
                *x *= phase;
            }
        }
    }
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues sorted
/// descending, eigenvector phases fixed by [`fix_column_gauge`].
pub fn eig_hermitian(a: &ComplexMatrix, policy: &NumericPolicy) -> Result<SpectralDecomposition> {
    let d = check_hermitian(a, policy)?;
    let sym = hermitian_part(a);
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or(Error::EigenNonConvergence { dim: d })?;

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut eigenvectors = ComplexMatrix::from_fn(d, d, |i, j| eig.eigenvectors[(i, order[j])]);
    fix_column_gauge(&mut eigenvectors);
    Ok(SpectralDecomposition { eigenvalues, eigenvectors })
}

/// `exp(scale · h)` for Hermitian `h`. With `scale = −i` the result is unitary.
pub fn expm_hermitian(h: &ComplexMatrix, scale: C64, policy: &NumericPolicy) -> Result<ComplexMatrix> {
    if scale == C64::new(0.0, 0.0) {
        let d = check_hermitian(h, policy)?;
        return Ok(identity(d));
    }
    let eig = eig_hermitian(h, policy)?;
    Ok(eig.map_spectrum(|l| (scale * l).exp()))
}

/// Eigenvalues and orthonormal eigenvectors of a normal matrix.
///
/// The Hermitian and anti-Hermitian parts of a normal matrix commute, so a
/// generic real combination of them is Hermitian and shares its
/// eigenvectors. That route is tried first and accepted only if it
/// diagonalises `o` to round-off; the complex Schur form is the fallback.
/// Schur alone stalls on the clustered spectra met near convergence.
pub fn eig_normal(o: &ComplexMatrix) -> Result<(Vec<C64>, ComplexMatrix)> {
    let d = check_square(o)?;
    check_finite(o)?;
    if let Some(found) = eig_normal_by_pencil(o, d) {
        return Ok(found);
    }
    let schur = Schur::try_new(o.clone(), f64::EPSILON, EIGEN_MAX_ITER).ok_or(Error::EigenNonConvergence { dim: d })?;
    let (q, t) = schur.unpack();
    let eigenvalues = (0..d).map(|k| t[(k, k)]).collect();
    Ok((eigenvalues, q))
}

const PENCIL_WEIGHTS: [f64; 3] = [0.618_033_988_749_894_9, 1.732_050_807_568_877_2, -0.414_213_562_373_095_1];
const PENCIL_TOL: f64 = 1e-12;

fn eig_normal_by_pencil(o: &ComplexMatrix, d: usize) -> Option<(Vec<C64>, ComplexMatrix)> {
    let re = hermitian_part(o);
    let im = hermitian_part(&(o * C64::new(0.0, -1.0)));
    let scale = o.norm().max(1.0);
    for c in PENCIL_WEIGHTS {
        let x = &re + &im * C64::new(c, 0.0);
        let Some(eig) = SymmetricEigen::try_new(x, f64::EPSILON, EIGEN_MAX_ITER) else {
            continue;
        };
        let q = eig.eigenvectors;
        let t = q.adjoint() * o * &q;
        let diagonal: Vec<C64> = (0..d).map(|k| t[(k, k)]).collect();
        let off_sq = t.norm_squared() - diagonal.iter().map(|z| z.norm_sqr()).sum::<f64>();
        if off_sq.max(0.0).sqrt() <= PENCIL_TOL * scale {
            return Some((diagonal, q));
        }
    }
    None
}

/// Principal eigenphases `θ ∈ (−π, π]` of a unitary together with its
/// eigenbasis. Phases within `branch_snap` of −π are moved to +π.
pub fn eigenphases(o: &ComplexMatrix, policy: &NumericPolicy) -> Result<(Vec<f64>, ComplexMatrix)> {
    use std::f64::consts::PI;
    check_unitary(o, policy)?;
    let (values, q) = eig_normal(o)?;
    let phases: Vec<f64> = values
        .iter()
        .map(|z| {
            let theta = z.arg();
            if theta <= -PI + policy.branch_snap {
                PI
            } else {
                theta
            }
        })
        .collect();

    // Near-equal eigenvalues on opposite sides of the cut have logarithms
    // 2π apart; their eigenvectors cannot be separated reliably.
    for (a, &ta) in phases.iter().enumerate() {
        for (b, &tb) in phases.iter().enumerate().skip(a + 1) {
            let across = (ta > PI / 2.0 && tb < -PI / 2.0) || (tb > PI / 2.0 && ta < -PI / 2.0);
            if across && (values[a] - values[b]).norm() < policy.branch_cluster_tol {
                return Err(Error::IllConditionedLog {
                    residual: (values[a] - values[b]).norm(),
                });
            }
        }
    }
    Ok((phases, q))
}

/// `H = i log O` on the principal branch, so that `O = e^{−iH}`.
pub fn logm_unitary_principal(o: &ComplexMatrix, policy: &NumericPolicy) -> Result<ComplexMatrix> {
    let (phases, q) = eigenphases(o, policy)?;
    let spectral = SpectralDecomposition {
        eigenvalues: phases,
        eigenvectors: q,
    };
    let residual = (spectral.map_spectrum(|t| C64::new(0.0, t).exp()) - o).norm();
    if residual > policy.logm_tol {
        return Err(Error::IllConditionedLog { residual });
    }
    Ok(hermitian_part(&spectral.map_spectrum(|t| C64::new(-t, 0.0))))
}

/// Pauli matrices.
pub mod pauli {
    use super::{ComplexMatrix, C64};

    pub fn x() -> ComplexMatrix {
        ComplexMatrix::from_row_slice(2, 2, &[C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)])
    }

    pub fn y() -> ComplexMatrix {
        ComplexMatrix::from_row_slice(2, 2, &[C64::new(0.0, 0.0), C64::new(0.0, -1.0), C64::new(0.0, 1.0), C64::new(0.0, 0.0)])
    }

    pub fn z() -> ComplexMatrix {
        ComplexMatrix::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(-1.0, 0.0)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, SQRT_2};

    const P: NumericPolicy = NumericPolicy::DEFAULT;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn close(a: &ComplexMatrix, b: &ComplexMatrix, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn hs_inner_examples() {
        let id = identity(2);
        assert_eq!(hs_inner(&id, &id).unwrap(), c(2.0, 0.0));
        assert_eq!(hs_inner(&pauli::z(), &pauli::x()).unwrap(), c(0.0, 0.0));
        assert_eq!(hs_inner(&pauli::z(), &pauli::z()).unwrap(), c(2.0, 0.0));
        assert!(matches!(
            hs_inner(&identity(2), &identity(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn op_norm_examples() {
        assert!((op_norm(&identity(2)) - 1.0).abs() < 1e-14);
        assert!((op_norm(&(pauli::x() + pauli::y())) - SQRT_2).abs() < 1e-14);
        assert_eq!(op_norm(&ComplexMatrix::zeros(3, 3)), 0.0);
    }

    #[test]
    fn commutator_examples() {
        let z = pauli::z();
        let x = pauli::x();
        assert!(close(&commutator(&z, &z).unwrap(), &ComplexMatrix::zeros(2, 2), 0.0));
        let expected = pauli::y() * c(0.0, 2.0);
        assert!(close(&commutator(&z, &x).unwrap(), &expected, 1e-15));
        assert!(close(&commutator(&identity(2), &x).unwrap(), &ComplexMatrix::zeros(2, 2), 0.0));
        let a = commutator(&x, &z).unwrap();
        let b = commutator(&z, &x).unwrap();
        assert!(close(&a, &(-b), 0.0));
    }

    #[test]
    fn hadamard_examples() {
        let a = ComplexMatrix::from_fn(3, 3, |i, j| c(i as f64 + 1.0, j as f64 - 0.5));
        let ones = ComplexMatrix::from_element(3, 3, c(1.0, 0.0));
        assert_eq!(hadamard(&a, &ones).unwrap(), a);
        let diag = hadamard(&a, &identity(3)).unwrap();
        assert_eq!(diag, ComplexMatrix::from_diagonal(&a.diagonal()));
        assert_eq!(hadamard(&pauli::x(), &pauli::x()).unwrap(), pauli::x());
    }

    #[test]
    fn eig_hermitian_examples() {
        let e = eig_hermitian(&pauli::z(), &P).unwrap();
        assert_eq!(e.eigenvalues, vec![1.0, -1.0]);
        assert!(close(&e.eigenvectors, &identity(2), 1e-15));

        let e = eig_hermitian(&identity(2), &P).unwrap();
        assert_eq!(e.eigenvalues, vec![1.0, 1.0]);
        assert!(unitarity_defect(&e.eigenvectors) < 1e-14);

        let e = eig_hermitian(&pauli::x(), &P).unwrap();
        assert!((e.eigenvalues[0] - 1.0).abs() < 1e-15 && (e.eigenvalues[1] + 1.0).abs() < 1e-15);
        let s = 1.0 / SQRT_2;
        let plus = ComplexMatrix::from_row_slice(2, 1, &[c(s, 0.0), c(s, 0.0)]);
        let minus = ComplexMatrix::from_row_slice(2, 1, &[c(-s, 0.0), c(s, 0.0)]);
        assert!(close(&e.eigenvectors.columns(0, 1).into_owned(), &plus, 1e-14));
        assert!(close(&e.eigenvectors.columns(1, 1).into_owned(), &minus, 1e-14));
        assert!(close(&e.reconstruct(), &pauli::x(), 1e-14));
    }

    #[test]
    fn eig_hermitian_rejects_non_hermitian() {
        let a = ComplexMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert!(matches!(eig_hermitian(&a, &P), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn expm_examples() {
        let zero = ComplexMatrix::zeros(2, 2);
        assert!(close(&expm_hermitian(&zero, -I, &P).unwrap(), &identity(2), 0.0));

        let h = pauli::z() * c(PI / 4.0, 0.0);
        let u = expm_hermitian(&h, -I, &P).unwrap();
        let expected = ComplexMatrix::from_row_slice(
            2,
            2,
            &[c(0.0, -PI / 4.0).exp(), c(0.0, 0.0), c(0.0, 0.0), c(0.0, PI / 4.0).exp()],
        );
        assert!(close(&u, &expected, 1e-15));
        assert_eq!(expm_hermitian(&pauli::x(), c(0.0, 0.0), &P).unwrap(), identity(2));
    }

    #[test]
    fn logm_examples() {
        assert!(close(&logm_unitary_principal(&identity(3), &P).unwrap(), &ComplexMatrix::zeros(3, 3), 1e-15));

        let o = ComplexMatrix::from_row_slice(
            2,
            2,
            &[c(0.0, -PI / 4.0).exp(), c(0.0, 0.0), c(0.0, 0.0), c(0.0, PI / 4.0).exp()],
        );
        let h = logm_unitary_principal(&o, &P).unwrap();
        assert!(close(&h, &(pauli::z() * c(PI / 4.0, 0.0)), 1e-15));

        let o = (pauli::x() + pauli::y()) * c(0.0, -1.0 / SQRT_2);
        let h = logm_unitary_principal(&o, &P).unwrap();
        let expected = (pauli::x() + pauli::y()) * c(SQRT_2 * PI / 4.0, 0.0);
        assert!(close(&h, &expected, 1e-14));
    }

    #[test]
    fn logm_snaps_minus_pi_to_plus_pi() {
        let o = ComplexMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            c(-1.0, -1e-14),
            c(1.0, 0.0),
        ]));
        let o = {
            let mut o = o;
            let n = o[(0, 0)].norm();
            o[(0, 0)] /= n;
            o
        };
        let h = logm_unitary_principal(&o, &P).unwrap();
        assert!((h[(0, 0)].re + PI).abs() < 1e-12);
    }

    #[test]
    fn logm_rejects_cluster_across_branch_cut() {
        let t = 1e-9;
        let o = ComplexMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            c(0.0, PI - t).exp(),
            c(0.0, -PI + t).exp(),
        ]));
        let rot = expm_hermitian(&pauli::x(), c(0.0, -0.3), &P).unwrap();
        let o = &rot * o * rot.adjoint();
        assert!(matches!(logm_unitary_principal(&o, &P), Err(Error::IllConditionedLog { .. })));
    }

    #[test]
    fn logm_rejects_non_unitary() {
        let o = identity(2) * c(1.1, 0.0);
        assert!(matches!(logm_unitary_principal(&o, &P), Err(Error::NotUnitary { .. })));
    }

    #[test]
    fn gauge_makes_last_component_real_positive() {
        let mut v = ComplexMatrix::from_row_slice(2, 2, &[c(0.0, 1.0), c(1.0, 0.0), c(0.0, 1.0), c(0.0, 0.0)]);
        fix_column_gauge(&mut v);
        assert_eq!(v[(1, 0)], c(1.0, 0.0));
        assert_eq!(v[(0, 1)], c(1.0, 0.0));
    }

    #[test]
    fn near_identity_unitaries_decompose() {
        use crate::states::{sample_haar_unitary, RngSeed};
        let mut rng = RngSeed::new(11, "near-identity").rng();
        for _ in 0..50 {
            let u = sample_haar_unitary(3, &mut rng).unwrap();
            let o = &u * u.adjoint();
            let h = logm_unitary_principal(&o, &P).unwrap();
            assert!(h.norm() < 1e-13);

            let (values, q) = eig_normal(&(&u * c(0.0, 1.0))).unwrap();
            let rebuilt = &q * ComplexMatrix::from_diagonal(&nalgebra::DVector::from_vec(values)) * q.adjoint();
            assert!((rebuilt - &u * c(0.0, 1.0)).norm() < 1e-12);
        }
    }
}
