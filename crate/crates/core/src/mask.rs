//! The mask: HS-orthogonal projection of a Hamiltonian onto the commutant
//! of a state, computed blockwise in the state's eigenbasis.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{check_square, hermitian_part, ComplexMatrix, C64};
use crate::states::DensityMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    basis: ComplexMatrix,
    /// `mask[(i, j)] = 1` iff levels `i` and `j` share a degeneracy group.
    mask: DMatrix<f64>,
}

impl MaskSpec {
    pub fn new(state: &DensityMatrix) -> Self {
        Self::from_basis(state.eigenbasis().clone(), state.degeneracy_groups())
    }

    /// Mask for an explicit eigenbasis and degeneracy partition.
    pub fn from_basis(basis: ComplexMatrix, groups: &[Vec<usize>]) -> Self {
        let d = basis.nrows();
        let mut label = vec![0usize; d];
        for (g, members) in groups.iter().enumerate() {
            for &k in members {
                label[k] = g;
            }
        }
        let mask = DMatrix::from_fn(d, d, |i, j| if label[i] == label[j] { 1.0 } else { 0.0 });
        Self { basis, mask }
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn mask_matrix(&self) -> &DMatrix<f64> {
        &self.mask
    }

    /// `H∥ = D (M ∘ D†HD) D†`.
    pub fn apply(&self, h: &ComplexMatrix) -> Result<ComplexMatrix> {
        let d = check_square(h)?;
        if d != self.dim() {
            return Err(Error::DimensionMismatch { left: d, right: self.dim() });
        }
        let mut k = self.basis.adjoint() * h * &self.basis;
        for (z, &m) in k.iter_mut().zip(self.mask.iter()) {
            if m == 0.0 {
                *z = C64::new(0.0, 0.0);
            }
        }
        Ok(hermitian_part(&(&self.basis * k * self.basis.adjoint())))
    }

    /// `(H∥, H⊥)` with `H = H∥ + H⊥`.
    pub fn split(&self, h: &ComplexMatrix) -> Result<(ComplexMatrix, ComplexMatrix)> {
        let parallel = self.apply(h)?;
        let perpendicular = h - &parallel;
        Ok((parallel, perpendicular))
    }
}

pub fn apply_mask(h: &ComplexMatrix, mask: &MaskSpec) -> Result<ComplexMatrix> {
    mask.apply(h)
}
