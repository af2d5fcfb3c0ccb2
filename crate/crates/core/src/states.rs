//! Density matrices, isospectral pairs, random ensembles and perturbations.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::linalg::{
    self, check_finite, check_square, eig_hermitian, expm_hermitian, hermitian_part, hermiticity_defect,
    ComplexMatrix, NumericPolicy, SpectralDecomposition, C64,
};

/// A reproducible random stream: the same `(seed, label)` always yields
/// the same samples, and distinct labels give independent streams.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed {
    pub seed: u64,
    pub label: String,
}

impl RngSeed {
    pub fn new(seed: u64, label: impl Into<String>) -> Self {
        Self { seed, label: label.into() }
    }

    /// A sub-stream whose label is `"{label}/{suffix}"`.
    pub fn child(&self, suffix: impl std::fmt::Display) -> Self {
        Self {
            seed: self.seed,
            label: format!("{}/{}", self.label, suffix),
        }
    }

    fn label_hash(&self) -> u64 {
        let digest = Sha256::digest(self.label.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
    }

    /// A single 64-bit value identifying this stream.
    pub fn stream_id(&self) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(self.label.as_bytes());
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.label_hash());
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Ensemble {
    HaarPure,
    BuresMixed,
}

impl std::fmt::Display for Ensemble {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Ensemble::HaarPure => "haar_pure",
            Ensemble::BuresMixed => "bures_mixed",
        })
    }
}

/// How the target state of a random problem is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum PairMode {
    /// `σ = U ρ U†` with Haar `U`.
    #[default]
    Conjugate,
    /// `σ` drawn independently from the same ensemble, then given `ρ`'s spectrum.
    IndependentProjected,
}

/// Hermitian, positive semidefinite, unit-trace matrix with its cached
/// eigensystem (descending spectrum) and degeneracy partition.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
    spectrum: Vec<f64>,
    eigenbasis: ComplexMatrix,
    groups: Vec<Vec<usize>>,
}

impl DensityMatrix {
    /// Validates `m` and caches its eigensystem.
    pub fn from_matrix(m: &ComplexMatrix, policy: &NumericPolicy) -> Result<Self> {
        check_square(m)?;
        check_finite(m)?;
        let deviation = hermiticity_defect(m);
        if deviation > policy.state_hermitian_tol {
            return Err(Error::NotHermitian { deviation });
        }
        let trace = m.trace();
        if (trace.re - 1.0).abs() > policy.trace_tol || trace.im.abs() > policy.trace_tol {
            return Err(Error::BadTrace { trace: trace.re });
        }
        let matrix = hermitian_part(m);
        let eig = eig_hermitian(&matrix, policy)?;
        let (spectrum, clamped) = clamp_spectrum(eig.eigenvalues, policy)?;
        let eig = SpectralDecomposition {
            eigenvalues: spectrum,
            eigenvectors: eig.eigenvectors,
        };
        let matrix = if clamped { hermitian_part(&eig.reconstruct()) } else { matrix };
        let groups = degeneracy_groups(&eig.eigenvalues, policy.degeneracy_tol);
        Ok(Self {
            matrix,
            spectrum: eig.eigenvalues,
            eigenbasis: eig.eigenvectors,
            groups,
        })
    }

    /// Builds `V diag(λ) V†` keeping the supplied eigenbasis exactly.
    pub fn from_spectral(spectrum: &[f64], eigenbasis: &ComplexMatrix, policy: &NumericPolicy) -> Result<Self> {
        let d = check_square(eigenbasis)?;
        if spectrum.len() != d {
            return Err(Error::DimensionMismatch { left: spectrum.len(), right: d });
        }
        if spectrum.windows(2).any(|w| w[0] < w[1]) {
            return Err(invalid("spectrum", "must be sorted in descending order"));
        }
        linalg::check_unitary(eigenbasis, policy)?;
        let total: f64 = spectrum.iter().sum();
        if (total - 1.0).abs() > policy.trace_tol {
            return Err(Error::BadTrace { trace: total });
        }
        let (spectrum, _) = clamp_spectrum(spectrum.to_vec(), policy)?;
        let eig = SpectralDecomposition {
            eigenvalues: spectrum,
            eigenvectors: eigenbasis.clone(),
        };
        let matrix = hermitian_part(&eig.reconstruct());
        let groups = degeneracy_groups(&eig.eigenvalues, policy.degeneracy_tol);
        Ok(Self {
            matrix,
            spectrum: eig.eigenvalues,
            eigenbasis: eig.eigenvectors,
            groups,
        })
    }

    /// `|ψ⟩⟨ψ|` for a (not necessarily normalized) vector.
    pub fn from_pure(psi: &DVector<C64>, policy: &NumericPolicy) -> Result<Self> {
        let norm = psi.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(invalid("psi", "vector must be nonzero and finite"));
        }
        let psi = psi.unscale(norm);
        Self::from_matrix(&(&psi * psi.adjoint()), policy)
    }

    pub fn maximally_mixed(d: usize, policy: &NumericPolicy) -> Result<Self> {
        let m = linalg::identity(d).unscale(d as f64);
        Self::from_matrix(&m, policy)
    }

    pub fn dim(&self) -> usize {
        self.spectrum.len()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    /// Columns are the eigenvectors `|r_k⟩`, in spectrum order.
    pub fn eigenbasis(&self) -> &ComplexMatrix {
        &self.eigenbasis
    }

    pub fn degeneracy_groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn is_nondegenerate(&self) -> bool {
        self.groups.len() == self.dim()
    }

    pub fn purity(&self) -> f64 {
        self.spectrum.iter().map(|l| l * l).sum()
    }

    pub fn is_pure(&self, tol: f64) -> bool {
        1.0 - self.spectrum[0] <= tol
    }

    /// The eigenvector of the largest eigenvalue.
    pub fn dominant_vector(&self) -> DVector<C64> {
        self.eigenbasis.column(0).into_owned()
    }

    /// `U ρ U†`, with eigenbasis `U V` and the spectrum copied unchanged.
    pub fn conjugated(&self, u: &ComplexMatrix, policy: &NumericPolicy) -> Result<Self> {
        Self::from_spectral(&self.spectrum, &(u * &self.eigenbasis), policy)
    }

    /// Re-phases non-degenerate eigenvectors so that `⟨r_k|r'_k⟩` is real
    /// and non-negative against `reference`.
    pub fn aligned_to(&self, reference: &DensityMatrix, policy: &NumericPolicy) -> Result<Self> {
        if reference.dim() != self.dim() {
            return Err(Error::DimensionMismatch { left: self.dim(), right: reference.dim() });
        }
        let mut basis = self.eigenbasis.clone();
        for group in &self.groups {
            if let [k] = group.as_slice() {
                let overlap = reference.eigenbasis.column(*k).dotc(&basis.column(*k));
                if overlap.norm() > 0.0 {
                    let phase = overlap.conj() / overlap.norm();
                    let mut col = basis.column_mut(*k);
                    col *= phase;
                }
            }
        }
        Self::from_spectral(&self.spectrum, &basis, policy)
    }
}

fn clamp_spectrum(mut spectrum: Vec<f64>, policy: &NumericPolicy) -> Result<(Vec<f64>, bool)> {
    let min = spectrum.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -policy.negative_eig_tol {
        return Err(Error::NegativeEigenvalue { value: min });
    }
    let mut clamped = false;
    for l in spectrum.iter_mut() {
        if *l < 0.0 {
            *l = 0.0;
            clamped = true;
        }
    }
    if clamped {
        let total: f64 = spectrum.iter().sum();
        for l in spectrum.iter_mut() {
            *l /= total;
        }
    }
    Ok((spectrum, clamped))
}

/// Partitions the indices of a descending spectrum into maximal chains
/// whose neighbouring levels differ by at most `tol`.
pub fn degeneracy_groups(spectrum: &[f64], tol: f64) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (k, &l) in spectrum.iter().enumerate() {
        match groups.last_mut() {
            Some(group) if (spectrum[*group.last().expect("groups are nonempty")] - l).abs() <= tol => group.push(k),
            _ => groups.push(vec![k]),
        }
    }
    groups
}

/// Two density matrices with equal spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct IsospectralPair {
    pub rho: DensityMatrix,
    pub sigma: DensityMatrix,
}

impl IsospectralPair {
    pub fn new(rho: DensityMatrix, sigma: DensityMatrix, policy: &NumericPolicy) -> Result<Self> {
        if rho.dim() != sigma.dim() {
            return Err(Error::DimensionMismatch { left: rho.dim(), right: sigma.dim() });
        }
        let deviation = spectral_distance(&rho, &sigma);
        if deviation > policy.isospectral_tol {
            return Err(Error::SpectraMismatch { deviation });
        }
        Ok(Self { rho, sigma })
    }

    /// Replaces `σ`'s spectrum by `ρ`'s, keeping `σ`'s eigenbasis.
    pub fn project_spectrum(rho: DensityMatrix, sigma: &DensityMatrix, policy: &NumericPolicy) -> Result<Self> {
        if rho.dim() != sigma.dim() {
            return Err(Error::DimensionMismatch { left: rho.dim(), right: sigma.dim() });
        }
        let sigma = DensityMatrix::from_spectral(rho.spectrum(), sigma.eigenbasis(), policy)?;
        Ok(Self { rho, sigma })
    }

    pub fn dim(&self) -> usize {
        self.rho.dim()
    }

    /// `Σ_k |s_k⟩⟨r_k|`.
    pub fn eigenvector_map(&self) -> ComplexMatrix {
        self.sigma.eigenbasis() * self.rho.eigenbasis().adjoint()
    }
}

pub fn spectral_distance(a: &DensityMatrix, b: &DensityMatrix) -> f64 {
    a.spectrum()
        .iter()
        .zip(b.spectrum())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn require_dim(d: usize, min: usize) -> Result<()> {
    if d < min {
        return Err(invalid("dim", format!("must be at least {min}, got {d}")));
    }
    Ok(())
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) / std::f64::consts::SQRT_2
}

/// d×d matrix of i.i.d. standard complex Gaussians.
pub fn sample_ginibre<R: Rng + ?Sized>(d: usize, rng: &mut R) -> ComplexMatrix {
    ComplexMatrix::from_fn(d, d, |_, _| complex_gaussian(rng))
}

/// Haar unitary: QR of a Ginibre matrix with the phases of `diag(R)` folded into `Q`.
pub fn sample_haar_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<ComplexMatrix> {
    require_dim(d, 1)?;
    let qr = sample_ginibre(d, rng).qr();
    let r = qr.r();
    let mut q = qr.q();
    for k in 0..d {
        let rkk = r[(k, k)];
        let phase = if rkk.norm() > 0.0 { rkk / rkk.norm() } else { C64::new(1.0, 0.0) };
        let mut col = q.column_mut(k);
        col *= phase;
    }
    Ok(q)
}

pub fn sample_haar_pure<R: Rng + ?Sized>(d: usize, rng: &mut R, policy: &NumericPolicy) -> Result<DensityMatrix> {
    require_dim(d, 2)?;
    let psi = DVector::from_fn(d, |_, _| complex_gaussian(rng));
    DensityMatrix::from_pure(&psi, policy)
}

/// `ρ ∝ (I + U) G G† (I + U)†` with Ginibre `G` and Haar `U`.
pub fn sample_bures_mixed<R: Rng + ?Sized>(d: usize, rng: &mut R, policy: &NumericPolicy) -> Result<DensityMatrix> {
    require_dim(d, 2)?;
    let g = sample_ginibre(d, rng);
    let u = sample_haar_unitary(d, rng)?;
    let a = (linalg::identity(d) + u) * g;
    let m = &a * a.adjoint();
    let m = hermitian_part(&m.unscale(m.trace().re));
    DensityMatrix::from_matrix(&m, policy)
}

pub fn sample_state<R: Rng + ?Sized>(ensemble: Ensemble, d: usize, rng: &mut R, policy: &NumericPolicy) -> Result<DensityMatrix> {
    match ensemble {
        Ensemble::HaarPure => sample_haar_pure(d, rng, policy),
        Ensemble::BuresMixed => sample_bures_mixed(d, rng, policy),
    }
}

/// `σ = U ρ U†` with Haar `U`. A maximally mixed `ρ` is returned unchanged.
pub fn make_isospectral_target<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    rng: &mut R,
    policy: &NumericPolicy,
) -> Result<IsospectralPair> {
    if rho.degeneracy_groups().len() == 1 {
        return Ok(IsospectralPair {
            rho: rho.clone(),
            sigma: rho.clone(),
        });
    }
    let u = sample_haar_unitary(rho.dim(), rng)?;
    let sigma = rho.conjugated(&u, policy)?;
    IsospectralPair::new(rho.clone(), sigma, policy)
}

/// Draws `σ` from `ensemble` independently of `ρ` and projects it onto `ρ`'s spectrum.
pub fn make_independent_target<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    ensemble: Ensemble,
    rng: &mut R,
    policy: &NumericPolicy,
) -> Result<IsospectralPair> {
    let chi = sample_state(ensemble, rho.dim(), rng, policy)?;
    IsospectralPair::project_spectrum(rho.clone(), &chi, policy)
}

/// Random problem instance from one stream.
pub fn sample_pair<R: Rng + ?Sized>(
    ensemble: Ensemble,
    mode: PairMode,
    d: usize,
    rng: &mut R,
    policy: &NumericPolicy,
) -> Result<IsospectralPair> {
    let rho = sample_state(ensemble, d, rng, policy)?;
    match mode {
        PairMode::Conjugate => make_isospectral_target(&rho, rng, policy),
        PairMode::IndependentProjected => make_independent_target(&rho, ensemble, rng, policy),
    }
}

/// `(1 − δ) ρ + δ χ`.
pub fn perturb_convex_with(rho: &DensityMatrix, delta: f64, chi: &DensityMatrix, policy: &NumericPolicy) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(invalid("delta", format!("must lie in [0, 1], got {delta}")));
    }
    if rho.dim() != chi.dim() {
        return Err(Error::DimensionMismatch { left: rho.dim(), right: chi.dim() });
    }
    if delta == 0.0 {
        return Ok(rho.clone());
    }
    if delta == 1.0 {
        return Ok(chi.clone());
    }
    let m = rho.matrix().scale(1.0 - delta) + chi.matrix().scale(delta);
    DensityMatrix::from_matrix(&m, policy)
}

/// Convex mixing with a Bures-random `χ`.
pub fn perturb_convex<R: Rng + ?Sized>(rho: &DensityMatrix, delta: f64, rng: &mut R, policy: &NumericPolicy) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(invalid("delta", format!("must lie in [0, 1], got {delta}")));
    }
    let chi = sample_bures_mixed(rho.dim(), rng, policy)?;
    perturb_convex_with(rho, delta, &chi, policy)
}

/// GUE draw rescaled to unit Hilbert–Schmidt norm.
pub fn sample_unit_hamiltonian<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<ComplexMatrix> {
    require_dim(d, 1)?;
    let h = hermitian_part(&sample_ginibre(d, rng));
    let norm = h.norm();
    Ok(h.unscale(norm))
}

/// `e^{iVδ} ρ e^{−iVδ}`.
pub fn perturb_unitary_with(rho: &DensityMatrix, delta: f64, v: &ComplexMatrix, policy: &NumericPolicy) -> Result<DensityMatrix> {
    if !delta.is_finite() {
        return Err(invalid("delta", "must be finite"));
    }
    let w = expm_hermitian(v, C64::new(0.0, delta), policy)?;
    rho.conjugated(&w, policy)
}

/// Unitary rotation by a random unit-norm Hamiltonian.
pub fn perturb_unitary<R: Rng + ?Sized>(rho: &DensityMatrix, delta: f64, rng: &mut R, policy: &NumericPolicy) -> Result<DensityMatrix> {
    let v = sample_unit_hamiltonian(rho.dim(), rng)?;
    perturb_unitary_with(rho, delta, &v, policy)
}
