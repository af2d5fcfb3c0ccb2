//! Iterative suppression of the parallel component of `H = i log O`.
//!
//! Starting from a unitary `O⁽⁰⁾` that maps `ρ → σ`, every step takes the
//! principal logarithm, projects it onto the commutant of the state with
//! the mask, and composes `O` with the exponential of that parallel part.
//! Because the parallel part commutes with `ρ`, every iterate still maps
//! `ρ → σ`. The loop stops once `‖H∥‖_HS ≤ ε ‖H‖_HS`.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::io::{matrix_serde, matrix_vec_serde};
use crate::linalg::{expm_hermitian, logm_unitary_principal, ComplexMatrix, NumericPolicy, C64};
use crate::mask::MaskSpec;
use crate::metrics::efficiency_eta_star;
use crate::states::{IsospectralPair, RngSeed};

/// Sign of the exponent used to compose the parallel part into `O`.
///
/// `Plus` gives `O ← O e^{+iH∥}`, which cancels `H∥` to first order.
/// `Minus` gives `O ← O e^{−iH∥}`. Both keep the `ρ → σ` mapping and share
/// the same fixed points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    #[default]
    Plus,
    Minus,
}

impl SignConvention {
    fn factor(self) -> f64 {
        match self {
            SignConvention::Plus => 1.0,
            SignConvention::Minus => -1.0,
        }
    }
}

/// Which state's commutant is removed at each step.
///
/// `Initial` masks with `ρ` and multiplies on the right, `Final` masks with
/// `σ` and multiplies on the left, `Both` does both at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MaskSide {
    #[default]
    Initial,
    Final,
    Both,
}

/// Geometric phases of the starting unitary `O⁽⁰⁾ = Σ_k e^{iφ_k} |s_k⟩⟨r_k|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPhases {
    /// One phase per eigenvector pair.
    Phases(Vec<f64>),
    /// One unitary per degeneracy group of `ρ`, acting within that eigenspace.
    Blocks(#[serde(with = "matrix_vec_serde")] Vec<ComplexMatrix>),
    /// Each phase drawn uniformly from `[0, 2π)` using the config's stream.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub epsilon: f64,
    /// `None` selects [`default_max_iterations`].
    pub max_iterations: Option<usize>,
    pub sign_convention: SignConvention,
    pub mask_side: MaskSide,
    pub initial_phases: InitialPhases,
    pub rng: RngSeed,
    pub policy: NumericPolicy,
}

impl SolverConfig {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            max_iterations: None,
            sign_convention: SignConvention::Plus,
            mask_side: MaskSide::Initial,
            initial_phases: InitialPhases::Uniform,
            rng: RngSeed::new(0, "solver"),
            policy: NumericPolicy::DEFAULT,
        }
    }

    pub fn with_phases(mut self, phases: InitialPhases) -> Self {
        self.initial_phases = phases;
        self
    }

    pub fn with_sign(mut self, sign: SignConvention) -> Self {
        self.sign_convention = sign;
        self
    }

    pub fn with_mask_side(mut self, side: MaskSide) -> Self {
        self.mask_side = side;
        self
    }

    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = Some(max_iterations);
        self
    }

    pub fn with_rng(mut self, rng: RngSeed) -> Self {
        self.rng = rng;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(invalid("epsilon", format!("must lie in (0, 1), got {}", self.epsilon)));
        }
        if self.max_iterations == Some(0) {
            return Err(invalid("max_iterations", "must be at least 1"));
        }
        Ok(())
    }

    pub fn max_iterations_for(&self, dim: usize) -> usize {
        self.max_iterations.unwrap_or_else(|| default_max_iterations(dim, self.epsilon))
    }
}

/// `10 · ⌈log₂ d⌉ · ⌈ε^{−1/2}⌉`, capped at 10⁴.
pub fn default_max_iterations(dim: usize, epsilon: f64) -> usize {
    let log_d = (dim.max(2) as f64).log2().ceil() as usize;
    let root = epsilon.recip().sqrt().ceil() as usize;
    (10 * log_d * root).clamp(1, 10_000)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    /// `‖M_ρ[H]‖_HS / ‖H‖_HS`.
    pub parallel_ratio: f64,
    /// `‖M_σ[H]‖_HS / ‖H‖_HS`.
    pub sigma_parallel_ratio: f64,
    /// `None` when `η★` is undefined (`H` acts trivially on `ρ`).
    pub efficiency_star: Option<f64>,
    /// `arg⟨s_k|O|r_k⟩`; `None` for degenerate spectra.
    pub geometric_phases: Option<Vec<f64>>,
    pub hamiltonian_hs_norm: f64,
    /// `‖O ρ O† − σ‖_HS`.
    pub mapping_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverRun {
    pub config: SolverConfig,
    /// The starting phases actually used (a `Uniform` config is resolved).
    pub initial_phases: InitialPhases,
    /// One record per iterate `j = 0..=n`.
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    /// Stopped by an external request before converging.
    #[serde(default)]
    pub cancelled: bool,
    #[serde(with = "matrix_serde")]
    pub final_hamiltonian: ComplexMatrix,
    #[serde(with = "matrix_serde")]
    pub final_unitary: ComplexMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

impl SolverRun {
    /// Number of updates `n` applied after the starting unitary.
    pub fn steps(&self) -> usize {
        self.iterations.len().saturating_sub(1)
    }

    pub fn last(&self) -> &IterationRecord {
        self.iterations.last().expect("a run always has its j = 0 record")
    }
}

/// Draws or validates the starting phases for a problem of size `dim`.
pub fn resolve_initial_phases(config: &SolverConfig, dim: usize) -> InitialPhases {
    match &config.initial_phases {
        InitialPhases::Uniform => {
            let mut rng = config.rng.child("initial-phases").rng();
            InitialPhases::Phases((0..dim).map(|_| rng.random_range(0.0..TAU)).collect())
        }
        other => other.clone(),
    }
}

/// `O = Σ_k e^{iφ_k} |s_k⟩⟨r_k|`, or `S B R†` with block-diagonal `B` for
/// degenerate spectra.
pub fn initial_unitary(pair: &IsospectralPair, phases: &InitialPhases, policy: &NumericPolicy) -> Result<ComplexMatrix> {
    let d = pair.dim();
    let mut middle = ComplexMatrix::zeros(d, d);
    match phases {
        InitialPhases::Phases(values) => {
            if values.len() != d {
                return Err(Error::PhaseArity { expected: d, got: values.len() });
            }
            for (k, &phi) in values.iter().enumerate() {
                middle[(k, k)] = C64::new(0.0, phi).exp();
            }
        }
        InitialPhases::Blocks(blocks) => {
            let groups = pair.rho.degeneracy_groups();
            if blocks.len() != groups.len() {
                return Err(Error::PhaseArity { expected: groups.len(), got: blocks.len() });
            }
            for (index, (group, block)) in groups.iter().zip(blocks).enumerate() {
                if block.nrows() != group.len() || block.ncols() != group.len() {
                    return Err(Error::BlockSize { index, expected: group.len(), got: block.nrows() });
                }
                crate::linalg::check_unitary(block, policy)?;
                for (a, &i) in group.iter().enumerate() {
                    for (b, &j) in group.iter().enumerate() {
                        middle[(i, j)] = block[(a, b)];
                    }
                }
            }
        }
        InitialPhases::Uniform => {
            return Err(invalid("initial_phases", "uniform phases must be resolved first"));
        }
    }
    Ok(pair.sigma.eigenbasis() * middle * pair.rho.eigenbasis().adjoint())
}

/// `φ_k = arg⟨s_k|O|r_k⟩ ∈ (−π, π]`.
pub fn extract_geometric_phases(o: &ComplexMatrix, pair: &IsospectralPair) -> Result<Vec<f64>> {
    if !pair.rho.is_nondegenerate() {
        return Err(Error::DegenerateSpectrum);
    }
    let d = pair.dim();
    if o.nrows() != d {
        return Err(Error::DimensionMismatch { left: o.nrows(), right: d });
    }
    let projected = pair.sigma.eigenbasis().adjoint() * o * pair.rho.eigenbasis();
    Ok((0..d)
        .map(|k| {
            let phi = projected[(k, k)].arg();
            if phi <= -PI {
                PI
            } else {
                phi
            }
        })
        .collect())
}

pub fn mapping_residual(o: &ComplexMatrix, pair: &IsospectralPair) -> f64 {
    (o * pair.rho.matrix() * o.adjoint() - pair.sigma.matrix()).norm()
}

/// Result of one update.
#[derive(Debug, Clone)]
pub struct Step {
    pub next: ComplexMatrix,
    pub hamiltonian: ComplexMatrix,
    pub parallel: ComplexMatrix,
}

/// One right-multiplied update `O ← O e^{±i M[H]}` with `H = i log O`.
pub fn solver_step(o: &ComplexMatrix, mask: &MaskSpec, sign: SignConvention, policy: &NumericPolicy) -> Result<Step> {
    let hamiltonian = logm_unitary_principal(o, policy)?;
    let parallel = mask.apply(&hamiltonian)?;
    let factor = expm_hermitian(&parallel, C64::new(0.0, sign.factor()), policy)?;
    Ok(Step {
        next: o * factor,
        hamiltonian,
        parallel,
    })
}

fn ratio(part: &ComplexMatrix, whole_norm: f64, policy: &NumericPolicy) -> f64 {
    if whole_norm <= policy.zero_generator_tol {
        0.0
    } else {
        part.norm() / whole_norm
    }
}

pub fn solve(pair: &IsospectralPair, config: &SolverConfig) -> Result<SolverRun> {
    solve_with_stop(pair, config, |_| false)
}

/// [`solve`] that also consults `stop(j)` before every update and returns
/// early with `cancelled = true` when it answers `true`.
pub fn solve_with_stop(pair: &IsospectralPair, config: &SolverConfig, stop: impl Fn(usize) -> bool) -> Result<SolverRun> {
    config.validate()?;
    let policy = &config.policy;
    let d = pair.dim();
    let max_iterations = config.max_iterations_for(d);
    let phases = resolve_initial_phases(config, d);
    let rho_mask = MaskSpec::new(&pair.rho);
    let sigma_mask = MaskSpec::new(&pair.sigma);
    let track_phases = pair.rho.is_nondegenerate();
    let sign = C64::new(0.0, config.sign_convention.factor());

    let mut o = initial_unitary(pair, &phases, policy)?;
    let mut records = Vec::new();
    let mut converged = false;
    let mut cancelled = false;
    let hamiltonian = loop {
        let j = records.len();
        let h = logm_unitary_principal(&o, policy)?;
        let h_norm = h.norm();
        let rho_par = rho_mask.apply(&h)?;
        let sigma_par = sigma_mask.apply(&h)?;
        let rho_ratio = ratio(&rho_par, h_norm, policy);
        let sigma_ratio = ratio(&sigma_par, h_norm, policy);
        records.push(IterationRecord {
            index: j,
            parallel_ratio: rho_ratio,
            sigma_parallel_ratio: sigma_ratio,
            efficiency_star: efficiency_eta_star(&h, &pair.rho).ok(),
            geometric_phases: if track_phases { Some(extract_geometric_phases(&o, pair)?) } else { None },
            hamiltonian_hs_norm: h_norm,
            mapping_residual: mapping_residual(&o, pair),
        });

        let test = match config.mask_side {
            MaskSide::Initial => rho_ratio,
            MaskSide::Final => sigma_ratio,
            MaskSide::Both => rho_ratio.max(sigma_ratio),
        };
        if test <= config.epsilon {
            converged = true;
            break h;
        }
        if j >= max_iterations {
            break h;
        }
        if stop(j) {
            cancelled = true;
            break h;
        }

        o = match config.mask_side {
            MaskSide::Initial => &o * expm_hermitian(&rho_par, sign, policy)?,
            MaskSide::Final => expm_hermitian(&sigma_par, sign, policy)? * &o,
            MaskSide::Both => expm_hermitian(&sigma_par, sign, policy)? * &o * expm_hermitian(&rho_par, sign, policy)?,
        };
    };

    Ok(SolverRun {
        config: config.clone(),
        initial_phases: phases,
        iterations: records,
        converged,
        cancelled,
        final_hamiltonian: hamiltonian,
        final_unitary: o,
        metadata: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{identity, pauli};
    use crate::metrics::{qsl_mixed, qsl_pure};
    use crate::states::{sample_bures_mixed, sample_haar_unitary, sample_pair, DensityMatrix, Ensemble, PairMode};
    use std::f64::consts::{FRAC_PI_4, SQRT_2};

    const P: NumericPolicy = NumericPolicy::DEFAULT;

    fn qubit_pair(p: f64) -> IsospectralPair {
        let rho = DensityMatrix::from_matrix(&(identity(2) + pauli::x().scale(p)).scale(0.5), &P).unwrap();
        let sigma = DensityMatrix::from_matrix(&(identity(2) + pauli::y().scale(p)).scale(0.5), &P).unwrap();
        IsospectralPair::new(rho, sigma, &P).unwrap()
    }

    fn phi_z() -> InitialPhases {
        InitialPhases::Phases(vec![FRAC_PI_4, FRAC_PI_4])
    }

    fn phi_xy() -> InitialPhases {
        InitialPhases::Phases(vec![FRAC_PI_4, -3.0 * FRAC_PI_4])
    }

    fn traceless(h: &ComplexMatrix) -> ComplexMatrix {
        let d = h.nrows();
        h - identity(d) * (h.trace() / C64::new(d as f64, 0.0))
    }

    #[test]
    fn identical_states_with_zero_phases_give_identity() {
        let mut rng = RngSeed::new(1, "same").rng();
        let rho = sample_bures_mixed(3, &mut rng, &P).unwrap();
        let pair = IsospectralPair::new(rho.clone(), rho, &P).unwrap();
        let o = initial_unitary(&pair, &InitialPhases::Phases(vec![0.0; 3]), &P).unwrap();
        assert!((o - identity(3)).norm() < 1e-13);
    }

    #[test]
    fn qubit_phases_reproduce_known_hamiltonians() {
        for p in [0.3, 1.0] {
            let pair = qubit_pair(p);
            let o = initial_unitary(&pair, &phi_z(), &P).unwrap();
            assert!(mapping_residual(&o, &pair) < 1e-14);
            let h = logm_unitary_principal(&o, &P).unwrap();
            assert!((&h - pauli::z() * C64::new(FRAC_PI_4, 0.0)).norm() < 1e-14, "{h}");

            // With this eigenvector gauge φ_xy lands on the same generator
            // shifted by −π/2 · I; only the identity component differs.
            let o = initial_unitary(&pair, &phi_xy(), &P).unwrap();
            let h = logm_unitary_principal(&o, &P).unwrap();
            let expected = (pauli::x() + pauli::y()) * C64::new(SQRT_2 * PI / 4.0, 0.0);
            assert!((traceless(&h) - &expected).norm() < 1e-14, "{h}");
            assert!((h.trace().re + PI).abs() < 1e-14);
        }
    }

    #[test]
    fn phase_arity_is_checked() {
        let pair = qubit_pair(0.5);
        assert!(matches!(
            initial_unitary(&pair, &InitialPhases::Phases(vec![0.0; 3]), &P),
            Err(Error::PhaseArity { .. })
        ));
        assert!(matches!(
            initial_unitary(&pair, &InitialPhases::Blocks(vec![identity(2)]), &P),
            Err(Error::PhaseArity { .. })
        ));
    }

    #[test]
    fn block_phases_map_degenerate_states() {
        let mut rng = RngSeed::new(2, "blocks").rng();
        let diag = ComplexMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            C64::new(0.5, 0.0),
            C64::new(0.25, 0.0),
            C64::new(0.25, 0.0),
        ]));
        let rho = DensityMatrix::from_matrix(&diag, &P).unwrap();
        let u = sample_haar_unitary(3, &mut rng).unwrap();
        let pair = IsospectralPair::new(rho.clone(), rho.conjugated(&u, &P).unwrap(), &P).unwrap();
        let blocks = vec![
            ComplexMatrix::from_element(1, 1, C64::new(0.0, 0.3).exp()),
            sample_haar_unitary(2, &mut rng).unwrap(),
        ];
        let o = initial_unitary(&pair, &InitialPhases::Blocks(blocks), &P).unwrap();
        assert!(mapping_residual(&o, &pair) < 1e-13);

        let wrong = vec![identity(2), identity(1)];
        assert!(matches!(
            initial_unitary(&pair, &InitialPhases::Blocks(wrong), &P),
            Err(Error::BlockSize { .. })
        ));
    }

    #[test]
    fn geometric_phase_round_trip() {
        let pair = qubit_pair(0.6);
        for phases in [vec![FRAC_PI_4, FRAC_PI_4], vec![FRAC_PI_4, -3.0 * FRAC_PI_4]] {
            let o = initial_unitary(&pair, &InitialPhases::Phases(phases.clone()), &P).unwrap();
            let back = extract_geometric_phases(&o, &pair).unwrap();
            for (a, b) in back.iter().zip(&phases) {
                assert!((a - b).abs() < 1e-14);
            }
            let rebuilt = initial_unitary(&pair, &InitialPhases::Phases(back), &P).unwrap();
            assert!((rebuilt - &o).norm() < 1e-8);
        }
    }

    #[test]
    fn global_phase_shifts_all_geometric_phases() {
        let pair = qubit_pair(0.6);
        let o = initial_unitary(&pair, &InitialPhases::Phases(vec![0.1, -0.4]), &P).unwrap();
        let alpha = 0.5;
        let shifted = &o * C64::new(0.0, alpha).exp();
        let phases = extract_geometric_phases(&shifted, &pair).unwrap();
        assert!((phases[0] - 0.6).abs() < 1e-14);
        assert!((phases[1] - 0.1).abs() < 1e-14);
    }

    #[test]
    fn geometric_phases_undefined_when_degenerate() {
        let rho = DensityMatrix::maximally_mixed(2, &P).unwrap();
        let pair = IsospectralPair::new(rho.clone(), rho, &P).unwrap();
        assert!(matches!(extract_geometric_phases(&identity(2), &pair), Err(Error::DegenerateSpectrum)));
    }

    #[test]
    fn step_at_fixed_point_is_identity() {
        let pair = qubit_pair(0.8);
        let o = initial_unitary(&pair, &phi_z(), &P).unwrap();
        let step = solver_step(&o, &MaskSpec::new(&pair.rho), SignConvention::Plus, &P).unwrap();
        assert!(step.parallel.norm() < 1e-14);
        assert!((step.next - &o).norm() < 1e-14);
    }

    #[test]
    fn step_keeps_the_mapping() {
        let pair = sample_pair(Ensemble::BuresMixed, PairMode::Conjugate, 5, &mut RngSeed::new(3, "step").rng(), &P).unwrap();
        let mask = MaskSpec::new(&pair.rho);
        let mut o = initial_unitary(&pair, &InitialPhases::Phases(vec![0.2, 1.0, -2.0, 0.5, 3.0]), &P).unwrap();
        for sign in [SignConvention::Plus, SignConvention::Minus, SignConvention::Plus] {
            o = solver_step(&o, &mask, sign, &P).unwrap().next;
            assert!(mapping_residual(&o, &pair) < 1e-12);
        }
    }

    #[test]
    fn maximally_mixed_mask_keeps_everything() {
        let rho = DensityMatrix::maximally_mixed(3, &P).unwrap();
        let pair = IsospectralPair::new(rho.clone(), rho, &P).unwrap();
        let o = initial_unitary(&pair, &InitialPhases::Phases(vec![0.3, -0.2, 1.1]), &P).unwrap();
        let step = solver_step(&o, &MaskSpec::new(&pair.rho), SignConvention::Plus, &P).unwrap();
        assert!((&step.parallel - &step.hamiltonian).norm() < 1e-14);
        let expected = &o * expm_hermitian(&step.hamiltonian, C64::new(0.0, 1.0), &P).unwrap();
        assert!((step.next - expected).norm() < 1e-14);
    }

    #[test]
    fn qubit_geodesic_from_detour() {
        let pair = qubit_pair(1.0);
        let config = SolverConfig::new(1e-4).with_phases(phi_xy());
        let run = solve(&pair, &config).unwrap();
        assert!(run.converged, "{:?}", run.last());
        let report = qsl_pure(&pair.rho, &pair.sigma, &run.final_hamiltonian).unwrap();
        assert!((report.time_ratio - 1.0).abs() < 1e-3, "{report:?}");

        let first = qsl_pure(&pair.rho, &pair.sigma, &logm_unitary_principal(&initial_unitary(&pair, &phi_xy(), &P).unwrap(), &P).unwrap()).unwrap();
        assert!((first.time_ratio - SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn fixed_point_start_needs_no_steps() {
        let pair = qubit_pair(0.4);
        let run = solve(&pair, &SolverConfig::new(1e-6).with_phases(phi_z())).unwrap();
        assert!(run.converged);
        assert_eq!(run.steps(), 0);
        let report = qsl_mixed(&pair.rho, &pair.sigma, &run.final_hamiltonian).unwrap();
        assert!((report.time_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_states_converge_immediately() {
        let rho = sample_bures_mixed(3, &mut RngSeed::new(5, "id").rng(), &P).unwrap();
        let pair = IsospectralPair::new(rho.clone(), rho, &P).unwrap();
        let run = solve(&pair, &SolverConfig::new(1e-3).with_phases(InitialPhases::Phases(vec![0.0; 3]))).unwrap();
        assert!(run.converged);
        assert_eq!(run.steps(), 0);
        assert_eq!(run.last().parallel_ratio, 0.0);
    }

    #[test]
    fn mixed_pair_converges_and_keeps_mapping() {
        let mut rng = RngSeed::new(6, "d8").rng();
        let pair = sample_pair(Ensemble::BuresMixed, PairMode::Conjugate, 8, &mut rng, &P).unwrap();
        let run = solve(&pair, &SolverConfig::new(1e-2).with_rng(RngSeed::new(6, "phases"))).unwrap();
        assert!(run.converged, "n = {}", run.steps());
        assert!(run.iterations.iter().all(|r| r.mapping_residual <= 1e-9));
        assert!(run.last().parallel_ratio <= 1e-2);
        let regenerated = expm_hermitian(&run.final_hamiltonian, C64::new(0.0, -1.0), &P).unwrap();
        assert!(mapping_residual(&regenerated, &pair) <= 1e-9);
    }

    #[test]
    fn non_convergence_is_data() {
        let mut rng = RngSeed::new(7, "cap").rng();
        let pair = sample_pair(Ensemble::BuresMixed, PairMode::Conjugate, 6, &mut rng, &P).unwrap();
        let run = solve(&pair, &SolverConfig::new(1e-9).with_max_iterations(2)).unwrap();
        assert!(!run.converged);
        assert_eq!(run.steps(), 2);
        assert!(run.last().parallel_ratio > 1e-9);
    }

    #[test]
    fn stop_hook_cancels() {
        let mut rng = RngSeed::new(7, "cancel").rng();
        let pair = sample_pair(Ensemble::BuresMixed, PairMode::Conjugate, 6, &mut rng, &P).unwrap();
        let run = solve_with_stop(&pair, &SolverConfig::new(1e-9), |j| j >= 1).unwrap();
        assert!(run.cancelled && !run.converged);
        assert_eq!(run.steps(), 1);
    }

    #[test]
    fn sigma_mask_of_generator_is_conjugated_rho_mask() {
        // H = i log O commutes with O and σ = OρO†, so M_σ[H] = O M_ρ[H] O†.
        let mut rng = RngSeed::new(8, "sides").rng();
        let pair = sample_pair(Ensemble::BuresMixed, PairMode::Conjugate, 5, &mut rng, &P).unwrap();
        let o = initial_unitary(&pair, &resolve_initial_phases(&SolverConfig::new(0.1), 5), &P).unwrap();
        let h = logm_unitary_principal(&o, &P).unwrap();
        let rho_par = MaskSpec::new(&pair.rho).apply(&h).unwrap();
        let sigma_par = MaskSpec::new(&pair.sigma).apply(&h).unwrap();
        assert!((&sigma_par - &o * &rho_par * o.adjoint()).norm() < 1e-12);
        // Consequently e^{iM_σ[H]} O e^{−iM_ρ[H]} = O.
        let sandwiched = expm_hermitian(&sigma_par, C64::new(0.0, 1.0), &P).unwrap()
            * &o
            * expm_hermitian(&rho_par, C64::new(0.0, -1.0), &P).unwrap();
        assert!((sandwiched - &o).norm() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::new(0.0).validate().is_err());
        assert!(SolverConfig::new(1.0).validate().is_err());
        assert!(SolverConfig::new(0.1).with_max_iterations(0).validate().is_err());
        assert_eq!(default_max_iterations(2, 1e-4), 1000);
        assert_eq!(default_max_iterations(32, 1e-4), 5000);
        assert_eq!(default_max_iterations(1000, 1e-6), 10_000);
    }

    #[test]
    fn run_serialization_round_trip() {
        let pair = qubit_pair(0.7);
        let run = solve(&pair, &SolverConfig::new(1e-3).with_phases(phi_xy())).unwrap();
        let text = serde_json::to_string(&run).unwrap();
        let back: SolverRun = serde_json::from_str(&text).unwrap();
        assert_eq!(back, run);
    }
}
