//! Riemannian sparse coding of an HPD target.
//!
//! A target `X` is approximated by `M(α) = Σ α_i D_i`, `α ≥ 0`, with cost
//!
//! ```text
//! f(α) = ½‖log(H·M(α)·H)‖_F² + λ‖α‖₁,      H = X^{-1/2}
//! ```
//!
//! i.e. half the squared affine-invariant distance between `X` and `M(α)`
//! plus an ℓ₁ penalty. The smooth part has gradient
//! `∂f₁/∂α_p = Re Tr(log(W)·W^{-1}·H·D_p·H)` with `W = H·M(α)·H`, which is
//! evaluated here as `Re Tr(R·D_p)` with the single kernel
//! `R = H·log(W)·W^{-1}·H` shared by all atoms.
//!
//! Coefficients are updated by proximal gradient (ISTA) steps whose
//! proximal map is the one-sided shrinkage `max(x − λt, 0)`, and are
//! initialised with a projected Barzilai–Borwein gradient method.

use thiserror::Error;

use crate::hpd::{CMatrix, HermitianMatrix, HpdError, HpdMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodingError {
    #[error("reconstruction is not positive definite (min eigenvalue {min_eigenvalue:.3e} <= floor {floor:.3e})")]
    ReconstructionNotPD { min_eigenvalue: f64, floor: f64 },
    #[error("code length {code} does not match dictionary size {atoms}")]
    LengthMismatch { code: usize, atoms: usize },
    #[error("coefficient {index} is negative or not finite ({value})")]
    InfeasibleCode { index: usize, value: f64 },
    #[error("invalid dictionary: {0}")]
    InvalidDictionary(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Hpd(#[from] HpdError),
}

/// Relative PD floor: `M` is treated as singular when
/// `λ_min(M) ≤ floor · Tr(M)/d`.
pub const DEFAULT_PD_FLOOR: f64 = 1e-10;

/// A target and its precomputed whitener `H = X^{-1/2}`.
#[derive(Clone, Debug)]
pub struct EncodingProblem {
    target: HpdMatrix,
    whitener: HpdMatrix,
}

impl EncodingProblem {
    pub fn new(target: HpdMatrix) -> Result<Self, CodingError> {
        let whitener = target.inv_sqrt()?;
        Ok(Self { target, whitener })
    }

    pub fn target(&self) -> &HpdMatrix {
        &self.target
    }

    pub fn whitener(&self) -> &HpdMatrix {
        &self.whitener
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }
}

/// Non-negative coefficient vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCode(Vec<f64>);

impl SparseCode {
    pub fn new(coefficients: Vec<f64>) -> Result<Self, CodingError> {
        if let Some((index, &value)) = coefficients
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(CodingError::InfeasibleCode { index, value });
        }
        Ok(Self(coefficients))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, j: usize) -> Self {
        let mut v = vec![0.0; n];
        v[j] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// ‖α‖₁, which is the plain sum since α ≥ 0.
    pub fn l1(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn support_len(&self) -> usize {
        self.0.iter().filter(|v| **v > 0.0).count()
    }

    /// Projects onto the non-negative orthant.
    fn project(v: Vec<f64>) -> Self {
        Self(v.into_iter().map(|x| if x > 0.0 { x } else { 0.0 }).collect())
    }
}

/// HPD atoms with class labels, `M` atoms for each of `C` classes.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    atoms: Vec<HpdMatrix>,
    labels: Vec<u16>,
    atoms_per_class: usize,
    classes: usize,
}

impl Dictionary {
    /// `labels[i]` is the class (1-based) of `atoms[i]`; every class in
    /// `1..=C` must own the same number of atoms.
    pub fn new(atoms: Vec<HpdMatrix>, labels: Vec<u16>) -> Result<Self, CodingError> {
        if atoms.is_empty() || atoms.len() != labels.len() {
            return Err(CodingError::InvalidDictionary(format!(
                "{} atoms with {} labels",
                atoms.len(),
                labels.len()
            )));
        }
        let d = atoms[0].dim();
        if atoms.iter().any(|a| a.dim() != d) {
            return Err(CodingError::InvalidDictionary("atoms differ in dimension".into()));
        }
        let classes = *labels.iter().max().unwrap() as usize;
        let mut per_class = vec![0usize; classes + 1];
        for &l in &labels {
            per_class[l as usize] += 1;
        }
        let m = per_class[1.min(classes)];
        if per_class[0] != 0 || classes == 0 || per_class[1..].iter().any(|&c| c != m) {
            return Err(CodingError::InvalidDictionary(
                "labels must partition atoms evenly over classes 1..=C".into(),
            ));
        }
        Ok(Self {
            atoms,
            labels,
            atoms_per_class: m,
            classes,
        })
    }

    /// Same labels, new atoms (dictionary updates never relabel).
    pub fn with_atoms(&self, atoms: Vec<HpdMatrix>) -> Result<Self, CodingError> {
        if atoms.len() != self.atoms.len() {
            return Err(CodingError::InvalidDictionary("atom count changed".into()));
        }
        Ok(Self {
            atoms,
            labels: self.labels.clone(),
            atoms_per_class: self.atoms_per_class,
            classes: self.classes,
        })
    }

    pub fn atoms(&self) -> &[HpdMatrix] {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> &HpdMatrix {
        &self.atoms[i]
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms_per_class(&self) -> usize {
        self.atoms_per_class
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].dim()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SrsrConfig {
    /// Sparsity weight λ.
    pub lambda: f64,
    /// ISTA step size t.
    pub step: f64,
    /// Number of unfolded layers K.
    pub layers: usize,
    /// Relative PD floor ε for reconstructions.
    pub pd_floor: f64,
    /// Projected-gradient iterations used to initialise codes.
    pub init_iterations: usize,
    /// Monotone backtracking on ISTA steps; `false` is the plain
    /// fixed-step iteration.
    pub safeguard: bool,
    pub max_halvings: usize,
}

impl Default for SrsrConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            step: 1e-4,
            layers: 4,
            pd_floor: DEFAULT_PD_FLOOR,
            init_iterations: 50,
            safeguard: true,
            max_halvings: 20,
        }
    }
}

impl SrsrConfig {
    /// The alternative sparsity weight λ = 0.1.
    pub fn lambda_small() -> Self {
        Self {
            lambda: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), CodingError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(CodingError::InvalidConfig(format!("lambda {}", self.lambda)));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(CodingError::InvalidConfig(format!("step {}", self.step)));
        }
        if !(self.pd_floor >= 0.0) {
            return Err(CodingError::InvalidConfig(format!("pd_floor {}", self.pd_floor)));
        }
        Ok(())
    }
}

fn check_len(alpha: &SparseCode, dict: &Dictionary) -> Result<(), CodingError> {
    if alpha.len() != dict.len() {
        return Err(CodingError::LengthMismatch {
            code: alpha.len(),
            atoms: dict.len(),
        });
    }
    Ok(())
}

/// `M(α) = Σ α_i D_i`.
pub fn reconstruction(alpha: &SparseCode, dict: &Dictionary) -> HermitianMatrix {
    assert_eq!(alpha.len(), dict.len(), "code/dictionary length mismatch");
    let mut m = CMatrix::zeros(dict.dim());
    for (&a, atom) in alpha.as_slice().iter().zip(dict.atoms()) {
        if a != 0.0 {
            m.add_scaled(a, atom.as_matrix());
        }
    }
    HermitianMatrix::from_matrix(&m)
}

/// Smooth-term value and (optionally) the gradient kernel
/// `R = H·log(W)·W^{-1}·H` at a reconstruction `m`.
pub(crate) struct Residual {
    pub value: f64,
    pub kernel: Option<CMatrix>,
}

pub(crate) fn evaluate_residual(
    problem: &EncodingProblem,
    m: &HermitianMatrix,
    pd_floor: f64,
    want_kernel: bool,
) -> Result<Residual, CodingError> {
    let d = m.dim();
    let trace = m.as_matrix().trace().re;
    let floor = pd_floor * trace / d as f64;
    let em = m.eig()?;
    if !(em.min() > floor) || !(trace > 0.0) {
        return Err(CodingError::ReconstructionNotPD {
            min_eigenvalue: em.min(),
            floor,
        });
    }
    let h = problem.whitener().as_matrix();
    let w = HermitianMatrix::from_matrix(&m.as_matrix().sandwich(h));
    let ew = w.eig()?;
    if !(ew.min() > 0.0) {
        return Err(CodingError::ReconstructionNotPD {
            min_eigenvalue: ew.min(),
            floor: 0.0,
        });
    }
    let value = 0.5 * ew.values.iter().map(|l| l.ln().powi(2)).sum::<f64>();
    let kernel = want_kernel.then(|| ew.map(|l| l.ln() / l).sandwich(h));
    Ok(Residual { value, kernel })
}

/// `½‖log(H·M(α)·H)‖_F² + λ‖α‖₁`.
pub fn objective(
    problem: &EncodingProblem,
    alpha: &SparseCode,
    dict: &Dictionary,
    lambda: f64,
) -> Result<f64, CodingError> {
    objective_with_floor(problem, alpha, dict, lambda, DEFAULT_PD_FLOOR)
}

pub fn objective_with_floor(
    problem: &EncodingProblem,
    alpha: &SparseCode,
    dict: &Dictionary,
    lambda: f64,
    pd_floor: f64,
) -> Result<f64, CodingError> {
    check_len(alpha, dict)?;
    let m = reconstruction(alpha, dict);
    let r = evaluate_residual(problem, &m, pd_floor, false)?;
    Ok(r.value + lambda * alpha.l1())
}

/// Gradient of the smooth term only.
pub fn residual_gradient(
    problem: &EncodingProblem,
    alpha: &SparseCode,
    dict: &Dictionary,
) -> Result<Vec<f64>, CodingError> {
    check_len(alpha, dict)?;
    let m = reconstruction(alpha, dict);
    let r = evaluate_residual(problem, &m, DEFAULT_PD_FLOOR, true)?;
    Ok(kernel_gradient(r.kernel.as_ref().unwrap(), dict))
}

fn kernel_gradient(kernel: &CMatrix, dict: &Dictionary) -> Vec<f64> {
    dict.atoms()
        .iter()
        .map(|a| kernel.re_trace_product(a.as_matrix()))
        .collect()
}

/// Residual gradient plus `λ·sgn(α)`, with `sgn(0) = 0`.
pub fn full_gradient(
    problem: &EncodingProblem,
    alpha: &SparseCode,
    dict: &Dictionary,
    lambda: f64,
) -> Result<Vec<f64>, CodingError> {
    let mut g = residual_gradient(problem, alpha, dict)?;
    for (gi, &a) in g.iter_mut().zip(alpha.as_slice()) {
        if a > 0.0 {
            *gi += lambda;
        }
    }
    Ok(g)
}

/// One-sided shrinkage `max(x − θ, 0)`: the proximal map of
/// `θ‖·‖₁` restricted to the non-negative orthant.
pub fn soft_threshold(x: &[f64], theta: f64) -> Vec<f64> {
    assert!(theta >= 0.0, "threshold must be non-negative");
    x.iter().map(|&v| (v - theta).max(0.0)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepStatus {
    /// The trial point decreased (or kept) the objective.
    Accepted,
    /// Fixed-step mode: the trial point was taken without checks.
    Unchecked,
    /// No admissible step; the input code is returned unchanged.
    Failed,
}

#[derive(Clone, Debug)]
pub struct IstaStep {
    pub code: SparseCode,
    /// Objective at `code` (NaN when unknown).
    pub objective: f64,
    /// Number of step-size halvings taken.
    pub halvings: usize,
    pub status: StepStatus,
}

/// `α⁺ = max(α − t·∇f₁(α) − λt, 0)`, halving `t` until the reconstruction
/// stays PD and the objective does not increase.
pub fn ista_step(
    problem: &EncodingProblem,
    alpha: &SparseCode,
    dict: &Dictionary,
    cfg: &SrsrConfig,
) -> IstaStep {
    let failed = |objective| IstaStep {
        code: alpha.clone(),
        objective,
        halvings: 0,
        status: StepStatus::Failed,
    };
    if check_len(alpha, dict).is_err() {
        return failed(f64::NAN);
    }
    let m = reconstruction(alpha, dict);
    let current = match evaluate_residual(problem, &m, cfg.pd_floor, true) {
        Ok(r) => r,
        Err(_) => return failed(f64::NAN),
    };
    let f0 = current.value + cfg.lambda * alpha.l1();
    let grad = kernel_gradient(current.kernel.as_ref().unwrap(), dict);

    let trial_at = |t: f64| -> SparseCode {
        let moved: Vec<f64> = alpha
            .as_slice()
            .iter()
            .zip(&grad)
            .map(|(a, g)| a - t * g)
            .collect();
        SparseCode(soft_threshold(&moved, cfg.lambda * t))
    };

    if !cfg.safeguard {
        let code = trial_at(cfg.step);
        let objective = objective_with_floor(problem, &code, dict, cfg.lambda, cfg.pd_floor)
            .unwrap_or(f64::NAN);
        return IstaStep {
            code,
            objective,
            halvings: 0,
            status: StepStatus::Unchecked,
        };
    }

    let mut t = cfg.step;
    for halvings in 0..=cfg.max_halvings {
        let code = trial_at(t);
        if let Ok(f) = objective_with_floor(problem, &code, dict, cfg.lambda, cfg.pd_floor) {
            if f <= f0 {
                return IstaStep {
                    code,
                    objective: f,
                    halvings,
                    status: StepStatus::Accepted,
                };
            }
        }
        t *= 0.5;
    }
    failed(f0)
}

/// Stopping rule for [`ista_solve`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStop {
    /// Stop once |Δf| falls below this …
    pub objective_tol: f64,
    /// … and the largest coefficient change falls below this.
    pub step_tol: f64,
    pub max_iterations: usize,
}

impl Default for SolveStop {
    fn default() -> Self {
        Self {
            objective_tol: 1e-13,
            step_tol: 1e-10,
            max_iterations: 500,
        }
    }
}

#[derive(Clone, Debug)]
pub struct IstaSolve {
    pub code: SparseCode,
    /// Objective before the first step and after every step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    /// Both stopping tolerances were met.
    pub converged: bool,
    /// Stopped because no step size decreased the objective; at a
    /// minimiser this is the expected way for a safeguarded run to end.
    pub failed: bool,
}

/// Reference solver: repeated [`ista_step`] at a fixed dictionary.
pub fn ista_solve(
    problem: &EncodingProblem,
    start: &SparseCode,
    dict: &Dictionary,
    cfg: &SrsrConfig,
    stop: &SolveStop,
) -> IstaSolve {
    let mut code = start.clone();
    let mut trace = vec![objective_with_floor(problem, &code, dict, cfg.lambda, cfg.pd_floor).unwrap_or(f64::NAN)];
    let mut iterations = 0;
    let mut converged = false;
    let mut failed = false;
    while iterations < stop.max_iterations {
        let step = ista_step(problem, &code, dict, cfg);
        iterations += 1;
        if step.status == StepStatus::Failed {
            failed = true;
            break;
        }
        let prev = *trace.last().unwrap();
        let moved = step
            .code
            .as_slice()
            .iter()
            .zip(code.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        trace.push(step.objective);
        code = step.code;
        if (prev - step.objective).abs() < stop.objective_tol && moved < stop.step_tol {
            converged = true;
            break;
        }
    }
    IstaSolve {
        code,
        trace,
        iterations,
        converged,
        failed,
    }
}

/// Initial code from the uniform vector `1/N` by projected gradient with
/// Barzilai–Borwein step lengths and an Armijo backtrack along the
/// projected direction.
///
/// On the non-negative orthant the ℓ₁ term is linear, so the gradient used
/// here is `∇f₁ + λ·1`. Falls back to the uniform start if the objective
/// cannot be evaluated there.
pub fn spg_init(problem: &EncodingProblem, dict: &Dictionary, cfg: &SrsrConfig) -> SparseCode {
    const SIGMA_MIN: f64 = 1e-10;
    const SIGMA_MAX: f64 = 1e10;
    const ARMIJO: f64 = 1e-4;
    const MAX_BACKTRACKS: usize = 30;

    let n = dict.len();
    let mut alpha = SparseCode::uniform(n);
    let eval = |a: &SparseCode| -> Option<(f64, Vec<f64>)> {
        let m = reconstruction(a, dict);
        let r = evaluate_residual(problem, &m, cfg.pd_floor, true).ok()?;
        let mut g = kernel_gradient(r.kernel.as_ref().unwrap(), dict);
        for gi in &mut g {
            *gi += cfg.lambda;
        }
        Some((r.value + cfg.lambda * a.l1(), g))
    };
    let Some((mut f, mut g)) = eval(&alpha) else {
        return alpha;
    };

    let projected_step = |a: &SparseCode, g: &[f64], sigma: f64| -> Vec<f64> {
        a.as_slice()
            .iter()
            .zip(g)
            .map(|(x, gi)| (x - sigma * gi).max(0.0) - x)
            .collect()
    };
    let pg = projected_step(&alpha, &g, 1.0);
    let pg_norm = pg.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut sigma = if pg_norm > 0.0 {
        (1.0 / pg_norm).clamp(SIGMA_MIN, SIGMA_MAX)
    } else {
        1.0
    };

    for _ in 0..cfg.init_iterations {
        let dir = projected_step(&alpha, &g, sigma);
        if dir.iter().all(|v| v.abs() < 1e-15) {
            break;
        }
        let slope: f64 = dir.iter().zip(&g).map(|(d, gi)| d * gi).sum();
        let mut s = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let cand = SparseCode::project(
                alpha
                    .as_slice()
                    .iter()
                    .zip(&dir)
                    .map(|(a, d)| a + s * d)
                    .collect(),
            );
            if let Some((fc, gc)) = eval(&cand) {
                if fc <= f + ARMIJO * s * slope {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            s *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else {
            break;
        };
        let (mut ss, mut sy) = (0.0, 0.0);
        for i in 0..n {
            let si = cand.0[i] - alpha.0[i];
            ss += si * si;
            sy += si * (gc[i] - g[i]);
        }
        sigma = if sy > 0.0 {
            (ss / sy).clamp(SIGMA_MIN, SIGMA_MAX)
        } else {
            SIGMA_MAX
        };
        alpha = cand;
        f = fc;
        g = gc;
    }
    alpha
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hpd::SpectralFn;
    use crate::sampling::random_hpd;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dict_of(atoms: Vec<HpdMatrix>) -> Dictionary {
        let n = atoms.len();
        Dictionary::new(atoms, vec![1; n]).unwrap()
    }

    fn random_instance(rng: &mut ChaCha8Rng, d: usize, n: usize) -> (EncodingProblem, Dictionary, SparseCode) {
        let atoms: Vec<HpdMatrix> = (0..n).map(|_| random_hpd(rng, d)).collect();
        let dict = dict_of(atoms);
        let target = random_hpd(rng, d);
        let alpha = SparseCode::new((0..n).map(|_| rng.random_range(0.05..1.0)).collect()).unwrap();
        (EncodingProblem::new(target).unwrap(), dict, alpha)
    }

    #[test]
    fn whitener_whitens_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = EncodingProblem::new(random_hpd(&mut rng, 3)).unwrap();
        let i = p.target().whiten(p.whitener());
        assert!(i.as_matrix().relative_error(&CMatrix::identity(3)) < 1e-10);
    }

    #[test]
    fn dictionary_requires_even_partition() {
        let a = HpdMatrix::identity(2);
        assert!(Dictionary::new(vec![a.clone(), a.clone(), a.clone()], vec![1, 1, 2]).is_err());
        assert!(Dictionary::new(vec![a.clone(), a.clone()], vec![0, 1]).is_err());
        let d = Dictionary::new(vec![a.clone(), a.clone(), a.clone(), a], vec![2, 1, 1, 2]).unwrap();
        assert_eq!((d.atoms_per_class(), d.classes()), (2, 2));
    }

    #[test]
    fn reconstruction_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, dict, alpha) = random_instance(&mut rng, 3, 5);
        let e = reconstruction(&SparseCode::one_hot(5, 3), &dict);
        assert_eq!(e.as_matrix(), dict.atom(3).as_matrix());
        assert_eq!(reconstruction(&SparseCode::zeros(5), &dict).frobenius_norm(), 0.0);
        // reversed-order accumulation
        let m = reconstruction(&alpha, &dict);
        let mut oracle = CMatrix::zeros(3);
        for i in (0..5).rev() {
            oracle.add_scaled(alpha.as_slice()[i], dict.atom(i).as_matrix());
        }
        for (a, b) in m.as_matrix().as_slice().iter().zip(oracle.as_slice()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn objective_at_exact_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_hpd(&mut rng, 3);
        let p = EncodingProblem::new(x.clone()).unwrap();
        let other = random_hpd(&mut rng, 3);
        let dict = dict_of(vec![other, x.clone()]);
        let f = objective(&p, &SparseCode::one_hot(2, 1), &dict, 0.7).unwrap();
        assert!((f - 0.7).abs() < 1e-12);

        let half = x.scale(0.5);
        let dict = dict_of(vec![half.clone(), half]);
        let f = objective(&p, &SparseCode::new(vec![1.0, 1.0]).unwrap(), &dict, 0.5).unwrap();
        assert!((f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_compositional_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let (p, dict, alpha) = random_instance(&mut rng, 3, 6);
            let f = objective(&p, &alpha, &dict, 0.3).unwrap();
            // step by step: X^{-1/2}, M, congruence, log, Frobenius
            let h = crate::hpd::spectral_fn(p.target(), SpectralFn::InvSqrt).unwrap();
            let mut m = CMatrix::zeros(3);
            for (a, atom) in alpha.as_slice().iter().zip(dict.atoms()) {
                m = &m + &atom.as_matrix().scale(*a);
            }
            let w = h.as_matrix().matmul(&m).matmul(h.as_matrix());
            let w = crate::hpd::validate_hpd(&w, 1e-9).unwrap();
            let l = crate::hpd::spectral_fn(&w, SpectralFn::Log).unwrap();
            let oracle = 0.5 * l.frobenius_norm().powi(2) + 0.3 * alpha.as_slice().iter().sum::<f64>();
            assert!((f - oracle).abs() < 1e-12 * oracle.max(1.0), "{f} vs {oracle}");
        }
    }

    #[test]
    fn zero_code_is_not_pd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (p, dict, _) = random_instance(&mut rng, 3, 4);
        assert!(matches!(
            objective(&p, &SparseCode::zeros(4), &dict, 0.5),
            Err(CodingError::ReconstructionNotPD { .. })
        ));
    }

    #[test]
    fn gradient_vanishes_at_perfect_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_hpd(&mut rng, 3);
        let p = EncodingProblem::new(x.clone()).unwrap();
        let dict = dict_of(vec![x, random_hpd(&mut rng, 3)]);
        let g = residual_gradient(&p, &SparseCode::one_hot(2, 0), &dict).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
        let fg = full_gradient(&p, &SparseCode::one_hot(2, 0), &dict, 0.5).unwrap();
        assert!((fg[0] - 0.5).abs() < 1e-12 && fg[1].abs() < 1e-12);
    }

    #[test]
    fn duplicated_atoms_share_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_hpd(&mut rng, 3);
        let dict = dict_of(vec![a.clone(), random_hpd(&mut rng, 3), a]);
        let p = EncodingProblem::new(random_hpd(&mut rng, 3)).unwrap();
        let g = residual_gradient(&p, &SparseCode::new(vec![0.3, 0.5, 0.9]).unwrap(), &dict).unwrap();
        assert_eq!(g[0], g[2]);
    }

    #[test]
    fn residual_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let (p, dict, alpha) = random_instance(&mut rng, 3, 12);
            let g = residual_gradient(&p, &alpha, &dict).unwrap();
            let h = 1e-6;
            for i in 0..12 {
                let mut up = alpha.as_slice().to_vec();
                let mut dn = up.clone();
                up[i] += h;
                dn[i] -= h;
                let fu = objective(&p, &SparseCode::new(up).unwrap(), &dict, 0.0).unwrap();
                let fd = objective(&p, &SparseCode::new(dn).unwrap(), &dict, 0.0).unwrap();
                let fdg = (fu - fd) / (2.0 * h);
                let rel = (g[i] - fdg).abs() / g[i].abs().max(1e-3);
                assert!(rel < 1e-5, "atom {i}: {} vs {fdg}", g[i]);
            }
        }
    }

    #[test]
    fn full_gradient_with_zero_lambda_is_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (p, dict, alpha) = random_instance(&mut rng, 2, 4);
        assert_eq!(
            full_gradient(&p, &alpha, &dict, 0.0).unwrap(),
            residual_gradient(&p, &alpha, &dict).unwrap()
        );
    }

    #[test]
    fn soft_threshold_cases() {
        assert!((soft_threshold(&[1.2], 0.5)[0] - 0.7).abs() < 1e-15);
        assert_eq!(soft_threshold(&[0.3], 0.5), vec![0.0]);
        assert_eq!(soft_threshold(&[-1.0, 0.0, 2.5], 0.0), vec![0.0, 0.0, 2.5]);
    }

    #[test]
    fn ista_step_at_zero_gradient_only_shrinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_hpd(&mut rng, 2);
        let p = EncodingProblem::new(x.clone()).unwrap();
        let dict = dict_of(vec![x]);
        let cfg = SrsrConfig {
            lambda: 3.0,
            step: 0.1,
            ..SrsrConfig::default()
        };
        let out = ista_step(&p, &SparseCode::new(vec![1.0]).unwrap(), &dict, &cfg);
        assert_eq!(out.status, StepStatus::Accepted);
        assert!((out.code.as_slice()[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn ista_step_never_increases_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let (p, dict, alpha) = random_instance(&mut rng, 3, 6);
            for step in [1e-4, 0.1, 10.0] {
                let cfg = SrsrConfig {
                    step,
                    ..SrsrConfig::default()
                };
                let f0 = objective(&p, &alpha, &dict, cfg.lambda).unwrap();
                let out = ista_step(&p, &alpha, &dict, &cfg);
                let f1 = objective(&p, &out.code, &dict, cfg.lambda).unwrap();
                assert!(f1 <= f0 + 1e-12);
                assert!(out.code.as_slice().iter().all(|v| *v >= 0.0));
            }
        }
    }

    #[test]
    fn ista_step_from_zero_code_fails_gracefully() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (p, dict, _) = random_instance(&mut rng, 3, 3);
        let out = ista_step(&p, &SparseCode::zeros(3), &dict, &SrsrConfig::default());
        assert_eq!(out.status, StepStatus::Failed);
        assert_eq!(out.code, SparseCode::zeros(3));
    }

    #[test]
    fn fixed_point_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random_hpd(&mut rng, 3);
        let p = EncodingProblem::new(x.clone()).unwrap();
        let dict = dict_of(vec![x, random_hpd(&mut rng, 3)]);
        let cfg = SrsrConfig {
            lambda: 0.0,
            step: 0.5,
            ..SrsrConfig::default()
        };
        let start = SparseCode::one_hot(2, 0);
        let out = ista_step(&p, &start, &dict, &cfg);
        assert_eq!(out.status, StepStatus::Accepted);
        for (a, b) in out.code.as_slice().iter().zip(start.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn unsafeguarded_step_is_plain_ista() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let (p, dict, alpha) = random_instance(&mut rng, 3, 4);
        let cfg = SrsrConfig {
            safeguard: false,
            step: 0.01,
            ..SrsrConfig::default()
        };
        let g = residual_gradient(&p, &alpha, &dict).unwrap();
        let expect: Vec<f64> = alpha
            .as_slice()
            .iter()
            .zip(&g)
            .map(|(a, gi)| (a - cfg.step * gi - cfg.lambda * cfg.step).max(0.0))
            .collect();
        let out = ista_step(&p, &alpha, &dict, &cfg);
        assert_eq!(out.status, StepStatus::Unchecked);
        assert_eq!(out.code.as_slice(), expect.as_slice());
    }

    #[test]
    fn spg_init_is_feasible_and_improves_on_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..20 {
            let (p, dict, _) = random_instance(&mut rng, 3, 8);
            let cfg = SrsrConfig::default();
            let a0 = spg_init(&p, &dict, &cfg);
            assert!(a0.as_slice().iter().all(|v| *v >= 0.0));
            let f0 = objective(&p, &a0, &dict, cfg.lambda).unwrap();
            let fu = objective(&p, &SparseCode::uniform(8), &dict, cfg.lambda).unwrap();
            assert!(f0 <= fu);
        }
    }

    #[test]
    fn spg_init_finds_the_target_atom() {
        // With λ = 0.5 and tightly clustered random atoms the true minimiser
        // can be a mixture; at the smaller λ the exact atom dominates.
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let cfg = SrsrConfig::lambda_small();
        for trial in 0..100 {
            let n = 10;
            let j = trial % n;
            let x = random_hpd(&mut rng, 3);
            let mut atoms: Vec<HpdMatrix> = (0..n).map(|_| random_hpd(&mut rng, 3)).collect();
            atoms[j] = x.clone();
            let dict = dict_of(atoms);
            let a0 = spg_init(&EncodingProblem::new(x).unwrap(), &dict, &cfg);
            let argmax = a0
                .as_slice()
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, j, "trial {trial}: {:?}", a0.as_slice());
        }
    }
}
