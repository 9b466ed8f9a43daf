//! Dictionary update by Riemannian conjugate gradient.
//!
//! With the codes held fixed, the atoms minimise
//!
//! ```text
//! ψ(D) = ½ Σ_j ‖log(G_j·S_j(D)·G_j)‖_F² + λ_B Σ_i Tr(D_i),
//! S_j(D) = Σ_i α_j^i D_i,  G_j = X_j^{-1/2}
//! ```
//!
//! over the product of HPD manifolds, one factor per atom. Gradients are
//! taken in the affine-invariant metric, steps follow the exponential map
//! and old directions are carried to the new point by parallel transport.

use rayon::prelude::*;

use crate::coding::{evaluate_residual, CodingError, Dictionary, EncodingProblem, SparseCode};
use crate::hpd::{CMatrix, HermitianMatrix, HpdError, HpdMatrix};

/// A tangent vector attached to one atom of the dictionary.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    pub atom: usize,
    pub value: HermitianMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DictLearnConfig {
    /// Weight λ_B of the trace regulariser.
    pub trace_weight: f64,
    /// CG iterations per call to [`dict_update`].
    pub max_iterations: usize,
    /// Sufficient-decrease constant c₁.
    pub armijo_c1: f64,
    /// Backtracking factor ρ.
    pub backtrack: f64,
    /// First trial step σ₀.
    pub initial_step: f64,
    pub max_backtracks: usize,
    /// Steepest-descent restart period; `None` uses `N·d²`.
    pub restart_period: Option<usize>,
    /// Stop once the Riemannian gradient norm drops below this.
    pub gradient_tol: f64,
    /// Skip the update entirely.
    pub freeze: bool,
    /// Relative PD floor for reconstructions.
    pub pd_floor: f64,
}

impl Default for DictLearnConfig {
    fn default() -> Self {
        Self {
            trace_weight: 1e-2,
            max_iterations: 5,
            armijo_c1: 1e-4,
            backtrack: 0.5,
            initial_step: 1.0,
            max_backtracks: 30,
            restart_period: None,
            gradient_tol: 1e-10,
            freeze: false,
            pd_floor: crate::coding::DEFAULT_PD_FLOOR,
        }
    }
}

impl DictLearnConfig {
    pub fn validate(&self) -> Result<(), CodingError> {
        let bad = |what: &str| Err(CodingError::InvalidConfig(what.to_string()));
        if !(self.trace_weight >= 0.0) {
            return bad("trace weight must be non-negative");
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return bad("armijo constant must lie in (0, 1)");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("backtrack factor must lie in (0, 1)");
        }
        if !(self.initial_step > 0.0) {
            return bad("initial step must be positive");
        }
        if self.restart_period == Some(0) {
            return bad("restart period must be positive");
        }
        Ok(())
    }
}

/// Training pairs `(X_j, α_j)` borrowed for one update.
#[derive(Clone, Copy, Debug)]
pub struct DictBatch<'a> {
    problems: &'a [EncodingProblem],
    codes: &'a [SparseCode],
}

impl<'a> DictBatch<'a> {
    pub fn new(problems: &'a [EncodingProblem], codes: &'a [SparseCode]) -> Result<Self, CodingError> {
        if problems.len() != codes.len() {
            return Err(CodingError::LengthMismatch {
                code: codes.len(),
                atoms: problems.len(),
            });
        }
        Ok(Self { problems, codes })
    }

    pub fn len(&self) -> usize {
        self.problems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }

    pub fn problems(&self) -> &'a [EncodingProblem] {
        self.problems
    }

    pub fn codes(&self) -> &'a [SparseCode] {
        self.codes
    }
}

fn reconstruct(code: &SparseCode, atoms: &[HpdMatrix]) -> HermitianMatrix {
    let mut m = CMatrix::zeros(atoms[0].dim());
    for (&a, atom) in code.as_slice().iter().zip(atoms) {
        if a != 0.0 {
            m.add_scaled(a, atom.as_matrix());
        }
    }
    HermitianMatrix::from_matrix(&m)
}

fn check_codes(batch: &DictBatch, atoms: &[HpdMatrix]) -> Result<(), CodingError> {
    if atoms.is_empty() {
        return Err(CodingError::InvalidDictionary("no atoms".into()));
    }
    if let Some(c) = batch.codes.iter().find(|c| c.len() != atoms.len()) {
        return Err(CodingError::LengthMismatch {
            code: c.len(),
            atoms: atoms.len(),
        });
    }
    Ok(())
}

/// Per-problem residual terms, optionally with their gradient kernels
/// `G_j·log(W_j)·W_j^{-1}·G_j`. Computed in parallel, returned in batch order.
fn residuals(
    batch: &DictBatch,
    atoms: &[HpdMatrix],
    pd_floor: f64,
    want_kernel: bool,
) -> Result<Vec<crate::coding::Residual>, CodingError> {
    check_codes(batch, atoms)?;
    batch
        .problems
        .par_iter()
        .zip(batch.codes.par_iter())
        .map(|(p, c)| evaluate_residual(p, &reconstruct(c, atoms), pd_floor, want_kernel))
        .collect()
}

fn trace_term(atoms: &[HpdMatrix], trace_weight: f64) -> f64 {
    trace_weight * atoms.iter().map(HpdMatrix::trace).sum::<f64>()
}

/// ψ(D) summed over the batch.
pub fn dict_objective(batch: &DictBatch, atoms: &[HpdMatrix], trace_weight: f64) -> Result<f64, CodingError> {
    objective_with_floor(batch, atoms, trace_weight, crate::coding::DEFAULT_PD_FLOOR)
}

fn objective_with_floor(
    batch: &DictBatch,
    atoms: &[HpdMatrix],
    trace_weight: f64,
    pd_floor: f64,
) -> Result<f64, CodingError> {
    let terms = residuals(batch, atoms, pd_floor, false)?;
    Ok(terms.iter().map(|r| r.value).sum::<f64>() + trace_term(atoms, trace_weight))
}

fn euclidean_grads_from(
    batch: &DictBatch,
    terms: &[crate::coding::Residual],
    n: usize,
    d: usize,
    trace_weight: f64,
) -> Vec<HermitianMatrix> {
    let mut grads = vec![CMatrix::identity(d).scale(trace_weight); n];
    for (code, r) in batch.codes.iter().zip(terms) {
        let kernel = r.kernel.as_ref().expect("kernel requested");
        for (g, &a) in grads.iter_mut().zip(code.as_slice()) {
            if a != 0.0 {
                g.add_scaled(a, kernel);
            }
        }
    }
    grads.iter().map(HermitianMatrix::from_matrix).collect()
}

/// Euclidean gradients of ψ for every atom.
pub fn dict_euclidean_grads(
    batch: &DictBatch,
    atoms: &[HpdMatrix],
    trace_weight: f64,
) -> Result<Vec<HermitianMatrix>, CodingError> {
    let terms = residuals(batch, atoms, crate::coding::DEFAULT_PD_FLOOR, true)?;
    Ok(euclidean_grads_from(batch, &terms, atoms.len(), atoms[0].dim(), trace_weight))
}

/// Euclidean gradient of ψ with respect to atom `i`:
/// `Σ_j α_j^i·G_j·log(W_j)·W_j^{-1}·G_j + λ_B·I`.
pub fn dict_euclidean_grad(
    batch: &DictBatch,
    atoms: &[HpdMatrix],
    trace_weight: f64,
    i: usize,
) -> Result<HermitianMatrix, CodingError> {
    let terms = residuals(batch, atoms, crate::coding::DEFAULT_PD_FLOOR, true)?;
    let mut g = CMatrix::identity(atoms[0].dim()).scale(trace_weight);
    for (code, r) in batch.codes.iter().zip(&terms) {
        let a = code.as_slice()[i];
        if a != 0.0 {
            g.add_scaled(a, r.kernel.as_ref().unwrap());
        }
    }
    Ok(HermitianMatrix::from_matrix(&g))
}

/// Riemannian gradient `D_i·∇ψ·D_i` in the affine-invariant metric.
pub fn dict_riemannian_grad(atom: &HpdMatrix, euclid: &HermitianMatrix) -> HermitianMatrix {
    HermitianMatrix::from_matrix(&euclid.as_matrix().sandwich(atom.as_matrix()))
}

/// Exponential map `p^{1/2}·exp(p^{-1/2}·v·p^{-1/2})·p^{1/2}`.
pub fn retraction(p: &HpdMatrix, v: &HermitianMatrix) -> Result<HpdMatrix, HpdError> {
    let s = p.sqrt()?;
    let si = p.inv_sqrt()?;
    retract_with(&s, &si, v)
}

fn retract_with(sqrt: &HpdMatrix, inv_sqrt: &HpdMatrix, v: &HermitianMatrix) -> Result<HpdMatrix, HpdError> {
    let inner = HermitianMatrix::from_matrix(&v.as_matrix().sandwich(inv_sqrt.as_matrix()));
    Ok(inner.exp()?.whiten(sqrt))
}

/// Parallel transport of `v` from `p` to `q` along the connecting
/// geodesic: `E·v·E^H`, `E = p^{1/2}·(p^{-1/2}·q·p^{-1/2})^{1/2}·p^{-1/2}`.
pub fn vector_transport(p: &HpdMatrix, q: &HpdMatrix, v: &HermitianMatrix) -> Result<HermitianMatrix, HpdError> {
    let e = transport_map(p, q)?;
    Ok(HermitianMatrix::from_matrix(&e.congruence(v.as_matrix())))
}

fn transport_map(p: &HpdMatrix, q: &HpdMatrix) -> Result<CMatrix, HpdError> {
    let s = p.sqrt()?;
    let si = p.inv_sqrt()?;
    let mid = q.whiten(&si).sqrt()?;
    Ok(s.as_matrix().matmul(mid.as_matrix()).matmul(si.as_matrix()))
}

/// Sum of `⟨u_i, v_i⟩_{D_i}` over the product manifold.
pub fn product_inner(
    atoms: &[HpdMatrix],
    u: &[HermitianMatrix],
    v: &[HermitianMatrix],
) -> Result<f64, HpdError> {
    let mut total = 0.0;
    for ((p, a), b) in atoms.iter().zip(u).zip(v) {
        total += crate::hpd::airm_inner(p, a, b)?;
    }
    Ok(total)
}

/// Conjugate-gradient iterate on the product manifold.
#[derive(Clone, Debug)]
pub struct CgState {
    pub atoms: Vec<HpdMatrix>,
    /// Riemannian gradients at `atoms`.
    pub grads: Vec<TangentVector>,
    pub directions: Vec<TangentVector>,
    pub beta: f64,
    /// Last accepted step length σ.
    pub step: f64,
    pub iteration: usize,
    /// ψ at `atoms`.
    pub objective: f64,
}

impl CgState {
    fn tangent(values: Vec<HermitianMatrix>) -> Vec<TangentVector> {
        values
            .into_iter()
            .enumerate()
            .map(|(atom, value)| TangentVector { atom, value })
            .collect()
    }

    /// State at the first iterate: steepest descent.
    pub fn start(atoms: Vec<HpdMatrix>, grads: Vec<HermitianMatrix>, objective: f64) -> Self {
        let directions = grads.iter().map(|g| g.scale(-1.0)).collect();
        Self {
            atoms,
            grads: Self::tangent(grads),
            directions: Self::tangent(directions),
            beta: 0.0,
            step: 0.0,
            iteration: 0,
            objective,
        }
    }

    fn values(v: &[TangentVector]) -> Vec<HermitianMatrix> {
        v.iter().map(|t| t.value.clone()).collect()
    }

    pub fn grad_values(&self) -> Vec<HermitianMatrix> {
        Self::values(&self.grads)
    }

    pub fn direction_values(&self) -> Vec<HermitianMatrix> {
        Self::values(&self.directions)
    }
}

/// Moves the state to `new_atoms` with gradients `new_grads` and forms the
/// next direction `d = −g + β·Γ(d_prev)` with
/// `β = ⟨g, g − Γ(g_prev)⟩ / ⟨g_prev, g_prev⟩`. Falls back to `d = −g` when
/// the result is not a descent direction or on the restart period.
pub fn cg_direction(
    state: &CgState,
    new_atoms: Vec<HpdMatrix>,
    new_grads: Vec<HermitianMatrix>,
    objective: f64,
    restart_period: usize,
) -> Result<CgState, HpdError> {
    let k = state.iteration + 1;
    let steepest: Vec<HermitianMatrix> = new_grads.iter().map(|g| g.scale(-1.0)).collect();
    let mut beta = 0.0;
    let mut directions = steepest.clone();

    if k % restart_period != 0 {
        let prev_g = state.grad_values();
        let denom = product_inner(&state.atoms, &prev_g, &prev_g)?;
        if denom > 0.0 {
            let mut moved_g = Vec::with_capacity(new_atoms.len());
            let mut moved_d = Vec::with_capacity(new_atoms.len());
            for i in 0..new_atoms.len() {
                let e = transport_map(&state.atoms[i], &new_atoms[i])?;
                moved_g.push(HermitianMatrix::from_matrix(&e.congruence(prev_g[i].as_matrix())));
                moved_d.push(HermitianMatrix::from_matrix(
                    &e.congruence(state.directions[i].value.as_matrix()),
                ));
            }
            let diff: Vec<HermitianMatrix> = new_grads
                .iter()
                .zip(&moved_g)
                .map(|(g, mg)| g.combine(1.0, mg, -1.0))
                .collect();
            beta = product_inner(&new_atoms, &new_grads, &diff)? / denom;
            let candidate: Vec<HermitianMatrix> = steepest
                .iter()
                .zip(&moved_d)
                .map(|(s, md)| s.combine(1.0, md, beta))
                .collect();
            if product_inner(&new_atoms, &candidate, &new_grads)? < 0.0 {
                directions = candidate;
            } else {
                beta = 0.0;
            }
        }
    }

    Ok(CgState {
        atoms: new_atoms,
        grads: CgState::tangent(new_grads),
        directions: CgState::tangent(directions),
        beta,
        step: state.step,
        iteration: k,
        objective,
    })
}

#[derive(Clone, Debug)]
pub struct LineSearch {
    /// Accepted σ, or 0 when no trial satisfied the Armijo condition.
    pub step: f64,
    pub objective: f64,
    /// Retracted atoms at the accepted step (input atoms if exhausted).
    pub atoms: Vec<HpdMatrix>,
    pub backtracks: usize,
    pub exhausted: bool,
}

/// Backtracking Armijo search along `directions` from `atoms`:
/// largest `σ = σ₀·ρ^m` with `ψ(R_D(σd)) ≤ ψ(D) + c₁·σ·⟨grad, d⟩`.
pub fn line_search(
    batch: &DictBatch,
    atoms: &[HpdMatrix],
    directions: &[HermitianMatrix],
    objective: f64,
    slope: f64,
    cfg: &DictLearnConfig,
) -> Result<LineSearch, CodingError> {
    let exhausted = |backtracks| LineSearch {
        step: 0.0,
        objective,
        atoms: atoms.to_vec(),
        backtracks,
        exhausted: true,
    };
    if !(slope < 0.0) {
        return Ok(exhausted(0));
    }
    let roots: Vec<(HpdMatrix, HpdMatrix)> = atoms
        .iter()
        .map(|a| Ok((a.sqrt()?, a.inv_sqrt()?)))
        .collect::<Result<_, HpdError>>()?;
    let mut sigma = cfg.initial_step;
    for m in 0..=cfg.max_backtracks {
        let trial: Result<Vec<HpdMatrix>, HpdError> = roots
            .iter()
            .zip(directions)
            .map(|((s, si), d)| retract_with(s, si, &d.scale(sigma)))
            .collect();
        if let Ok(trial) = trial {
            if let Ok(f) = objective_with_floor(batch, &trial, cfg.trace_weight, cfg.pd_floor) {
                if f <= objective + cfg.armijo_c1 * sigma * slope {
                    return Ok(LineSearch {
                        step: sigma,
                        objective: f,
                        atoms: trial,
                        backtracks: m,
                        exhausted: false,
                    });
                }
            }
        }
        sigma *= cfg.backtrack;
    }
    Ok(exhausted(cfg.max_backtracks))
}

/// Outcome of [`dict_update`].
#[derive(Clone, Debug)]
pub struct DictUpdate {
    pub dictionary: Dictionary,
    pub objective_before: f64,
    pub objective_after: f64,
    pub iterations: usize,
    /// Line searches that found no admissible step.
    pub failed_searches: usize,
}

/// Runs up to `max_iterations` CG steps on the atoms with the batch codes
/// fixed. The objective never increases; class labels are kept.
pub fn dict_update(batch: &DictBatch, dict: &Dictionary, cfg: &DictLearnConfig) -> Result<DictUpdate, CodingError> {
    if cfg.freeze {
        let f = if batch.is_empty() {
            trace_term(dict.atoms(), cfg.trace_weight)
        } else {
            objective_with_floor(batch, dict.atoms(), cfg.trace_weight, cfg.pd_floor)?
        };
        return Ok(DictUpdate {
            dictionary: dict.clone(),
            objective_before: f,
            objective_after: f,
            iterations: 0,
            failed_searches: 0,
        });
    }
    cfg.validate()?;
    let n = dict.len();
    let d = dict.dim();
    let restart = cfg.restart_period.unwrap_or(n * d * d).max(1);

    let evaluate = |atoms: &[HpdMatrix]| -> Result<(f64, Vec<HermitianMatrix>), CodingError> {
        let terms = residuals(batch, atoms, cfg.pd_floor, true)?;
        let f = terms.iter().map(|r| r.value).sum::<f64>() + trace_term(atoms, cfg.trace_weight);
        let eg = euclidean_grads_from(batch, &terms, n, d, cfg.trace_weight);
        let rg = atoms.iter().zip(&eg).map(|(a, g)| dict_riemannian_grad(a, g)).collect();
        Ok((f, rg))
    };

    let (f0, g0) = evaluate(dict.atoms())?;
    let mut state = CgState::start(dict.atoms().to_vec(), g0, f0);
    let mut failed_searches = 0;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        let g = state.grad_values();
        let norm = product_inner(&state.atoms, &g, &g)?.sqrt();
        if norm < cfg.gradient_tol {
            break;
        }
        let dirs = state.direction_values();
        let slope = product_inner(&state.atoms, &g, &dirs)?;
        let ls = line_search(batch, &state.atoms, &dirs, state.objective, slope, cfg)?;
        iterations += 1;
        if ls.exhausted {
            failed_searches += 1;
            break;
        }
        let (f, grads) = evaluate(&ls.atoms)?;
        let mut next = cg_direction(&state, ls.atoms, grads, f, restart)?;
        next.step = ls.step;
        state = next;
    }

    Ok(DictUpdate {
        dictionary: dict.with_atoms(state.atoms)?,
        objective_before: f0,
        objective_after: state.objective,
        iterations,
        failed_searches,
    })
}
