//! End-to-end solves of the optimal control problem: fine reference, coarse
//! standard FEM, and ideal or localized multiscale methods.
//!
//! The multiscale machinery works with the `γ = 1` form. For other `γ` the
//! problem is rescaled by `τ = √γ` (coefficient and data times `τ`, state
//! divided by `τ` afterwards), which leaves the adjoint unchanged.

use std::fmt;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use nalgebra::DMatrix;

use crate::assembly::{assemble_load, AssembledOperators};
use crate::coeff::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::GridPair;
use crate::interp::InterpOperators;
use crate::linalg::{
    dense_solve_symmetric, norm2, pminres, BandedCholesky, BlockDiagonal, DenseLu, Diagonal,
    FnOperator, LinearOperator, MinresStop,
};
use crate::multiscale::{
    assemble_reduced, build_multiscale_basis, compute_correctors, reduced_rhs, Corrector,
    CorrectorKind, MultiscaleBasis,
};
use crate::pair::PairVector;
use crate::saddle::{
    spectral_diagnostics, ASPreconditioner, KernelOperators, KernelSolver, SaddleOperator,
    SpectralDiagnostics, POINCARE_UNIT_SQUARE,
};

#[derive(Debug, Clone, PartialEq)]
pub enum Example {
    Oscillatory { epsilon: f64 },
    Heterogeneous {
        seed: u64,
        blocks_per_side: usize,
        lo: f64,
        hi: f64,
    },
    Constant { value: f64 },
}

impl Example {
    /// The heterogeneous example on its 40×40 partition with values in
    /// `[1, 1350]`.
    pub fn heterogeneous(seed: u64) -> Self {
        Example::Heterogeneous {
            seed,
            blocks_per_side: 40,
            lo: 1.0,
            hi: 1350.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Example::Oscillatory { .. } => "oscillatory",
            Example::Heterogeneous { .. } => "heterogeneous",
            Example::Constant { .. } => "constant",
        }
    }

    pub fn field(&self) -> Result<CoefficientField> {
        match *self {
            Example::Oscillatory { epsilon } => CoefficientField::oscillatory(epsilon),
            Example::Heterogeneous {
                seed,
                blocks_per_side,
                lo,
                hi,
            } => CoefficientField::block_random(seed, blocks_per_side, lo, hi),
            Example::Constant { value } => CoefficientField::constant(value),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Ideal,
    Localized(usize),
    /// `k = j ⌈ln(1/H)⌉`.
    LocalizedAuto(usize),
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Ideal => "ideal",
            Mode::Localized(_) => "localized",
            Mode::LocalizedAuto(_) => "localized_auto",
        }
    }
}

/// The desired state `y_d`: a constant or a function of position.
#[derive(Clone)]
pub enum DesiredState {
    Constant(f64),
    Function(Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>),
}

impl fmt::Debug for DesiredState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DesiredState::Constant(c) => write!(f, "Constant({c})"),
            DesiredState::Function(_) => write!(f, "Function(..)"),
        }
    }
}

impl DesiredState {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        match self {
            DesiredState::Constant(c) => *c,
            DesiredState::Function(f) => f(x),
        }
    }

    pub fn scaled(&self, tau: f64) -> Self {
        match self {
            DesiredState::Constant(c) => DesiredState::Constant(c * tau),
            DesiredState::Function(f) => {
                let f = f.clone();
                DesiredState::Function(Arc::new(move |x| tau * f(x)))
            }
        }
    }

    /// `‖y_d‖_{L2}` (exact for constants, fine-grid Gauss quadrature otherwise).
    pub fn l2_norm(&self, grid: &GridPair) -> f64 {
        match self {
            DesiredState::Constant(c) => c.abs(),
            DesiredState::Function(f) => {
                let h = grid.fine_h();
                let g = crate::assembly::gauss_points();
                let mut s = 0.0;
                for e in 0..grid.fine_elements().len() {
                    let o = grid.fine_element_origin(e);
                    for &a in &g {
                        for &b in &g {
                            s += 0.25 * h * h * f([o[0] + a * h, o[1] + b * h]).powi(2);
                        }
                    }
                }
                s.sqrt()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinePreconditioner {
    /// Exact stiffness solves by banded Cholesky in both blocks.
    BandedCholesky,
    /// Diagonal of the stiffness in both blocks.
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdealPreconditioner {
    /// Exact `A_K⁻¹` in both blocks.
    ExactKernel,
    /// The additive Schwarz preconditioner.
    Schwarz,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub fine_rel_tol: f64,
    pub fine_max_steps: usize,
    pub fine_preconditioner: FinePreconditioner,
    pub ideal_preconditioner: IdealPreconditioner,
    pub lanczos_iters: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            fine_rel_tol: 1e-10,
            fine_max_steps: 20_000,
            fine_preconditioner: FinePreconditioner::BandedCholesky,
            ideal_preconditioner: IdealPreconditioner::ExactKernel,
            lanczos_iters: 120,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProblemConfig {
    pub example: Example,
    pub coarse_cells: usize,
    pub refine: usize,
    pub gamma: f64,
    pub y_d: DesiredState,
    pub mode: Mode,
    /// Multiplies the example's coefficient field.
    pub field_scale: f64,
    pub tolerances: Tolerances,
}

impl ProblemConfig {
    pub fn new(example: Example, coarse_cells: usize, refine: usize) -> Self {
        Self {
            example,
            coarse_cells,
            refine,
            gamma: 1.0,
            y_d: DesiredState::Constant(1.0),
            mode: Mode::Ideal,
            field_scale: 1.0,
            tolerances: Tolerances::default(),
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_desired(mut self, y_d: DesiredState) -> Self {
        self.y_d = y_d;
        self
    }

    pub fn coarse_h(&self) -> f64 {
        1.0 / self.coarse_cells as f64
    }

    pub fn field(&self) -> Result<CoefficientField> {
        Ok(self.example.field()?.scaled(self.field_scale))
    }

    /// Number of MINRES steps for localized modes.
    pub fn k(&self) -> Option<usize> {
        match self.mode {
            Mode::Ideal => None,
            Mode::Localized(k) => Some(k),
            Mode::LocalizedAuto(j) => Some(choose_k(self.coarse_h(), j)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.field_scale > 0.0) || !self.field_scale.is_finite() {
            return Err(Error::Config(format!(
                "field scale must be positive, got {}",
                self.field_scale
            )));
        }
        if let Mode::LocalizedAuto(0) = self.mode {
            return Err(Error::Config("j must be at least 1".into()));
        }
        GridPair::build_nested(self.coarse_cells, self.refine)?;
        Ok(())
    }
}

/// `ã = τ a`, `ỹ_d = τ y_d`, `γ̃ = γ / τ²`. The solution maps back by
/// `y = ỹ / τ` with `p` unchanged.
pub fn rescale_problem(config: &ProblemConfig, tau: f64) -> Result<ProblemConfig> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Config(format!("scaling factor must be positive, got {tau}")));
    }
    let mut out = config.clone();
    out.field_scale *= tau;
    out.y_d = config.y_d.scaled(tau);
    out.gamma = config.gamma / (tau * tau);
    Ok(out)
}

/// Maps a solution of the `τ`-rescaled problem back to the original one.
pub fn unscale_solution(solution: &PairVector, tau: f64) -> PairVector {
    let mut out = solution.clone();
    out.y_mut().iter_mut().for_each(|v| *v /= tau);
    out
}

/// `k = j ⌈ln(1/H)⌉`.
pub fn choose_k(coarse_h: f64, j: usize) -> usize {
    j * (1.0 / coarse_h).ln().ceil() as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assumption3 {
    pub satisfied: bool,
    /// Left-hand side of the sufficient condition; `≤ 0` means satisfied.
    pub margin: f64,
}

/// Evaluates `⌊k/2⌋ ln q + (3/2) ln κ + ln(β/α) - (1 + d - τ_d) ln H ≤ 0`.
/// With `q = 0` the first term is `-∞` once `k ≥ 2`.
pub fn verify_assumption3(
    diag: &SpectralDiagnostics,
    beta_over_alpha: f64,
    coarse_h: f64,
    k: usize,
    d: usize,
    tau_d: f64,
) -> Assumption3 {
    let half = (k / 2) as f64;
    let q_term = if half == 0.0 {
        0.0
    } else if diag.q <= 0.0 {
        f64::NEG_INFINITY
    } else {
        half * diag.q.ln()
    };
    let margin = q_term + 1.5 * diag.kappa.ln() + beta_over_alpha.ln()
        - (1.0 + d as f64 - tau_d) * coarse_h.ln();
    Assumption3 {
        satisfied: margin <= 0.0,
        margin,
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    /// `(p, y)` in fine coordinates.
    pub solution: PairVector,
    /// `u = p / γ`.
    pub control: Vec<f64>,
    pub energy_norm: f64,
    pub l2_norm: f64,
    /// `‖[L; 0] - B (p, y)‖ / ‖L‖` for the fine system.
    pub kkt_residual: f64,
    pub steps: usize,
    pub kappa: Option<f64>,
    pub q: Option<f64>,
    pub k: Option<usize>,
    pub timings: Vec<(String, f64)>,
}

impl SolveResult {
    pub fn wall_time(&self) -> f64 {
        self.timings.iter().map(|(_, t)| t).sum()
    }
}

/// Relative `(energy, L2)` errors of `approx` against `reference`.
pub fn compute_errors(
    reference: &PairVector,
    approx: &PairVector,
    ops: &AssembledOperators,
) -> Result<(f64, f64)> {
    let (re, rl) = ops.pair_norms(reference.as_slice())?;
    if re == 0.0 || rl == 0.0 {
        return Err(Error::ZeroReference);
    }
    let diff: Vec<f64> = reference
        .as_slice()
        .iter()
        .zip(approx.as_slice())
        .map(|(a, b)| a - b)
        .collect();
    let (de, dl) = ops.pair_norms(&diff)?;
    Ok((de / re, dl / rl))
}

fn fine_block_rhs(load: &[f64]) -> Vec<f64> {
    let mut rhs = load.to_vec();
    rhs.resize(2 * load.len(), 0.0);
    rhs
}

fn kkt_residual(ops: &AssembledOperators, gamma: f64, load: &[f64], x: &[f64]) -> f64 {
    let b = SaddleOperator {
        a: &ops.stiffness,
        m: &ops.mass,
        gamma,
    };
    let r = b.apply_vec(x);
    let mut s = 0.0;
    for (i, v) in r.iter().enumerate() {
        let target = if i < load.len() { load[i] } else { 0.0 };
        s += (v - target).powi(2);
    }
    let l = norm2(load);
    if l == 0.0 {
        s.sqrt()
    } else {
        s.sqrt() / l
    }
}

/// Fine KKT solve by preconditioned MINRES with `diag(A⁻¹, A⁻¹/γ)` (or the
/// Jacobi analogue).
pub fn solve_fine_reference(
    ops: &AssembledOperators,
    load: &[f64],
    gamma: f64,
    tol: f64,
    max_steps: usize,
    precond: FinePreconditioner,
) -> Result<SolveResult> {
    let start = Instant::now();
    let n = ops.dim();
    if load.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: load.len(),
        });
    }
    let op = SaddleOperator {
        a: &ops.stiffness,
        m: &ops.mass,
        gamma,
    };
    let rhs = fine_block_rhs(load);
    let stop = MinresStop::Tolerance {
        rel_tol: tol,
        max_steps,
    };
    let (x, report) = match precond {
        FinePreconditioner::BandedCholesky => {
            let chol = BandedCholesky::factor(&ops.stiffness)?;
            let s = FnOperator::symmetric(2 * n, |x: &[f64], y: &mut [f64]| {
                let (x1, x2) = x.split_at(n);
                let (y1, y2) = y.split_at_mut(n);
                chol.apply(x1, y1);
                chol.apply(x2, y2);
                y2.iter_mut().for_each(|v| *v /= gamma);
            });
            pminres(&op, &s, &rhs, stop)?
        }
        FinePreconditioner::Jacobi => {
            let d = Diagonal::jacobi(&ops.stiffness);
            let s = FnOperator::symmetric(2 * n, |x: &[f64], y: &mut [f64]| {
                BlockDiagonal(&d).apply(x, y);
                y[n..].iter_mut().for_each(|v| *v /= gamma);
            });
            pminres(&op, &s, &rhs, stop)?
        }
    };
    let solution = PairVector::from_stacked(x);
    Ok(finish(
        ops,
        load,
        gamma,
        solution,
        report.steps,
        vec![("fine_solve".into(), start.elapsed().as_secs_f64())],
    ))
}

/// Dense direct solve of the fine KKT system; small meshes only.
pub fn solve_fine_dense(ops: &AssembledOperators, load: &[f64], gamma: f64) -> Result<SolveResult> {
    let start = Instant::now();
    let n = ops.dim();
    let a = ops.stiffness.to_dense();
    let m = ops.mass.to_dense();
    let mut k = DMatrix::zeros(2 * n, 2 * n);
    k.view_mut((0, 0), (n, n)).copy_from(&a);
    k.view_mut((0, n), (n, n)).copy_from(&m);
    k.view_mut((n, 0), (n, n)).copy_from(&m);
    k.view_mut((n, n), (n, n)).copy_from(&(a * -gamma));
    let x = dense_solve_symmetric(&k, &fine_block_rhs(load))?;
    Ok(finish(
        ops,
        load,
        gamma,
        PairVector::from_stacked(x),
        0,
        vec![("fine_dense".into(), start.elapsed().as_secs_f64())],
    ))
}

fn finish(
    ops: &AssembledOperators,
    load: &[f64],
    gamma: f64,
    solution: PairVector,
    steps: usize,
    timings: Vec<(String, f64)>,
) -> SolveResult {
    let (energy_norm, l2_norm) = ops.pair_norms(solution.as_slice()).expect("matching sizes");
    let kkt = kkt_residual(ops, gamma, load, solution.as_slice());
    SolveResult {
        control: solution.p().iter().map(|v| v / gamma).collect(),
        solution,
        energy_norm,
        l2_norm,
        kkt_residual: kkt,
        steps,
        kappa: None,
        q: None,
        k: None,
        timings,
    }
}

/// Galerkin solve on `V_H × V_H` using `PᵀAP`, `PᵀMP` and `PᵀL`, expanded
/// back to fine coordinates.
pub fn solve_coarse_standard(
    ops: &AssembledOperators,
    interp: &InterpOperators,
    load: &[f64],
    gamma: f64,
) -> Result<SolveResult> {
    let start = Instant::now();
    let ac = interp.p_t.matmul(&ops.stiffness.matmul(&interp.p)).to_dense();
    let mc = interp.p_t.matmul(&ops.mass.matmul(&interp.p)).to_dense();
    let m = interp.n_coarse();
    let mut k = DMatrix::zeros(2 * m, 2 * m);
    k.view_mut((0, 0), (m, m)).copy_from(&ac);
    k.view_mut((0, m), (m, m)).copy_from(&mc);
    k.view_mut((m, 0), (m, m)).copy_from(&mc);
    k.view_mut((m, m), (m, m)).copy_from(&(ac * -gamma));
    let mut rhs = interp.p_t.mul_vec(load);
    rhs.resize(2 * m, 0.0);
    let x = dense_solve_symmetric(&k, &rhs)?;
    let p = interp.p.mul_vec(&x[..m]);
    let y = interp.p.mul_vec(&x[m..]);
    Ok(finish(
        ops,
        load,
        gamma,
        PairVector::new(&p, &y),
        0,
        vec![("coarse_solve".into(), start.elapsed().as_secs_f64())],
    ))
}

/// A factorized reduced system that can be re-solved for new loads.
pub struct ReducedSystem {
    pub basis: MultiscaleBasis,
    pub matrix: DMatrix<f64>,
    lu: DenseLu,
}

impl ReducedSystem {
    pub fn new(basis: MultiscaleBasis, ops: &AssembledOperators) -> Result<Self> {
        let zero = vec![0.0; ops.dim()];
        let (g, _) = assemble_reduced(&basis, ops, &zero)?;
        let lu = DenseLu::factor(g.clone())?;
        Ok(Self {
            basis,
            matrix: g,
            lu,
        })
    }

    /// Fine pair of the multiscale solution for a fine load vector.
    pub fn solve(&self, load: &[f64]) -> Result<Vec<f64>> {
        let rhs = reduced_rhs(&self.basis, load);
        let c = self.lu.solve(&rhs)?;
        Ok(self.basis.combine(&c))
    }
}

/// All operators for one configuration, built once and shared by the
/// different solves.
pub struct Pipeline {
    pub config: ProblemConfig,
    pub grid: GridPair,
    pub field: CoefficientField,
    pub ops: Arc<AssembledOperators>,
    pub interp: Arc<InterpOperators>,
    pub load: Vec<f64>,
    /// `√γ`; the multiscale operators use the field scaled by it.
    pub tau: f64,
    pub kernel: KernelOperators,
    schwarz: OnceLock<ASPreconditioner>,
    exact: OnceLock<KernelSolver>,
    diagnostics: OnceLock<SpectralDiagnostics>,
    timings: std::sync::Mutex<Vec<(String, f64)>>,
}

impl Pipeline {
    pub fn new(config: ProblemConfig) -> Result<Self> {
        config.validate()?;
        let t0 = Instant::now();
        let grid = GridPair::build_nested(config.coarse_cells, config.refine)?;
        let field = config.field()?;
        let ops = Arc::new(AssembledOperators::assemble(&grid, &field));
        let interp = Arc::new(InterpOperators::build(&grid));
        let y_d = config.y_d.clone();
        let load = assemble_load(&grid, &move |x| y_d.eval(x));
        let tau = config.gamma.sqrt();
        let ms_ops = if tau == 1.0 {
            ops.clone()
        } else {
            Arc::new(AssembledOperators {
                stiffness: ops.stiffness.scaled(tau),
                mass: ops.mass.clone(),
            })
        };
        let kernel = KernelOperators::new(ms_ops, interp.clone());
        let setup = t0.elapsed().as_secs_f64();
        Ok(Self {
            config,
            grid,
            field,
            ops,
            interp,
            load,
            tau,
            kernel,
            schwarz: OnceLock::new(),
            exact: OnceLock::new(),
            diagnostics: OnceLock::new(),
            timings: std::sync::Mutex::new(vec![("setup".into(), setup)]),
        })
    }

    fn record(&self, stage: &str, start: Instant) {
        self.timings
            .lock()
            .unwrap()
            .push((stage.to_string(), start.elapsed().as_secs_f64()));
    }

    /// Stage timings recorded so far.
    pub fn timings(&self) -> Vec<(String, f64)> {
        self.timings.lock().unwrap().clone()
    }

    pub fn schwarz(&self) -> Result<&ASPreconditioner> {
        if let Some(s) = self.schwarz.get() {
            return Ok(s);
        }
        let t = Instant::now();
        let s = ASPreconditioner::build(&self.grid, &self.kernel)?;
        self.record("schwarz_setup", t);
        Ok(self.schwarz.get_or_init(|| s))
    }

    pub fn exact_kernel_solver(&self) -> Result<&KernelSolver> {
        if let Some(s) = self.exact.get() {
            return Ok(s);
        }
        let t = Instant::now();
        let s = KernelSolver::build(&self.kernel)?;
        self.record("kernel_solver_setup", t);
        Ok(self.exact.get_or_init(|| s))
    }

    /// The coefficient behind the multiscale operators, `√γ a`.
    pub fn kernel_field(&self) -> CoefficientField {
        self.field.scaled(self.tau)
    }

    /// `(α, β)` of the field used by the multiscale operators.
    pub fn ms_bounds(&self) -> (f64, f64) {
        let (a, b) = self.field.bounds();
        (a * self.tau, b * self.tau)
    }

    pub fn diagnostics(&self) -> Result<SpectralDiagnostics> {
        if let Some(d) = self.diagnostics.get() {
            return Ok(*d);
        }
        let s = self.schwarz()?;
        let t = Instant::now();
        let d = spectral_diagnostics(
            &self.kernel,
            s,
            POINCARE_UNIT_SQUARE,
            self.ms_bounds().0,
            self.config.tolerances.lanczos_iters,
        )?;
        self.record("lanczos", t);
        Ok(*self.diagnostics.get_or_init(|| d))
    }

    pub fn solve_fine(&self) -> Result<SolveResult> {
        let tol = &self.config.tolerances;
        let res = solve_fine_reference(
            &self.ops,
            &self.load,
            self.config.gamma,
            tol.fine_rel_tol,
            tol.fine_max_steps,
            tol.fine_preconditioner,
        )?;
        Ok(res)
    }

    pub fn solve_coarse(&self) -> Result<SolveResult> {
        solve_coarse_standard(&self.ops, &self.interp, &self.load, self.config.gamma)
    }

    pub fn correctors(&self, kind: CorrectorKind) -> Result<Vec<Corrector>> {
        let t = Instant::now();
        let out = match kind {
            CorrectorKind::Ideal => match self.config.tolerances.ideal_preconditioner {
                IdealPreconditioner::ExactKernel => {
                    compute_correctors(&self.kernel, self.exact_kernel_solver()?, kind)
                }
                IdealPreconditioner::Schwarz => {
                    compute_correctors(&self.kernel, self.schwarz()?, kind)
                }
            },
            CorrectorKind::Localized(0) => {
                let ell = self.kernel.ell();
                Ok((0..self.interp.n_coarse())
                    .map(|node| Corrector {
                        node,
                        psi: PairVector::zeros(ell),
                        kind,
                        steps: 0,
                        residual: 1.0,
                        exact: false,
                    })
                    .collect())
            }
            CorrectorKind::Localized(_) => compute_correctors(&self.kernel, self.schwarz()?, kind),
        }?;
        self.record("correctors", t);
        Ok(out)
    }

    pub fn corrector_kind(&self) -> CorrectorKind {
        match self.config.k() {
            None => CorrectorKind::Ideal,
            Some(k) => CorrectorKind::Localized(k),
        }
    }

    pub fn basis(&self, kind: CorrectorKind) -> Result<MultiscaleBasis> {
        let correctors = self.correctors(kind)?;
        let t = Instant::now();
        let b = build_multiscale_basis(Some(&correctors), &self.kernel)?;
        self.record("basis", t);
        Ok(b)
    }

    pub fn reduced_system(&self, kind: CorrectorKind) -> Result<ReducedSystem> {
        let basis = self.basis(kind)?;
        let t = Instant::now();
        let r = ReducedSystem::new(basis, &self.kernel.ops)?;
        self.record("reduced_factor", t);
        Ok(r)
    }

    /// Fine load for a different desired state on the same mesh.
    pub fn load_for(&self, y_d: &DesiredState) -> Vec<f64> {
        let y_d = y_d.clone();
        assemble_load(&self.grid, &move |x| y_d.eval(x))
    }

    /// Solves with a factorized reduced system for the fine load `load` of
    /// the original (unscaled) problem.
    pub fn solve_reduced(&self, system: &ReducedSystem, load: &[f64]) -> Result<SolveResult> {
        let t = Instant::now();
        let scaled: Vec<f64> = load.iter().map(|v| v * self.tau).collect();
        let x = system.solve(&scaled)?;
        let solution = unscale_solution(&PairVector::from_stacked(x), self.tau);
        let mut res = finish(
            &self.ops,
            load,
            self.config.gamma,
            solution,
            0,
            vec![("reduced_solve".into(), t.elapsed().as_secs_f64())],
        );
        res.k = self.config.k();
        Ok(res)
    }

    /// The multiscale solve selected by the configured mode.
    pub fn solve_multiscale(&self) -> Result<SolveResult> {
        let kind = self.corrector_kind();
        let system = self.reduced_system(kind)?;
        let mut res = self.solve_reduced(&system, &self.load)?;
        if let Some(d) = self.diagnostics.get() {
            res.kappa = Some(d.kappa);
            res.q = Some(d.q);
        }
        res.timings = self.timings();
        Ok(res)
    }

    /// The ideal multiscale solution computed as `u_h - C_h u_h` from a fine
    /// solution `u_h`, which needs a single kernel solve.
    pub fn ideal_from_fine(&self, fine: &PairVector) -> Result<PairVector> {
        let scaled = PairVector::new(fine.p(), &fine.y().iter().map(|v| v * self.tau).collect::<Vec<_>>());
        let b = SaddleOperator {
            a: &self.kernel.ops.stiffness,
            m: &self.kernel.ops.mass,
            gamma: 1.0,
        };
        let dual = self.kernel.restrict_dual(&b.apply_vec(scaled.as_slice()));
        let s = self.exact_kernel_solver()?;
        let (c, _) = pminres(
            &self.kernel.saddle(),
            &BlockDiagonal(s),
            &dual,
            MinresStop::Tolerance {
                rel_tol: 1e-12,
                max_steps: 4 * self.kernel.ell(),
            },
        )?;
        let corr = self.kernel.expand(&c);
        let out: Vec<f64> = scaled.as_slice().iter().zip(&corr).map(|(u, c)| u - c).collect();
        Ok(unscale_solution(&PairVector::from_stacked(out), self.tau))
    }
}

/// Both sides of `‖(p, y)‖_{a×a} ≤ √(C_PF/α) ‖y_d‖_{L2}`, evaluated for the
/// `√γ`-rescaled problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WellPosedness {
    pub lhs: f64,
    pub rhs: f64,
}

impl WellPosedness {
    pub fn holds(&self, slack: f64) -> bool {
        self.lhs <= self.rhs * (1.0 + slack) + slack
    }
}

impl Pipeline {
    pub fn well_posedness(&self, result: &SolveResult) -> Result<WellPosedness> {
        let n = self.ops.dim();
        let (p, y) = result.solution.as_slice().split_at(n);
        let a = &self.ops.stiffness;
        let pa = crate::linalg::dot(p, &a.mul_vec(p));
        let ya = crate::linalg::dot(y, &a.mul_vec(y));
        let tau = self.tau;
        let alpha = self.field.bounds().0 * tau;
        Ok(WellPosedness {
            lhs: (tau * (pa + tau * tau * ya)).max(0.0).sqrt(),
            rhs: (POINCARE_UNIT_SQUARE / alpha).sqrt() * tau * self.config.y_d.l2_norm(&self.grid),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(kappa: f64, q: f64) -> SpectralDiagnostics {
        SpectralDiagnostics {
            lambda_min: 1.0,
            lambda_max: kappa,
            kappa,
            c_star: 1.0,
            d_star: kappa,
            q,
            c_pf: POINCARE_UNIT_SQUARE,
            alpha: 1.0,
        }
    }

    #[test]
    fn k_rule() {
        assert_eq!(choose_k(0.1, 2), 6);
        assert_eq!(choose_k(0.05, 3), 9);
        assert_eq!(choose_k(1.0 / 40.0, 4), 16);
    }

    #[test]
    fn assumption3_cases() {
        let a = verify_assumption3(&diag(1.0, 0.5), 1.0, 0.5, 0, 2, 0.0);
        assert!((a.margin - 3.0 * 2f64.ln()).abs() < 1e-14);
        assert!(!a.satisfied);
        let b = verify_assumption3(&diag(1.0, 0.0), 1.0, 0.5, 2, 2, 0.0);
        assert!(b.satisfied && b.margin == f64::NEG_INFINITY);
        let margins: Vec<f64> = (0..12)
            .map(|k| verify_assumption3(&diag(5.0, 0.6), 100.0, 0.125, k, 2, 0.0).margin)
            .collect();
        assert!(margins.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rescaling_config() {
        let base = ProblemConfig::new(Example::Constant { value: 4.0 }, 4, 2);
        let same = rescale_problem(&base, 1.0).unwrap();
        assert_eq!(same.field_scale, 1.0);
        assert_eq!(same.gamma, 1.0);
        let r = rescale_problem(&base, 0.25).unwrap();
        assert!((r.field().unwrap().bounds().0 - 1.0).abs() < 1e-15);
        assert_eq!(r.gamma, 16.0);
        assert!(matches!(r.y_d, DesiredState::Constant(v) if v == 0.25));
        assert!(rescale_problem(&base, 0.0).is_err());
    }

    #[test]
    fn error_norms_trivial_cases() {
        let p = Pipeline::new(ProblemConfig::new(Example::Constant { value: 1.0 }, 2, 4)).unwrap();
        let fine = p.solve_fine().unwrap();
        let (e, l) = compute_errors(&fine.solution, &fine.solution, &p.ops).unwrap();
        assert_eq!((e, l), (0.0, 0.0));
        let zero = PairVector::zeros(p.ops.dim());
        let (e, l) = compute_errors(&fine.solution, &zero, &p.ops).unwrap();
        assert!((e - 1.0).abs() < 1e-15 && (l - 1.0).abs() < 1e-15);
        assert!(matches!(compute_errors(&zero, &fine.solution, &p.ops), Err(Error::ZeroReference)));
    }

    #[test]
    fn fine_solvers_agree_with_dense() {
        let cfg = ProblemConfig::new(Example::Constant { value: 1.0 }, 2, 4);
        let p = Pipeline::new(cfg).unwrap();
        let dense = solve_fine_dense(&p.ops, &p.load, 1.0).unwrap();
        for pre in [FinePreconditioner::BandedCholesky, FinePreconditioner::Jacobi] {
            let it = solve_fine_reference(&p.ops, &p.load, 1.0, 1e-12, 5000, pre).unwrap();
            let (e, _) = compute_errors(&dense.solution, &it.solution, &p.ops).unwrap();
            assert!(e < 1e-8, "{pre:?}: {e}");
            assert!(it.kkt_residual < 1e-9);
        }
    }

    #[test]
    fn zero_data_gives_zero_solutions() {
        let cfg = ProblemConfig::new(Example::Oscillatory { epsilon: 0.25 }, 2, 2)
            .with_desired(DesiredState::Constant(0.0));
        let p = Pipeline::new(cfg).unwrap();
        assert!(p.solve_fine().unwrap().solution.is_zero());
        assert!(p.solve_coarse().unwrap().solution.is_zero());
        assert!(p.solve_multiscale().unwrap().solution.is_zero());
    }

    #[test]
    fn general_gamma_matches_fine_route() {
        let mut cfg = ProblemConfig::new(Example::Oscillatory { epsilon: 0.25 }, 2, 4);
        cfg.gamma = 0.3;
        let p = Pipeline::new(cfg).unwrap();
        let fine = p.solve_fine().unwrap();
        let dense = solve_fine_dense(&p.ops, &p.load, 0.3).unwrap();
        let (e, _) = compute_errors(&dense.solution, &fine.solution, &p.ops).unwrap();
        assert!(e < 1e-8);
        let ms = p.solve_multiscale().unwrap();
        let via_fine = p.ideal_from_fine(&fine.solution).unwrap();
        let (e, l) = compute_errors(&via_fine, &ms.solution, &p.ops).unwrap();
        assert!(e < 1e-8 && l < 1e-8, "{e} {l}");
        for (u, q) in ms.control.iter().zip(ms.solution.p()) {
            assert!((u - q / 0.3).abs() < 1e-14);
        }
        assert!(p.well_posedness(&fine).unwrap().holds(1e-8));
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = ProblemConfig::new(Example::Constant { value: 1.0 }, 2, 2);
        cfg.gamma = -1.0;
        assert!(matches!(Pipeline::new(cfg), Err(Error::Config(_))));
        let cfg = ProblemConfig::new(Example::Constant { value: 1.0 }, 1, 2);
        assert!(Pipeline::new(cfg).is_err());
        let cfg = ProblemConfig::new(Example::Constant { value: 1.0 }, 2, 2)
            .with_mode(Mode::LocalizedAuto(0));
        assert!(Pipeline::new(cfg).is_err());
    }
}
