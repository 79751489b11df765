//! Command-line harness: configuration files, presets, the `solve`,
//! `convergence`, `decay`, `spectrum` and `basis` subcommands, CSV output and
//! run manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::{
    choose_k, compute_errors, verify_assumption3, DesiredState, Example, FinePreconditioner,
    Mode, Pipeline, ProblemConfig, SolveResult,
};
use crate::error::{Error, Result};
use crate::multiscale::{
    build_multiscale_basis, compute_ideal_corrector, compute_localized_corrector, decay_profile,
    Corrector, CorrectorKind,
};
use crate::saddle::POINCARE_UNIT_SQUARE;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

pub const CONVERGENCE_HEADER: &str = "example,epsilon_or_seed,N,R,H,h,k,j,mode,rel_energy_err,rel_l2_err,kappa,q,assumption3_margin,wall_time_s";
pub const DECAY_HEADER: &str = "node,layer,annulus_energy,cumulative_fraction,k";
pub const SPECTRUM_HEADER: &str = "lambda_min,lambda_max,kappa,c_star,d_star,q,C_PF,alpha,beta,N,R";

#[derive(Debug, Parser)]
#[command(name = "lod-ocp", version, about = "Multiscale solvers for elliptic optimal control with rough coefficients")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Named preset used as the base configuration.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Fine, coarse and multiscale solves plus the repeat-solve demonstration.
    Solve,
    /// Error sweep over coarse mesh sizes at a fixed fine mesh.
    Convergence,
    /// Corrector energy per coarse layer.
    Decay,
    /// Spectral diagnostics of the preconditioned kernel operator.
    Spectrum,
    /// Nodal values of corrected basis functions.
    Basis,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Convergence => "convergence",
            Command::Decay => "decay",
            Command::Spectrum => "spectrum",
            Command::Basis => "basis",
        }
    }
}

/// Flat run configuration. Every key is optional; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Base preset whose values the remaining keys override.
    pub preset: Option<String>,
    /// `oscillatory`, `heterogeneous` or `constant`.
    pub example: String,
    pub epsilon: f64,
    pub seed: u64,
    pub blocks_per_side: usize,
    pub lo: f64,
    pub hi: f64,
    pub value: f64,
    pub field_scale: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "R")]
    pub r: usize,
    pub gamma: f64,
    /// Constant desired state; defaults to -1 for the oscillatory example
    /// and 1 otherwise.
    pub y_d: Option<f64>,
    /// `ideal`, `localized` or `localized_auto`.
    pub mode: String,
    pub k: Option<usize>,
    pub j: usize,
    /// Coarse cell counts `1/H` for the convergence sweep.
    #[serde(rename = "N_list")]
    pub n_list: Vec<usize>,
    /// Optional per-entry `j` for the sweep.
    pub j_list: Option<Vec<usize>>,
    /// Fine cell count `1/h` for the sweep; defaults to `N·R`.
    pub fine_cells: Option<usize>,
    /// Methods in the sweep: `ideal`, `localized`, `localized_auto`, `coarse`.
    pub modes: Vec<String>,
    /// Coarse node indices for decay and basis export; empty picks the
    /// node nearest the centre.
    pub nodes: Vec<usize>,
    /// Steps for which the spectrum run reports the sufficient condition.
    pub k_grid: Vec<usize>,
    /// Extra desired states solved with the factorized reduced system.
    pub repeat_loads: usize,
    /// `banded_cholesky` or `jacobi`.
    pub fine_preconditioner: String,
    pub fine_tol: f64,
    pub lanczos_iters: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: None,
            example: "oscillatory".into(),
            epsilon: 0.08,
            seed: 1,
            blocks_per_side: 40,
            lo: 1.0,
            hi: 1350.0,
            value: 1.0,
            field_scale: 1.0,
            n: 8,
            r: 8,
            gamma: 1.0,
            y_d: None,
            mode: "localized_auto".into(),
            k: None,
            j: 2,
            n_list: vec![4, 8, 16],
            j_list: None,
            fine_cells: None,
            modes: vec!["localized_auto".into()],
            nodes: Vec::new(),
            k_grid: vec![2, 4, 6, 8, 12, 16],
            repeat_loads: 16,
            fine_preconditioner: "banded_cholesky".into(),
            fine_tol: 1e-10,
            lanczos_iters: 120,
        }
    }
}

pub const PRESETS: &[&str] = &[
    "desk-oscillatory",
    "desk-heterogeneous",
    "paper-oscillatory-0.08",
    "paper-oscillatory-0.04",
    "paper-oscillatory-0.025",
    "paper-heterogeneous",
];

/// Named configurations. The `paper-*` presets use the published mesh sizes
/// and need a large machine.
pub fn preset(name: &str) -> Result<RunConfig> {
    let base = RunConfig::default();
    let osc = |eps: f64, fine: usize, list: Vec<usize>| RunConfig {
        preset: Some(name.into()),
        example: "oscillatory".into(),
        epsilon: eps,
        y_d: Some(-1.0),
        n: list[0],
        r: fine / list[0],
        fine_cells: Some(fine),
        n_list: list,
        j_list: Some(vec![2, 2, 3, 3]),
        ..base.clone()
    };
    let het = |fine: usize, list: Vec<usize>, js: Vec<usize>| RunConfig {
        preset: Some(name.into()),
        example: "heterogeneous".into(),
        y_d: Some(1.0),
        n: list[0],
        r: fine / list[0],
        fine_cells: Some(fine),
        n_list: list,
        j_list: Some(js),
        modes: vec!["ideal".into(), "localized_auto".into()],
        ..base.clone()
    };
    Ok(match name {
        "desk-oscillatory" => RunConfig {
            j_list: None,
            n: 8,
            r: 8,
            ..osc(0.08, 64, vec![4, 8, 16])
        },
        "desk-heterogeneous" => RunConfig {
            n: 16,
            r: 8,
            j: 3,
            ..het(128, vec![8, 16], vec![2, 3])
        },
        "paper-oscillatory-0.08" => osc(0.08, 256, vec![8, 16, 32, 64]),
        "paper-oscillatory-0.04" => osc(0.04, 256, vec![8, 16, 32, 64]),
        "paper-oscillatory-0.025" => osc(0.025, 320, vec![10, 20, 40, 80]),
        "paper-heterogeneous" => het(320, vec![10, 20, 40], vec![2, 3, 4]),
        _ => {
            return Err(Error::Config(format!(
                "unknown preset `{name}` (available: {})",
                PRESETS.join(", ")
            )))
        }
    })
}

/// Parses a JSON configuration, applying the named preset first if the text
/// or `preset` selects one.
pub fn parse_config(text: &str, preset_name: Option<&str>) -> Result<RunConfig> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
    let serde_json::Value::Object(map) = value else {
        return Err(Error::Config("configuration must be a JSON object".into()));
    };
    let name = match map.get("preset") {
        Some(serde_json::Value::String(s)) => Some(s.clone()),
        Some(serde_json::Value::Null) | None => preset_name.map(String::from),
        Some(_) => return Err(Error::Config("`preset` must be a string".into())),
    };
    let mut merged = match &name {
        Some(n) => serde_json::to_value(preset(n)?).expect("serializable"),
        None => serde_json::to_value(RunConfig::default()).expect("serializable"),
    };
    let target = merged.as_object_mut().expect("object");
    for (k, v) in map {
        target.insert(k, v);
    }
    serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))
}

impl RunConfig {
    pub fn example(&self) -> Result<Example> {
        match self.example.as_str() {
            "oscillatory" => Ok(Example::Oscillatory {
                epsilon: self.epsilon,
            }),
            "heterogeneous" => Ok(Example::Heterogeneous {
                seed: self.seed,
                blocks_per_side: self.blocks_per_side,
                lo: self.lo,
                hi: self.hi,
            }),
            "constant" => Ok(Example::Constant { value: self.value }),
            other => Err(Error::Config(format!("unknown example `{other}`"))),
        }
    }

    pub fn desired_value(&self) -> f64 {
        self.y_d
            .unwrap_or(if self.example == "oscillatory" { -1.0 } else { 1.0 })
    }

    pub fn parse_mode(&self, name: &str, j: usize) -> Result<Mode> {
        match name {
            "ideal" => Ok(Mode::Ideal),
            "localized" => self
                .k
                .map(Mode::Localized)
                .ok_or_else(|| Error::Config("mode `localized` needs `k`".into())),
            "localized_auto" => Ok(Mode::LocalizedAuto(j)),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }

    /// The problem for coarse cells `n`, refinement `r` and mode `mode`.
    pub fn problem(&self, n: usize, r: usize, mode: Mode) -> Result<ProblemConfig> {
        let mut cfg = ProblemConfig::new(self.example()?, n, r)
            .with_mode(mode)
            .with_desired(DesiredState::Constant(self.desired_value()));
        cfg.gamma = self.gamma;
        cfg.field_scale = self.field_scale;
        cfg.tolerances.fine_rel_tol = self.fine_tol;
        cfg.tolerances.lanczos_iters = self.lanczos_iters;
        cfg.tolerances.fine_preconditioner = match self.fine_preconditioner.as_str() {
            "banded_cholesky" => FinePreconditioner::BandedCholesky,
            "jacobi" => FinePreconditioner::Jacobi,
            other => return Err(Error::Config(format!("unknown fine preconditioner `{other}`"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn base_problem(&self) -> Result<ProblemConfig> {
        self.problem(self.n, self.r, self.parse_mode(&self.mode, self.j)?)
    }

    /// `ε` for the oscillatory example, the seed for the heterogeneous one.
    pub fn epsilon_or_seed(&self) -> String {
        match self.example.as_str() {
            "oscillatory" => fmt_f(self.epsilon),
            "heterogeneous" => self.seed.to_string(),
            _ => fmt_f(self.value),
        }
    }

    /// `(N, R, j)` for every sweep entry, all sharing one fine mesh.
    pub fn sweep(&self) -> Result<Vec<(usize, usize, usize)>> {
        if self.n_list.is_empty() {
            return Err(Error::Config("`N_list` is empty".into()));
        }
        let fine = self.fine_cells.unwrap_or(self.n * self.r);
        if let Some(js) = &self.j_list {
            if js.len() != self.n_list.len() {
                return Err(Error::Config("`j_list` and `N_list` differ in length".into()));
            }
        }
        self.n_list
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                if n < 2 || fine % n != 0 || fine / n < 2 {
                    return Err(Error::Config(format!(
                        "N = {n} does not give a fixed fine mesh with 1/h = {fine}"
                    )));
                }
                let j = self.j_list.as_ref().map_or(self.j, |js| js[i]);
                Ok((n, fine / n, j))
            })
            .collect()
    }

    /// Requested nodes, or the coarse node nearest the centre.
    pub fn nodes_for(&self, pipeline: &Pipeline) -> Result<Vec<usize>> {
        let m = pipeline.grid.n_coarse();
        if self.nodes.is_empty() {
            let c = pipeline.grid.coarse_cells();
            return Ok(vec![pipeline
                .grid
                .coarse_node_index(c / 2, c / 2)
                .expect("interior centre node")]);
        }
        for &node in &self.nodes {
            if node >= m {
                return Err(Error::Config(format!("node {node} out of range (m = {m})")));
            }
        }
        Ok(self.nodes.clone())
    }
}

fn fmt_f(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.12e}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

/// Least-squares slope of `ln(err)` against `ln(H)` and the root-mean-square
/// residual of the fit.
pub fn loglog_slope(h: &[f64], err: &[f64]) -> Result<(f64, f64)> {
    if h.len() != err.len() || h.len() < 2 {
        return Err(Error::Config("slope needs at least two points".into()));
    }
    if h.iter().chain(err).any(|&v| !(v > 0.0)) {
        return Err(Error::Config("slope needs positive values".into()));
    }
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Config("slope needs distinct mesh sizes".into()));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(&y)
        .map(|(a, b)| (b - icpt - slope * a).powi(2))
        .sum();
    Ok((slope, (rss / n).sqrt()))
}

/// One data row of `convergence.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub example: String,
    pub epsilon_or_seed: String,
    pub n: usize,
    pub r: usize,
    pub k: Option<usize>,
    pub j: Option<usize>,
    pub mode: String,
    pub rel_energy_err: f64,
    pub rel_l2_err: f64,
    pub kappa: Option<f64>,
    pub q: Option<f64>,
    pub assumption3_margin: Option<f64>,
    pub wall_time_s: f64,
}

impl ConvergenceRow {
    pub fn coarse_h(&self) -> f64 {
        1.0 / self.n as f64
    }

    fn to_csv(&self) -> String {
        let opt_u = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.3}",
            self.example,
            self.epsilon_or_seed,
            self.n,
            self.r,
            fmt_f(self.coarse_h()),
            fmt_f(1.0 / (self.n * self.r) as f64),
            opt_u(self.k),
            opt_u(self.j),
            self.mode,
            fmt_f(self.rel_energy_err),
            fmt_f(self.rel_l2_err),
            fmt_opt(self.kappa),
            fmt_opt(self.q),
            fmt_opt(self.assumption3_margin),
            self.wall_time_s,
        )
    }
}

/// Slopes per mode: `(mode, energy slope, energy residual, L2 slope, L2 residual)`.
pub fn convergence_slopes(rows: &[ConvergenceRow]) -> Result<Vec<(String, f64, f64, f64, f64)>> {
    let mut modes: Vec<&str> = rows.iter().map(|r| r.mode.as_str()).collect();
    modes.dedup();
    let mut seen = Vec::new();
    let mut out = Vec::new();
    for mode in modes {
        if seen.contains(&mode) {
            continue;
        }
        seen.push(mode);
        let sel: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.mode == mode).collect();
        if sel.len() < 2 {
            continue;
        }
        let h: Vec<f64> = sel.iter().map(|r| r.coarse_h()).collect();
        let e: Vec<f64> = sel.iter().map(|r| r.rel_energy_err).collect();
        let l: Vec<f64> = sel.iter().map(|r| r.rel_l2_err).collect();
        let (se, re) = loglog_slope(&h, &e)?;
        let (sl, rl) = loglog_slope(&h, &l)?;
        out.push((mode.to_string(), se, re, sl, rl));
    }
    Ok(out)
}

/// Runs the sweep over `N_list` at fixed `h` for every configured mode.
pub fn run_convergence(cfg: &RunConfig) -> Result<Vec<ConvergenceRow>> {
    let sweep = cfg.sweep()?;
    if cfg.modes.is_empty() {
        return Err(Error::Config("`modes` is empty".into()));
    }
    let mut rows = Vec::new();
    for (n, r, j) in sweep {
        let base = cfg.problem(n, r, Mode::Ideal)?;
        let fine = Pipeline::new(base.clone())?.solve_fine()?;
        for mode_name in &cfg.modes {
            let start = Instant::now();
            let (result, mode, pipeline) = if mode_name == "coarse" {
                let p = Pipeline::new(base.clone())?;
                (p.solve_coarse()?, None, p)
            } else {
                let mode = cfg.parse_mode(mode_name, j)?;
                let p = Pipeline::new(base.clone().with_mode(mode))?;
                let res = if mode == Mode::Ideal {
                    let sol = p.ideal_from_fine(&fine.solution)?;
                    SolveResult {
                        solution: sol,
                        ..fine.clone()
                    }
                } else {
                    p.solve_multiscale()?
                };
                (res, Some(mode), p)
            };
            let (e, l) = compute_errors(&fine.solution, &result.solution, &pipeline.ops)?;
            let k = pipeline.config.k();
            let (kappa, q, margin) = match mode {
                None => (None, None, None),
                Some(_) => {
                    let d = pipeline.diagnostics()?;
                    let (a, b) = pipeline.field.bounds();
                    let margin =
                        k.map(|k| verify_assumption3(&d, b / a, base.coarse_h(), k, 2, 0.0).margin);
                    (Some(d.kappa), Some(d.q), margin)
                }
            };
            rows.push(ConvergenceRow {
                example: cfg.example.clone(),
                epsilon_or_seed: cfg.epsilon_or_seed(),
                n,
                r,
                k,
                j: match mode {
                    Some(Mode::LocalizedAuto(j)) => Some(j),
                    _ => None,
                },
                mode: mode_name.clone(),
                rel_energy_err: e,
                rel_l2_err: l,
                kappa,
                q,
                assumption3_margin: margin,
                wall_time_s: start.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(rows)
}

/// `convergence.csv` text: data rows, then `slope` and `slope_residual`
/// rows per mode carrying the fitted values in the error columns.
pub fn convergence_csv(rows: &[ConvergenceRow]) -> Result<String> {
    let mut s = String::from(CONVERGENCE_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    for (mode, se, re, sl, rl) in convergence_slopes(rows)? {
        writeln!(s, "slope,,,,,,,,{mode},{},{},,,,", fmt_f(se), fmt_f(sl)).unwrap();
        writeln!(s, "slope_residual,,,,,,,,{mode},{},{},,,,", fmt_f(re), fmt_f(rl)).unwrap();
    }
    Ok(s)
}

/// Decay rows for the ideal corrector and the localized one with the
/// configured `k` at each node.
pub fn run_decay(cfg: &RunConfig) -> Result<String> {
    let problem = cfg.base_problem()?;
    let k = problem.k().unwrap_or_else(|| choose_k(problem.coarse_h(), cfg.j));
    let p = Pipeline::new(problem)?;
    let nodes = cfg.nodes_for(&p)?;
    let exact = p.exact_kernel_solver()?;
    let schwarz = p.schwarz()?;
    let mut s = String::from(DECAY_HEADER);
    s.push('\n');
    for node in nodes {
        let ideal = compute_ideal_corrector(node, &p.kernel, exact)?;
        let local = compute_localized_corrector(node, k, &p.kernel, schwarz)?;
        for (c, label) in [(&ideal, "ideal".to_string()), (&local, k.to_string())] {
            for row in decay_profile(c, &p.grid, &p.kernel, &p.kernel_field()) {
                writeln!(
                    s,
                    "{node},{},{},{},{label}",
                    row.layer,
                    fmt_f(row.annulus_energy),
                    fmt_f(row.cumulative_fraction)
                )
                .unwrap();
            }
        }
    }
    Ok(s)
}

/// `spectrum.csv` and `assumption3.csv` texts. A Lanczos run that does not
/// settle produces a row with empty spectral fields.
pub fn run_spectrum(cfg: &RunConfig) -> Result<(String, String)> {
    let problem = cfg.base_problem()?;
    let p = Pipeline::new(problem)?;
    let (alpha, beta) = p.ms_bounds();
    let mut spec = String::from(SPECTRUM_HEADER);
    spec.push('\n');
    let mut a3 = String::from("k,margin,satisfied\n");
    match p.diagnostics() {
        Ok(d) => {
            writeln!(
                spec,
                "{},{},{},{},{},{},{},{},{},{},{}",
                fmt_f(d.lambda_min),
                fmt_f(d.lambda_max),
                fmt_f(d.kappa),
                fmt_f(d.c_star),
                fmt_f(d.d_star),
                fmt_f(d.q),
                fmt_f(POINCARE_UNIT_SQUARE),
                fmt_f(alpha),
                fmt_f(beta),
                cfg.n,
                cfg.r
            )
            .unwrap();
            for &k in &cfg.k_grid {
                let a = verify_assumption3(&d, beta / alpha, 1.0 / cfg.n as f64, k, 2, 0.0);
                writeln!(a3, "{k},{},{}", fmt_f(a.margin), a.satisfied).unwrap();
            }
        }
        Err(Error::LanczosNotConverged { drift }) => {
            eprintln!("warning: Lanczos estimate did not settle (drift {drift:.3e})");
            writeln!(
                spec,
                ",,,,,,{},{},{},{},{}",
                fmt_f(POINCARE_UNIT_SQUARE),
                fmt_f(alpha),
                fmt_f(beta),
                cfg.n,
                cfg.r
            )
            .unwrap();
        }
        Err(e) => return Err(e),
    }
    Ok((spec, a3))
}

/// Files `basis_node{i}_{raw|ideal|k<k>}.csv` with the fine nodal values of
/// `(φ_i, 0) - ψ_i` and `(0, φ_i) - ξ_i`.
pub fn run_basis_export(cfg: &RunConfig) -> Result<Vec<(String, String)>> {
    let problem = cfg.base_problem()?;
    let k = problem.k().unwrap_or_else(|| choose_k(problem.coarse_h(), cfg.j));
    let p = Pipeline::new(problem)?;
    let nodes = cfg.nodes_for(&p)?;
    let n = p.grid.n_fine();
    let m = p.grid.n_coarse();
    let exact = p.exact_kernel_solver()?;
    let schwarz = p.schwarz()?;
    let mut files = Vec::new();
    for node in nodes {
        let ideal = compute_ideal_corrector(node, &p.kernel, exact)?;
        let local = compute_localized_corrector(node, k, &p.kernel, schwarz)?;
        for (label, corr) in [
            ("raw".to_string(), None),
            ("ideal".to_string(), Some(ideal)),
            (format!("k{k}"), Some(local)),
        ] {
            let (b1, b2) = basis_pair(&p, node, corr.as_ref())?;
            let mut s = String::from("fine_node,x,y,b1_p,b1_y,b2_p,b2_y\n");
            for f in 0..n {
                let [x, y] = p.grid.fine_node_position(f);
                writeln!(
                    s,
                    "{f},{},{},{},{},{},{}",
                    fmt_f(x),
                    fmt_f(y),
                    fmt_f(b1[f]),
                    fmt_f(b1[n + f]),
                    fmt_f(b2[f]),
                    fmt_f(b2[n + f])
                )
                .unwrap();
            }
            files.push((format!("basis_node{node}_{label}.csv"), s));
        }
        debug_assert!(node < m);
    }
    Ok(files)
}

/// The two corrected basis pairs of `node` in fine coordinates.
pub fn basis_pair(
    p: &Pipeline,
    node: usize,
    corrector: Option<&Corrector>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = p.grid.n_coarse();
    let ell = p.kernel.ell();
    let kind = corrector.map_or(CorrectorKind::Localized(0), |c| c.kind);
    let mut all: Vec<Corrector> = (0..m)
        .map(|i| Corrector {
            node: i,
            psi: crate::pair::PairVector::zeros(ell),
            kind,
            steps: 0,
            residual: 0.0,
            exact: false,
        })
        .collect();
    if let Some(c) = corrector {
        all[node] = c.clone();
    }
    let basis = build_multiscale_basis(Some(&all), &p.kernel)?;
    Ok((basis.column(node), basis.column(m + node)))
}

/// Solve summary, fine nodal solution and the repeat-solve timing table.
pub struct SolveOutput {
    pub summary: String,
    pub solution: String,
    pub repeat: Option<String>,
    pub report: String,
}

/// Desired state number `l` of the repeat-solve demonstration.
pub fn repeat_load(l: usize, base: f64) -> DesiredState {
    let f = (l + 1) as f64;
    DesiredState::Function(std::sync::Arc::new(move |x: [f64; 2]| {
        base + (std::f64::consts::PI * f * x[0]).sin() * (std::f64::consts::PI * x[1]).sin()
    }))
}

pub fn run_solve(cfg: &RunConfig) -> Result<SolveOutput> {
    let problem = cfg.base_problem()?;
    let p = Pipeline::new(problem)?;
    let t = Instant::now();
    let fine = p.solve_fine()?;
    let fine_time = t.elapsed().as_secs_f64();
    let coarse = p.solve_coarse()?;
    let kind = p.corrector_kind();
    let system = p.reduced_system(kind)?;
    let ms = p.solve_reduced(&system, &p.load)?;
    let mut summary = String::from("method,k,rel_energy_err,rel_l2_err,energy_norm,l2_norm,kkt_residual\n");
    let k = p.config.k().map(|k| k.to_string()).unwrap_or_default();
    for (name, res, k) in [
        ("fine", &fine, String::new()),
        ("coarse", &coarse, String::new()),
        (p.config.mode.name(), &ms, k.clone()),
    ] {
        let (e, l) = compute_errors(&fine.solution, &res.solution, &p.ops)?;
        writeln!(
            summary,
            "{name},{k},{},{},{},{},{}",
            fmt_f(e),
            fmt_f(l),
            fmt_f(res.energy_norm),
            fmt_f(res.l2_norm),
            fmt_f(res.kkt_residual)
        )
        .unwrap();
    }
    let n = p.grid.n_fine();
    let mut solution = String::from("fine_node,x,y,p,y_state,u\n");
    for f in 0..n {
        let [x, y] = p.grid.fine_node_position(f);
        writeln!(
            solution,
            "{f},{},{},{},{},{}",
            fmt_f(x),
            fmt_f(y),
            fmt_f(ms.solution.p()[f]),
            fmt_f(ms.solution.y()[f]),
            fmt_f(ms.control[f])
        )
        .unwrap();
    }
    let (e, l) = compute_errors(&fine.solution, &ms.solution, &p.ops)?;
    let mut report = format!(
        "{} on N={} R={} ({} mode{}): relative errors energy {:.4e}, L2 {:.4e}\n",
        cfg.example,
        cfg.n,
        cfg.r,
        p.config.mode.name(),
        if k.is_empty() { String::new() } else { format!(", k={k}") },
        e,
        l
    );
    let repeat = if cfg.repeat_loads > 0 {
        let mut s = String::from("load,rel_energy_err,rel_l2_err,reduced_solve_s,fine_solve_s\n");
        let (mut tr, mut tf) = (0.0, 0.0);
        for l in 0..cfg.repeat_loads {
            let load = p.load_for(&repeat_load(l, cfg.desired_value()));
            let t = Instant::now();
            let red = p.solve_reduced(&system, &load)?;
            let dr = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let tol = &p.config.tolerances;
            let fin = crate::control::solve_fine_reference(
                &p.ops,
                &load,
                p.config.gamma,
                tol.fine_rel_tol,
                tol.fine_max_steps,
                tol.fine_preconditioner,
            )?;
            let df = t.elapsed().as_secs_f64();
            tr += dr;
            tf += df;
            let (e, l2) = compute_errors(&fin.solution, &red.solution, &p.ops)?;
            writeln!(s, "{l},{},{},{dr:.6},{df:.6}", fmt_f(e), fmt_f(l2)).unwrap();
        }
        writeln!(
            report,
            "repeat solves: {} loads, reduced {:.4}s total vs fine {:.4}s total (first fine solve {:.4}s)",
            cfg.repeat_loads, tr, tf, fine_time
        )
        .unwrap();
        Some(s)
    } else {
        None
    };
    Ok(SolveOutput {
        summary,
        solution,
        repeat,
        report,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub seed: u64,
    pub tool_version: String,
    pub output_dir: String,
    pub stage_times_s: BTreeMap<String, f64>,
    /// SHA-256 of each CSV with timing columns (`*_s`) removed.
    pub checksums: BTreeMap<String, String>,
}

/// Drops the columns whose header ends in `_s` so that checksums only cover
/// reproducible payload.
pub fn strip_timing_columns(csv: &str) -> String {
    let mut lines = csv.lines();
    let Some(header) = lines.next() else {
        return String::new();
    };
    let keep: Vec<bool> = header.split(',').map(|h| !h.ends_with("_s")).collect();
    let filter = |line: &str| -> String {
        line.split(',')
            .enumerate()
            .filter(|(i, _)| keep.get(*i).copied().unwrap_or(true))
            .map(|(_, v)| v)
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut out = filter(header);
    out.push('\n');
    for line in lines {
        out.push_str(&filter(line));
        out.push('\n');
    }
    out
}

pub fn payload_checksum(csv: &str) -> String {
    Sha256::digest(strip_timing_columns(csv).as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Runs one subcommand and writes its files into `out`.
pub fn execute(command: Command, cfg: &RunConfig, out: &Path) -> Result<RunManifest> {
    let start = Instant::now();
    let mut files: Vec<(String, String)> = Vec::new();
    match command {
        Command::Solve => {
            let o = run_solve(cfg)?;
            print!("{}", o.report);
            files.push(("solve.csv".into(), o.summary));
            files.push(("solution.csv".into(), o.solution));
            if let Some(r) = o.repeat {
                files.push(("repeat.csv".into(), r));
            }
        }
        Command::Convergence => {
            let rows = run_convergence(cfg)?;
            for (mode, se, _, sl, _) in convergence_slopes(&rows)? {
                println!("{mode}: energy slope {se:.3}, L2 slope {sl:.3}");
            }
            files.push(("convergence.csv".into(), convergence_csv(&rows)?));
        }
        Command::Decay => files.push(("decay.csv".into(), run_decay(cfg)?)),
        Command::Spectrum => {
            let (spec, a3) = run_spectrum(cfg)?;
            print!("{spec}");
            files.push(("spectrum.csv".into(), spec));
            files.push(("assumption3.csv".into(), a3));
        }
        Command::Basis => files.extend(run_basis_export(cfg)?),
    }
    fs::create_dir_all(out)?;
    let mut checksums = BTreeMap::new();
    for (name, text) in &files {
        fs::write(out.join(name), text)?;
        checksums.insert(name.clone(), payload_checksum(text));
    }
    let mut stage_times_s = BTreeMap::new();
    stage_times_s.insert(command.name().to_string(), start.elapsed().as_secs_f64());
    let manifest = RunManifest {
        command: command.name().into(),
        config: cfg.clone(),
        seed: cfg.seed,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        output_dir: out.display().to_string(),
        stage_times_s,
        checksums,
    };
    fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("serializable"),
    )?;
    Ok(manifest)
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Parse(_) | Error::InvalidGrid(_) | Error::InvalidField(_) => {
            EXIT_CONFIG
        }
        e if e.is_solver_failure() => EXIT_NOT_CONVERGED,
        _ => EXIT_FAILURE,
    }
}

/// Resolves the configuration from the command-line flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            parse_config(&text, cli.preset.as_deref())?
        }
        None => match &cli.preset {
            Some(name) => preset(name)?,
            None => RunConfig::default(),
        },
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Entry point for the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be positive");
            return EXIT_CONFIG;
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let result = resolve_config(&cli).and_then(|cfg| execute(cli.command, &cfg, &cli.out));
    match result {
        Ok(m) => {
            println!("wrote {} file(s) to {}", m.checksums.len(), m.output_dir);
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
