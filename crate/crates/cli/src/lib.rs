//! Pipeline behind the `infdelay` binary: config loading, the six commands and their reports.

pub mod config;
pub mod report;

use config::{Expectation, ProblemConfig};
use infdelay::central::{
    integrate_central, mean_rate, rate_fit_window, reduction_report, Branch, CentralSystem, EnsembleOptions,
    ReductionReport, StabilityVerdict,
};
use infdelay::decomposition::{
    estimate_decomposition_constants, project_stable, random_segments, DecompositionConstants, ModalBlock,
    ReducedSystem,
};
use infdelay::kernel::{check_admissibility, KernelModel, Nonlinearity};
use infdelay::manifold::{
    attractivity_diagnostics, default_probes, select_delta, AttractivityConstants, CutoffConfig, ManifoldConstants,
    ManifoldMap, ManifoldProblem,
};
use infdelay::phasespace::{solve_nonlinear_with, Grid, NonlinearOptions, Propagator, Segment};
use infdelay::spectral::{default_search_rect, find_characteristic_roots, spectral_gap_constants, GapConstants, SpectralSummary};
use infdelay::{Error, Result, C64};
use rayon::prelude::*;
use report::{cplx, cvec, matrix, num, opt, write_csv, write_json};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha), seed_from_u64(seed) with one stream per consumer";

/// Exit codes of the binary.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 1;
    pub const ROOTS: i32 = 2;
    pub const FIXED_POINT: i32 = 3;
    pub const VERDICT: i32 = 4;
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. }
        | Error::InvalidKernel(_)
        | Error::Admissibility { .. }
        | Error::Domain { .. }
        | Error::Pole(_)
        | Error::Dimension { .. } => exit::CONFIG,
        Error::RootNonconvergence(_)
        | Error::BoundaryRoot { .. }
        | Error::Multiplicity { .. }
        | Error::DegenerateGap(_)
        | Error::SingularGram(_)
        | Error::ExtrapolationDivergence(_) => exit::ROOTS,
        Error::FixedPointNonconvergence { .. }
        | Error::SeriesStall(_)
        | Error::NoAdmissibleDelta
        | Error::BlowUp { .. }
        | Error::Hyperbolicity(_) => exit::FIXED_POINT,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Spectrum,
    Decompose,
    Manifold,
    Central,
    Simulate,
    Verify,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Decompose => "decompose",
            Command::Manifold => "manifold",
            Command::Central => "central",
            Command::Simulate => "simulate",
            Command::Verify => "verify",
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub grid_h: Option<f64>,
}

/// Outcome of a command: the report and the exit code it implies.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub report: Value,
    pub files: Vec<PathBuf>,
    pub code: i32,
}

/// Configuration, kernel, nonlinearity and spectrum; later stages are built on demand.
pub struct Pipeline {
    pub cfg: ProblemConfig,
    pub config_hash: String,
    pub kernel: KernelModel,
    pub grid: Grid,
    pub f: Arc<dyn Nonlinearity>,
    pub summary: SpectralSummary,
}

/// Constants of the manifold construction, in the order they are derived.
pub struct Stages {
    pub gap: GapConstants,
    pub reduced: Arc<ReducedSystem>,
    pub decomposition: DecompositionConstants,
    pub consts: ManifoldConstants,
    pub cutoff: CutoffConfig,
    pub attractivity: AttractivityConstants,
    pub problem: Arc<ManifoldProblem>,
}

pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

impl Pipeline {
    pub fn load(text: &str, overrides: &Overrides) -> Result<Self> {
        let mut cfg = ProblemConfig::parse(text)?;
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(h) = overrides.grid_h {
            if !(h > 0.0) || cfg.mollifier_max as f64 * h > 1.0 {
                return Err(Error::Config { line: 0, message: format!("--grid-h {h} must be positive and at most 1/{}", cfg.mollifier_max) });
            }
            cfg.h = h;
        }
        let kernel = cfg.kernel()?;
        check_admissibility(&kernel)?;
        let grid = cfg.grid();
        let f = cfg.nonlinearity(&kernel, grid)?;
        let rect = cfg.search.unwrap_or_else(|| default_search_rect(&kernel, cfg.margin));
        let summary = find_characteristic_roots(&kernel, rect, &cfg.spectral_options())?;
        Ok(Self { config_hash: config_hash(text), cfg, kernel, grid, f, summary })
    }

    pub fn load_file(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config { line: 0, message: format!("cannot read {}: {e}", path.display()) })?;
        Self::load(&text, overrides)
    }

    pub fn gap(&self) -> Result<GapConstants> {
        spectral_gap_constants(&self.summary, &self.kernel, self.cfg.margin, self.cfg.safety, self.cfg.center_tol)
    }

    pub fn reduced(&self) -> Result<Arc<ReducedSystem>> {
        Ok(Arc::new(ReducedSystem::build(&self.kernel, &self.summary, self.grid)?))
    }

    fn real(&self) -> bool {
        self.kernel.is_real() && self.f.preserves_real()
    }

    pub fn stages(&self) -> Result<Stages> {
        let gap = self.gap()?;
        let reduced = self.reduced()?;
        let mut rng = infdelay::rng(self.cfg.seed, 1);
        let sample = random_segments(self.grid, self.cfg.samples, self.real(), &mut rng);
        let decomposition = estimate_decomposition_constants(&reduced, &self.kernel, gap.alpha, &sample, self.cfg.t_fit);
        let mut consts = ManifoldConstants::new(decomposition.c, decomposition.c1, gap);
        consts.fp_tol = self.cfg.fp_tol;
        consts.path_tail_tol = self.cfg.path_tail_tol;
        consts.t_path = (1.0 / consts.path_tail_tol).ln() / (consts.alpha - consts.eta);
        let mut rng = infdelay::rng(self.cfg.seed, 2);
        let probes = default_probes(&reduced, self.real(), self.cfg.probes, &mut rng);
        let cutoff = select_delta(&consts, self.f.as_ref(), &probes, self.cfg.delta_ceiling)?;
        let attractivity = AttractivityConstants::new(&consts, &cutoff);
        let problem = Arc::new(ManifoldProblem::new(&self.kernel, reduced.clone(), self.f.clone(), cutoff, consts));
        Ok(Stages { gap, reduced, decomposition, consts, cutoff, attractivity, problem })
    }

    pub fn ensemble_options(&self) -> EnsembleOptions {
        EnsembleOptions {
            directions: self.cfg.directions,
            perturbation: self.cfg.perturbation,
            horizon: self.cfg.horizon,
            seed: self.cfg.seed,
            ..EnsembleOptions::default()
        }
    }

    pub fn central_system(&self, stages: &Stages) -> Option<CentralSystem> {
        (stages.reduced.d_c() > 0).then(|| CentralSystem::new(stages.problem.clone(), self.cfg.radius))
    }

    fn header(&self, command: Command) -> serde_json::Map<String, Value> {
        let mut m = serde_json::Map::new();
        m.insert("command".into(), json!(command.name()));
        m.insert("config_hash".into(), json!(self.config_hash));
        m.insert("rng".into(), json!({ "algorithm": RNG_ALGORITHM, "seed": self.cfg.seed }));
        m.insert(
            "grid".into(),
            json!({ "h": num(self.grid.h), "window": num(self.grid.window()), "points": self.grid.len(), "rho": num(self.grid.rho) }),
        );
        m
    }
}

/// `(C, C1, alpha, eps_gap, eta, delta, L(delta), beta0)`; absent entries are null.
pub fn ledger(gap: Option<&GapConstants>, stages: Option<&Stages>) -> Value {
    let gap = stages.map(|s| &s.gap).or(gap);
    json!({
        "C": opt(stages.map(|s| s.decomposition.c)),
        "C1": opt(stages.map(|s| s.decomposition.c1)),
        "alpha": opt(gap.map(|g| g.alpha)),
        "eps_gap": opt(gap.map(|g| g.eps_gap)),
        "eta": opt(stages.map(|s| s.consts.eta)),
        "delta": opt(stages.map(|s| s.cutoff.delta)),
        "L_delta": opt(stages.map(|s| s.cutoff.lipschitz)),
        "beta0": opt(stages.map(|s| s.attractivity.beta0)),
    })
}

fn roots_json(summary: &SpectralSummary) -> Value {
    Value::Array(
        summary
            .roots
            .iter()
            .map(|r| {
                json!({
                    "lambda": cplx(r.lambda),
                    "multiplicity": r.multiplicity,
                    "det_residual": num(r.det_residual),
                    "class": r.classification.name(),
                })
            })
            .collect(),
    )
}

fn spectrum_json(summary: &SpectralSummary) -> Value {
    let r = summary.region;
    json!({
        "region": { "re_min": num(r.re_min), "re_max": num(r.re_max), "im_min": num(r.im_min), "im_max": num(r.im_max) },
        "winding_count": summary.winding_count,
        "roots": roots_json(summary),
        "n_u": summary.n_u,
        "n_c": summary.n_c,
        "n_s": summary.n_s,
        "hyperbolic": summary.hyperbolic,
    })
}

fn block_json(block: &ModalBlock) -> Value {
    json!({
        "dim": block.dim(),
        "lambdas": cvec(&block.basis.lambdas),
        "G": matrix(&block.g),
        "H": matrix(&block.h),
        "basis_residual": num(block.basis.residual),
        "duality_residual": num(block.dual.duality_residual),
    })
}

fn verdict_json(v: &StabilityVerdict) -> Value {
    json!({
        "classification": v.classification.name(),
        "horizon": num(v.horizon),
        "cubic": v.cubic.as_ref().map(|c| json!({ "coefficient": cplx(c.coefficient), "residual": num(c.residual) })),
        "mean_rate": opt(mean_rate(v)),
        "members": v.members.iter().map(|m| json!({
            "initial_norm": num(m.initial_norm),
            "final_norm": num(m.final_norm),
            "max_norm": num(m.max_norm),
            "escaped_at": opt(m.escaped_at),
            "fitted_rate": opt(m.fitted_rate),
            "decayed": m.decayed(),
        })).collect::<Vec<_>>(),
    })
}

fn reduction_json(rep: &ReductionReport) -> Value {
    json!({
        "branch": match rep.branch { Branch::Center => "center", Branch::Linearized => "linearized" },
        "reduced_verdict": rep.reduced_class().name(),
        "full_verdict": rep.full.classification.name(),
        "agreement": rep.agreement,
        "central": rep.central.as_ref().map(verdict_json),
        "linearized": rep.linearized.map(|c| c.name()),
        "full": verdict_json(&rep.full),
    })
}

pub fn run(command: Command, pipe: &Pipeline, out: &Path) -> Result<Outcome> {
    std::fs::create_dir_all(out)
        .map_err(|e| Error::Config { line: 0, message: format!("cannot create {}: {e}", out.display()) })?;
    let mut report = pipe.header(command);
    let mut files = Vec::new();
    let mut code = exit::OK;
    match command {
        Command::Spectrum => {
            report.insert("spectrum".into(), spectrum_json(&pipe.summary));
            let gap = pipe.gap().ok();
            match pipe.stages() {
                Ok(stages) => {
                    report.insert("ledger".into(), ledger(gap.as_ref(), Some(&stages)));
                }
                Err(e) => {
                    report.insert("ledger".into(), ledger(gap.as_ref(), None));
                    report.insert("ledger_error".into(), json!(e.to_string()));
                }
            }
        }
        Command::Decompose => {
            let stages = pipe.stages()?;
            let d = &stages.decomposition;
            report.insert("spectrum".into(), spectrum_json(&pipe.summary));
            report.insert("d_c".into(), json!(stages.reduced.d_c()));
            report.insert("d_u".into(), json!(stages.reduced.d_u()));
            report.insert("center".into(), block_json(&stages.reduced.center));
            report.insert("unstable".into(), block_json(&stages.reduced.unstable));
            report.insert(
                "constants".into(),
                json!({
                    "C": num(d.c),
                    "C1": num(d.c1),
                    "norm_center": num(d.norm_center),
                    "norm_stable": num(d.norm_stable),
                    "norm_unstable": num(d.norm_unstable),
                    "samples": d.sample_size,
                    "t_fit": num(d.t_fit),
                    "tail_ratio": num(d.tail_ratio),
                }),
            );
            report.insert("ledger".into(), ledger(None, Some(&stages)));
        }
        Command::Manifold => {
            let stages = pipe.stages()?;
            let (lattice, summary) = manifold_lattice(pipe, &stages)?;
            let path = out.join("manifold.csv");
            write_csv(&path, &lattice.0, &lattice.1)?;
            files.push(path);
            let a = &stages.attractivity;
            let c = &stages.cutoff;
            report.insert(
                "constants".into(),
                json!({
                    "delta": num(c.delta),
                    "delta_ceiling": num(c.delta1),
                    "eta": num(stages.consts.eta),
                    "eta_prime": num(stages.consts.eta_prime),
                    "t_path": num(stages.consts.t_path),
                    "zeta_star": num(c.zeta_star),
                    "zeta_star_half": num(c.zeta_star_half),
                    "derivative_bound": num(c.derivative_bound),
                    "smallness": num(c.smallness),
                    "L_delta": num(c.lipschitz),
                    "K": num(a.k_const),
                    "mu": num(a.mu),
                    "mu_prime": num(a.mu_prime),
                    "beta0": num(a.beta0),
                    "admissible": a.admissible(stages.consts.alpha),
                }),
            );
            report.insert("lattice".into(), summary);
            report.insert("ledger".into(), ledger(None, Some(&stages)));
        }
        Command::Central => {
            let stages = pipe.stages()?;
            let sys = pipe
                .central_system(&stages)
                .ok_or(Error::Dimension { expected: 1, found: 0 })?;
            let opts = pipe.ensemble_options();
            let verdict = infdelay::central::classify_zero_stability(&sys, &opts)?;
            let (header, rows) = central_orbit_rows(&sys, verdict.horizon)?;
            let path = out.join("central_orbit.csv");
            write_csv(&path, &header, &rows)?;
            files.push(path);
            report.insert("d_c".into(), json!(sys.d_c()));
            report.insert("radius".into(), num(sys.radius));
            report.insert("verdict".into(), verdict_json(&verdict));
            report.insert("ledger".into(), ledger(None, Some(&stages)));
        }
        Command::Simulate => {
            let (header, rows, sim) = simulate(pipe)?;
            let path = out.join("trajectory.csv");
            write_csv(&path, &header, &rows)?;
            files.push(path);
            report.insert("simulation".into(), sim);
            let gap = pipe.gap().ok();
            match pipe.stages() {
                Ok(stages) => report.insert("ledger".into(), ledger(gap.as_ref(), Some(&stages))),
                Err(e) => {
                    report.insert("ledger_error".into(), json!(e.to_string()));
                    report.insert("ledger".into(), ledger(gap.as_ref(), None))
                }
            };
        }
        Command::Verify => {
            let stages = pipe.stages()?;
            let sys = if stages.reduced.d_c() > 0 && stages.reduced.d_u() == 0 { pipe.central_system(&stages) } else { None };
            let rep = reduction_report(
                sys.as_ref(),
                &pipe.kernel,
                &pipe.summary,
                &stages.reduced,
                pipe.f.as_ref(),
                pipe.cfg.radius,
                &pipe.ensemble_options(),
            )?;
            report.insert("reduction".into(), reduction_json(&rep));
            if let Some(sys) = &sys {
                report.insert("attractivity".into(), attractivity(pipe, &stages, sys)?);
            }
            let expectation_met = pipe.cfg.expect.map(|e| {
                let stable = e == Expectation::Stable;
                rep.reduced_class().is_stable() == stable && rep.full.classification.is_stable() == stable
            });
            report.insert(
                "expect".into(),
                json!({
                    "expected": pipe.cfg.expect.map(|e| match e { Expectation::Stable => "stable", Expectation::Unstable => "unstable" }),
                    "met": expectation_met,
                }),
            );
            if !rep.agreement || expectation_met == Some(false) {
                code = exit::VERDICT;
            }
            report.insert("ledger".into(), ledger(None, Some(&stages)));
        }
    }
    report.insert("exit_code".into(), json!(code));
    let report = Value::Object(report);
    let path = out.join(format!("{}.json", command.name()));
    write_json(&path, &report)?;
    files.insert(0, path);
    Ok(Outcome { report, files, code })
}

/// CSV header and rows.
type Table = (Vec<String>, Vec<Vec<f64>>);

/// Lattice of `F_*` over the chart box `|u_i| <= 1.25 * 3 delta / col`: CSV header and rows,
/// plus a JSON summary.
fn manifold_lattice(pipe: &Pipeline, stages: &Stages) -> Result<(Table, Value)> {
    let map = ManifoldMap::center(stages.problem.clone(), pipe.cfg.radius);
    let dims = map.chart.dims();
    let mut header: Vec<String> = (1..=dims).map(|i| format!("u{i}")).collect();
    header.extend(["psi_norm", "F_norm", "iterations", "lipschitz_ratio", "L_delta"].map(String::from));
    if dims == 0 {
        let summary = json!({ "points": 0, "max_F_norm": num(0.0), "max_lipschitz_ratio": num(0.0), "max_iterations": 0, "F_at_zero": num(0.0) });
        return Ok(((header, vec![]), summary));
    }
    let problem = map.problem();
    let reduced = problem.reduced();
    let col = reduced.center.basis.columns.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1e-300);
    let extent = 1.25 * 3.0 * stages.cutoff.delta / col;
    let per_dim: usize = match dims {
        1 => 41,
        2 => 11,
        _ => 3,
    };
    let axis: Vec<f64> = (0..per_dim).map(|k| -extent + 2.0 * extent * k as f64 / (per_dim - 1) as f64).collect();
    let total = per_dim.pow(dims as u32);
    let index = |mut n: usize| -> Vec<usize> {
        (0..dims)
            .map(|_| {
                let k = n % per_dim;
                n /= per_dim;
                k
            })
            .collect()
    };
    let points: Vec<Vec<f64>> = (0..total).map(|n| index(n).iter().map(|&k| axis[k]).collect()).collect();
    let values: Vec<(Segment, usize)> = points
        .par_iter()
        .map(|u| {
            let psi = map.chart.from_coords(u);
            if problem.beyond_cutoff(&psi) {
                return Ok((Segment::zeros(problem.grid()), 0));
            }
            let fp = problem.solve_center_fixed_point(&psi)?;
            let i0 = fp.path.index_of(0.0).expect("center paths contain t = 0");
            Ok((fp.path.su_part(reduced, i0), fp.iterations))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(total);
    let (mut max_f, mut max_ratio, mut max_iter): (f64, f64, usize) = (0.0, 0.0, 0);
    for n in 0..total {
        let idx = index(n);
        let psi = map.chart.from_coords(&points[n]);
        let mut ratio: f64 = 0.0;
        let mut stride = 1;
        for &k in &idx {
            if k > 0 {
                let m = n - stride;
                let diff: Vec<C64> = psi.iter().zip(map.chart.from_coords(&points[m])).map(|(a, b)| a - b).collect();
                let den = reduced.center.segment(&diff).norm();
                if den > 0.0 {
                    ratio = ratio.max(values[n].0.sub(&values[m].0).norm() / den);
                }
            }
            stride *= per_dim;
        }
        let f_norm = values[n].0.norm();
        max_f = max_f.max(f_norm);
        max_ratio = max_ratio.max(ratio);
        max_iter = max_iter.max(values[n].1);
        let mut row = points[n].clone();
        row.extend([reduced.center.segment(&psi).norm(), f_norm, values[n].1 as f64, ratio, stages.cutoff.lipschitz]);
        rows.push(row);
    }
    let zero = problem.center_map(&vec![C64::from(0.0); reduced.d_c()])?.norm();
    let summary = json!({
        "points": total,
        "spacing": num(2.0 * extent / (per_dim - 1) as f64),
        "max_F_norm": num(max_f),
        "max_lipschitz_ratio": num(max_ratio),
        "max_iterations": max_iter,
        "F_at_zero": num(zero),
    });
    Ok(((header, rows), summary))
}

/// Orbit of the central equation from the largest ensemble sphere, first direction.
fn central_orbit_rows(sys: &CentralSystem, horizon: f64) -> Result<Table> {
    let chart = sys.chart();
    let mut u = vec![0.0; chart.dims()];
    u[0] = 1.0;
    let z = chart.from_coords(&u);
    let s = sys.size(&z);
    let z0: Vec<C64> = z.iter().map(|c| c * (sys.radius / 10.0 / s)).collect();
    let orbit = integrate_central(sys, &z0, horizon)?;
    let d = sys.d_c();
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|i| format!("re_z{i}")));
    header.extend((1..=d).map(|i| format!("im_z{i}")));
    header.push("phi_c_norm".into());
    // Every 10th step keeps long horizons manageable.
    let rows = orbit
        .states
        .iter()
        .enumerate()
        .filter(|(j, _)| j % 10 == 0 || *j + 1 == orbit.states.len())
        .map(|(j, z)| {
            let mut row = vec![orbit.time(j)];
            row.extend(z.iter().map(|c| c.re));
            row.extend(z.iter().map(|c| c.im));
            row.push(sys.size(z));
            row
        })
        .collect();
    Ok((header, rows))
}

/// Full-equation trajectory from `amplitude` times the first center mode (or the constant
/// history when there is none).
fn simulate(pipe: &Pipeline) -> Result<(Vec<String>, Vec<Vec<f64>>, Value)> {
    let grid = pipe.grid;
    let reduced = pipe.reduced()?;
    let base = match reduced.center.basis.columns.first() {
        Some(c) => c.clone(),
        None => Segment::constant(grid, &vec![C64::from(1.0); grid.dim]),
    };
    let phi = base.scaled(C64::from(pipe.cfg.amplitude / base.norm().max(1e-300)));
    let prop = Propagator::new(&pipe.kernel, grid);
    let opts = NonlinearOptions { escape_norm: Some(pipe.cfg.radius), ..NonlinearOptions::default() };
    let traj = solve_nonlinear_with(&prop, 0.0, &phi, pipe.f.as_ref(), pipe.cfg.t_end, opts)?;
    let norms = traj.segment_norms();
    let (start, len) = rate_fit_window(&pipe.summary, pipe.kernel.rho());
    let pts: Vec<(f64, f64)> = norms.iter().copied().filter(|(t, y)| *t >= start && *t <= start + len && *y > 0.0).collect();
    let rate = (pts.len() >= 2).then(|| infdelay::manifold::fit_log_slope(&pts));
    let sim = json!({
        "t_end": num(traj.t_end()),
        "amplitude": num(pipe.cfg.amplitude),
        "initial_norm": num(norms[0].1),
        "final_norm": num(norms.last().expect("nonempty").1),
        "max_norm": num(norms.iter().map(|p| p.1).fold(0.0, f64::max)),
        "escaped_at": opt(traj.escaped_at),
        "fit_window": [num(start), num(start + len)],
        "fitted_rate": opt(rate),
    });
    Ok((traj.csv_header(), traj.csv_rows(), sim))
}

/// Off-manifold start `Phi_c z0 + b` with `||Phi_c z0|| = delta / 2` and a stable bump of norm
/// `delta / 4`, followed for `t <= 10`.
fn attractivity(pipe: &Pipeline, stages: &Stages, sys: &CentralSystem) -> Result<Value> {
    let reduced = &stages.reduced;
    let grid = reduced.grid;
    let delta = stages.cutoff.delta;
    let chart = sys.chart();
    let mut u = vec![0.0; chart.dims()];
    u[0] = 1.0;
    let z = chart.from_coords(&u);
    let s = sys.size(&z);
    let z0: Vec<C64> = z.iter().map(|c| c * (0.5 * delta / s)).collect();
    let bump = project_stable(reduced, &Segment::from_fn(grid, |th| vec![C64::from((1.0 + th).max(0.0)); grid.dim]));
    let phi = reduced.center.segment(&z0).axpy(C64::from(0.25 * delta / bump.norm().max(1e-300)), &bump);
    let prop = Propagator::new(&pipe.kernel, grid);
    let traj = solve_nonlinear_with(&prop, 0.0, &phi, pipe.f.as_ref(), 10.0, NonlinearOptions::default())?;
    let map = ManifoldMap::center(stages.problem.clone(), pipe.cfg.radius);
    let rep = attractivity_diagnostics(&map, &traj, 10.0, 0.5, 1.5)?;
    Ok(json!({
        "beta0": num(rep.constants.beta0),
        "fitted_rate": num(rep.fitted_rate),
        "max_bound_ratio": num(rep.max_bound_ratio),
        "satisfied": rep.satisfied,
        "left_region_at": opt(rep.left_region_at),
        "xi": rep.xi.iter().map(|(t, v)| json!([num(*t), num(*v)])).collect::<Vec<_>>(),
    }))
}
