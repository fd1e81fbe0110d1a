//! The central equation `z' = G_c z + H_c f(Phi_c z + F(Phi_c z))`, its integration, and
//! ensemble-based stability verdicts for it and for the full equation.

use crate::decomposition::{project_stable, ReducedSystem};
use crate::error::{Error, Result};
use crate::kernel::{KernelModel, Nonlinearity};
use crate::linalg::{vec_norm, C64, ZERO};
use crate::manifold::{fit_log_slope, Chart, CutoffNonlinearity, ManifoldMap, ManifoldProblem};
use crate::phasespace::{solve_nonlinear_with, NonlinearOptions, Propagator, Segment};
use crate::spectral::SpectralSummary;
use rand::Rng;
use rayon::prelude::*;
use std::sync::Arc;

pub struct CentralSystem {
    pub reduced: Arc<ReducedSystem>,
    pub map: Arc<ManifoldMap>,
    f: Arc<dyn Nonlinearity>,
    cutoff: CutoffNonlinearity,
    /// Validity radius: `||Phi_c z||_X <= radius` uses `f`, beyond it `f_delta`.
    pub radius: f64,
    /// RK4 step.
    pub h_ode: f64,
}

impl CentralSystem {
    pub fn new(problem: Arc<ManifoldProblem>, radius: f64) -> Self {
        let reduced = problem.reduced_arc();
        let f = problem.nonlinearity();
        let cutoff = problem.cutoff_nonlinearity();
        let h_ode = reduced.grid.h.min(0.01);
        let map = Arc::new(ManifoldMap::center(problem, radius));
        Self { reduced, map, f, cutoff, radius, h_ode }
    }

    pub fn d_c(&self) -> usize {
        self.reduced.d_c()
    }

    pub fn chart(&self) -> Chart {
        self.map.chart
    }

    /// `||Phi_c z||_X`.
    pub fn size(&self, z: &[C64]) -> f64 {
        self.reduced.center.segment(z).norm()
    }
}

pub fn central_rhs(sys: &CentralSystem, z: &[C64]) -> Result<Vec<C64>> {
    let block = &sys.reduced.center;
    let mut x = block.segment(z);
    let inside = x.norm() <= sys.radius;
    if !sys.map.problem().beyond_cutoff(z) {
        x.add_scaled(C64::from(1.0), &sys.map.eval_interpolated(z)?);
    }
    let fx = if inside { sys.f.eval(&x) } else { sys.cutoff.eval(&x) };
    let gz = block.flow_generator(z);
    Ok(gz.iter().zip(block.inject(&fx)).map(|(a, b)| a + b).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CubicFit {
    pub coefficient: C64,
    /// Relative least-squares residual of `rhs - G z = c z^3`.
    pub residual: f64,
}

/// Fits `rhs(z) - G z = c z^3` on `z in {0.02, 0.04, 0.06, 0.08}`.
pub fn fit_cubic_coefficient(sys: &CentralSystem) -> Result<CubicFit> {
    if sys.d_c() != 1 {
        return Err(Error::Dimension { expected: 1, found: sys.d_c() });
    }
    let mut num = ZERO;
    let mut den = 0.0;
    let mut pairs = Vec::new();
    for z in [0.02, 0.04, 0.06, 0.08] {
        let zc = [C64::from(z)];
        let rhs = central_rhs(sys, &zc)?[0] - sys.reduced.center.flow_generator(&zc)[0];
        let z3 = z * z * z;
        num += rhs * z3;
        den += z3 * z3;
        pairs.push((rhs, z3));
    }
    let c = num / den;
    let res: f64 = pairs.iter().map(|(r, z3)| (r - c * z3).norm_sqr()).sum::<f64>().sqrt();
    let size: f64 = pairs.iter().map(|(r, _)| r.norm_sqr()).sum::<f64>().sqrt();
    Ok(CubicFit { coefficient: c, residual: if size > 0.0 { res / size } else { 0.0 } })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CentralOrbit {
    pub h: f64,
    pub states: Vec<Vec<C64>>,
    /// First time with `||Phi_c z|| > radius`; integration stops there.
    pub exited_at: Option<f64>,
}

impl CentralOrbit {
    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.h
    }

    pub fn final_state(&self) -> &[C64] {
        self.states.last().expect("orbit has its initial point")
    }
}

/// Classical RK4 with step `min(h, 0.01)`.
pub fn integrate_central(sys: &CentralSystem, z0: &[C64], t_end: f64) -> Result<CentralOrbit> {
    let h = sys.h_ode;
    let steps = (t_end / h).round() as usize;
    let mut states = Vec::with_capacity(steps + 1);
    states.push(z0.to_vec());
    let mut z = z0.to_vec();
    let add = |a: &[C64], b: &[C64], s: f64| -> Vec<C64> { a.iter().zip(b).map(|(x, y)| x + y * s).collect() };
    for j in 1..=steps {
        let k1 = central_rhs(sys, &z)?;
        let k2 = central_rhs(sys, &add(&z, &k1, 0.5 * h))?;
        let k3 = central_rhs(sys, &add(&z, &k2, 0.5 * h))?;
        let k4 = central_rhs(sys, &add(&z, &k3, h))?;
        for i in 0..z.len() {
            z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        states.push(z.clone());
        if sys.size(&z) > sys.radius {
            return Ok(CentralOrbit { h, states, exited_at: Some(j as f64 * h) });
        }
    }
    Ok(CentralOrbit { h, states, exited_at: None })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StabilityClass {
    UniformlyAsymptoticallyStable,
    ExponentiallyStable,
    Unstable,
    Inconclusive,
}

impl StabilityClass {
    pub fn name(&self) -> &'static str {
        match self {
            StabilityClass::UniformlyAsymptoticallyStable => "uniformly_asymptotically_stable",
            StabilityClass::ExponentiallyStable => "exponentially_stable",
            StabilityClass::Unstable => "unstable",
            StabilityClass::Inconclusive => "inconclusive",
        }
    }

    pub fn is_stable(&self) -> bool {
        matches!(self, StabilityClass::UniformlyAsymptoticallyStable | StabilityClass::ExponentiallyStable)
    }

    /// Same verdict up to the kind of stability.
    pub fn agrees(&self, other: &Self) -> bool {
        self == other || (self.is_stable() && other.is_stable())
    }
}

/// Outcome of one ensemble member.
#[derive(Clone, Debug, PartialEq)]
pub struct MemberEvidence {
    pub initial_norm: f64,
    pub final_norm: f64,
    pub max_norm: f64,
    pub escaped_at: Option<f64>,
    /// Fitted exponential rate of the norm, where computed.
    pub fitted_rate: Option<f64>,
}

impl MemberEvidence {
    pub fn decayed(&self) -> bool {
        self.escaped_at.is_none() && self.final_norm <= 0.5 * self.initial_norm && self.max_norm <= 2.0 * self.initial_norm
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityVerdict {
    pub classification: StabilityClass,
    pub horizon: f64,
    pub members: Vec<MemberEvidence>,
    pub cubic: Option<CubicFit>,
}

fn verdict_from(members: Vec<MemberEvidence>, horizon: f64, cubic: Option<CubicFit>, stable: StabilityClass) -> StabilityVerdict {
    let classification = if members.iter().any(|m| m.escaped_at.is_some()) {
        StabilityClass::Unstable
    } else if !members.is_empty() && members.iter().all(|m| m.decayed()) {
        stable
    } else {
        StabilityClass::Inconclusive
    };
    StabilityVerdict { classification, horizon, members, cubic }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleOptions {
    /// Directions per sphere when the chart has more than one real dimension.
    pub directions: usize,
    /// Relative size of the stable perturbation added to full-equation initial data.
    pub perturbation: f64,
    /// Overrides the horizon rule when set.
    pub horizon: Option<f64>,
    /// Initial norm of full-equation members in the hyperbolic branch.
    pub hyperbolic_amplitude: f64,
    /// Escape threshold of those members, relative to their initial norm.
    pub hyperbolic_escape: f64,
    pub seed: u64,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self { directions: 8, perturbation: 0.1, horizon: None, hyperbolic_amplitude: 1e-8, hyperbolic_escape: 1e6, seed: 0 }
    }
}

/// Ensemble initial points on the spheres `||Phi_c z|| in {r/50, r/20, r/10}`.
pub fn ensemble_points(sys: &CentralSystem, opts: &EnsembleOptions, rng: &mut impl Rng) -> Vec<Vec<C64>> {
    let chart = sys.chart();
    let dims = chart.dims();
    let dirs: Vec<Vec<f64>> = match dims {
        0 => vec![],
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..opts.directions)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / opts.directions as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => (0..opts.directions)
            .map(|_| {
                let v: Vec<f64> = (0..dims).map(|_| rng.random_range(-1.0..1.0)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|x| x / n).collect()
            })
            .collect(),
    };
    let mut out = Vec::new();
    for frac in [1.0 / 50.0, 1.0 / 20.0, 1.0 / 10.0] {
        for d in &dirs {
            let z = chart.from_coords(d);
            let s = sys.size(&z);
            out.push(z.iter().map(|c| c * (frac * sys.radius / s)).collect());
        }
    }
    out
}

/// Rounds up to a multiple of the history grid step.
fn snap(t: f64, h: f64) -> f64 {
    (t / h - 1e-9).ceil() * h
}

/// `clamp(2 / (|c| s^2), 100 h, 1e5 h)` with `s = r/50` in chart units: the time in which
/// `z' = c z^3` shrinks the smallest sphere by more than half.
pub fn default_horizon(sys: &CentralSystem, cubic: Option<&CubicFit>) -> f64 {
    let (lo, hi) = (100.0 * sys.h_ode, 1e5 * sys.h_ode);
    let Some(c) = cubic.map(|c| c.coefficient.norm()).filter(|c| *c > 1e-12) else {
        return hi;
    };
    let unit = sys.reduced.center.basis.columns.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1e-300);
    let s = sys.radius / 50.0 / unit;
    snap((2.0 / (c * s * s)).clamp(lo, hi), sys.reduced.grid.h)
}

pub fn classify_zero_stability(sys: &CentralSystem, opts: &EnsembleOptions) -> Result<StabilityVerdict> {
    let cubic = if sys.d_c() == 1 { Some(fit_cubic_coefficient(sys)?) } else { None };
    let horizon = opts.horizon.unwrap_or_else(|| default_horizon(sys, cubic.as_ref()));
    let mut rng = crate::rng(opts.seed, 3);
    let points = ensemble_points(sys, opts, &mut rng);
    let members: Result<Vec<MemberEvidence>> = points
        .par_iter()
        .map(|z0| {
            let orbit = integrate_central(sys, z0, horizon)?;
            let norms: Vec<f64> = orbit.states.iter().map(|z| sys.size(z)).collect();
            Ok(MemberEvidence {
                initial_norm: norms[0],
                final_norm: *norms.last().expect("nonempty"),
                max_norm: norms.iter().copied().fold(0.0, f64::max),
                escaped_at: orbit.exited_at,
                fitted_rate: None,
            })
        })
        .collect();
    Ok(verdict_from(members?, horizon, cubic, StabilityClass::UniformlyAsymptoticallyStable))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    /// Nontrivial center spectrum and no unstable roots: the central equation decides.
    Center,
    /// The linearization decides.
    Linearized,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReductionReport {
    pub branch: Branch,
    pub central: Option<StabilityVerdict>,
    pub linearized: Option<StabilityClass>,
    pub full: StabilityVerdict,
    pub agreement: bool,
}

impl ReductionReport {
    /// The verdict the full-equation ensemble is compared against.
    pub fn reduced_class(&self) -> StabilityClass {
        match (&self.central, self.linearized) {
            (Some(v), _) => v.classification,
            (None, Some(c)) => c,
            _ => StabilityClass::Inconclusive,
        }
    }
}

/// Linearized verdict: unstable roots make zero unstable, a spectrum strictly in the left
/// half plane makes it exponentially stable.
pub fn linearized_class(summary: &SpectralSummary) -> StabilityClass {
    if summary.n_u > 0 {
        StabilityClass::Unstable
    } else if summary.n_c == 0 {
        StabilityClass::ExponentiallyStable
    } else {
        StabilityClass::Inconclusive
    }
}

/// Starting time and length of the window used to fit exponential rates: the transient decays
/// relative to the leading mode at the spectral distance to the next root or to `-rho`.
pub fn rate_fit_window(summary: &SpectralSummary, rho: f64) -> (f64, f64) {
    let mut re: Vec<f64> = summary.roots.iter().map(|r| r.lambda.re).collect();
    re.sort_by(|a, b| b.total_cmp(a));
    let lead = re.first().copied().unwrap_or(-rho);
    let next = re.iter().copied().find(|x| *x < lead - 1e-9).unwrap_or(-rho).max(-rho);
    let gap = (lead - next).max(1e-3);
    let start = (5.0 / gap).clamp(1.0, 40.0);
    (start, if lead > 0.0 { 10.0 } else { 40.0 })
}

/// Both verdicts: central-equation ensemble (or linearization) and full-equation simulation.
pub fn reduction_report(
    sys: Option<&CentralSystem>,
    kernel: &KernelModel,
    summary: &SpectralSummary,
    reduced: &ReducedSystem,
    f: &dyn Nonlinearity,
    radius: f64,
    opts: &EnsembleOptions,
) -> Result<ReductionReport> {
    let grid = reduced.grid;
    let prop = Propagator::new(kernel, grid);
    let center_branch = summary.n_c > 0 && summary.n_u == 0;
    if center_branch {
        let sys = sys.ok_or(Error::Dimension { expected: summary.n_c, found: 0 })?;
        let central = classify_zero_stability(sys, opts)?;
        let mut rng = crate::rng(opts.seed, 3);
        let points = ensemble_points(sys, opts, &mut rng);
        let bump = project_stable(
            reduced,
            &Segment::from_fn(grid, |th| vec![C64::from((1.0 + th).max(0.0)); grid.dim]),
        );
        let bump_norm = bump.norm().max(1e-300);
        let horizon = central.horizon;
        let members: Result<Vec<MemberEvidence>> = points
            .par_iter()
            .map(|z0| {
                let pc = reduced.center.segment(z0);
                let phi = pc.axpy(C64::from(opts.perturbation * pc.norm() / bump_norm), &bump);
                simulate_member(&prop, &phi, f, horizon, radius, None)
            })
            .collect();
        let full = verdict_from(members?, horizon, None, StabilityClass::UniformlyAsymptoticallyStable);
        let agreement = full.classification.agrees(&central.classification);
        return Ok(ReductionReport { branch: Branch::Center, central: Some(central), linearized: None, full, agreement });
    }
    let lin = linearized_class(summary);
    let (start, len) = rate_fit_window(summary, kernel.rho());
    let horizon = opts.horizon.unwrap_or_else(|| snap(start + len + 20.0, grid.h));
    let mut rng = crate::rng(opts.seed, 4);
    let samples = crate::decomposition::random_segments(grid, 6, kernel.is_real() && f.preserves_real(), &mut rng);
    let members: Result<Vec<MemberEvidence>> = samples
        .par_iter()
        .map(|s| {
            let phi = s.scaled(C64::from(opts.hyperbolic_amplitude / s.norm().max(1e-300)));
            let escape = (opts.hyperbolic_amplitude * opts.hyperbolic_escape).min(radius);
            simulate_member(&prop, &phi, f, horizon, escape, Some((start, start + len)))
        })
        .collect();
    let stable = if lin == StabilityClass::ExponentiallyStable { lin } else { StabilityClass::UniformlyAsymptoticallyStable };
    let full = verdict_from(members?, horizon, None, stable);
    let agreement = full.classification.agrees(&lin);
    Ok(ReductionReport { branch: Branch::Linearized, central: None, linearized: Some(lin), full, agreement })
}

fn simulate_member(
    prop: &Propagator,
    phi: &Segment,
    f: &dyn Nonlinearity,
    horizon: f64,
    radius: f64,
    fit: Option<(f64, f64)>,
) -> Result<MemberEvidence> {
    let opts = NonlinearOptions { escape_norm: Some(radius), ..NonlinearOptions::default() };
    let traj = match solve_nonlinear_with(prop, 0.0, phi, f, horizon, opts) {
        Ok(t) => t,
        Err(Error::BlowUp { t, .. }) => {
            return Ok(MemberEvidence {
                initial_norm: phi.norm(),
                final_norm: f64::INFINITY,
                max_norm: f64::INFINITY,
                escaped_at: Some(t),
                fitted_rate: None,
            })
        }
        Err(e) => return Err(e),
    };
    let norms = traj.segment_norms();
    let fitted_rate = fit.map(|(a, b)| {
        let pts: Vec<(f64, f64)> = norms.iter().copied().filter(|(t, y)| *t >= a && *t <= b && *y < radius).collect();
        fit_log_slope(&pts)
    });
    Ok(MemberEvidence {
        initial_norm: norms[0].1,
        final_norm: norms.last().expect("nonempty").1,
        max_norm: norms.iter().map(|p| p.1).fold(0.0, f64::max),
        escaped_at: traj.escaped_at,
        fitted_rate,
    })
}

/// Mean fitted rate of the members that have one.
pub fn mean_rate(verdict: &StabilityVerdict) -> Option<f64> {
    let rates: Vec<f64> = verdict.members.iter().filter_map(|m| m.fitted_rate).filter(|r| r.is_finite()).collect();
    (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64)
}

/// `||<<Psi_c, x_t>> - z(t)||` along the full trajectory started from
/// `Phi_c z0 + F(Phi_c z0)`, sampled at the orbit's times up to `t_max`.
pub fn reconstruction_gap(sys: &CentralSystem, kernel: &KernelModel, z0: &[C64], t_max: f64) -> Result<f64> {
    let grid = sys.reduced.grid;
    let orbit = integrate_central(sys, z0, t_max)?;
    let phi = sys.reduced.center.segment(z0).axpy(C64::from(1.0), &sys.map.eval(z0)?);
    let prop = Propagator::new(kernel, grid);
    let traj = solve_nonlinear_with(&prop, 0.0, &phi, sys.f.as_ref(), t_max, NonlinearOptions::default())?;
    let mut worst: f64 = 0.0;
    for j in 0..traj.len() {
        let t = traj.time(j);
        let k = ((t / orbit.h).round() as usize).min(orbit.states.len() - 1);
        let z = sys.reduced.center.coordinates(&traj.segment(j));
        let d: Vec<C64> = z.iter().zip(&orbit.states[k]).map(|(a, b)| a - b).collect();
        worst = worst.max(vec_norm(&d));
    }
    Ok(worst)
}
