//! Cutoff nonlinearity, center manifolds as fixed points of the variation-of-constants map on
//! exponentially weighted path spaces, tangent maps, local stable/unstable graphs and
//! attractivity diagnostics.
//!
//! A path `t -> y(t)` is stored by spectral component: center coordinates, unstable
//! coordinates and the stable segment at every time `t_j = j h`. The three integrals of the
//! contraction map are evaluated as follows:
//! * center: `z(t) = e^{tG} psi + int_0^t e^{(t-s)G} H p(s) ds` by the trapezoid rule with
//!   exact exponentials, marching away from `t = 0`;
//! * unstable: `z(t) = -int_t^inf e^{(t-s)G} H p(s) ds`, marching backward from the right end;
//! * stable: the forced equation is stepped from zero history at the left end and the center
//!   and unstable parts are projected out after every step.

use crate::decomposition::{project_stable, random_segments, ModalBlock, ReducedSystem};
use crate::error::{Error, Result};
use crate::kernel::{FormTag, KernelModel, Nonlinearity};
use crate::linalg::{vec_norm, C64, ZERO};
use crate::phasespace::{Grid, Propagator, Segment, Trajectory};
use crate::spectral::GapConstants;
use rand::Rng;
use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

/// `sup |chi'|` for the quintic profile.
pub const CHI_SLOPE: f64 = 1.875;

/// Equal to 1 on `[0, 2]` and 0 on `[3, inf)`, with a quintic smoothstep in between.
pub fn chi(t: f64) -> f64 {
    let t = t.abs();
    if t <= 2.0 {
        1.0
    } else if t >= 3.0 {
        0.0
    } else {
        let s = t - 2.0;
        1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }
}

pub fn chi_derivative(t: f64) -> f64 {
    let a = t.abs();
    if a <= 2.0 || a >= 3.0 {
        0.0
    } else {
        let s = a - 2.0;
        -30.0 * s * s * (1.0 - s) * (1.0 - s) * t.signum()
    }
}

/// Directional derivative of the weighted L1 norm at `u` along `v`.
fn norm_derivative(u: &Segment, v: &Segment) -> f64 {
    let grid = u.grid();
    let m = grid.dim;
    let w = grid.norm_weights();
    let (uv, vv) = (u.values(), v.values());
    let mut acc = 0.0;
    for k in 0..grid.len() {
        let uk = &uv[k * m..(k + 1) * m];
        let nu = vec_norm(uk);
        if nu > 0.0 {
            let dot: f64 = uk.iter().zip(&vv[k * m..(k + 1) * m]).map(|(a, b)| (a.conj() * b).re).sum();
            acc += w[k] * dot / nu;
        }
    }
    acc
}

/// Constants shared by every fixed-point problem of one configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ManifoldConstants {
    pub c: f64,
    pub c1: f64,
    pub alpha: f64,
    pub eps_gap: f64,
    pub eta: f64,
    /// Weight used for tangent maps, between `eta` and `alpha`.
    pub eta_prime: f64,
    pub path_tail_tol: f64,
    pub t_path: f64,
    pub fp_tol: f64,
    pub max_iter: usize,
}

impl ManifoldConstants {
    pub fn new(c: f64, c1: f64, gap: GapConstants) -> Self {
        let eta = 0.5 * (gap.eps_gap + gap.alpha);
        let path_tail_tol = 1e-6;
        Self {
            c,
            c1,
            alpha: gap.alpha,
            eps_gap: gap.eps_gap,
            eta,
            eta_prime: 0.5 * (eta + gap.alpha),
            path_tail_tol,
            t_path: (1.0 / path_tail_tol).ln() / (gap.alpha - eta),
            fp_tol: 1e-8,
            max_iter: 200,
        }
    }

    /// Multiplier of `zeta_*` in the smallness condition (must stay below 1/2).
    pub fn smallness_factor(&self) -> f64 {
        let (a, e, n) = (self.alpha, self.eps_gap, self.eta);
        self.c * self.c1 * (1.0 / (n - e) + 2.0 / (a + n) + 2.0 / (a - n))
    }

    /// `L(delta) / zeta_*(delta)`.
    pub fn lipschitz_factor(&self) -> f64 {
        4.0 * self.c * self.c * self.c1 / (self.alpha - self.eta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutoffConfig {
    pub delta: f64,
    /// Ceiling the search started from.
    pub delta1: f64,
    pub zeta_star: f64,
    /// `zeta_*(delta / 2)`, recorded for the monotonicity check.
    pub zeta_star_half: f64,
    /// Sampled `sup ||Df||` over the `3 delta` ball.
    pub derivative_bound: f64,
    pub chi_slope: f64,
    /// `zeta_*(delta)` times the smallness factor.
    pub smallness: f64,
    /// `L(delta)`, the Lipschitz bound of the manifold graph.
    pub lipschitz: f64,
}

/// `sup ||Df(phi)||` over probes rescaled to norms `3 delta {1/4, 1/2, 3/4, 1}`.
pub fn derivative_sup(f: &dyn Nonlinearity, probes: &[Segment], delta: f64) -> f64 {
    let mut sup: f64 = 0.0;
    if f.form() == FormTag::Zero {
        return 0.0;
    }
    for p in probes {
        let n = p.norm();
        if n == 0.0 {
            continue;
        }
        for frac in [0.25, 0.5, 0.75, 1.0] {
            let phi = p.scaled(C64::from(3.0 * delta * frac / n));
            sup = sup.max(f.derivative(&phi).op_norm());
        }
    }
    sup
}

pub fn zeta_star(f: &dyn Nonlinearity, probes: &[Segment], delta: f64) -> f64 {
    derivative_sup(f, probes, delta) * (1.0 + 3.0 * CHI_SLOPE)
}

/// Basis columns of both finite-dimensional parts, a hat at `theta = 0` per component and
/// `extra` random histories.
pub fn default_probes(reduced: &ReducedSystem, real: bool, extra: usize, rng: &mut impl Rng) -> Vec<Segment> {
    let grid = reduced.grid;
    let mut out: Vec<Segment> = reduced.center.basis.columns.clone();
    out.extend(reduced.unstable.basis.columns.iter().cloned());
    for j in 0..grid.dim {
        let mut v = vec![ZERO; grid.dim];
        v[j] = C64::from(1.0);
        out.push(Segment::from_profile(grid, &v, |th| C64::from((1.0 + th / grid.h).max(0.0))));
    }
    out.extend(random_segments(grid, extra, real, rng));
    out
}

/// Largest `delta <= ceiling` (to relative precision 1e-6) for which the smallness
/// condition holds and `L(delta) <= 1`, found by bisection in `log delta`.
pub fn select_delta(
    consts: &ManifoldConstants,
    f: &dyn Nonlinearity,
    probes: &[Segment],
    ceiling: f64,
) -> Result<CutoffConfig> {
    if !(consts.eps_gap < consts.eta && consts.eta < consts.alpha) {
        return Err(Error::DegenerateGap(consts.alpha));
    }
    let evaluate = |delta: f64| -> (f64, f64, f64) {
        let sup = derivative_sup(f, probes, delta);
        let z = sup * (1.0 + 3.0 * CHI_SLOPE);
        (z, z * consts.smallness_factor(), z * consts.lipschitz_factor())
    };
    let ok = |delta: f64| {
        let (_, s, l) = evaluate(delta);
        s < 0.5 && l <= 1.0
    };
    let delta = if ok(ceiling) {
        ceiling
    } else {
        let mut lo = 1e-12;
        if !ok(lo) {
            return Err(Error::NoAdmissibleDelta);
        }
        let mut hi = ceiling;
        while hi / lo > 1.0 + 1e-6 {
            let mid = (lo * hi).sqrt();
            if ok(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let (zeta, smallness, lipschitz) = evaluate(delta);
    Ok(CutoffConfig {
        delta,
        delta1: ceiling,
        zeta_star: zeta,
        zeta_star_half: evaluate(0.5 * delta).0,
        derivative_bound: derivative_sup(f, probes, delta),
        chi_slope: CHI_SLOPE,
        smallness,
        lipschitz,
    })
}

/// `f_delta(phi) = chi(||Pi^su phi|| / delta) chi(||Pi^c phi|| / delta) f(phi)`.
pub fn cutoff_apply(cfg: &CutoffConfig, reduced: &ReducedSystem, f: &dyn Nonlinearity, phi: &Segment) -> Vec<C64> {
    let (_, pc) = crate::decomposition::project_center(reduced, phi);
    let su = phi.sub(&pc);
    cutoff_parts(cfg.delta, f, &pc, &su)
}

fn cutoff_parts(delta: f64, f: &dyn Nonlinearity, center: &Segment, su: &Segment) -> Vec<C64> {
    let a = chi(su.norm() / delta) * chi(center.norm() / delta);
    if a == 0.0 {
        return vec![ZERO; center.grid().dim];
    }
    let full = center.axpy(C64::from(1.0), su);
    f.eval(&full).into_iter().map(|z| z * a).collect()
}

/// Derivative of `f_delta` at `(center, su)` along `(dc, dsu)`.
fn cutoff_linearized(
    delta: f64,
    f: &dyn Nonlinearity,
    center: &Segment,
    su: &Segment,
    dc: &Segment,
    dsu: &Segment,
) -> Vec<C64> {
    let (nc, ns) = (center.norm() / delta, su.norm() / delta);
    let (a, b) = (chi(ns), chi(nc));
    let (da, db) = (chi_derivative(ns), chi_derivative(nc));
    let m = center.grid().dim;
    if a * b == 0.0 && da == 0.0 && db == 0.0 {
        return vec![ZERO; m];
    }
    let full = center.axpy(C64::from(1.0), su);
    let dfull = dc.axpy(C64::from(1.0), dsu);
    let mut out: Vec<C64> = f.directional_derivative(&full, &dfull).into_iter().map(|z| z * (a * b)).collect();
    let scale = da / delta * norm_derivative(su, dsu) * b + a * db / delta * norm_derivative(center, dc);
    if scale != 0.0 {
        for (o, v) in out.iter_mut().zip(f.eval(&full)) {
            *o += v * scale;
        }
    }
    out
}

/// `f_delta` as a nonlinearity in its own right, for simulating the modified equation.
#[derive(Clone)]
pub struct CutoffNonlinearity {
    pub delta: f64,
    reduced: Arc<ReducedSystem>,
    inner: Arc<dyn Nonlinearity>,
}

impl CutoffNonlinearity {
    pub fn new(delta: f64, reduced: Arc<ReducedSystem>, inner: Arc<dyn Nonlinearity>) -> Self {
        Self { delta, reduced, inner }
    }

    fn split(&self, phi: &Segment) -> (Segment, Segment) {
        let (_, pc) = crate::decomposition::project_center(&self.reduced, phi);
        let su = phi.sub(&pc);
        (pc, su)
    }
}

impl Nonlinearity for CutoffNonlinearity {
    fn eval(&self, phi: &Segment) -> Vec<C64> {
        let (pc, su) = self.split(phi);
        cutoff_parts(self.delta, self.inner.as_ref(), &pc, &su)
    }

    fn form(&self) -> FormTag {
        self.inner.form()
    }

    fn preserves_real(&self) -> bool {
        self.inner.preserves_real()
    }

    fn directional_derivative(&self, phi: &Segment, dir: &Segment) -> Vec<C64> {
        let (pc, su) = self.split(phi);
        let (dc, dsu) = self.split(dir);
        cutoff_linearized(self.delta, self.inner.as_ref(), &pc, &su, &dc, &dsu)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ManifoldKind {
    Center,
    Stable,
    Unstable,
}

impl ManifoldKind {
    pub fn name(&self) -> &'static str {
        match self {
            ManifoldKind::Center => "center",
            ManifoldKind::Stable => "stable",
            ManifoldKind::Unstable => "unstable",
        }
    }
}

/// A path `t -> y(t)` on `t_j = j h`, `j_lo <= j <= j_hi`, stored by spectral component.
#[derive(Clone, Debug)]
pub struct WeightedPath {
    pub j_lo: i64,
    pub h: f64,
    pub center: Vec<Vec<C64>>,
    pub unstable: Vec<Vec<C64>>,
    pub stable: Vec<Segment>,
    /// `f_delta(y(t_j))`, or its linearization for tangent terms; input of the next step.
    pub forcing: Vec<Vec<C64>>,
}

impl WeightedPath {
    pub fn len(&self) -> usize {
        self.stable.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stable.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        (self.j_lo + i as i64) as f64 * self.h
    }

    pub fn index_of(&self, t: f64) -> Option<usize> {
        let j = (t / self.h).round() as i64 - self.j_lo;
        (j >= 0 && (j as usize) < self.len()).then_some(j as usize)
    }

    pub fn center_part(&self, reduced: &ReducedSystem, i: usize) -> Segment {
        reduced.center.segment(&self.center[i])
    }

    /// `Pi^su y(t_i)`.
    pub fn su_part(&self, reduced: &ReducedSystem, i: usize) -> Segment {
        let mut s = self.stable[i].clone();
        for (col, c) in reduced.unstable.basis.columns.iter().zip(&self.unstable[i]) {
            s.add_scaled(*c, col);
        }
        s
    }

    pub fn segment(&self, reduced: &ReducedSystem, i: usize) -> Segment {
        let mut s = self.su_part(reduced, i);
        for (col, c) in reduced.center.basis.columns.iter().zip(&self.center[i]) {
            s.add_scaled(*c, col);
        }
        s
    }

    /// `a self + b other` (the forcing is combined the same way).
    pub fn lincomb(&self, a: f64, other: &Self, b: f64) -> Self {
        let mix = |x: &[Vec<C64>], y: &[Vec<C64>]| -> Vec<Vec<C64>> {
            x.iter().zip(y).map(|(u, v)| u.iter().zip(v).map(|(p, q)| p * a + q * b).collect()).collect()
        };
        Self {
            j_lo: self.j_lo,
            h: self.h,
            center: mix(&self.center, &other.center),
            unstable: mix(&self.unstable, &other.unstable),
            stable: self
                .stable
                .iter()
                .zip(&other.stable)
                .map(|(u, v)| u.scaled(C64::from(a)).axpy(C64::from(b), v))
                .collect(),
            forcing: mix(&self.forcing, &other.forcing),
        }
    }

    /// `sup_j ||y(t_j)||_X e^{-eta |t_j|}`.
    pub fn weighted_norm(&self, reduced: &ReducedSystem, eta: f64) -> f64 {
        (0..self.len())
            .map(|i| self.segment(reduced, i).norm() * (-eta * self.time(i).abs()).exp())
            .fold(0.0, f64::max)
    }

    pub fn distance(&self, other: &Self, reduced: &ReducedSystem, eta: f64) -> f64 {
        self.lincomb(1.0, other, -1.0).weighted_norm(reduced, eta)
    }

    /// Weighted norm at the two truncation ends.
    pub fn tail_contribution(&self, reduced: &ReducedSystem, eta: f64) -> f64 {
        let last = self.len() - 1;
        [0, last]
            .iter()
            .map(|&i| self.segment(reduced, i).norm() * (-eta * self.time(i).abs()).exp())
            .fold(0.0, f64::max)
    }

    /// `(t_j, ||y(t_j)||_X)`.
    pub fn norms(&self, reduced: &ReducedSystem) -> Vec<(f64, f64)> {
        (0..self.len()).map(|i| (self.time(i), self.segment(reduced, i).norm())).collect()
    }
}

/// Data fixed at the anchor points of a path: center coordinates at `t = 0`, unstable
/// coordinates at the right end and the stable segment at the left end.
#[derive(Clone, Debug, PartialEq)]
pub struct Anchors {
    pub center: Vec<C64>,
    pub unstable: Vec<C64>,
    pub stable: Option<Segment>,
}

#[derive(Clone, Debug)]
pub struct FixedPoint {
    pub path: WeightedPath,
    pub iterations: usize,
    pub increments: Vec<f64>,
    /// Largest ratio of consecutive increments above the rounding floor.
    pub max_ratio: f64,
    /// Weighted norm at the truncation ends.
    pub tail: f64,
}

#[derive(Clone, Debug)]
pub struct TangentMap {
    /// One path per chart direction: `A_1(psi) e_j`.
    pub columns: Vec<WeightedPath>,
    pub directions: Vec<Vec<C64>>,
    pub terms: usize,
    pub max_ratio: f64,
}

/// Everything needed to evaluate the contraction map of one configuration.
pub struct ManifoldProblem {
    kernel: KernelModel,
    reduced: Arc<ReducedSystem>,
    f: Arc<dyn Nonlinearity>,
    prop: Propagator,
    pub cutoff: CutoffConfig,
    pub consts: ManifoldConstants,
    /// Operator norms of the center pairing rows.
    pairing_norms: Vec<f64>,
}

type PointFn<'a> = dyn Fn(usize, &Segment, &Segment) -> Vec<C64> + 'a;

impl ManifoldProblem {
    pub fn new(
        kernel: &KernelModel,
        reduced: Arc<ReducedSystem>,
        f: Arc<dyn Nonlinearity>,
        cutoff: CutoffConfig,
        consts: ManifoldConstants,
    ) -> Self {
        let prop = Propagator::new(kernel, reduced.grid);
        let pairing_norms = (0..reduced.d_c()).map(|i| pairing_row_norm(&reduced.center, i)).collect();
        Self { kernel: kernel.clone(), reduced, f, prop, cutoff, consts, pairing_norms }
    }

    pub fn kernel(&self) -> &KernelModel {
        &self.kernel
    }

    pub fn reduced(&self) -> &ReducedSystem {
        &self.reduced
    }

    pub fn reduced_arc(&self) -> Arc<ReducedSystem> {
        self.reduced.clone()
    }

    pub fn nonlinearity(&self) -> Arc<dyn Nonlinearity> {
        self.f.clone()
    }

    pub fn grid(&self) -> Grid {
        self.reduced.grid
    }

    pub fn delta(&self) -> f64 {
        self.cutoff.delta
    }

    /// The modified nonlinearity `f_delta`.
    pub fn cutoff_nonlinearity(&self) -> CutoffNonlinearity {
        CutoffNonlinearity::new(self.cutoff.delta, self.reduced.clone(), self.f.clone())
    }

    pub fn range(&self, kind: ManifoldKind) -> (i64, i64) {
        let j = (self.consts.t_path / self.grid().h).ceil() as i64;
        match kind {
            ManifoldKind::Center => (-j, j),
            ManifoldKind::Stable => (0, j),
            ManifoldKind::Unstable => (-j, 0),
        }
    }

    fn check_kind(&self, kind: ManifoldKind) -> Result<()> {
        match kind {
            ManifoldKind::Center => Ok(()),
            _ if self.reduced.d_c() > 0 => Err(Error::Hyperbolicity(self.reduced.d_c())),
            _ => Ok(()),
        }
    }

    pub fn center_anchors(&self, psi: &[C64]) -> Anchors {
        Anchors { center: psi.to_vec(), unstable: vec![ZERO; self.reduced.d_u()], stable: None }
    }

    fn zero_anchors(&self) -> Anchors {
        self.center_anchors(&vec![ZERO; self.reduced.d_c()])
    }

    /// `f_delta` at a path point given as center and stable-plus-unstable parts.
    fn cutoff_forcing(&self, center: &Segment, su: &Segment) -> Vec<C64> {
        cutoff_parts(self.cutoff.delta, self.f.as_ref(), center, su)
    }

    /// Builds the path determined by `anchors` and the forcing values `p(t_j)`; `next`
    /// computes the forcing of the new path at every point from its center and su parts.
    fn assemble(&self, kind: ManifoldKind, anchors: &Anchors, p: Option<&[Vec<C64>]>, next: &PointFn) -> WeightedPath {
        let reduced = &*self.reduced;
        let (j_lo, j_hi) = self.range(kind);
        let n_t = (j_hi - j_lo + 1) as usize;
        let h = self.grid().h;
        let zero_index = (-j_lo) as usize;
        let center = integrate_modal(&reduced.center, h, zero_index, &anchors.center, p, n_t);
        let unstable = integrate_modal(&reduced.unstable, h, n_t - 1, &anchors.unstable, p, n_t);
        let mut stable = Vec::with_capacity(n_t);
        let mut forcing = Vec::with_capacity(n_t);
        let mut s = match &anchors.stable {
            Some(seg) => project_stable(reduced, seg),
            None => Segment::zeros(self.grid()),
        };
        for i in 0..n_t {
            if i > 0 {
                s = match p {
                    Some(p) => project_stable(reduced, &self.prop.step_segment(&s, Some(&p[i]))),
                    None => project_stable(reduced, &self.prop.step_segment(&s, None)),
                };
            }
            let pc = reduced.center.segment(&center[i]);
            let mut su = s.clone();
            for (col, c) in reduced.unstable.basis.columns.iter().zip(&unstable[i]) {
                su.add_scaled(*c, col);
            }
            forcing.push(next(i, &pc, &su));
            stable.push(s.clone());
        }
        WeightedPath { j_lo, h, center, unstable, stable, forcing }
    }

    /// Fills in the forcing of a path built by the caller.
    pub fn make_path(&self, kind: ManifoldKind, gen: impl Fn(f64) -> (Vec<C64>, Vec<C64>, Segment)) -> WeightedPath {
        let (j_lo, j_hi) = self.range(kind);
        let h = self.grid().h;
        let mut path = WeightedPath { j_lo, h, center: vec![], unstable: vec![], stable: vec![], forcing: vec![] };
        for j in j_lo..=j_hi {
            let (zc, zu, s) = gen(j as f64 * h);
            path.center.push(zc);
            path.unstable.push(zu);
            path.stable.push(project_stable(&self.reduced, &s));
        }
        path.forcing = (0..path.len())
            .map(|i| self.cutoff_forcing(&path.center_part(&self.reduced, i), &path.su_part(&self.reduced, i)))
            .collect();
        path
    }

    /// `F_delta(psi, y)` on the center path space.
    pub fn contraction_step(&self, psi: &[C64], y: &WeightedPath) -> WeightedPath {
        let next = |_: usize, pc: &Segment, su: &Segment| self.cutoff_forcing(pc, su);
        self.assemble(ManifoldKind::Center, &self.center_anchors(psi), Some(&y.forcing), &next)
    }

    /// Picard iteration from the linear path until the weighted increment is below `tol`.
    pub fn solve_path(&self, kind: ManifoldKind, anchors: &Anchors, tol: f64) -> Result<FixedPoint> {
        self.check_kind(kind)?;
        let next = |_: usize, pc: &Segment, su: &Segment| self.cutoff_forcing(pc, su);
        let eta = self.consts.eta;
        let mut y = self.assemble(kind, anchors, None, &next);
        let mut increments: Vec<f64> = Vec::new();
        let scale = y.weighted_norm(&self.reduced, eta).max(1e-300);
        let mut max_ratio: f64 = 0.0;
        for it in 1..=self.consts.max_iter {
            let y1 = self.assemble(kind, anchors, Some(&y.forcing), &next);
            let inc = y1.distance(&y, &self.reduced, eta);
            if let Some(&prev) = increments.last() {
                if prev > 1e-13 * scale && inc > 1e-13 * scale {
                    max_ratio = max_ratio.max(inc / prev);
                }
            }
            increments.push(inc);
            y = y1;
            if inc <= tol {
                let tail = y.tail_contribution(&self.reduced, eta);
                return Ok(FixedPoint { path: y, iterations: it, increments, max_ratio, tail });
            }
        }
        Err(Error::FixedPointNonconvergence {
            iterations: self.consts.max_iter,
            increment: *increments.last().unwrap_or(&f64::NAN),
            hint: "enlarge the estimates of C and C1 (or lower the delta ceiling)",
        })
    }

    /// `Lambda_{*,delta}(psi)` at the configured tolerance.
    pub fn solve_center_fixed_point(&self, psi: &[C64]) -> Result<FixedPoint> {
        self.solve_center_fixed_point_tol(psi, self.consts.fp_tol)
    }

    pub fn solve_center_fixed_point_tol(&self, psi: &[C64], tol: f64) -> Result<FixedPoint> {
        self.solve_path(ManifoldKind::Center, &self.center_anchors(psi), tol)
    }

    /// Stable-plus-unstable part of `Lambda(psi)(0)`.
    pub fn center_map(&self, psi: &[C64]) -> Result<Segment> {
        if self.beyond_cutoff(psi) {
            return Ok(Segment::zeros(self.grid()));
        }
        let fp = self.solve_center_fixed_point(psi)?;
        let i0 = fp.path.index_of(0.0).expect("center paths contain t = 0");
        Ok(fp.path.su_part(&self.reduced, i0))
    }

    /// True when the center part of every `T^c(t) psi` provably has norm at least `3 delta`,
    /// so the linear path is already the fixed point and the graph value is zero. Uses
    /// `||Phi_c z|| >= |z_i| / ||psi_i||` and `|e^{t lambda}| = 1` on the center spectrum.
    pub fn beyond_cutoff(&self, psi: &[C64]) -> bool {
        let block = &self.reduced.center;
        let three = 3.0 * self.cutoff.delta;
        if block.basis.lambdas.iter().any(|l| l.re.abs() * self.consts.t_path > 1e-6) {
            return false;
        }
        psi.iter().zip(&self.pairing_norms).any(|(z, n)| z.norm() / n >= three * (1.0 + 1e-5))
    }

    /// `A_1(psi)` by the Neumann series around the fixed point `base`, one column per direction.
    pub fn tangent_map(&self, base: &FixedPoint, directions: &[Vec<C64>]) -> Result<TangentMap> {
        let reduced = &*self.reduced;
        let bpath = &base.path;
        let lin = |i: usize, pc: &Segment, su: &Segment| -> Vec<C64> {
            let bc = bpath.center_part(reduced, i);
            let bs = bpath.su_part(reduced, i);
            cutoff_linearized(self.cutoff.delta, self.f.as_ref(), &bc, &bs, pc, su)
        };
        let eta = self.consts.eta_prime;
        let zero = self.zero_anchors();
        let mut columns = Vec::new();
        let mut terms = 0;
        let mut max_ratio: f64 = 0.0;
        for e in directions {
            let mut term = self.assemble(ManifoldKind::Center, &self.center_anchors(e), None, &lin);
            let first = term.weighted_norm(reduced, eta).max(1e-300);
            let mut sum = term.clone();
            let mut prev = first;
            let mut k = 0;
            loop {
                k += 1;
                if k > 200 {
                    return Err(Error::SeriesStall(prev / first));
                }
                term = self.assemble(ManifoldKind::Center, &zero, Some(&term.forcing), &lin);
                let size = term.weighted_norm(reduced, eta);
                sum = sum.lincomb(1.0, &term, 1.0);
                if size < 1e-10 * first {
                    break;
                }
                let ratio = size / prev;
                max_ratio = max_ratio.max(ratio);
                if ratio > 0.9 {
                    return Err(Error::SeriesStall(ratio));
                }
                prev = size;
            }
            terms = terms.max(k);
            columns.push(sum);
        }
        Ok(TangentMap { columns, directions: directions.to_vec(), terms, max_ratio })
    }

    /// Fixed point of the half-line problem for a local stable (`psi` a history) or unstable
    /// (`psi` unstable coordinates) graph. Returns the graph value at `t = 0` and the path.
    pub fn hyperbolic_map(&self, kind: ManifoldKind, psi: HyperbolicArgument) -> Result<(Segment, FixedPoint)> {
        self.check_kind(kind)?;
        let reduced = &*self.reduced;
        let anchors = match (kind, psi) {
            (ManifoldKind::Stable, HyperbolicArgument::Stable(seg)) => Anchors {
                center: vec![],
                unstable: vec![ZERO; reduced.d_u()],
                stable: Some(seg),
            },
            (ManifoldKind::Unstable, HyperbolicArgument::Unstable(z)) => {
                if z.len() != reduced.d_u() {
                    return Err(Error::Dimension { expected: reduced.d_u(), found: z.len() });
                }
                Anchors { center: vec![], unstable: z, stable: None }
            }
            _ => return Err(Error::InvalidKernel("hyperbolic argument does not match the manifold kind".into())),
        };
        let fp = self.solve_path(kind, &anchors, self.consts.fp_tol)?;
        let i0 = fp.path.index_of(0.0).expect("half-line paths contain t = 0");
        let value = match kind {
            ManifoldKind::Stable => reduced.unstable.segment(&fp.path.unstable[i0]),
            _ => fp.path.stable[i0].clone(),
        };
        Ok((value, fp))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum HyperbolicArgument {
    Stable(Segment),
    Unstable(Vec<C64>),
}

fn pairing_row_norm(block: &ModalBlock, i: usize) -> f64 {
    let grid = *block.pairing.grid();
    let m = grid.dim;
    let q = grid.norm_weights();
    (0..grid.len())
        .map(|k| vec_norm(&block.pairing.block(k)[i * m..(i + 1) * m]) / q[k])
        .fold(0.0, f64::max)
}

/// Trapezoid rule with exact exponentials for `z' = G z + H p`, marching away from `anchor`.
fn integrate_modal(block: &ModalBlock, h: f64, anchor: usize, value: &[C64], p: Option<&[Vec<C64>]>, n_t: usize) -> Vec<Vec<C64>> {
    let d = block.dim();
    let mut out = vec![vec![ZERO; d]; n_t];
    if d == 0 {
        return out;
    }
    out[anchor] = value.to_vec();
    let Some(p) = p else {
        for (i, z) in out.iter_mut().enumerate() {
            *z = block.flow((i as f64 - anchor as f64) * h, value);
        }
        return out;
    };
    let hp: Vec<Vec<C64>> = p.iter().map(|x| block.inject(x)).collect();
    let ef: Vec<C64> = block.basis.lambdas.iter().map(|l| (l * h).exp()).collect();
    let eb: Vec<C64> = block.basis.lambdas.iter().map(|l| (-l * h).exp()).collect();
    for i in anchor..n_t - 1 {
        for k in 0..d {
            out[i + 1][k] = ef[k] * out[i][k] + 0.5 * h * (ef[k] * hp[i][k] + hp[i + 1][k]);
        }
    }
    for i in (1..=anchor).rev() {
        for k in 0..d {
            out[i - 1][k] = eb[k] * out[i][k] - 0.5 * h * (eb[k] * hp[i][k] + hp[i - 1][k]);
        }
    }
    out
}

/// Real coordinates on the center space: real multiples of the basis when the problem is real
/// and every center root is real, real and imaginary parts otherwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Chart {
    pub d_c: usize,
    pub real: bool,
}

impl Chart {
    pub fn dims(&self) -> usize {
        if self.real {
            self.d_c
        } else {
            2 * self.d_c
        }
    }

    pub fn to_coords(&self, z: &[C64]) -> Vec<f64> {
        if self.real {
            z.iter().map(|c| c.re).collect()
        } else {
            z.iter().flat_map(|c| [c.re, c.im]).collect()
        }
    }

    pub fn from_coords(&self, u: &[f64]) -> Vec<C64> {
        if self.real {
            u.iter().map(|&x| C64::from(x)).collect()
        } else {
            u.chunks(2).map(|p| C64::new(p[0], p[1])).collect()
        }
    }

    /// Unit directions of the chart, as center coordinates.
    pub fn directions(&self) -> Vec<Vec<C64>> {
        (0..self.dims())
            .map(|k| {
                let mut u = vec![0.0; self.dims()];
                u[k] = 1.0;
                self.from_coords(&u)
            })
            .collect()
    }
}

/// Graph `psi -> F(psi)` evaluated on demand, memoized on a lattice in chart coordinates.
pub struct ManifoldMap {
    pub kind: ManifoldKind,
    problem: Arc<ManifoldProblem>,
    pub chart: Chart,
    /// Lattice spacing in chart coordinates.
    pub spacing: f64,
    pub lipschitz: f64,
    pub delta: f64,
    cache: Mutex<HashMap<Vec<i64>, Arc<Segment>>>,
    solves: AtomicUsize,
}

impl ManifoldMap {
    /// Center-manifold map; the lattice spacing is `min(radius, 3 delta) / 20` in the norm of
    /// `Phi_c psi`, converted to chart units with the largest basis column norm.
    pub fn center(problem: Arc<ManifoldProblem>, radius: f64) -> Self {
        let reduced = problem.reduced();
        let real = problem.f.preserves_real()
            && problem.kernel.is_real()
            && reduced.center.basis.lambdas.iter().all(|l| l.im.abs() < 1e-12);
        let chart = Chart { d_c: reduced.d_c(), real };
        let col = reduced.center.basis.columns.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1e-300);
        let spacing = radius.min(3.0 * problem.cutoff.delta) / 20.0 / col;
        Self {
            kind: ManifoldKind::Center,
            lipschitz: problem.cutoff.lipschitz,
            delta: problem.cutoff.delta,
            problem,
            chart,
            spacing,
            cache: Mutex::new(HashMap::new()),
            solves: AtomicUsize::new(0),
        }
    }

    pub fn problem(&self) -> &ManifoldProblem {
        &self.problem
    }

    pub fn solves(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    pub fn cached_nodes(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    /// `F(psi)` from a fresh fixed-point solve.
    pub fn eval(&self, psi: &[C64]) -> Result<Segment> {
        if self.problem.beyond_cutoff(psi) {
            return Ok(Segment::zeros(self.problem.grid()));
        }
        self.solves.fetch_add(1, Ordering::Relaxed);
        self.problem.center_map(psi)
    }

    fn node(&self, idx: &[i64]) -> Result<Arc<Segment>> {
        if let Some(v) = self.cache.lock().expect("cache lock").get(idx) {
            return Ok(v.clone());
        }
        let u: Vec<f64> = idx.iter().map(|&k| k as f64 * self.spacing).collect();
        let value = Arc::new(self.eval(&self.chart.from_coords(&u))?);
        let mut cache = self.cache.lock().expect("cache lock");
        Ok(cache.entry(idx.to_vec()).or_insert(value).clone())
    }

    /// Multilinear interpolation of lattice values; exact zero beyond the cutoff.
    pub fn eval_interpolated(&self, psi: &[C64]) -> Result<Segment> {
        if self.problem.beyond_cutoff(psi) {
            return Ok(Segment::zeros(self.problem.grid()));
        }
        let u = self.chart.to_coords(psi);
        let base: Vec<i64> = u.iter().map(|x| (x / self.spacing).floor() as i64).collect();
        let frac: Vec<f64> = u.iter().zip(&base).map(|(x, b)| x / self.spacing - *b as f64).collect();
        let dims = u.len();
        let mut out = Segment::zeros(self.problem.grid());
        for corner in 0..(1usize << dims) {
            let mut w = 1.0;
            let mut idx = base.clone();
            for d in 0..dims {
                if corner >> d & 1 == 1 {
                    w *= frac[d];
                    idx[d] += 1;
                } else {
                    w *= 1.0 - frac[d];
                }
            }
            if w == 0.0 {
                continue;
            }
            let v = self.node(&idx)?;
            out.add_scaled(C64::from(w), &v);
        }
        Ok(out)
    }

    /// Largest sampled `||F(a) - F(b)|| / ||Phi_c (a - b)||` over the pairs.
    pub fn lipschitz_sample(&self, pairs: &[(Vec<C64>, Vec<C64>)]) -> Result<f64> {
        let reduced = self.problem.reduced();
        let mut worst: f64 = 0.0;
        for (a, b) in pairs {
            let diff: Vec<C64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            let den = reduced.center.segment(&diff).norm();
            if den == 0.0 {
                continue;
            }
            worst = worst.max(self.eval(a)?.sub(&self.eval(b)?).norm() / den);
        }
        Ok(worst)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttractivityConstants {
    pub k_const: f64,
    pub mu: f64,
    pub mu_prime: f64,
    pub beta0: f64,
}

impl AttractivityConstants {
    pub fn new(consts: &ManifoldConstants, cutoff: &CutoffConfig) -> Self {
        let k_const = consts.c * consts.c1 * cutoff.zeta_star;
        let mu = k_const + consts.eps_gap;
        let mu_prime = mu + k_const * cutoff.lipschitz;
        let beta0 = consts.alpha - k_const * (consts.alpha - consts.eps_gap) / (consts.alpha - mu_prime);
        Self { k_const, mu, mu_prime, beta0 }
    }

    pub fn admissible(&self, alpha: f64) -> bool {
        self.beta0 > 0.0 && self.mu_prime < alpha
    }
}

#[derive(Clone, Debug)]
pub struct AttractivityReport {
    pub constants: AttractivityConstants,
    /// Least-squares slope of `log ||xi(t)||`.
    pub fitted_rate: f64,
    /// `(t, ||xi(t)||)` at the sampled times.
    pub xi: Vec<(f64, f64)>,
    /// Largest `||xi(t)|| / (C ||xi(0)|| e^{-beta0 t})`.
    pub max_bound_ratio: f64,
    pub satisfied: bool,
    /// First sampled time at which the trajectory left the region where `f_delta = f`.
    pub left_region_at: Option<f64>,
}

/// `xi(t) = Pi^s x_t - F(Pi^c x_t)` along `trajectory` at `t = 0, stride, ..., t_max`, compared
/// with `C ||xi(0)|| e^{-beta0 t}` times `slack` (plus `10 fp_tol` for the graph error).
pub fn attractivity_diagnostics(map: &ManifoldMap, trajectory: &Trajectory, t_max: f64, stride: f64, slack: f64) -> Result<AttractivityReport> {
    let problem = map.problem();
    let reduced = problem.reduced();
    if reduced.d_u() > 0 {
        return Err(Error::Dimension { expected: 0, found: reduced.d_u() });
    }
    let consts = problem.consts;
    let constants = AttractivityConstants::new(&consts, &problem.cutoff);
    let delta = problem.cutoff.delta;
    let mut xi = Vec::new();
    let mut left_region_at = None;
    let t_end = t_max.min(trajectory.t_end() - trajectory.t0);
    let samples = (t_end / stride + 1e-9).floor() as usize;
    for k in 0..=samples {
        let t = k as f64 * stride;
        let seg = trajectory.segment_at(trajectory.t0 + t);
        let (z, pc) = crate::decomposition::project_center(reduced, &seg);
        let ps = seg.sub(&pc);
        if left_region_at.is_none() && (pc.norm() > 2.0 * delta || ps.norm() > 2.0 * delta) {
            left_region_at = Some(t);
        }
        let g = map.eval(&z)?;
        xi.push((t, ps.sub(&g).norm()));
    }
    let xi0 = xi[0].1;
    let floor = 10.0 * consts.fp_tol;
    let mut max_bound_ratio: f64 = 0.0;
    let mut satisfied = true;
    for &(t, v) in &xi {
        let bound = consts.c * xi0 * (-constants.beta0 * t).exp();
        if bound > 0.0 {
            max_bound_ratio = max_bound_ratio.max(v / bound);
        }
        if v > slack * bound + floor {
            satisfied = false;
        }
    }
    let fitted_rate = fit_log_slope(&xi.iter().copied().filter(|p| p.1 > 1e-14).collect::<Vec<_>>());
    Ok(AttractivityReport { constants, fitted_rate, xi, max_bound_ratio, satisfied, left_region_at })
}

/// Least-squares slope of `log y` against `t`; NaN with fewer than two points.
pub fn fit_log_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().filter(|p| p.1 > 0.0).map(|&(t, y)| (t, y.ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_profile() {
        assert_eq!(chi(0.0), 1.0);
        assert_eq!(chi(2.0), 1.0);
        assert_eq!(chi(3.0), 0.0);
        assert_eq!(chi(7.0), 0.0);
        assert!((chi(2.5) - 0.5).abs() < 1e-15);
        let mut prev = 1.0;
        for k in 0..=100 {
            let v = chi(2.0 + k as f64 / 100.0);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
        assert!((chi_derivative(2.5).abs() - CHI_SLOPE).abs() < 1e-12);
        let h = 1e-6;
        for t in [2.1, 2.4, 2.77] {
            let fd = (chi(t + h) - chi(t - h)) / (2.0 * h);
            assert!((fd - chi_derivative(t)).abs() < 1e-6);
        }
    }

    #[test]
    fn log_slope_of_exponential() {
        let pts: Vec<(f64, f64)> = (0..20).map(|k| (k as f64, 3.0 * (-0.7 * k as f64).exp())).collect();
        assert!((fit_log_slope(&pts) + 0.7).abs() < 1e-12);
    }
}
