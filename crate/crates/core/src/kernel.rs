//! Exponential-polynomial delay kernels and the nonlinear term.
//!
//! A kernel is `K(t) = sum_j C_j t^{p_j} exp(-a_j t)` with `m x m` complex coefficients.
//! Everything the rest of the crate needs from `K` (Laplace transform, its derivative,
//! tail integrals, grid weights) has a closed form for this class.

use crate::error::{Error, Result};
use crate::linalg::{op_norm, CMat, C64, ZERO};
use crate::phasespace::{Grid, GridFunctional, Segment};

fn factorial(p: u32) -> f64 {
    (1..=p).map(f64::from).product()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub coeff: CMat,
    pub power: u32,
    pub decay: C64,
}

/// Sum of matrix exponential-polynomial terms, not tied to a weight.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpPoly {
    dim: usize,
    terms: Vec<Term>,
}

impl ExpPoly {
    pub fn new(dim: usize, terms: Vec<Term>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidKernel("dimension must be at least 1".into()));
        }
        for (j, t) in terms.iter().enumerate() {
            if t.coeff.nrows() != dim || t.coeff.ncols() != dim {
                return Err(Error::InvalidKernel(format!(
                    "term {j} has a {}x{} coefficient, expected {dim}x{dim}",
                    t.coeff.nrows(),
                    t.coeff.ncols()
                )));
            }
            if !(t.decay.re > 0.0) {
                return Err(Error::InvalidKernel(format!("term {j} has Re a = {} <= 0", t.decay.re)));
            }
        }
        Ok(Self { dim, terms })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn scaled(&self, s: C64) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| Term { coeff: &t.coeff * s, power: t.power, decay: t.decay })
            .collect();
        Self { dim: self.dim, terms }
    }

    pub fn eval(&self, t: f64) -> CMat {
        let mut out = CMat::zeros(self.dim, self.dim);
        for term in &self.terms {
            let s = (-term.decay * t).exp() * t.powi(term.power as i32);
            out += &term.coeff * s;
        }
        out
    }

    /// Row-major `dim x dim` values of `K(t)` written into `out`.
    pub fn eval_into(&self, t: f64, out: &mut [C64]) {
        out.iter_mut().for_each(|z| *z = ZERO);
        let m = self.dim;
        for term in &self.terms {
            let s = (-term.decay * t).exp() * t.powi(term.power as i32);
            for i in 0..m {
                for j in 0..m {
                    out[i * m + j] += term.coeff[(i, j)] * s;
                }
            }
        }
    }

    /// `int_0^inf K(t) e^{-lambda t} dt`; the caller guarantees convergence.
    pub fn laplace(&self, lambda: C64) -> CMat {
        let mut out = CMat::zeros(self.dim, self.dim);
        for t in &self.terms {
            let b = lambda + t.decay;
            out += &t.coeff * (C64::from(factorial(t.power)) / b.powu(t.power + 1));
        }
        out
    }

    /// `d/dlambda` of [`ExpPoly::laplace`].
    pub fn laplace_derivative(&self, lambda: C64) -> CMat {
        let mut out = CMat::zeros(self.dim, self.dim);
        for t in &self.terms {
            let b = lambda + t.decay;
            out -= &t.coeff * (C64::from(factorial(t.power + 1)) / b.powu(t.power + 2));
        }
        out
    }

    /// `s -> e^{lambda s} int_s^inf e^{-lambda u} K(u) du`, again an exponential polynomial.
    /// With `lambda = 0` this is the tail integral `int_s^inf K`.
    pub fn tail(&self, lambda: C64) -> ExpPoly {
        let mut terms = Vec::new();
        for t in &self.terms {
            let b = lambda + t.decay;
            let p = t.power;
            for k in 0..=p {
                let c = factorial(p) / factorial(k);
                terms.push(Term {
                    coeff: &t.coeff * (C64::from(c) / b.powu(p - k + 1)),
                    power: k,
                    decay: t.decay,
                });
            }
        }
        ExpPoly { dim: self.dim, terms }
    }

    /// Triangle-inequality bound on `int_0^inf ||K(t)|| e^{rho t} dt`.
    pub fn weighted_norm_bound(&self, rho: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| op_norm(&t.coeff) * factorial(t.power) / (t.decay.re - rho).powi(t.power as i32 + 1))
            .sum()
    }

    /// Pointwise bound `sum_j ||C_j|| t^p e^{-(Re a_j - rho) t}` on `||K(t)|| e^{rho t}`.
    fn envelope(&self, rho: f64, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|term| op_norm(&term.coeff) * t.powi(term.power as i32) * (-(term.decay.re - rho) * t).exp())
            .sum()
    }
}

/// Admissible delay kernel together with the phase-space weight `rho`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelModel {
    poly: ExpPoly,
    rho: f64,
}

impl KernelModel {
    pub fn new(dim: usize, terms: Vec<Term>, rho: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::InvalidKernel(format!("rho must be positive, got {rho}")));
        }
        Ok(Self { poly: ExpPoly::new(dim, terms)?, rho })
    }

    /// Scalar kernel `sum_j c_j t^{p_j} e^{-a_j t}`.
    pub fn scalar(terms: &[(f64, u32, f64)], rho: f64) -> Result<Self> {
        let terms = terms
            .iter()
            .map(|&(c, p, a)| Term {
                coeff: CMat::from_element(1, 1, C64::from(c)),
                power: p,
                decay: C64::from(a),
            })
            .collect();
        Self::new(1, terms, rho)
    }

    pub fn dim(&self) -> usize {
        self.poly.dim
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn poly(&self) -> &ExpPoly {
        &self.poly
    }

    pub fn terms(&self) -> &[Term] {
        &self.poly.terms
    }

    /// True when every coefficient and decay rate is real, so real histories stay real.
    pub fn is_real(&self) -> bool {
        self.poly
            .terms
            .iter()
            .all(|t| t.decay.im == 0.0 && t.coeff.iter().all(|z| z.im == 0.0))
    }
}

pub fn eval_kernel(kernel: &KernelModel, t: f64) -> CMat {
    kernel.poly.eval(t)
}

pub fn laplace_transform(kernel: &KernelModel, lambda: C64) -> Result<CMat> {
    if lambda.re <= -kernel.rho {
        return Err(Error::Domain { re: lambda.re, bound: -kernel.rho });
    }
    if let Some(t) = kernel.terms().iter().find(|t| (lambda + t.decay).norm() == 0.0) {
        return Err(Error::Pole(-t.decay));
    }
    Ok(kernel.poly.laplace(lambda))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Admissibility {
    /// Closed-form upper bound on `||K||_{1,rho}`.
    pub norm_1_rho: f64,
    /// Quadrature value of `int ||K(t)|| e^{rho t} dt` (never above the bound).
    pub norm_1_rho_quadrature: f64,
    pub norm_inf_rho: f64,
}

pub fn check_admissibility(kernel: &KernelModel) -> Result<Admissibility> {
    let rho = kernel.rho;
    for (j, t) in kernel.terms().iter().enumerate() {
        if t.decay.re <= rho {
            return Err(Error::Admissibility { term: j, re_decay: t.decay.re, rho });
        }
    }
    let poly = &kernel.poly;
    let norm_1_rho = poly.weighted_norm_bound(rho);
    if poly.terms.is_empty() {
        return Ok(Admissibility { norm_1_rho, norm_1_rho_quadrature: 0.0, norm_inf_rho: 0.0 });
    }
    let horizon = envelope_horizon(poly, rho);
    let weighted = |t: f64| op_norm(&poly.eval(t)) * (rho * t).exp();

    let (nodes, weights) = crate::linalg::gauss_legendre(10);
    let cells = 2000;
    let dh = horizon / cells as f64;
    let mut quad = 0.0;
    for c in 0..cells {
        let a = c as f64 * dh;
        for (x, w) in nodes.iter().zip(&weights) {
            quad += 0.5 * dh * w * weighted(a + 0.5 * dh * (x + 1.0));
        }
    }

    let samples = 4000;
    let ds = horizon / samples as f64;
    let (mut best_t, mut best) = (0.0, weighted(0.0));
    for i in 1..=samples {
        let t = i as f64 * ds;
        let v = weighted(t);
        if v > best {
            best = v;
            best_t = t;
        }
    }
    // Golden-section polish around the best sample.
    let (mut lo, mut hi) = ((best_t - ds).max(0.0), best_t + ds);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let x1 = hi - g * (hi - lo);
        let x2 = lo + g * (hi - lo);
        if weighted(x1) >= weighted(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    best = best.max(weighted(0.5 * (lo + hi)));
    let tail = poly.envelope(rho, horizon);
    Ok(Admissibility { norm_1_rho, norm_1_rho_quadrature: quad, norm_inf_rho: best.max(tail) })
}

/// A time beyond which every term's weighted envelope is decreasing and negligible.
fn envelope_horizon(poly: &ExpPoly, rho: f64) -> f64 {
    let mut t: f64 = poly
        .terms
        .iter()
        .map(|term| (term.power as f64 + 1.0) / (term.decay.re - rho))
        .fold(1.0, f64::max);
    let scale = poly.envelope(rho, 0.0).max(1e-300);
    while poly.envelope(rho, t) * t > 1e-15 * scale {
        t *= 1.5;
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FormTag {
    Zero,
    CubicFunctional,
    Custom,
}

/// The nonlinear term `f: X -> C^m` with `f(0) = 0`, `Df(0) = 0`.
pub trait Nonlinearity: Send + Sync {
    fn eval(&self, phi: &Segment) -> Vec<C64>;

    fn form(&self) -> FormTag;

    /// Whether `f` maps real segments to real vectors.
    fn preserves_real(&self) -> bool {
        false
    }

    /// `Df(phi)` as grid weights; central differences in every grid direction by default.
    fn derivative(&self, phi: &Segment) -> GridFunctional {
        let grid = phi.grid();
        let m = grid.dim;
        let step = 1e-6 * (1.0 + phi.norm());
        let mut weights = vec![ZERO; grid.len() * m * m];
        let mut probe = phi.clone();
        for k in 0..grid.len() {
            for j in 0..m {
                let idx = k * m + j;
                let orig = probe.values()[idx];
                probe.values_mut()[idx] = orig + step;
                let fp = self.eval(&probe);
                probe.values_mut()[idx] = orig - step;
                let fm = self.eval(&probe);
                probe.values_mut()[idx] = orig;
                for i in 0..m {
                    weights[(k * m + i) * m + j] = (fp[i] - fm[i]) / (2.0 * step);
                }
            }
        }
        GridFunctional::from_weights(*grid, m, weights)
    }

    /// `Df(phi) dir`, by a central difference along `dir` unless overridden.
    fn directional_derivative(&self, phi: &Segment, dir: &Segment) -> Vec<C64> {
        let nd = dir.norm();
        if nd == 0.0 {
            return vec![ZERO; phi.grid().dim];
        }
        let step = 1e-6 * (1.0 + phi.norm()) / nd;
        let fp = self.eval(&phi.axpy(C64::from(step), dir));
        let fm = self.eval(&phi.axpy(C64::from(-step), dir));
        fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * step)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct ZeroNonlinearity {
    pub dim: usize,
}

impl Nonlinearity for ZeroNonlinearity {
    fn eval(&self, _phi: &Segment) -> Vec<C64> {
        vec![ZERO; self.dim]
    }
    fn form(&self) -> FormTag {
        FormTag::Zero
    }
    fn preserves_real(&self) -> bool {
        true
    }
    fn derivative(&self, phi: &Segment) -> GridFunctional {
        GridFunctional::zeros(*phi.grid(), self.dim)
    }
    fn directional_derivative(&self, _phi: &Segment, _dir: &Segment) -> Vec<C64> {
        vec![ZERO; self.dim]
    }
}

/// `f(phi) = eps_cubic * (Q phi)^3 + g_quartic * (L phi)^4`, powers taken componentwise.
///
/// `Q phi = int Phat(-theta) phi(theta) dtheta` with `Phat(t) = int_t^inf P`, where `P` is the
/// unscaled kernel profile; `L` is the kernel functional itself. The quartic part plays the role
/// of a higher-order remainder that also sees the non-central part of the history.
#[derive(Clone, Debug)]
pub struct CubicFunctional {
    pub eps_cubic: f64,
    pub g_quartic: f64,
    tail: GridFunctional,
    lin: GridFunctional,
    real: bool,
}

impl CubicFunctional {
    pub fn new(profile: &ExpPoly, kernel: &KernelModel, grid: Grid, eps_cubic: f64, g_quartic: f64) -> Self {
        let tail = GridFunctional::kernel_weights(&profile.tail(ZERO), grid);
        let lin = GridFunctional::kernel_weights(kernel.poly(), grid);
        let real = kernel.is_real()
            && profile.terms().iter().all(|t| t.decay.im == 0.0 && t.coeff.iter().all(|z| z.im == 0.0));
        Self { eps_cubic, g_quartic, tail, lin, real }
    }

    pub fn tail_functional(&self) -> &GridFunctional {
        &self.tail
    }
}

impl Nonlinearity for CubicFunctional {
    fn eval(&self, phi: &Segment) -> Vec<C64> {
        let q = self.tail.apply(phi);
        let mut out: Vec<C64> = q.iter().map(|z| self.eps_cubic * z * z * z).collect();
        if self.g_quartic != 0.0 {
            let l = self.lin.apply(phi);
            for (o, z) in out.iter_mut().zip(&l) {
                *o += self.g_quartic * z.powu(4);
            }
        }
        out
    }

    fn form(&self) -> FormTag {
        FormTag::CubicFunctional
    }

    fn preserves_real(&self) -> bool {
        self.real
    }

    fn derivative(&self, phi: &Segment) -> GridFunctional {
        let q = self.tail.apply(phi);
        let mut d = self.tail.row_scaled(&q.iter().map(|z| 3.0 * self.eps_cubic * z * z).collect::<Vec<_>>());
        if self.g_quartic != 0.0 {
            let l = self.lin.apply(phi);
            let dl = self.lin.row_scaled(&l.iter().map(|z| 4.0 * self.g_quartic * z.powu(3)).collect::<Vec<_>>());
            d = d.add(&dl);
        }
        d
    }

    fn directional_derivative(&self, phi: &Segment, dir: &Segment) -> Vec<C64> {
        let q = self.tail.apply(phi);
        let qd = self.tail.apply(dir);
        let mut out: Vec<C64> = q.iter().zip(&qd).map(|(z, dz)| 3.0 * self.eps_cubic * z * z * dz).collect();
        if self.g_quartic != 0.0 {
            let l = self.lin.apply(phi);
            let ld = self.lin.apply(dir);
            for ((o, z), dz) in out.iter_mut().zip(&l).zip(&ld) {
                *o += 4.0 * self.g_quartic * z.powu(3) * dz;
            }
        }
        out
    }
}

/// Wraps an arbitrary closure; derivatives fall back to finite differences.
pub struct CustomNonlinearity<F> {
    pub dim: usize,
    pub real: bool,
    pub func: F,
}

impl<F> Nonlinearity for CustomNonlinearity<F>
where
    F: Fn(&Segment) -> Vec<C64> + Send + Sync,
{
    fn eval(&self, phi: &Segment) -> Vec<C64> {
        (self.func)(phi)
    }
    fn form(&self) -> FormTag {
        FormTag::Custom
    }
    fn preserves_real(&self) -> bool {
        self.real
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_kernel(c: f64, rho: f64) -> KernelModel {
        KernelModel::scalar(&[(c, 0, 1.0)], rho).unwrap()
    }

    #[test]
    fn transform_of_unit_exponential() {
        let k = exp_kernel(1.0, 0.5);
        assert!((laplace_transform(&k, ZERO).unwrap()[(0, 0)] - 1.0).norm() < 1e-15);
        assert!(laplace_transform(&k, C64::from(1e6)).unwrap()[(0, 0)].norm() < 1e-5);
        let k2 = exp_kernel(2.0, 0.5);
        assert!((laplace_transform(&k2, C64::from(1.0)).unwrap()[(0, 0)] - 1.0).norm() < 1e-15);
    }

    #[test]
    fn transform_rejects_left_of_strip() {
        let k = exp_kernel(1.0, 0.5);
        assert!(matches!(laplace_transform(&k, C64::new(-0.6, 0.0)), Err(Error::Domain { .. })));
    }

    #[test]
    fn admissibility_norms_of_exponential() {
        let a = check_admissibility(&exp_kernel(1.0, 0.5)).unwrap();
        assert!((a.norm_1_rho - 2.0).abs() < 1e-8);
        assert!((a.norm_1_rho_quadrature - 2.0).abs() < 1e-8);
        assert!((a.norm_inf_rho - 1.0).abs() < 1e-6);
    }

    #[test]
    fn admissibility_boundary_is_rejected() {
        let k = KernelModel::scalar(&[(1.0, 0, 0.5)], 0.5).unwrap();
        assert!(matches!(check_admissibility(&k), Err(Error::Admissibility { .. })));
    }

    #[test]
    fn kernel_point_values() {
        let k = exp_kernel(1.0, 0.5);
        assert!((eval_kernel(&k, 0.0)[(0, 0)] - 1.0).norm() < 1e-15);
        assert!((eval_kernel(&k, 2f64.ln())[(0, 0)] - 0.5).norm() < 1e-15);
        let k = KernelModel::scalar(&[(1.0, 1, 2.0)], 0.5).unwrap();
        assert!((eval_kernel(&k, 1.0)[(0, 0)].re - (-2f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn tail_matches_quadrature() {
        let k = KernelModel::scalar(&[(1.5, 2, 1.3), (-0.4, 0, 0.9)], 0.5).unwrap();
        let lam = C64::new(0.3, -0.7);
        let tail = k.poly().tail(lam);
        let s = 0.8;
        let (x, w) = crate::linalg::gauss_legendre(20);
        let mut acc = ZERO;
        let (a, b) = (s, s + 60.0);
        for cell in 0..60 {
            let lo = a + (b - a) * cell as f64 / 60.0;
            let hi = lo + (b - a) / 60.0;
            for (xi, wi) in x.iter().zip(&w) {
                let u = lo + 0.5 * (hi - lo) * (xi + 1.0);
                acc += 0.5 * (hi - lo) * wi * (lam * (s - u)).exp() * k.poly().eval(u)[(0, 0)];
            }
        }
        assert!((tail.eval(s)[(0, 0)] - acc).norm() < 1e-12);
    }

    #[test]
    fn derivative_of_transform_matches_difference() {
        let k = KernelModel::scalar(&[(1.5, 2, 1.3)], 0.5).unwrap();
        let lam = C64::new(0.2, 0.4);
        let d = 1e-6;
        let fd = (k.poly().laplace(lam + d) - k.poly().laplace(lam - d))[(0, 0)] / (2.0 * d);
        assert!((fd - k.poly().laplace_derivative(lam)[(0, 0)]).norm() < 1e-8);
    }
}
