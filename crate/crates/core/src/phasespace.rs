//! Discretized histories on `[-window, 0]` and time stepping of the integral equation.
//!
//! Quadrature conventions: norms use the weighted trapezoid rule; every integral of a kernel
//! against a history uses product integration, i.e. the exact integral of the kernel against
//! the piecewise-linear interpolant of the grid values. With that choice constant histories
//! are propagated exactly whenever `int K = I`, which keeps a critical root exactly at zero.

use crate::error::{Error, Result};
use crate::kernel::{ExpPoly, KernelModel, Nonlinearity};
use crate::linalg::{gauss_legendre, op_norm, vec_norm, CMat, C64, ZERO};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub dim: usize,
    pub h: f64,
    /// Number of cells; there are `n + 1` grid points `theta_k = -k h`.
    pub n: usize,
    pub rho: f64,
}

impl Grid {
    /// Uniform grid on `[-window, 0]`; the step is adjusted so that it divides the window.
    pub fn new(dim: usize, rho: f64, h: f64, window: f64) -> Self {
        let n = ((window / h).round() as usize).max(2);
        Self { dim, h: window / n as f64, n, rho }
    }

    pub fn default_window(rho: f64) -> f64 {
        (20.0 / rho).max(40.0)
    }

    pub fn len(&self) -> usize {
        self.n + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn window(&self) -> f64 {
        self.n as f64 * self.h
    }

    pub fn theta(&self, k: usize) -> f64 {
        -(k as f64) * self.h
    }

    /// Trapezoid weights times `e^{rho theta}`.
    pub fn norm_weights(&self) -> Vec<f64> {
        let decay = (-self.rho * self.h).exp();
        let mut e = 1.0;
        (0..self.len())
            .map(|k| {
                let q = if k == 0 || k == self.n { 0.5 * self.h } else { self.h };
                let w = q * e;
                e *= decay;
                w
            })
            .collect()
    }

    /// Number of whole steps in `t`, rounding down with a warning when `t` is off the grid.
    pub fn steps(&self, t: f64) -> usize {
        let r = t / self.h;
        let k = (r + 1e-9).floor().max(0.0);
        if (r - k).abs() > 1e-9 {
            log::warn!("time {t} is not a multiple of h = {}; snapped down to {}", self.h, k * self.h);
        }
        k as usize
    }
}

/// A history `theta -> phi(theta)` sampled at `theta_k = -k h`; values are stored point-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    grid: Grid,
    values: Vec<C64>,
    pub has_point_value: bool,
}

impl Segment {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![ZERO; grid.len() * grid.dim], has_point_value: false }
    }

    pub fn from_values(grid: Grid, values: Vec<C64>) -> Self {
        assert_eq!(values.len(), grid.len() * grid.dim, "segment length mismatch");
        Self { grid, values, has_point_value: false }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> Vec<C64>) -> Self {
        let mut values = Vec::with_capacity(grid.len() * grid.dim);
        for k in 0..grid.len() {
            let v = f(grid.theta(k));
            debug_assert_eq!(v.len(), grid.dim);
            values.extend_from_slice(&v);
        }
        Self::from_values(grid, values)
    }

    /// Scalar-profile segment `theta -> g(theta) v`.
    pub fn from_profile(grid: Grid, v: &[C64], g: impl Fn(f64) -> C64) -> Self {
        Self::from_fn(grid, |th| {
            let s = g(th);
            v.iter().map(|x| x * s).collect()
        })
    }

    pub fn constant(grid: Grid, v: &[C64]) -> Self {
        Self::from_profile(grid, v, |_| C64::from(1.0))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    pub fn at(&self, k: usize) -> &[C64] {
        let m = self.grid.dim;
        &self.values[k * m..(k + 1) * m]
    }

    pub fn norm(&self) -> f64 {
        segment_norm(self)
    }

    /// `self + a * other`
    pub fn axpy(&self, a: C64, other: &Segment) -> Segment {
        let mut out = self.clone();
        out.add_scaled(a, other);
        out
    }

    pub fn add_scaled(&mut self, a: C64, other: &Segment) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += a * y;
        }
    }

    pub fn scaled(&self, a: C64) -> Segment {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|x| *x *= a);
        out
    }

    pub fn sub(&self, other: &Segment) -> Segment {
        self.axpy(C64::from(-1.0), other)
    }

    pub fn is_real(&self, tol: f64) -> bool {
        self.values.iter().all(|z| z.im.abs() <= tol)
    }

    /// Bound on the norm contribution of the history beyond the window, for bounded histories
    /// with the same supremum as the sampled part.
    pub fn truncation_bound(&self) -> f64 {
        let sup = self.values.iter().map(|z| z.norm()).fold(0.0, f64::max);
        (-self.grid.rho * self.grid.window()).exp() * sup / self.grid.rho
    }
}

/// `int |phi(theta)| e^{rho theta} d theta` by the weighted trapezoid rule.
pub fn segment_norm(phi: &Segment) -> f64 {
    let grid = phi.grid;
    let m = grid.dim;
    let decay = (-grid.rho * grid.h).exp();
    let mut e = 1.0;
    let mut acc = 0.0;
    for (k, x) in phi.values.chunks_exact(m).enumerate() {
        let size = if m == 1 { x[0].norm() } else { vec_norm(x) };
        let q = if k == 0 || k == grid.n { 0.5 } else { 1.0 };
        acc += q * e * size;
        e *= decay;
    }
    acc * grid.h
}

/// Bounded linear map `X -> C^rows` represented by one `rows x dim` block of weights per grid
/// point: `phi -> sum_k W_k phi(theta_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunctional {
    grid: Grid,
    rows: usize,
    weights: Vec<C64>,
}

impl GridFunctional {
    pub fn zeros(grid: Grid, rows: usize) -> Self {
        Self { grid, rows, weights: vec![ZERO; grid.len() * rows * grid.dim] }
    }

    pub fn from_weights(grid: Grid, rows: usize, weights: Vec<C64>) -> Self {
        assert_eq!(weights.len(), grid.len() * rows * grid.dim);
        Self { grid, rows, weights }
    }

    /// Product-integration weights of `phi -> int_0^window D(u) phi(-u) du`, where
    /// `density(u, out)` writes the `rows x dim` matrix `D(u)` row-major into `out`.
    pub fn from_density(grid: Grid, rows: usize, density: impl Fn(f64, &mut [C64])) -> Self {
        let m = grid.dim;
        let block = rows * m;
        let mut weights = vec![ZERO; grid.len() * block];
        let (x, w) = gauss_legendre(8);
        let mut buf = vec![ZERO; block];
        let h = grid.h;
        for cell in 0..grid.n {
            let u0 = cell as f64 * h;
            for (xi, wi) in x.iter().zip(&w) {
                let s = 0.5 * (xi + 1.0);
                density(u0 + s * h, &mut buf);
                let (left, right) = (0.5 * wi * h * (1.0 - s), 0.5 * wi * h * s);
                for (idx, d) in buf.iter().enumerate() {
                    weights[cell * block + idx] += d * left;
                    weights[(cell + 1) * block + idx] += d * right;
                }
            }
        }
        Self { grid, rows, weights }
    }

    /// Weights of `phi -> int_0^window K(u) phi(-u) du`.
    pub fn kernel_weights(poly: &ExpPoly, grid: Grid) -> Self {
        assert_eq!(poly.dim(), grid.dim);
        Self::from_density(grid, grid.dim, |u, out| poly.eval_into(u, out))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn block(&self, k: usize) -> &[C64] {
        let b = self.rows * self.grid.dim;
        &self.weights[k * b..(k + 1) * b]
    }

    pub fn apply(&self, phi: &Segment) -> Vec<C64> {
        self.apply_values(phi.values())
    }

    pub fn apply_values(&self, values: &[C64]) -> Vec<C64> {
        let m = self.grid.dim;
        let r = self.rows;
        let mut out = vec![ZERO; r];
        if m == 1 && r == 1 {
            let mut acc = ZERO;
            for (w, x) in self.weights.iter().zip(values) {
                acc += w * x;
            }
            out[0] = acc;
            return out;
        }
        for k in 0..self.grid.len() {
            let wk = &self.weights[k * r * m..(k + 1) * r * m];
            let xk = &values[k * m..(k + 1) * m];
            for i in 0..r {
                let mut acc = ZERO;
                for j in 0..m {
                    acc += wk[i * m + j] * xk[j];
                }
                out[i] += acc;
            }
        }
        out
    }

    /// Multiplies row `i` by `s[i]`.
    pub fn row_scaled(&self, s: &[C64]) -> Self {
        let m = self.grid.dim;
        let mut weights = self.weights.clone();
        for (idx, w) in weights.iter_mut().enumerate() {
            *w *= s[(idx / m) % self.rows];
        }
        Self { grid: self.grid, rows: self.rows, weights }
    }

    /// Left-multiplies every block by the `r x rows` matrix `a`.
    pub fn left_mul(&self, a: &CMat) -> Self {
        let m = self.grid.dim;
        let r = a.nrows();
        let mut weights = vec![ZERO; self.grid.len() * r * m];
        for k in 0..self.grid.len() {
            let src = self.block(k);
            for i in 0..r {
                for l in 0..self.rows {
                    let c = a[(i, l)];
                    if c == ZERO {
                        continue;
                    }
                    for j in 0..m {
                        weights[k * r * m + i * m + j] += c * src[l * m + j];
                    }
                }
            }
        }
        Self { grid: self.grid, rows: r, weights }
    }

    pub fn add(&self, other: &Self) -> Self {
        let weights = self.weights.iter().zip(&other.weights).map(|(a, b)| a + b).collect();
        Self { grid: self.grid, rows: self.rows, weights }
    }

    /// Operator norm from `X` (discrete weighted L1) to `C^rows`.
    pub fn op_norm(&self) -> f64 {
        let m = self.grid.dim;
        let q = self.grid.norm_weights();
        (0..self.grid.len())
            .map(|k| {
                let blk = CMat::from_row_slice(self.rows, m, self.block(k));
                op_norm(&blk) / q[k]
            })
            .fold(0.0, f64::max)
    }
}

/// `L(phi) = int K(-theta) phi(theta) d theta` over the window.
pub fn functional_l(kernel: &KernelModel, phi: &Segment) -> Vec<C64> {
    GridFunctional::kernel_weights(kernel.poly(), *phi.grid()).apply(phi)
}

/// One-step map of the discretized equation. The current value enters the history integral
/// with weight `W_0`, so each step solves `(I - W_0) x = sum_{k>=1} W_k x(t - kh) + rest`.
#[derive(Clone, Debug)]
pub struct Propagator {
    grid: Grid,
    weights: GridFunctional,
    solve0: CMat,
}

impl Propagator {
    pub fn new(kernel: &KernelModel, grid: Grid) -> Self {
        let weights = GridFunctional::kernel_weights(kernel.poly(), grid);
        let m = grid.dim;
        let w0 = CMat::from_row_slice(m, m, weights.block(0));
        let solve0 = (CMat::identity(m, m) - w0)
            .try_inverse()
            .expect("I - W_0 is invertible for h small enough");
        Self { grid, weights, solve0 }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn weights(&self) -> &GridFunctional {
        &self.weights
    }

    /// `sum_{k=1}^{n} W_k x(t - kh)` with `buf[pos - k] = x(t - kh)` (time-ordered buffer).
    fn history_sum(&self, buf: &[C64], pos: usize) -> Vec<C64> {
        let m = self.grid.dim;
        let mut out = vec![ZERO; m];
        if m == 1 {
            let w = &self.weights.weights;
            let mut acc = ZERO;
            for k in 1..=self.grid.n {
                acc += w[k] * buf[pos - k];
            }
            out[0] = acc;
            return out;
        }
        for k in 1..=self.grid.n {
            let wk = self.weights.block(k);
            let xk = &buf[(pos - k) * m..(pos - k + 1) * m];
            for i in 0..m {
                for j in 0..m {
                    out[i] += wk[i * m + j] * xk[j];
                }
            }
        }
        out
    }

    fn solve_point(&self, rhs: &[C64]) -> Vec<C64> {
        crate::linalg::mat_vec(&self.solve0, rhs)
    }

    /// One step of a segment: the returned segment holds the new value at `theta = 0`.
    pub fn step_segment(&self, phi: &Segment, forcing: Option<&[C64]>) -> Segment {
        let m = self.grid.dim;
        let n = self.grid.n;
        let mut rhs = vec![ZERO; m];
        for k in 1..=n {
            let wk = self.weights.block(k);
            let xk = phi.at(k - 1);
            for i in 0..m {
                for j in 0..m {
                    rhs[i] += wk[i * m + j] * xk[j];
                }
            }
        }
        if let Some(p) = forcing {
            for (r, p) in rhs.iter_mut().zip(p) {
                *r += p;
            }
        }
        let x = self.solve_point(&rhs);
        let mut values = Vec::with_capacity(phi.values.len());
        values.extend_from_slice(&x);
        values.extend_from_slice(&phi.values[..n * m]);
        Segment { grid: self.grid, values, has_point_value: true }
    }

    /// Time-ordered buffer whose first `n + 1` points are the initial history.
    fn history_buffer(&self, phi: &Segment, steps: usize) -> Vec<C64> {
        let m = self.grid.dim;
        let mut buf = Vec::with_capacity((self.grid.len() + steps) * m);
        for k in (0..self.grid.len()).rev() {
            buf.extend_from_slice(phi.at(k));
        }
        buf
    }

    fn segment_from_buffer(&self, buf: &[C64], pos: usize) -> Segment {
        let m = self.grid.dim;
        let mut values = Vec::with_capacity(self.grid.len() * m);
        for k in 0..self.grid.len() {
            values.extend_from_slice(&buf[(pos - k) * m..(pos - k + 1) * m]);
        }
        Segment { grid: self.grid, values, has_point_value: true }
    }

    /// Linear solve over `steps` steps with forcing `p(j)` added at step `j = 1..=steps`.
    pub fn run_linear(&self, phi: &Segment, steps: usize, p: Option<&dyn Fn(usize) -> Vec<C64>>) -> Trajectory {
        let m = self.grid.dim;
        let mut buf = self.history_buffer(phi, steps);
        for j in 1..=steps {
            let pos = self.grid.n + j;
            let mut rhs = self.history_sum(&buf, pos);
            if let Some(p) = p {
                for (r, v) in rhs.iter_mut().zip(p(j)) {
                    *r += v;
                }
            }
            let x = self.solve_point(&rhs);
            buf.extend_from_slice(&x);
        }
        let states = buf[self.grid.n * m..].to_vec();
        Trajectory { t0: 0.0, grid: self.grid, states, initial: phi.clone(), escaped_at: None }
    }
}

/// `T(t) phi` for the homogeneous equation.
pub fn solve_homogeneous(kernel: &KernelModel, phi: &Segment, t: f64) -> Segment {
    let grid = *phi.grid();
    let steps = grid.steps(t);
    if steps == 0 {
        return phi.clone();
    }
    Propagator::new(kernel, grid).run_linear(phi, steps, None).final_segment()
}

/// Segment `x_t(sigma, phi, p)` of `x(t) = int K(t-s) x(s) ds + p(t)`.
pub fn solve_forced(
    kernel: &KernelModel,
    sigma: f64,
    phi: &Segment,
    p: &dyn Fn(f64) -> Vec<C64>,
    t: f64,
) -> Segment {
    let grid = *phi.grid();
    let steps = grid.steps(t - sigma);
    if steps == 0 {
        return phi.clone();
    }
    let h = grid.h;
    let forcing = |j: usize| p(sigma + j as f64 * h);
    Propagator::new(kernel, grid).run_linear(phi, steps, Some(&forcing)).final_segment()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NonlinearOptions {
    /// A pointwise value above this is reported as blow-up.
    pub blowup_bound: f64,
    /// Stop early (without error) once `||x_t||_X` exceeds this.
    pub escape_norm: Option<f64>,
}

impl Default for NonlinearOptions {
    fn default() -> Self {
        Self { blowup_bound: 1e8, escape_norm: None }
    }
}

/// Solution of `x(t) = L(x_t) + f(x_t)` from `x_sigma = phi` up to `t_end`.
///
/// The nonlinear term is explicit: it is evaluated on the segment completed by a predicted
/// endpoint value, then once more on the corrected one (predictor-corrector, no inner solve).
pub fn solve_nonlinear(
    kernel: &KernelModel,
    sigma: f64,
    phi: &Segment,
    f: &dyn Nonlinearity,
    t_end: f64,
    opts: NonlinearOptions,
) -> Result<Trajectory> {
    let prop = Propagator::new(kernel, *phi.grid());
    solve_nonlinear_with(&prop, sigma, phi, f, t_end, opts)
}

pub fn solve_nonlinear_with(
    prop: &Propagator,
    sigma: f64,
    phi: &Segment,
    f: &dyn Nonlinearity,
    t_end: f64,
    opts: NonlinearOptions,
) -> Result<Trajectory> {
    let grid = prop.grid;
    let m = grid.dim;
    let n = grid.n;
    let steps = grid.steps(t_end - sigma);
    let mut buf = prop.history_buffer(phi, steps);
    let mut escaped_at = None;
    for j in 1..=steps {
        let pos = n + j;
        let hist = prop.history_sum(&buf, pos);
        let prev: Vec<C64> = buf[(pos - 1) * m..pos * m].to_vec();
        buf.extend_from_slice(&prev);
        let mut x = prev;
        for _ in 0..2 {
            buf[pos * m..(pos + 1) * m].copy_from_slice(&x);
            let seg = prop.segment_from_buffer(&buf, pos);
            let fx = f.eval(&seg);
            let rhs: Vec<C64> = hist.iter().zip(&fx).map(|(a, b)| a + b).collect();
            x = prop.solve_point(&rhs);
        }
        buf[pos * m..(pos + 1) * m].copy_from_slice(&x);
        let t = sigma + j as f64 * grid.h;
        let size = vec_norm(&x);
        if !size.is_finite() || size > opts.blowup_bound {
            return Err(Error::BlowUp { t, value: size });
        }
        if let Some(limit) = opts.escape_norm {
            if prop.segment_from_buffer(&buf, pos).norm() > limit {
                escaped_at = Some(t);
                break;
            }
        }
    }
    let states = buf[n * m..].to_vec();
    Ok(Trajectory { t0: sigma, grid, states, initial: phi.clone(), escaped_at })
}

/// Grid values `x(t0 + j h)`, `j = 0..`, with the initial history they were started from.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub t0: f64,
    grid: Grid,
    /// Point-major values; `states[0..m]` is `x(t0)`.
    states: Vec<C64>,
    pub initial: Segment,
    /// Time at which the segment norm first exceeded the escape threshold, if it did.
    pub escaped_at: Option<f64>,
}

impl Trajectory {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Number of stored time points (including `t0`).
    pub fn len(&self) -> usize {
        self.states.len() / self.grid.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.grid.h
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.len() - 1)
    }

    pub fn state(&self, j: usize) -> &[C64] {
        let m = self.grid.dim;
        &self.states[j * m..(j + 1) * m]
    }

    /// `x_{t0 + j h}`: recent states spliced onto the shifted initial history.
    pub fn segment(&self, j: usize) -> Segment {
        let m = self.grid.dim;
        let mut values = Vec::with_capacity(self.grid.len() * m);
        for k in 0..self.grid.len() {
            if k <= j {
                values.extend_from_slice(self.state(j - k));
            } else {
                values.extend_from_slice(self.initial.at(k - j));
            }
        }
        Segment { grid: self.grid, values, has_point_value: true }
    }

    pub fn segment_at(&self, t: f64) -> Segment {
        let j = self.grid.steps(t - self.t0).min(self.len() - 1);
        self.segment(j)
    }

    pub fn final_segment(&self) -> Segment {
        self.segment(self.len() - 1)
    }

    /// `(t, ||x_t||_X)` at every stored time.
    pub fn segment_norms(&self) -> Vec<(f64, f64)> {
        (0..self.len()).map(|j| (self.time(j), self.segment(j).norm())).collect()
    }

    /// CSV rows `t, Re x_1.., Im x_1.., ||x_t||_X`.
    pub fn csv_rows(&self) -> Vec<Vec<f64>> {
        let norms = self.segment_norms();
        (0..self.len())
            .map(|j| {
                let x = self.state(j);
                let mut row = vec![self.time(j)];
                row.extend(x.iter().map(|z| z.re));
                row.extend(x.iter().map(|z| z.im));
                row.push(norms[j].1);
                row
            })
            .collect()
    }

    pub fn csv_header(&self) -> Vec<String> {
        let m = self.grid.dim;
        let mut h = vec!["t".to_string()];
        h.extend((1..=m).map(|i| format!("re_x{i}")));
        h.extend((1..=m).map(|i| format!("im_x{i}")));
        h.push("norm_x_t".into());
        h
    }
}

/// Unit-mass ramp supported on `[-1/n, 0]`, peaking at `theta = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mollifier {
    pub n: usize,
}

impl Mollifier {
    pub fn new(n: usize) -> Self {
        assert!(n > 0);
        Self { n }
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let n = self.n as f64;
        if theta > 0.0 || theta < -1.0 / n {
            0.0
        } else {
            2.0 * n * (1.0 + n * theta)
        }
    }

    /// `Gamma^n x` sampled on the grid and rescaled to unit trapezoid mass.
    pub fn segment(&self, grid: Grid, x: &[C64]) -> Segment {
        let raw: Vec<f64> = (0..grid.len()).map(|k| self.eval(grid.theta(k))).collect();
        let mass: f64 = raw
            .iter()
            .enumerate()
            .map(|(k, v)| if k == 0 || k == grid.n { 0.5 * grid.h * v } else { grid.h * v })
            .sum();
        let mut seg = Segment::from_fn(grid, |th| {
            let k = (-th / grid.h).round() as usize;
            x.iter().map(|z| z * (raw[k] / mass)).collect()
        });
        seg.has_point_value = true;
        seg
    }
}

/// `T(t - sigma) phi + sum_s w_s T(t - s) Gamma^n p(s)` with trapezoid weights in `s`.
pub fn vcf_segment(
    kernel: &KernelModel,
    sigma: f64,
    phi: &Segment,
    p: &dyn Fn(f64) -> Vec<C64>,
    t: f64,
    mollifier_n: usize,
) -> Segment {
    let grid = *phi.grid();
    let prop = Propagator::new(kernel, grid);
    let steps = grid.steps(t - sigma);
    let moll = Mollifier::new(mollifier_n);
    let h = grid.h;
    // Every injected bump moves into the interior of the segment after one step, where its
    // grid values carry full trapezoid weight; normalize to unit mass in that reading.
    let unit = moll.segment(grid, &vec![C64::from(1.0); grid.dim]);
    let interior_mass: f64 = (0..grid.len()).map(|k| unit.at(k)[0].re).sum::<f64>() * h;
    let injected = |i: usize| {
        let w = if i == 0 || i == steps { 0.5 * h } else { h };
        moll.segment(grid, &p(sigma + i as f64 * h)).scaled(C64::from(w / interior_mass))
    };
    // Horner form: S_i = T(h) S_{i-1} + w_i Gamma^n p(s_i).
    let mut acc = phi.axpy(C64::from(1.0), &injected(0));
    for i in 1..=steps {
        acc = prop.step_segment(&acc, None);
        acc.add_scaled(C64::from(1.0), &injected(i));
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rho: f64, h: f64, window: f64) -> Grid {
        Grid::new(1, rho, h, window)
    }

    #[test]
    fn norms_of_simple_segments() {
        let g = grid(0.5, 0.05, 20.0);
        assert_eq!(Segment::zeros(g).norm(), 0.0);
        let one = Segment::constant(g, &[C64::from(1.0)]);
        let exact = (1.0 - (-10f64).exp()) / 0.5;
        assert!((one.norm() - exact).abs() < 10.0 * g.h * g.h);
        let g1 = grid(1.0, 0.01, 20.0);
        let e = Segment::from_profile(g1, &[C64::from(1.0)], |th| C64::from(th.exp()));
        assert!((e.norm() - 0.5).abs() < 1e-4);
    }

    #[test]
    fn kernel_functional_values() {
        let k = KernelModel::scalar(&[(1.0, 0, 1.0)], 0.5).unwrap();
        let g = grid(0.5, 0.05, 40.0);
        let one = Segment::constant(g, &[C64::from(1.0)]);
        let l = functional_l(&k, &one)[0];
        assert!((l.re - (1.0 - (-40f64).exp())).abs() < 1e-13);
        let e = Segment::from_profile(g, &[C64::from(1.0)], |th| C64::from(th.exp()));
        assert!((functional_l(&k, &e)[0].re - 0.5).abs() < 1e-3);
        assert_eq!(functional_l(&k, &Segment::zeros(g))[0], ZERO);
    }

    #[test]
    fn homogeneous_identity_and_constants() {
        let k = KernelModel::scalar(&[(1.0, 0, 1.0)], 0.5).unwrap();
        let g = grid(0.5, 0.05, 40.0);
        let c = C64::from(0.3);
        let phi = Segment::constant(g, &[c]);
        assert_eq!(solve_homogeneous(&k, &phi, 0.0), phi);
        let out = solve_homogeneous(&k, &phi, 5.0);
        assert!(out.values().iter().all(|z| (z - c).norm() < 1e-4));
    }

    #[test]
    fn forced_with_zero_kernel_reproduces_forcing() {
        let k = KernelModel::new(1, vec![], 0.5).unwrap();
        let g = grid(0.5, 0.05, 40.0);
        let out = solve_forced(&k, 0.0, &Segment::zeros(g), &|t| vec![C64::from(t.sin())], 3.0);
        for kk in 0..60 {
            let t = 3.0 - kk as f64 * g.h;
            assert!((out.at(kk)[0].re - t.sin()).abs() < 1e-14);
        }
    }

    #[test]
    fn mollifier_has_unit_mass() {
        for n in [4, 8, 16, 32] {
            let g = grid(0.5, 1.0 / 64.0, 10.0);
            let seg = Mollifier::new(n).segment(g, &[C64::from(1.0)]);
            let mass: f64 = (0..g.len())
                .map(|k| {
                    let q = if k == 0 || k == g.n { 0.5 * g.h } else { g.h };
                    q * seg.at(k)[0].re
                })
                .sum();
            assert!((mass - 1.0).abs() < 1e-10);
            assert!((0..g.len()).all(|k| g.theta(k) >= -1.0 / n as f64 - 1e-12 || seg.at(k)[0] == ZERO));
        }
    }

    #[test]
    fn trajectory_segments_splice_history() {
        let k = KernelModel::scalar(&[(0.5, 0, 1.0)], 0.5).unwrap();
        let g = grid(0.5, 0.1, 10.0);
        let phi = Segment::from_profile(g, &[C64::from(1.0)], |th| C64::from(th.cos()));
        let traj = Propagator::new(&k, g).run_linear(&phi, 20, None);
        let seg = traj.segment(5);
        assert_eq!(seg.at(0), traj.state(5));
        assert_eq!(seg.at(5), traj.state(0));
        assert_eq!(seg.at(7), phi.at(2));
        assert_eq!(traj.segment(20), solve_homogeneous(&k, &phi, 2.0));
    }
}
