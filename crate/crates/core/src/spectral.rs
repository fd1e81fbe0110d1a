//! Characteristic matrix `Delta(lambda) = I - int K(t) e^{-lambda t} dt`, root counting by the
//! argument principle, root isolation by rectangle bisection and Newton polishing.

use crate::error::{Error, Result};
use crate::kernel::{laplace_transform, KernelModel};
use crate::linalg::{gauss_legendre, null_vector, op_norm, vec_norm, CMat, C64};
use std::f64::consts::PI;

pub fn characteristic_matrix(kernel: &KernelModel, lambda: C64) -> Result<CMat> {
    let m = kernel.dim();
    Ok(CMat::identity(m, m) - laplace_transform(kernel, lambda)?)
}

/// `d Delta / d lambda`.
pub fn characteristic_derivative(kernel: &KernelModel, lambda: C64) -> CMat {
    -kernel.poly().laplace_derivative(lambda)
}

pub fn det_characteristic(kernel: &KernelModel, lambda: C64) -> Result<C64> {
    Ok(characteristic_matrix(kernel, lambda)?.determinant())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl Rect {
    pub fn new(re_min: f64, re_max: f64, im_min: f64, im_max: f64) -> Self {
        Self { re_min, re_max, im_min, im_max }
    }

    pub fn symmetric(re_min: f64, re_max: f64, im_max: f64) -> Self {
        Self::new(re_min, re_max, -im_max, im_max)
    }

    pub fn center(&self) -> C64 {
        C64::new(0.5 * (self.re_min + self.re_max), 0.5 * (self.im_min + self.im_max))
    }

    pub fn width(&self) -> f64 {
        self.re_max - self.re_min
    }

    pub fn height(&self) -> f64 {
        self.im_max - self.im_min
    }

    fn contains(&self, z: C64, slack: f64) -> bool {
        z.re >= self.re_min - slack && z.re <= self.re_max + slack && z.im >= self.im_min - slack && z.im <= self.im_max + slack
    }

    fn corners(&self) -> [C64; 4] {
        [
            C64::new(self.re_min, self.im_min),
            C64::new(self.re_max, self.im_min),
            C64::new(self.re_max, self.im_max),
            C64::new(self.re_min, self.im_max),
        ]
    }

    fn split(&self, frac: f64) -> (Rect, Rect) {
        if self.width() >= self.height() {
            let x = self.re_min + frac * self.width();
            (Rect { re_max: x, ..*self }, Rect { re_min: x, ..*self })
        } else {
            let y = self.im_min + frac * self.height();
            (Rect { im_max: y, ..*self }, Rect { im_min: y, ..*self })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralOptions {
    /// Required `|det Delta|` at an accepted root.
    pub root_tol: f64,
    /// Roots with `|Re lambda| <= center_tol` are central.
    pub center_tol: f64,
    /// Smallest `|det Delta|` tolerated on a counting contour.
    pub boundary_tol: f64,
    pub max_depth: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self { root_tol: 1e-10, center_tol: 1e-8, boundary_tol: 1e-9, max_depth: 40 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RootClass {
    Unstable,
    Center,
    Stable,
}

impl RootClass {
    pub fn name(&self) -> &'static str {
        match self {
            RootClass::Unstable => "unstable",
            RootClass::Center => "center",
            RootClass::Stable => "stable",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CharacteristicRoot {
    pub lambda: C64,
    pub multiplicity: usize,
    pub det_residual: f64,
    pub classification: RootClass,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralSummary {
    pub roots: Vec<CharacteristicRoot>,
    pub region: Rect,
    pub hyperbolic: bool,
    pub n_u: usize,
    pub n_c: usize,
    pub n_s: usize,
    /// Winding number of `det Delta` around the region.
    pub winding_count: usize,
}

impl SpectralSummary {
    pub fn of_class(&self, class: RootClass) -> Vec<&CharacteristicRoot> {
        self.roots.iter().filter(|r| r.classification == class).collect()
    }
}

/// `d/dlambda log det Delta = tr(Delta^{-1} Delta')` together with `det Delta`.
fn log_derivative(kernel: &KernelModel, lambda: C64) -> Result<(C64, C64)> {
    let delta = characteristic_matrix(kernel, lambda)?;
    let lu = delta.lu();
    let det = lu.determinant();
    let d = characteristic_derivative(kernel, lambda);
    match lu.solve(&d) {
        Some(x) if det.norm() > 0.0 => Ok((x.trace(), det)),
        _ => Ok((C64::new(f64::INFINITY, 0.0), det)),
    }
}

struct Contour<'a> {
    kernel: &'a KernelModel,
    boundary_tol: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl<'a> Contour<'a> {
    fn new(kernel: &'a KernelModel, boundary_tol: f64) -> Self {
        let (nodes, weights) = gauss_legendre(10);
        Self { kernel, boundary_tol, nodes, weights }
    }

    fn rule(&self, a: C64, b: C64) -> Result<C64> {
        let mut acc = C64::from(0.0);
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            let z = a + (b - a) * (0.5 * (x + 1.0));
            let (g, det) = log_derivative(self.kernel, z)?;
            if det.norm() < self.boundary_tol || !g.is_finite() {
                return Err(Error::BoundaryRoot { lambda: z, value: det.norm() });
            }
            acc += g * (0.5 * w);
        }
        Ok(acc * (b - a))
    }

    fn adaptive(&self, a: C64, b: C64, whole: C64, depth: usize) -> Result<C64> {
        let mid = 0.5 * (a + b);
        let left = self.rule(a, mid)?;
        let right = self.rule(mid, b)?;
        let refined = left + right;
        if (refined - whole).norm() < 1e-9 || depth >= 40 {
            return Ok(refined);
        }
        Ok(self.adaptive(a, mid, left, depth + 1)? + self.adaptive(mid, b, right, depth + 1)?)
    }

    fn winding(&self, rect: &Rect) -> Result<usize> {
        let c = rect.corners();
        let mut total = C64::from(0.0);
        for i in 0..4 {
            let (a, b) = (c[i], c[(i + 1) % 4]);
            total += self.adaptive(a, b, self.rule(a, b)?, 0)?;
        }
        let count = total / C64::new(0.0, 2.0 * PI);
        let rounded = count.re.round();
        if (count.re - rounded).abs() > 0.05 || count.im.abs() > 0.05 || rounded < 0.0 {
            return Err(Error::RootNonconvergence(format!(
                "argument principle gave non-integer count {count} on {rect:?}"
            )));
        }
        Ok(rounded as usize)
    }
}

pub fn count_roots(kernel: &KernelModel, rect: Rect) -> Result<usize> {
    count_roots_with(kernel, rect, &SpectralOptions::default())
}

pub fn count_roots_with(kernel: &KernelModel, rect: Rect, opts: &SpectralOptions) -> Result<usize> {
    if rect.re_min <= -kernel.rho() {
        return Err(Error::Domain { re: rect.re_min, bound: -kernel.rho() });
    }
    Contour::new(kernel, opts.boundary_tol).winding(&rect)
}

/// Search rectangle `[-rho + margin, re_max] x [-im_max, im_max]` that provably holds every root
/// with `Re lambda >= -rho + margin`: outside it `||int K e^{-lambda t}|| < 1`.
pub fn default_search_rect(kernel: &KernelModel, margin: f64) -> Rect {
    let re_min = -kernel.rho() + margin;
    let terms: Vec<(f64, u32, C64)> = kernel
        .terms()
        .iter()
        .map(|t| (op_norm(&t.coeff), t.power, t.decay))
        .collect();
    let fact = |p: u32| (1..=p).map(f64::from).product::<f64>();
    let re_bound = |x: f64| -> f64 {
        terms.iter().map(|(c, p, a)| c * fact(*p) / (x + a.re).powi(*p as i32 + 1)).sum()
    };
    let mut x = 0.0;
    if re_bound(0.0) >= 1.0 {
        x = 1.0;
        while re_bound(x) >= 1.0 {
            x *= 2.0;
        }
    }
    let re_max = 1.0 + x;
    let shift: f64 = terms.iter().map(|(_, _, a)| a.im.abs()).fold(0.0, f64::max);
    let im_bound = |y: f64| -> f64 {
        terms
            .iter()
            .map(|(c, p, a)| c * fact(*p) / (y - a.im.abs()).max((a.re - kernel.rho() + margin).max(1e-300)).powi(*p as i32 + 1))
            .sum()
    };
    let mut y = shift + 1.0;
    while im_bound(y) >= 1.0 {
        y *= 2.0;
    }
    Rect::symmetric(re_min, re_max, y + 1.0)
}

fn classify(lambda: C64, center_tol: f64) -> RootClass {
    if lambda.re.abs() <= center_tol {
        RootClass::Center
    } else if lambda.re > 0.0 {
        RootClass::Unstable
    } else {
        RootClass::Stable
    }
}

/// Newton on `det Delta` with the analytic log-derivative; `multiplicity` scales the step.
fn newton(kernel: &KernelModel, start: C64, multiplicity: usize) -> Option<C64> {
    let mut z = start;
    for _ in 0..100 {
        let (g, det) = log_derivative(kernel, z).ok()?;
        if det.norm() == 0.0 || !g.is_finite() {
            return Some(z);
        }
        let step = multiplicity as f64 / g;
        if !step.is_finite() {
            return None;
        }
        z -= step;
        if z.re <= -kernel.rho() {
            return None;
        }
        if step.norm() <= 1e-15 * (1.0 + z.norm()) {
            return Some(z);
        }
    }
    None
}

pub fn find_characteristic_roots(kernel: &KernelModel, rect: Rect, opts: &SpectralOptions) -> Result<SpectralSummary> {
    let contour = Contour::new(kernel, opts.boundary_tol);
    if rect.re_min <= -kernel.rho() {
        return Err(Error::Domain { re: rect.re_min, bound: -kernel.rho() });
    }
    let total = contour.winding(&rect)?;
    let mut found: Vec<CharacteristicRoot> = Vec::new();
    isolate(kernel, &contour, opts, rect, total, 0, &mut found)?;
    found.sort_by(|a, b| a.lambda.re.total_cmp(&b.lambda.re).then(a.lambda.im.total_cmp(&b.lambda.im)));
    let sum: usize = found.iter().map(|r| r.multiplicity).sum();
    if sum != total {
        return Err(Error::RootNonconvergence(format!("isolated {sum} roots but the region holds {total}")));
    }
    let count = |c: RootClass| found.iter().filter(|r| r.classification == c).map(|r| r.multiplicity).sum();
    let (n_u, n_c, n_s) = (count(RootClass::Unstable), count(RootClass::Center), count(RootClass::Stable));
    Ok(SpectralSummary { roots: found, region: rect, hyperbolic: n_c == 0, n_u, n_c, n_s, winding_count: total })
}

fn isolate(
    kernel: &KernelModel,
    contour: &Contour,
    opts: &SpectralOptions,
    rect: Rect,
    count: usize,
    depth: usize,
    out: &mut Vec<CharacteristicRoot>,
) -> Result<()> {
    if count == 0 {
        return Ok(());
    }
    let size = rect.width().max(rect.height());
    let tiny = size < 1e-7 * (1.0 + rect.center().norm());
    if count == 1 || tiny {
        if let Some(z) = newton(kernel, rect.center(), count) {
            let det = det_characteristic(kernel, z)?.norm();
            if rect.contains(z, 1e-9 * size) && det <= opts.root_tol {
                out.push(CharacteristicRoot {
                    lambda: z,
                    multiplicity: count,
                    det_residual: det,
                    classification: classify(z, opts.center_tol),
                });
                return Ok(());
            }
        }
    }
    if depth >= opts.max_depth {
        return Err(Error::RootNonconvergence(format!(
            "{count} root(s) in {rect:?} not isolated after {depth} subdivisions"
        )));
    }
    // Split off-center when a root sits on the cut.
    const OFFSETS: [f64; 6] = [0.5, 0.5137, 0.4713, 0.5411, 0.4389, 0.5873];
    let mut last_err = None;
    for frac in OFFSETS {
        let (a, b) = rect.split(frac);
        match (contour.winding(&a), contour.winding(&b)) {
            (Ok(ca), Ok(cb)) if ca + cb == count => {
                isolate(kernel, contour, opts, a, ca, depth + 1, out)?;
                return isolate(kernel, contour, opts, b, cb, depth + 1, out);
            }
            (Err(e), _) | (_, Err(e)) => last_err = Some(e),
            _ => {
                last_err = Some(Error::RootNonconvergence(format!("counts of halves of {rect:?} do not add up")));
            }
        }
    }
    Err(last_err.expect("at least one split attempted"))
}

/// Unit `v` with `Delta(lambda) v = 0`, and the residual `|Delta(lambda) v|`.
pub fn null_direction(kernel: &KernelModel, lambda: C64) -> Result<(Vec<C64>, f64)> {
    let delta = characteristic_matrix(kernel, lambda)?;
    let (v, _) = null_vector(&delta);
    let res = vec_norm(&crate::linalg::mat_vec(&delta, &v));
    Ok((v, res))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapConstants {
    pub alpha: f64,
    pub eps_gap: f64,
}

pub fn spectral_gap_constants(
    summary: &SpectralSummary,
    kernel: &KernelModel,
    margin: f64,
    safety: f64,
    center_tol: f64,
) -> Result<GapConstants> {
    let mut gap = kernel.rho() - margin;
    for r in &summary.roots {
        if r.classification == RootClass::Center {
            continue;
        }
        let d = r.lambda.re.abs();
        if d < 10.0 * center_tol {
            return Err(Error::DegenerateGap(r.lambda.re));
        }
        gap = gap.min(d);
    }
    let alpha = gap - safety;
    if !(alpha > 0.0) {
        return Err(Error::DegenerateGap(gap));
    }
    Ok(GapConstants { alpha, eps_gap: alpha / 10.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn family(nu: f64, rho: f64) -> KernelModel {
        KernelModel::scalar(&[(nu, 0, 1.0)], rho).unwrap()
    }

    #[test]
    fn characteristic_values() {
        assert!(characteristic_matrix(&family(1.0, 0.5), C64::from(0.0)).unwrap()[(0, 0)].norm() < 1e-15);
        let far = characteristic_matrix(&family(1.0, 0.5), C64::from(1e6)).unwrap();
        assert!((far[(0, 0)] - 1.0).norm() < 1e-5);
        let half = characteristic_matrix(&family(0.5, 0.75), C64::from(-0.5)).unwrap();
        assert!(half[(0, 0)].norm() < 1e-15);
    }

    #[test]
    fn counts_on_reference_rectangles() {
        assert_eq!(count_roots(&family(1.0, 0.5), Rect::symmetric(-0.4, 1.0, 1.0)).unwrap(), 1);
        assert_eq!(count_roots(&family(2.0, 0.5), Rect::symmetric(0.5, 2.0, 1.0)).unwrap(), 1);
        assert_eq!(count_roots(&family(0.5, 0.75), Rect::symmetric(0.0, 2.0, 1.0)).unwrap(), 0);
    }

    #[test]
    fn boundary_root_is_reported() {
        let err = count_roots(&family(1.0, 0.5), Rect::symmetric(0.0, 1.0, 1.0)).unwrap_err();
        assert!(matches!(err, Error::BoundaryRoot { .. } | Error::RootNonconvergence(_)));
    }

    #[test]
    fn critical_root_is_central() {
        let k = family(1.0, 0.5);
        let s = find_characteristic_roots(&k, default_search_rect(&k, 0.05), &SpectralOptions::default()).unwrap();
        assert_eq!(s.roots.len(), 1);
        assert!(s.roots[0].lambda.norm() < 1e-8);
        assert_eq!(s.roots[0].classification, RootClass::Center);
        assert!(!s.hyperbolic);
    }

    #[test]
    fn gap_constants() {
        let k = family(1.0, 0.5);
        let s = find_characteristic_roots(&k, default_search_rect(&k, 0.05), &SpectralOptions::default()).unwrap();
        let g = spectral_gap_constants(&s, &k, 0.05, 0.01, 1e-8).unwrap();
        assert!((g.alpha - 0.44).abs() < 1e-12);
        assert!((g.eps_gap - 0.044).abs() < 1e-12);

        let k = family(0.5, 0.75);
        let s = find_characteristic_roots(&k, default_search_rect(&k, 0.05), &SpectralOptions::default()).unwrap();
        assert!(spectral_gap_constants(&s, &k, 0.05, 0.01, 1e-8).unwrap().alpha < 0.5);
    }

    #[test]
    fn near_axis_noncentral_root_is_degenerate() {
        let k = family(1.0, 0.5);
        let mut s = find_characteristic_roots(&k, default_search_rect(&k, 0.05), &SpectralOptions::default()).unwrap();
        s.roots[0].lambda = C64::new(1e-9, 0.0);
        s.roots[0].classification = RootClass::Unstable;
        assert!(matches!(spectral_gap_constants(&s, &k, 0.05, 0.01, 1e-8), Err(Error::DegenerateGap(_))));
    }
}
