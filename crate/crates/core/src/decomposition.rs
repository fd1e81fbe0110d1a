//! Center and unstable eigenbases, dual bases under the kernel pairing, projections and the
//! reduced matrices `G`, `H` of the finite-dimensional parts.
//!
//! The pairing is
//! `<<psi, phi>> = int_{-inf}^0 int_theta^0 psi(xi - theta) K(-theta) phi(xi) dxi dtheta`.
//! Swapping the order of integration turns it into `int_0^window D(s) phi(-s) ds` with
//! `D(s) = sum_r w_r e^{lambda_r s} int_s^inf e^{-lambda_r u} K(u) du`, which has a closed form
//! for exponential-polynomial kernels and is integrated against the history by product
//! integration.

use crate::error::{Error, Result};
use crate::kernel::KernelModel;
use crate::linalg::{gauss_legendre, CMat, C64, ONE, ZERO};
use crate::phasespace::{Grid, GridFunctional, Propagator, Segment};
use crate::spectral::{characteristic_matrix, null_direction, RootClass, SpectralSummary};
use rand::Rng;

/// Row-vector valued `tau -> sum_r w_r e^{-lambda_r tau}` on `tau >= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualFunction {
    pub terms: Vec<(Vec<C64>, C64)>,
}

impl DualFunction {
    pub fn exponential(w: Vec<C64>, lambda: C64) -> Self {
        Self { terms: vec![(w, lambda)] }
    }

    pub fn constant(w: Vec<C64>) -> Self {
        Self::exponential(w, ZERO)
    }

    pub fn zero(dim: usize) -> Self {
        Self::constant(vec![ZERO; dim])
    }

    pub fn eval(&self, tau: f64) -> Vec<C64> {
        let m = self.terms.first().map_or(0, |t| t.0.len());
        let mut out = vec![ZERO; m];
        for (w, lam) in &self.terms {
            let e = (-lam * tau).exp();
            for (o, wi) in out.iter_mut().zip(w) {
                *o += wi * e;
            }
        }
        out
    }

    fn combine(rows: &[DualFunction], coeffs: &[C64]) -> Self {
        let mut terms = Vec::new();
        for (row, c) in rows.iter().zip(coeffs) {
            for (w, lam) in &row.terms {
                terms.push((w.iter().map(|x| x * c).collect(), *lam));
            }
        }
        Self { terms }
    }

    /// `int_0^inf |psi(tau)| e^{-rho tau} d tau`.
    pub fn sharp_norm(&self, rho: f64) -> f64 {
        let slowest = self.terms.iter().map(|(_, l)| l.re + rho).fold(f64::INFINITY, f64::min);
        let horizon = 40.0 / slowest.max(1e-3);
        let cells = 4000;
        let dh = horizon / cells as f64;
        let (x, w) = gauss_legendre(6);
        let mut acc = 0.0;
        for c in 0..cells {
            for (xi, wi) in x.iter().zip(&w) {
                let t = (c as f64 + 0.5 * (xi + 1.0)) * dh;
                let v: f64 = self.eval(t).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                acc += 0.5 * dh * wi * v * (-rho * t).exp();
            }
        }
        acc
    }

    /// Density `D(s)` of the pairing with this function.
    pub fn pairing_density(&self, kernel: &KernelModel) -> impl Fn(f64, &mut [C64]) + '_ {
        let tails: Vec<_> = self.terms.iter().map(|(w, lam)| (w.clone(), kernel.poly().tail(*lam))).collect();
        let m = kernel.dim();
        move |s: f64, out: &mut [C64]| {
            out.iter_mut().for_each(|z| *z = ZERO);
            let mut mat = vec![ZERO; m * m];
            for (w, tail) in &tails {
                tail.eval_into(s, &mut mat);
                for j in 0..m {
                    for i in 0..m {
                        out[j] += w[i] * mat[i * m + j];
                    }
                }
            }
        }
    }

    pub fn pairing_weights(&self, kernel: &KernelModel, grid: Grid) -> GridFunctional {
        GridFunctional::from_density(grid, 1, self.pairing_density(kernel))
    }
}

fn stack(rows: &[GridFunctional], grid: Grid) -> GridFunctional {
    let m = grid.dim;
    let d = rows.len();
    let mut weights = vec![ZERO; grid.len() * d * m];
    for (i, r) in rows.iter().enumerate() {
        for k in 0..grid.len() {
            weights[k * d * m + i * m..k * d * m + (i + 1) * m].copy_from_slice(r.block(k));
        }
    }
    GridFunctional::from_weights(grid, d, weights)
}

pub fn bilinear_form(kernel: &KernelModel, psi: &DualFunction, phi: &Segment) -> C64 {
    psi.pairing_weights(kernel, *phi.grid()).apply(phi)[0]
}

/// Eigenfunctions `theta -> e^{lambda theta} v` for the roots of one spectral class.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalBasis {
    pub lambdas: Vec<C64>,
    pub vectors: Vec<Vec<C64>>,
    pub columns: Vec<Segment>,
    /// Largest `|Delta(lambda_i) v_i|`.
    pub residual: f64,
}

pub type CenterBasis = ModalBasis;

impl ModalBasis {
    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    pub fn combine(&self, z: &[C64], grid: Grid) -> Segment {
        let mut out = Segment::zeros(grid);
        for (col, c) in self.columns.iter().zip(z) {
            out.add_scaled(*c, col);
        }
        out
    }
}

pub fn modal_basis(kernel: &KernelModel, summary: &SpectralSummary, grid: Grid, class: RootClass) -> Result<ModalBasis> {
    let mut lambdas = Vec::new();
    let mut vectors = Vec::new();
    let mut columns = Vec::new();
    let mut residual: f64 = 0.0;
    for root in summary.roots.iter().filter(|r| r.classification == class) {
        if root.multiplicity > 1 {
            return Err(Error::Multiplicity { lambda: root.lambda, multiplicity: root.multiplicity });
        }
        let (v, res) = null_direction(kernel, root.lambda)?;
        residual = residual.max(res);
        let lam = root.lambda;
        columns.push(Segment::from_profile(grid, &v, |th| (lam * th).exp()));
        lambdas.push(lam);
        vectors.push(v);
    }
    if columns.len() > 1 {
        let gram = gram_determinant(&columns);
        if gram < 1e-8 {
            return Err(Error::SingularGram(gram));
        }
    }
    Ok(ModalBasis { lambdas, vectors, columns, residual })
}

pub fn center_basis(kernel: &KernelModel, summary: &SpectralSummary, grid: Grid) -> Result<CenterBasis> {
    modal_basis(kernel, summary, grid, RootClass::Center)
}

/// Determinant of the weighted L2 Gram matrix of the normalized columns.
fn gram_determinant(cols: &[Segment]) -> f64 {
    let grid = *cols[0].grid();
    let w = grid.norm_weights();
    let inner = |a: &Segment, b: &Segment| -> C64 {
        a.values()
            .iter()
            .zip(b.values())
            .enumerate()
            .map(|(idx, (x, y))| x.conj() * y * w[idx / grid.dim])
            .sum()
    };
    let d = cols.len();
    let norms: Vec<f64> = cols.iter().map(|c| inner(c, c).re.sqrt()).collect();
    let g = CMat::from_fn(d, d, |i, j| inner(&cols[i], &cols[j]) / (norms[i] * norms[j]));
    g.determinant().norm()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualBasis {
    pub rows: Vec<DualFunction>,
    /// Largest deviation of `<<psi_i, phi_j>>` from the identity.
    pub duality_residual: f64,
}

/// Left null vectors of `Delta(lambda_i)` give candidate rows; the pairing matrix against the
/// basis is inverted so the returned rows are exactly biorthogonal under the discrete pairing.
pub fn dual_basis(kernel: &KernelModel, basis: &ModalBasis) -> Result<DualBasis> {
    Ok(joint_dual(kernel, &[basis])?.remove(0))
}

fn joint_dual(kernel: &KernelModel, blocks: &[&ModalBasis]) -> Result<Vec<DualBasis>> {
    let lambdas: Vec<C64> = blocks.iter().flat_map(|b| b.lambdas.iter().copied()).collect();
    let columns: Vec<&Segment> = blocks.iter().flat_map(|b| b.columns.iter()).collect();
    let d = lambdas.len();
    if d == 0 {
        return Ok(blocks.iter().map(|_| DualBasis { rows: vec![], duality_residual: 0.0 }).collect());
    }
    let grid = *columns[0].grid();
    let mut cands = Vec::with_capacity(d);
    for &lam in &lambdas {
        let delta = characteristic_matrix(kernel, lam)?;
        let (w, _) = crate::linalg::left_null_vector(&delta);
        cands.push(DualFunction::exponential(w, lam));
    }
    let cand_weights: Vec<GridFunctional> = cands.iter().map(|c| c.pairing_weights(kernel, grid)).collect();
    let gram = CMat::from_fn(d, d, |i, j| cand_weights[i].apply(columns[j])[0]);
    let svd = gram.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax.max(1e-300)) {
        return Err(Error::SingularGram(smin));
    }
    let inv = gram.try_inverse().ok_or(Error::SingularGram(smin))?;
    let rows: Vec<DualFunction> = (0..d)
        .map(|i| DualFunction::combine(&cands, &inv.row(i).iter().copied().collect::<Vec<_>>()))
        .collect();
    let pair = stack(
        &rows.iter().map(|r| r.pairing_weights(kernel, grid)).collect::<Vec<_>>(),
        grid,
    );
    let mut residual: f64 = 0.0;
    for (j, col) in columns.iter().enumerate() {
        let z = pair.apply(col);
        for (i, zi) in z.iter().enumerate() {
            let target = if i == j { ONE } else { ZERO };
            residual = residual.max((zi - target).norm());
        }
    }
    let mut out = Vec::new();
    let mut offset = 0;
    for b in blocks {
        out.push(DualBasis { rows: rows[offset..offset + b.dim()].to_vec(), duality_residual: residual });
        offset += b.dim();
    }
    Ok(out)
}

/// Basis, dual rows and reduced matrices of one spectral class.
#[derive(Clone, Debug)]
pub struct ModalBlock {
    pub basis: ModalBasis,
    pub dual: DualBasis,
    /// Stacked pairing weights: `phi -> (<<psi_i, phi>>)_i`.
    pub pairing: GridFunctional,
    /// Diagonal matrix of the roots.
    pub g: CMat,
    /// `lim_n <<Psi, Gamma^n x>>` as a `d x m` matrix.
    pub h: CMat,
}

impl ModalBlock {
    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn coordinates(&self, phi: &Segment) -> Vec<C64> {
        if self.dim() == 0 {
            return vec![];
        }
        self.pairing.apply(phi)
    }

    pub fn segment(&self, z: &[C64]) -> Segment {
        self.basis.combine(z, *self.pairing.grid())
    }

    /// `e^{t G} z`
    pub fn flow(&self, t: f64, z: &[C64]) -> Vec<C64> {
        self.basis.lambdas.iter().zip(z).map(|(l, z)| (l * t).exp() * z).collect()
    }

    /// `G z`
    pub fn flow_generator(&self, z: &[C64]) -> Vec<C64> {
        self.basis.lambdas.iter().zip(z).map(|(l, z)| l * z).collect()
    }

    /// `H x`
    pub fn inject(&self, x: &[C64]) -> Vec<C64> {
        crate::linalg::mat_vec(&self.h, x)
    }
}

#[derive(Clone, Debug)]
pub struct ReducedSystem {
    pub grid: Grid,
    pub center: ModalBlock,
    pub unstable: ModalBlock,
}

impl ReducedSystem {
    /// Builds both finite-dimensional blocks from a root summary.
    pub fn build(kernel: &KernelModel, summary: &SpectralSummary, grid: Grid) -> Result<Self> {
        let bc = center_basis(kernel, summary, grid)?;
        let bu = modal_basis(kernel, summary, grid, RootClass::Unstable)?;
        let mut duals = joint_dual(kernel, &[&bc, &bu])?;
        let du = duals.pop().expect("two blocks");
        let dc = duals.pop().expect("two blocks");
        let center = reduced_block(kernel, bc, dc, grid)?;
        let unstable = reduced_block(kernel, bu, du, grid)?;
        Ok(Self { grid, center, unstable })
    }

    pub fn d_c(&self) -> usize {
        self.center.dim()
    }

    pub fn d_u(&self) -> usize {
        self.unstable.dim()
    }
}

/// Center-block reduced system from a basis and its dual (no unstable part).
pub fn reduced_matrices(kernel: &KernelModel, basis: &CenterBasis, dual: &DualBasis, grid: Grid) -> Result<ReducedSystem> {
    let center = reduced_block(kernel, basis.clone(), dual.clone(), grid)?;
    let empty = ModalBasis { lambdas: vec![], vectors: vec![], columns: vec![], residual: 0.0 };
    let unstable = reduced_block(kernel, empty, DualBasis { rows: vec![], duality_residual: 0.0 }, grid)?;
    Ok(ReducedSystem { grid, center, unstable })
}

fn reduced_block(kernel: &KernelModel, basis: ModalBasis, dual: DualBasis, grid: Grid) -> Result<ModalBlock> {
    let d = basis.dim();
    let m = grid.dim;
    let pairing = if d == 0 {
        GridFunctional::zeros(grid, 0)
    } else {
        stack(&dual.rows.iter().map(|r| r.pairing_weights(kernel, grid)).collect::<Vec<_>>(), grid)
    };
    let g = CMat::from_fn(d, d, |i, j| if i == j { basis.lambdas[i] } else { ZERO });
    let mut h = CMat::zeros(d, m);
    for (i, row) in dual.rows.iter().enumerate() {
        let density = row.pairing_density(kernel);
        let estimate = |n: usize| -> Vec<C64> { mollified_pairing(&density, m, n) };
        let (h8, h16, h32) = (estimate(8), estimate(16), estimate(32));
        for k in 0..m {
            let r1 = 2.0 * h16[k] - h8[k];
            let r2 = 2.0 * h32[k] - h16[k];
            let change = (r2 - r1).norm();
            if change > 1e-3 {
                return Err(Error::ExtrapolationDivergence(change));
            }
            h[(i, k)] = r2;
        }
    }
    Ok(ModalBlock { basis, dual, pairing, g, h })
}

/// `<<psi, Gamma^n e_k>>` for every `k`, integrating the continuous mollifier exactly.
fn mollified_pairing(density: &impl Fn(f64, &mut [C64]), m: usize, n: usize) -> Vec<C64> {
    let moll = crate::phasespace::Mollifier::new(n);
    let (x, w) = gauss_legendre(16);
    let len = 1.0 / n as f64;
    let mut out = vec![ZERO; m];
    let mut buf = vec![ZERO; m];
    for (xi, wi) in x.iter().zip(&w) {
        let s = 0.5 * len * (xi + 1.0);
        density(s, &mut buf);
        let g = moll.eval(-s);
        for k in 0..m {
            out[k] += buf[k] * (0.5 * len * wi * g);
        }
    }
    out
}

/// `(z, Pi^c phi)` with `z_i = <<psi_i, phi>>`.
pub fn project_center(reduced: &ReducedSystem, phi: &Segment) -> (Vec<C64>, Segment) {
    let z = reduced.center.coordinates(phi);
    let part = reduced.center.segment(&z);
    (z, part)
}

pub fn project_unstable(reduced: &ReducedSystem, phi: &Segment) -> (Vec<C64>, Segment) {
    let z = reduced.unstable.coordinates(phi);
    let part = reduced.unstable.segment(&z);
    (z, part)
}

/// `phi - Pi^c phi`, the stable-plus-unstable component.
pub fn project_su(reduced: &ReducedSystem, phi: &Segment) -> Segment {
    phi.sub(&project_center(reduced, phi).1)
}

/// `phi - Pi^c phi - Pi^u phi`.
pub fn project_stable(reduced: &ReducedSystem, phi: &Segment) -> Segment {
    project_su(reduced, phi).sub(&project_unstable(reduced, phi).1)
}

/// Random test histories: smooth damped oscillations, narrow hats and indicator steps.
pub fn random_segments(grid: Grid, count: usize, real: bool, rng: &mut impl Rng) -> Vec<Segment> {
    let m = grid.dim;
    let rc = |rng: &mut dyn rand::RngCore| -> C64 {
        let re: f64 = rng.random_range(-1.0..1.0);
        let im: f64 = if real { 0.0 } else { rng.random_range(-1.0..1.0) };
        C64::new(re, im)
    };
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let v: Vec<C64> = (0..m).map(|_| rc(rng)).collect();
        let seg = match i % 3 {
            0 => {
                let modes: Vec<(C64, f64, f64, f64)> = (0..3)
                    .map(|_| (rc(rng), rng.random_range(0.0..1.0), rng.random_range(0.0..3.0), rng.random_range(0.0..6.3)))
                    .collect();
                Segment::from_profile(grid, &v, |th| {
                    modes.iter().map(|(a, b, c, d)| a * (b * th).exp() * (c * th + d).cos()).sum()
                })
            }
            1 => {
                let reach = (grid.n / 4).max(2);
                let k0 = rng.random_range(0..reach);
                let width = grid.h * rng.random_range(1..4) as f64;
                let center = grid.theta(k0);
                Segment::from_profile(grid, &v, |th| C64::from((1.0 - (th - center).abs() / width).max(0.0)))
            }
            _ => {
                let a: f64 = rng.random_range(0.5..5.0);
                Segment::from_profile(grid, &v, |th| C64::from(if th >= -a { 1.0 } else { 0.0 }))
            }
        };
        out.push(seg);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecompositionConstants {
    /// Working estimate of `sup_t ||T^s(t)|| e^{alpha t}` (a sample maximum).
    pub c: f64,
    /// Working estimate of `||Pi^s|| + ||Pi^c|| + ||Pi^u||` (a sample maximum).
    pub c1: f64,
    pub norm_center: f64,
    pub norm_stable: f64,
    pub norm_unstable: f64,
    pub sample_size: usize,
    pub t_fit: f64,
    /// Largest `||T^s(t) phi|| e^{alpha t} / ||phi||` over the last tenth of the fit window,
    /// relative to `c`; values near 1 mean the decay rate `alpha` is not yet visible.
    pub tail_ratio: f64,
}

/// Projection ratios and the stable decay constant, maximized over `sample`.
pub fn estimate_decomposition_constants(
    reduced: &ReducedSystem,
    kernel: &KernelModel,
    alpha: f64,
    sample: &[Segment],
    t_fit: f64,
) -> DecompositionConstants {
    let grid = reduced.grid;
    let prop = Propagator::new(kernel, grid);
    let steps = grid.steps(t_fit);
    let (mut pc, mut ps, mut pu, mut c, mut tail): (f64, f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for phi in sample {
        let n = phi.norm();
        if n == 0.0 {
            continue;
        }
        let (_, cpart) = project_center(reduced, phi);
        let (_, upart) = project_unstable(reduced, phi);
        let mut spart = phi.sub(&cpart).sub(&upart);
        pc = pc.max(cpart.norm() / n);
        pu = pu.max(upart.norm() / n);
        ps = ps.max(spart.norm() / n);
        c = c.max(spart.norm() / n);
        for j in 1..=steps {
            spart = project_stable(reduced, &prop.step_segment(&spart, None));
            let r = spart.norm() * (alpha * j as f64 * grid.h).exp() / n;
            c = c.max(r);
            if j * 10 >= steps * 9 {
                tail = tail.max(r);
            }
        }
    }
    DecompositionConstants {
        c: c.max(1.0),
        c1: pc + ps + pu,
        norm_center: pc,
        norm_stable: ps,
        norm_unstable: pu,
        sample_size: sample.len(),
        t_fit,
        tail_ratio: if c > 0.0 { tail / c } else { 0.0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{default_search_rect, find_characteristic_roots, SpectralOptions};

    fn critical(h: f64) -> (KernelModel, ReducedSystem) {
        let k = KernelModel::scalar(&[(1.0, 0, 1.0)], 0.5).unwrap();
        let s = find_characteristic_roots(&k, default_search_rect(&k, 0.05), &SpectralOptions::default()).unwrap();
        let g = Grid::new(1, 0.5, h, 40.0);
        let r = ReducedSystem::build(&k, &s, g).unwrap();
        (k, r)
    }

    #[test]
    fn pairing_of_constants() {
        let k = KernelModel::scalar(&[(1.0, 0, 1.0)], 0.5).unwrap();
        let g = Grid::new(1, 0.5, 0.05, 40.0);
        let one = Segment::constant(g, &[ONE]);
        let v = bilinear_form(&k, &DualFunction::constant(vec![ONE]), &one);
        assert!((v - 1.0).norm() < 1e-4);
        assert_eq!(bilinear_form(&k, &DualFunction::zero(1), &one), ZERO);
    }

    #[test]
    fn pairing_of_indicator() {
        let k = KernelModel::scalar(&[(1.0, 0, 1.0)], 0.5).unwrap();
        let g = Grid::new(1, 0.5, 0.025, 40.0);
        let ind = Segment::from_profile(g, &[ONE], |th| {
            C64::from(if th > -1.0 + 1e-9 { 1.0 } else if th > -1.0 - 1e-9 { 0.5 } else { 0.0 })
        });
        let v = bilinear_form(&k, &DualFunction::constant(vec![ONE]), &ind);
        assert!((v.re - (1.0 - (-1f64).exp())).abs() < 1e-4, "{v}");
    }

    #[test]
    fn critical_scalar_reduced_data() {
        let (_, r) = critical(0.05);
        assert_eq!(r.d_c(), 1);
        assert_eq!(r.d_u(), 0);
        assert!(r.center.basis.columns[0].values().iter().all(|z| (z - ONE).norm() < 1e-12));
        let psi = r.center.dual.rows[0].eval(3.0)[0];
        assert!((psi - ONE).norm() < 1e-4);
        assert!(r.center.g[(0, 0)].norm() < 1e-6);
        assert!((r.center.h[(0, 0)] - ONE).norm() < 1e-3);
        assert!(r.center.dual.duality_residual < 1e-12);
    }

    #[test]
    fn projections_are_complementary() {
        let (_, r) = critical(0.05);
        let g = r.grid;
        let ind = Segment::from_profile(g, &[ONE], |th| C64::from(if th >= -1.0 { 1.0 } else { 0.0 }));
        let (z, part) = project_center(&r, &ind);
        let (z2, _) = project_center(&r, &part);
        assert!((z[0] - z2[0]).norm() < 1e-12);
        let rest = project_su(&r, &ind);
        assert!(project_center(&r, &rest).0[0].norm() < 1e-12);
    }
}
