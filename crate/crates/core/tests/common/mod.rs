#![allow(dead_code)]

use infdelay::decomposition::{estimate_decomposition_constants, random_segments, DecompositionConstants, ReducedSystem};
use infdelay::kernel::{CubicFunctional, KernelModel, Nonlinearity, ZeroNonlinearity};
use infdelay::manifold::{default_probes, select_delta, ManifoldConstants, ManifoldProblem};
use infdelay::phasespace::Grid;
use infdelay::spectral::{
    default_search_rect, find_characteristic_roots, spectral_gap_constants, GapConstants, SpectralOptions, SpectralSummary,
};
use std::sync::Arc;

pub const H: f64 = 0.05;

/// Scalar `K(t) = nu e^{-t}` with the standard search and grid.
pub struct Scalar {
    pub kernel: KernelModel,
    pub summary: SpectralSummary,
    pub grid: Grid,
    pub gap: GapConstants,
    pub reduced: Arc<ReducedSystem>,
}

pub fn scalar(nu: f64, rho: f64) -> Scalar {
    scalar_h(nu, rho, H)
}

pub fn scalar_h(nu: f64, rho: f64, h: f64) -> Scalar {
    let kernel = KernelModel::scalar(&[(nu, 0, 1.0)], rho).unwrap();
    let summary = find_characteristic_roots(&kernel, default_search_rect(&kernel, 0.05), &SpectralOptions::default()).unwrap();
    let grid = Grid::new(1, rho, h, Grid::default_window(rho));
    let gap = spectral_gap_constants(&summary, &kernel, 0.05, 0.01, 1e-8).unwrap();
    let reduced = Arc::new(ReducedSystem::build(&kernel, &summary, grid).unwrap());
    Scalar { kernel, summary, grid, gap, reduced }
}

pub fn cubic(s: &Scalar, eps: f64) -> Arc<dyn Nonlinearity> {
    let profile = KernelModel::scalar(&[(1.0, 0, 1.0)], s.kernel.rho()).unwrap();
    Arc::new(CubicFunctional::new(profile.poly(), &s.kernel, s.grid, eps, 0.0))
}

pub fn zero() -> Arc<dyn Nonlinearity> {
    Arc::new(ZeroNonlinearity { dim: 1 })
}

pub fn decomposition_constants(s: &Scalar, seed: u64) -> DecompositionConstants {
    let mut rng = infdelay::rng(seed, 1);
    let sample = random_segments(s.grid, 30, true, &mut rng);
    estimate_decomposition_constants(&s.reduced, &s.kernel, s.gap.alpha, &sample, 20.0)
}

/// The full manifold problem for `K = nu e^{-t}` and the given nonlinearity, constants from `seed`.
pub fn problem(s: &Scalar, f: Arc<dyn Nonlinearity>, seed: u64) -> Arc<ManifoldProblem> {
    let dc = decomposition_constants(s, seed);
    let consts = ManifoldConstants::new(dc.c, dc.c1, s.gap);
    let mut rng = infdelay::rng(seed, 2);
    let probes = default_probes(&s.reduced, true, 12, &mut rng);
    let cutoff = select_delta(&consts, f.as_ref(), &probes, 1.0).unwrap();
    Arc::new(ManifoldProblem::new(&s.kernel, s.reduced.clone(), f, cutoff, consts))
}

/// Critical example `K = e^{-t}`, `rho = 1/2`, with cubic coefficient `eps`.
pub fn critical(eps: f64) -> (Scalar, Arc<ManifoldProblem>) {
    let s = scalar(1.0, 0.5);
    let f = cubic(&s, eps);
    let p = problem(&s, f, 1);
    (s, p)
}
