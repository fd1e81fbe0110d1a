//! Numerical toolkit for autonomous integral equations with infinite delay,
//! `x(t) = int_{-inf}^t K(t-s) x(s) ds + f(x_t)`, posed on the weighted history space
//! `L^1_rho`: characteristic roots, spectral projections, center manifolds, the reduced
//! central equation and simulation-based stability verdicts.

pub mod central;
pub mod decomposition;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod manifold;
pub mod phasespace;
pub mod spectral;

pub use error::{Error, Result};
pub use linalg::C64;

/// ChaCha8 generator for `seed`, on an independent stream per use site.
pub fn rng(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}
