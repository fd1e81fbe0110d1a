//! Small dense complex linear algebra helpers on top of nalgebra.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Spectral norm by power iteration on `A^H A`.
pub fn op_norm(a: &CMat) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let frob = a.norm();
    if frob == 0.0 {
        return 0.0;
    }
    let ata = a.adjoint() * a;
    let n = ata.ncols();
    // A fixed, non-symmetric start vector avoids orthogonality with the dominant direction.
    let mut v = nalgebra::DVector::<C64>::from_fn(n, |i, _| C64::new(1.0 + 0.37 * i as f64, 0.11 * i as f64));
    v /= C64::from(v.norm());
    let mut sigma2 = 0.0;
    for _ in 0..500 {
        let w = &ata * &v;
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        let next = nw;
        v = w / C64::from(nw);
        if (next - sigma2).abs() <= 1e-10 * next.max(1e-300) {
            sigma2 = next;
            break;
        }
        sigma2 = next;
    }
    sigma2.sqrt()
}

pub fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Unit null vector of a (numerically) singular square matrix, from the smallest singular triple.
/// The phase is fixed so the largest entry is real and positive.
pub fn null_vector(a: &CMat) -> (Vec<C64>, f64) {
    let svd = a.clone().svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let (idx, smin) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .map(|(i, s)| (i, *s))
        .expect("nonempty");
    let v: Vec<C64> = vt.row(idx).iter().map(|z| z.conj()).collect();
    (fix_phase(v), smin)
}

/// Unit row vector `w` with `w A = 0`.
pub fn left_null_vector(a: &CMat) -> (Vec<C64>, f64) {
    let (w, s) = null_vector(&a.transpose());
    (w, s)
}

pub fn fix_phase(mut v: Vec<C64>) -> Vec<C64> {
    let big = v
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or(ONE);
    if big.norm() > 0.0 {
        let phase = big.conj() / big.norm();
        for z in v.iter_mut() {
            *z *= phase;
        }
    }
    v
}

pub fn mat_vec(a: &CMat, x: &[C64]) -> Vec<C64> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)] * x[j]).sum())
        .collect()
}

/// Gauss-Legendre nodes and weights on [-1, 1] (Golub-Welsch free, Newton on P_n).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}
