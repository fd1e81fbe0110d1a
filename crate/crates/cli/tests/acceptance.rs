//! End-to-end acceptance checks, one PASS/FAIL line per criterion.

use infdelay::central::{
    fit_cubic_coefficient, linearized_class, mean_rate, reduction_report, Branch, CentralSystem, EnsembleOptions,
    StabilityClass,
};
use infdelay::decomposition::{
    bilinear_form, dual_basis, estimate_decomposition_constants, project_center, project_stable, project_su,
    random_segments, DualFunction, ReducedSystem,
};
use infdelay::kernel::{CubicFunctional, KernelModel, Nonlinearity};
use infdelay::manifold::{
    attractivity_diagnostics, default_probes, fit_log_slope, select_delta, ManifoldConstants, ManifoldKind, ManifoldMap,
    ManifoldProblem, WeightedPath,
};
use infdelay::phasespace::{solve_forced, solve_homogeneous, solve_nonlinear, vcf_segment, Grid, NonlinearOptions, Segment};
use infdelay::spectral::{
    default_search_rect, find_characteristic_roots, spectral_gap_constants, GapConstants, RootClass, SpectralOptions,
    SpectralSummary,
};
use infdelay::C64;
use rand::Rng;
use std::path::PathBuf;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

type Check = std::result::Result<(), String>;

const H: f64 = 0.05;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($fmt)+));
        }
    };
}

fn c(x: f64) -> Vec<C64> {
    vec![C64::from(x)]
}

struct Scalar {
    kernel: KernelModel,
    summary: SpectralSummary,
    grid: Grid,
    gap: GapConstants,
    reduced: Arc<ReducedSystem>,
}

fn scalar(nu: f64, rho: f64) -> Scalar {
    let kernel = KernelModel::scalar(&[(nu, 0, 1.0)], rho).unwrap();
    let summary = find_characteristic_roots(&kernel, default_search_rect(&kernel, 0.05), &SpectralOptions::default()).unwrap();
    let grid = Grid::new(1, rho, H, Grid::default_window(rho));
    let gap = spectral_gap_constants(&summary, &kernel, 0.05, 0.01, 1e-8).unwrap();
    let reduced = Arc::new(ReducedSystem::build(&kernel, &summary, grid).unwrap());
    Scalar { kernel, summary, grid, gap, reduced }
}

fn cubic(s: &Scalar, eps: f64) -> Arc<dyn Nonlinearity> {
    let profile = KernelModel::scalar(&[(1.0, 0, 1.0)], s.kernel.rho()).unwrap();
    Arc::new(CubicFunctional::new(profile.poly(), &s.kernel, s.grid, eps, 0.0))
}

fn problem(s: &Scalar, f: Arc<dyn Nonlinearity>) -> Arc<ManifoldProblem> {
    let sample = random_segments(s.grid, 30, true, &mut infdelay::rng(1, 1));
    let dc = estimate_decomposition_constants(&s.reduced, &s.kernel, s.gap.alpha, &sample, 20.0);
    let consts = ManifoldConstants::new(dc.c, dc.c1, s.gap);
    let probes = default_probes(&s.reduced, true, 12, &mut infdelay::rng(1, 2));
    let cutoff = select_delta(&consts, f.as_ref(), &probes, 1.0).unwrap();
    Arc::new(ManifoldProblem::new(&s.kernel, s.reduced.clone(), f, cutoff, consts))
}

fn critical(eps: f64) -> (Scalar, Arc<ManifoldProblem>) {
    let s = scalar(1.0, 0.5);
    let f = cubic(&s, eps);
    let p = problem(&s, f);
    (s, p)
}

fn opts() -> EnsembleOptions {
    EnsembleOptions { seed: 1, ..EnsembleOptions::default() }
}

fn criterion_1() -> Check {
    let s = scalar(1.0, 0.5);
    ensure!(s.summary.roots.len() == 1, "{} roots", s.summary.roots.len());
    let r = &s.summary.roots[0];
    ensure!(r.lambda.norm() <= 1e-8, "root at {}", r.lambda);
    ensure!(r.classification == RootClass::Center && r.multiplicity == 1, "{:?}, multiplicity {}", r.classification, r.multiplicity);
    Ok(())
}

fn criterion_2() -> Check {
    for nu in [0.25, 0.5, 1.5, 2.0] {
        // The root -0.75 of nu = 0.25 needs rho > 0.75 to lie in the search half plane.
        let s = scalar(nu, 0.9);
        ensure!(s.summary.roots.len() == 1, "nu = {nu}: {} roots", s.summary.roots.len());
        let l = s.summary.roots[0].lambda;
        ensure!((l.re - (nu - 1.0)).abs() <= 1e-8 && l.im.abs() <= 1e-8, "nu = {nu}: root {l}");
        let expected = if nu < 1.0 { StabilityClass::ExponentiallyStable } else { StabilityClass::Unstable };
        ensure!(linearized_class(&s.summary) == expected, "nu = {nu}: {:?}", linearized_class(&s.summary));
    }
    Ok(())
}

fn criterion_3() -> Check {
    let s = scalar(1.0, 0.5);
    let one = C64::from(1.0);
    let v = bilinear_form(&s.kernel, &DualFunction::constant(vec![one]), &Segment::constant(s.grid, &[one]));
    ensure!((v - 1.0).norm() <= 1e-4, "pairing {v}");
    let dual = dual_basis(&s.kernel, &s.reduced.center.basis).map_err(|e| e.to_string())?;
    let w = bilinear_form(&s.kernel, &dual.rows[0], &s.reduced.center.basis.columns[0]);
    ensure!((w - 1.0).norm() <= 1e-4, "dual pairing {w}");
    for phi in random_segments(s.grid, 20, false, &mut infdelay::rng(3, 9)) {
        let (_, p1) = project_center(&s.reduced, &phi);
        let (_, p2) = project_center(&s.reduced, &p1);
        ensure!(p2.sub(&p1).norm() <= 1e-6 * phi.norm().max(1.0), "idempotence gap {}", p2.sub(&p1).norm());
    }
    let cb = &s.reduced.center;
    ensure!(cb.g[(0, 0)].norm() <= 1e-6, "G_c = {}", cb.g[(0, 0)]);
    let col = cb.basis.columns[0].at(0)[0];
    ensure!((cb.h[(0, 0)] * col - 1.0).norm() <= 1e-3, "H_c = {}", cb.h[(0, 0)] * col);
    Ok(())
}

fn criterion_4() -> Check {
    let mut rng = infdelay::rng(4, 0);
    for _ in 0..12 {
        let (nu, p, a) = (rng.random_range(0.2..2.0), rng.random_range(0..2u32), rng.random_range(0.8..2.0));
        let k = KernelModel::scalar(&[(nu, p, a)], 0.5).unwrap();
        let grid = Grid::new(1, 0.5, H, 30.0);
        let phi = random_segments(grid, 1, true, &mut rng).remove(0);
        let (s, t) = (rng.random_range(1..40) as f64 * H, rng.random_range(1..40) as f64 * H);
        let joint = solve_homogeneous(&k, &phi, s + t);
        let split = solve_homogeneous(&k, &solve_homogeneous(&k, &phi, s), t);
        let scale = phi.norm().max(joint.norm());
        ensure!(joint.sub(&split).norm() <= 5.0 * H * scale, "semigroup gap {}", joint.sub(&split).norm() / scale);
    }
    let k = KernelModel::scalar(&[(1.0, 0, 1.0)], 0.5).unwrap();
    let h = 1.0 / 40.0;
    let grid = Grid::new(1, 0.5, h, 40.0);
    let phi = Segment::from_fn(grid, |th| c((0.5 * th).exp()));
    let forcing = |t: f64| c((2.0 * t).sin() * (-0.2 * t).exp());
    let reference = solve_forced(&k, 0.0, &phi, &forcing, 2.0);
    let gaps: Vec<f64> =
        [8, 16, 32].iter().map(|&n| vcf_segment(&k, 0.0, &phi, &forcing, 2.0, n).sub(&reference).norm()).collect();
    ensure!(gaps[1] < gaps[0] && gaps[2] < gaps[1], "vcf gaps not decreasing: {gaps:?}");
    for (g, n) in gaps.iter().zip([8.0, 16.0, 32.0]) {
        ensure!(*g <= 10.0 * (1.0 / n + h), "vcf gap {g} at n = {n}");
    }
    Ok(())
}

fn random_path(p: &ManifoldProblem, rng: &mut impl Rng) -> WeightedPath {
    let delta = p.delta();
    let (a, b, w) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.1..1.0));
    let stable = random_segments(p.grid(), 1, true, rng).remove(0);
    let stable = stable.scaled(C64::from(0.5 * delta / stable.norm()));
    p.make_path(ManifoldKind::Center, move |t| {
        (c(delta * (a + b * (w * t).sin())), vec![], stable.scaled(C64::from((-0.1 * t.abs()).exp())))
    })
}

fn criterion_5() -> Check {
    let (s, p) = critical(-1.0);
    let eta = p.consts.eta;
    let delta = p.delta();
    let mut rng = infdelay::rng(5, 11);
    let psi = c(0.5 * delta);
    for _ in 0..10 {
        let (y1, y2) = (random_path(&p, &mut rng), random_path(&p, &mut rng));
        let ratio = p.contraction_step(&psi, &y1).distance(&p.contraction_step(&psi, &y2), &s.reduced, eta)
            / y1.distance(&y2, &s.reduced, eta);
        ensure!(ratio <= 0.55, "contraction ratio {ratio}");
    }
    for _ in 0..20 {
        let a: f64 = rng.random_range(-4.0..4.0) * delta;
        let b: f64 = a + rng.random_range(-1.0..1.0) * delta;
        let fa = p.solve_center_fixed_point(&c(a)).map_err(|e| e.to_string())?;
        let fb = p.solve_center_fixed_point(&c(b)).map_err(|e| e.to_string())?;
        ensure!(fa.max_ratio <= 0.6 && fb.max_ratio <= 0.6, "Picard ratio {} / {}", fa.max_ratio, fb.max_ratio);
        let lip = fa.path.distance(&fb.path, &s.reduced, eta) / s.reduced.center.segment(&c(a - b)).norm();
        ensure!(lip <= 2.0 * p.consts.c, "Lambda Lipschitz {lip} > 2C = {}", 2.0 * p.consts.c);
    }
    Ok(())
}

fn criterion_6() -> Check {
    let (s, p) = critical(-1.0);
    let delta = p.delta();
    let f0 = p.center_map(&c(0.0)).map_err(|e| e.to_string())?.norm();
    ensure!(f0 <= 1e-8, "F(0) = {f0}");
    let mut pts = Vec::new();
    for sc in [0.1f64, 0.05, 0.025] {
        pts.push((sc.ln(), p.center_map(&c(sc * 10.0 * delta)).map_err(|e| e.to_string())?.norm()));
    }
    let slope = fit_log_slope(&pts);
    ensure!(slope >= 1.5, "tangency slope {slope}");
    let psi = 0.5 * delta;
    let base = p.solve_center_fixed_point_tol(&c(psi), 1e-14).map_err(|e| e.to_string())?;
    let tm = p.tangent_map(&base, &[c(1.0)]).map_err(|e| e.to_string())?;
    let mut errors = Vec::new();
    for sc in [1e-3, 1e-4] {
        let e = sc * delta;
        let moved = p.solve_center_fixed_point_tol(&c(psi + e), 1e-14).map_err(|e| e.to_string())?;
        let fd = moved.path.lincomb(1.0 / e, &base.path, -1.0 / e);
        errors.push(fd.distance(&tm.columns[0], &s.reduced, p.consts.eta_prime));
    }
    let ratio = errors[0] / errors[1];
    ensure!((5.0..=20.0).contains(&ratio), "difference errors {errors:?}, ratio {ratio}");
    Ok(())
}

fn criterion_7() -> Check {
    let (s, p) = critical(-1.0);
    let map = ManifoldMap::center(p.clone(), 5.0);
    let delta = p.delta();
    let err = |e: infdelay::Error| e.to_string();
    let psi = c(delta);
    let x0 = s.reduced.center.segment(&psi).axpy(C64::from(1.0), &map.eval(&psi).map_err(err)?);
    let cut = p.cutoff_nonlinearity();
    let traj = solve_nonlinear(p.kernel(), 0.0, &x0, &cut, 10.0, NonlinearOptions::default()).map_err(err)?;
    let tol = 10.0 * p.consts.fp_tol + 10.0 * H;
    for k in 0..=20 {
        let seg = traj.segment_at(0.5 * k as f64);
        let (z, _) = project_center(&s.reduced, &seg);
        let xi = project_su(&s.reduced, &seg).sub(&map.eval(&z).map_err(err)?).norm();
        ensure!(xi <= tol, "invariance gap {xi} at t = {}", 0.5 * k as f64);
    }
    let bump = project_stable(&s.reduced, &Segment::from_fn(s.grid, |th| c((1.0 + th).max(0.0))));
    let x0 = s.reduced.center.segment(&c(0.5 * delta)).axpy(C64::from(0.25 * delta / bump.norm()), &bump);
    let traj = solve_nonlinear(p.kernel(), 0.0, &x0, p.nonlinearity().as_ref(), 10.0, NonlinearOptions::default())
        .map_err(err)?;
    let rep = attractivity_diagnostics(&map, &traj, 10.0, 0.5, 1.5).map_err(err)?;
    ensure!(rep.fitted_rate < 0.0, "fitted rate {}", rep.fitted_rate);
    ensure!(rep.satisfied, "bound ratio {} (beta0 {})", rep.max_bound_ratio, rep.constants.beta0);
    Ok(())
}

fn criterion_8() -> Check {
    for eps in [-1.0, 1.0, 2.0] {
        let (_, p) = critical(eps);
        let sys = CentralSystem::new(p, 5.0);
        let fit = fit_cubic_coefficient(&sys).map_err(|e| e.to_string())?;
        ensure!((fit.coefficient - eps).norm() <= 0.1 * f64::abs(eps), "eps = {eps}: fitted {}", fit.coefficient);
    }
    Ok(())
}

fn verify_cli(config: &str) -> std::result::Result<(String, String), String> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let status = Command::new(env!("CARGO_BIN_EXE_infdelay"))
        .arg("--config")
        .arg(root.join("configs").join(config))
        .arg("--out")
        .arg(out.path())
        .arg("--quiet")
        .arg("verify")
        .status()
        .map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("verify {config} exited with {status}"));
    }
    let text = std::fs::read_to_string(out.path().join("verify.json")).map_err(|e| e.to_string())?;
    let json: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let get = |k: &str| json["reduction"][k].as_str().unwrap_or("missing").to_string();
    Ok((get("reduced_verdict"), get("full_verdict")))
}

fn criterion_9() -> Check {
    for (eps, stable) in [(-1.0, true), (1.0, false)] {
        let (s, p) = critical(eps);
        let sys = CentralSystem::new(p.clone(), 5.0);
        let rep = reduction_report(Some(&sys), &s.kernel, &s.summary, &s.reduced, p.nonlinearity().as_ref(), 5.0, &opts())
            .map_err(|e| e.to_string())?;
        let central = rep.reduced_class();
        ensure!(rep.branch == Branch::Center, "eps = {eps}: linearized branch");
        ensure!(
            central.is_stable() == stable && rep.full.classification.is_stable() == stable && rep.agreement,
            "eps = {eps}: verdicts {:?} / {:?}",
            central,
            rep.full.classification
        );
    }
    for (config, verdict) in [("critical_scalar_stable.cfg", "stable"), ("critical_scalar_unstable.cfg", "unstable")] {
        let (reduced, full) = verify_cli(config)?;
        ensure!(reduced.contains(verdict) && full.contains(verdict), "{config}: verdicts {reduced} / {full}");
    }
    Ok(())
}

fn criterion_10() -> Check {
    for (nu, rho, rate, tol) in [(0.5, 0.75, -0.5, 0.05), (2.0, 0.5, 1.0, 0.1)] {
        let s = scalar(nu, rho);
        let f = cubic(&s, -1.0);
        let rep = reduction_report(None, &s.kernel, &s.summary, &s.reduced, f.as_ref(), 5.0, &opts())
            .map_err(|e| e.to_string())?;
        let got = mean_rate(&rep.full).ok_or_else(|| format!("nu = {nu}: no fitted rate"))?;
        ensure!((got - rate).abs() <= tol, "nu = {nu}: rate {got}");
    }
    Ok(())
}

fn main() {
    let criteria: [(&str, fn() -> Check, Duration); 10] = [
        ("critical spectrum", criterion_1, Duration::from_secs(1)),
        ("family roots", criterion_2, Duration::from_secs(1)),
        ("duality and projections", criterion_3, Duration::from_secs(10)),
        ("semigroup and variation of constants", criterion_4, Duration::from_secs(30)),
        ("contraction and fixed point", criterion_5, Duration::from_secs(120)),
        ("manifold tangency and smoothness", criterion_6, Duration::from_secs(120)),
        ("invariance and attractivity", criterion_7, Duration::from_secs(120)),
        ("cubic coefficient", criterion_8, Duration::from_secs(60)),
        ("reduction principle", criterion_9, Duration::from_secs(600)),
        ("hyperbolic decay rates", criterion_10, Duration::from_secs(60)),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check().and_then(|()| {
            let took = start.elapsed();
            if took > *budget {
                Err(format!("took {:.1}s, budget {:.0}s", took.as_secs_f64(), budget.as_secs_f64()))
            } else {
                Ok(())
            }
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(()) => println!("criterion {:2} {name} ... PASS ({secs:.1}s)", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {:2} {name} ... FAIL ({secs:.1}s): {msg}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
