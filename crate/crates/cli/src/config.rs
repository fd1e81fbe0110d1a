//! INI-style problem configuration.
//!
//! ```text
//! [kernel]
//! dim = 1
//! rho = 0.5
//! scale = 1.0
//! # term = <power> <decay> <c_11> ... <c_mm>   (row-major, complex literals like 2-0.5i)
//! term = 0 1.0 1.0
//!
//! [nonlinearity]
//! form = cubic_functional
//! eps_cubic = -1
//! g_quartic = 0
//! ```
//!
//! Lines starting with `#` or `;` are comments. `term` may repeat; every other key may appear
//! once per section.

use infdelay::kernel::{CubicFunctional, KernelModel, Nonlinearity, Term, ZeroNonlinearity};
use infdelay::linalg::CMat;
use infdelay::phasespace::Grid;
use infdelay::spectral::{Rect, SpectralOptions};
use infdelay::{Error, Result, C64};
use std::collections::BTreeMap;
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq)]
pub struct TermSpec {
    pub power: u32,
    pub decay: C64,
    pub coeff: Vec<C64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FormSpec {
    Zero,
    CubicFunctional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Expectation {
    Stable,
    Unstable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemConfig {
    pub dim: usize,
    pub rho: f64,
    /// `K = scale * P`, where `P` is the sum of the terms.
    pub scale: f64,
    pub terms: Vec<TermSpec>,
    pub form: FormSpec,
    pub eps_cubic: f64,
    pub g_quartic: f64,
    pub h: f64,
    pub window: Option<f64>,
    pub mollifier_max: usize,
    pub path_tail_tol: f64,
    pub fp_tol: f64,
    pub root_tol: f64,
    pub center_tol: f64,
    pub boundary_tol: f64,
    pub search: Option<Rect>,
    pub margin: f64,
    pub safety: f64,
    pub samples: usize,
    pub t_fit: f64,
    pub delta_ceiling: f64,
    pub probes: usize,
    pub radius: f64,
    pub horizon: Option<f64>,
    pub perturbation: f64,
    pub directions: usize,
    pub t_end: f64,
    pub amplitude: f64,
    pub seed: u64,
    pub expect: Option<Expectation>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            rho: 0.5,
            scale: 1.0,
            terms: vec![],
            form: FormSpec::Zero,
            eps_cubic: 0.0,
            g_quartic: 0.0,
            h: 0.05,
            window: None,
            mollifier_max: 16,
            path_tail_tol: 1e-6,
            fp_tol: 1e-8,
            root_tol: 1e-10,
            center_tol: 1e-8,
            boundary_tol: 1e-9,
            search: None,
            margin: 0.05,
            safety: 0.01,
            samples: 30,
            t_fit: 20.0,
            delta_ceiling: 1.0,
            probes: 12,
            radius: 5.0,
            horizon: None,
            perturbation: 0.1,
            directions: 8,
            t_end: 50.0,
            amplitude: 0.01,
            seed: 0,
            expect: None,
        }
    }
}

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::Config { line, message: message.into() }
}

/// Parses `a`, `bi`, `a+bi`, `a-bi` (also with `j`); whitespace is not allowed inside.
pub fn parse_complex(s: &str) -> Option<C64> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    let Some(body) = s.strip_suffix(['i', 'j']) else {
        return s.parse::<f64>().ok().map(C64::from);
    };
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    let imag = |t: &str| -> Option<f64> {
        match t {
            "" | "+" => Some(1.0),
            "-" => Some(-1.0),
            _ => t.parse().ok(),
        }
    };
    match split {
        Some(k) => Some(C64::new(body[..k].parse().ok()?, imag(&body[k..])?)),
        None => Some(C64::new(0.0, imag(body)?)),
    }
}

impl ProblemConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ProblemConfig::default();
        let mut section = String::new();
        let mut seen: BTreeMap<(String, String), usize> = BTreeMap::new();
        let mut kernel_line = 0;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| err(line_no, "unterminated section header"))?;
                section = name.trim().to_string();
                const SECTIONS: [&str; 11] = [
                    "kernel", "nonlinearity", "grid", "tolerances", "search", "decomposition", "manifold", "central",
                    "simulate", "run", "verify",
                ];
                if !SECTIONS.contains(&section.as_str()) {
                    return Err(err(line_no, format!("unknown section [{section}]")));
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err(line_no, "expected `key = value`"))?;
            let (key, value) = (key.trim().to_string(), value.trim());
            if section.is_empty() {
                return Err(err(line_no, "key outside of any section"));
            }
            if key != "term" {
                if let Some(prev) = seen.insert((section.clone(), key.clone()), line_no) {
                    return Err(err(line_no, format!("duplicate key `{key}` (first set on line {prev})")));
                }
            }
            let num = || -> Result<f64> {
                value.parse::<f64>().map_err(|_| err(line_no, format!("`{key}` expects a number, got `{value}`")))
            };
            let int = || -> Result<u64> {
                value.parse::<u64>().map_err(|_| err(line_no, format!("`{key}` expects a nonnegative integer, got `{value}`")))
            };
            match (section.as_str(), key.as_str()) {
                ("kernel", "dim") => {
                    cfg.dim = int()? as usize;
                    kernel_line = line_no;
                }
                ("kernel", "rho") => cfg.rho = num()?,
                ("kernel", "scale") | ("kernel", "nu") => cfg.scale = num()?,
                ("kernel", "term") => {
                    let parts: Vec<&str> = value.split_whitespace().collect();
                    if parts.len() < 3 {
                        return Err(err(line_no, "term needs `<power> <decay> <coefficients...>`"));
                    }
                    let power = parts[0].parse::<u32>().map_err(|_| err(line_no, "term power must be a nonnegative integer"))?;
                    let decay = parse_complex(parts[1]).ok_or_else(|| err(line_no, format!("bad decay `{}`", parts[1])))?;
                    let coeff = parts[2..]
                        .iter()
                        .map(|p| parse_complex(p).ok_or_else(|| err(line_no, format!("bad coefficient `{p}`"))))
                        .collect::<Result<Vec<_>>>()?;
                    cfg.terms.push(TermSpec { power, decay, coeff });
                    if kernel_line == 0 {
                        kernel_line = line_no;
                    }
                }
                ("nonlinearity", "form") => {
                    cfg.form = match value {
                        "zero" => FormSpec::Zero,
                        "cubic_functional" => FormSpec::CubicFunctional,
                        _ => return Err(err(line_no, format!("unknown form `{value}` (zero | cubic_functional)"))),
                    }
                }
                ("nonlinearity", "eps_cubic") => cfg.eps_cubic = num()?,
                ("nonlinearity", "g_quartic") => cfg.g_quartic = num()?,
                ("grid", "h") => cfg.h = num()?,
                ("grid", "window") => cfg.window = Some(num()?),
                ("grid", "mollifier_max") => cfg.mollifier_max = int()? as usize,
                ("grid", "path_tail_tol") => cfg.path_tail_tol = num()?,
                ("tolerances", "fp_tol") => cfg.fp_tol = num()?,
                ("tolerances", "root_tol") => cfg.root_tol = num()?,
                ("tolerances", "center_tol") => cfg.center_tol = num()?,
                ("tolerances", "boundary_tol") => cfg.boundary_tol = num()?,
                ("search", "rect") => {
                    let v: Vec<f64> = value
                        .split_whitespace()
                        .map(|p| p.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| err(line_no, "rect expects four numbers: re_min re_max im_min im_max"))?;
                    if v.len() != 4 || v[0] >= v[1] || v[2] >= v[3] {
                        return Err(err(line_no, "rect expects re_min < re_max and im_min < im_max"));
                    }
                    cfg.search = Some(Rect::new(v[0], v[1], v[2], v[3]));
                }
                ("search", "margin") => cfg.margin = num()?,
                ("search", "safety") => cfg.safety = num()?,
                ("decomposition", "samples") => cfg.samples = int()? as usize,
                ("decomposition", "t_fit") => cfg.t_fit = num()?,
                ("manifold", "delta_ceiling") => cfg.delta_ceiling = num()?,
                ("manifold", "probes") => cfg.probes = int()? as usize,
                ("central", "radius") => cfg.radius = num()?,
                ("central", "horizon") => cfg.horizon = Some(num()?),
                ("central", "perturbation") => cfg.perturbation = num()?,
                ("central", "directions") => cfg.directions = int()? as usize,
                ("simulate", "t_end") => cfg.t_end = num()?,
                ("simulate", "amplitude") => cfg.amplitude = num()?,
                ("run", "seed") => cfg.seed = int()?,
                ("verify", "expect") => {
                    cfg.expect = Some(match value {
                        "stable" => Expectation::Stable,
                        "unstable" => Expectation::Unstable,
                        _ => return Err(err(line_no, format!("unknown expectation `{value}` (stable | unstable)"))),
                    })
                }
                _ => return Err(err(line_no, format!("unknown key `{key}` in [{section}]"))),
            }
        }
        let line_of = |key: &str| seen.iter().find(|((_, k), _)| k == key).map_or(0, |(_, &l)| l);
        cfg.validate(kernel_line, line_of)?;
        Ok(cfg)
    }

    fn validate(&self, kernel_line: usize, line_of: impl Fn(&str) -> usize) -> Result<()> {
        if self.terms.is_empty() {
            return Err(err(kernel_line, "the kernel needs at least one `term`"));
        }
        if self.dim == 0 {
            return Err(err(kernel_line, "dim must be positive"));
        }
        for t in &self.terms {
            if t.coeff.len() != self.dim * self.dim {
                return Err(err(
                    kernel_line,
                    format!("term coefficients: expected {} entries, found {}", self.dim * self.dim, t.coeff.len()),
                ));
            }
        }
        let positive = [
            ("rho", self.rho),
            ("h", self.h),
            ("path_tail_tol", self.path_tail_tol),
            ("fp_tol", self.fp_tol),
            ("root_tol", self.root_tol),
            ("center_tol", self.center_tol),
            ("boundary_tol", self.boundary_tol),
            ("margin", self.margin),
            ("safety", self.safety),
            ("t_fit", self.t_fit),
            ("delta_ceiling", self.delta_ceiling),
            ("radius", self.radius),
            ("t_end", self.t_end),
            ("amplitude", self.amplitude),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(err(line_of(name), format!("`{name}` must be positive, got {v}")));
            }
        }
        if self.mollifier_max as f64 * self.h > 1.0 {
            return Err(err(line_of("h").max(line_of("mollifier_max")), format!("grid step {} too coarse for mollifier index {}", self.h, self.mollifier_max)));
        }
        Ok(())
    }

    /// Unscaled profile `P` as a kernel model.
    pub fn profile(&self) -> Result<KernelModel> {
        let terms = self
            .terms
            .iter()
            .map(|t| Term {
                coeff: CMat::from_row_slice(self.dim, self.dim, &t.coeff),
                power: t.power,
                decay: t.decay,
            })
            .collect();
        KernelModel::new(self.dim, terms, self.rho)
    }

    pub fn kernel(&self) -> Result<KernelModel> {
        let p = self.profile()?;
        KernelModel::new(self.dim, p.poly().scaled(C64::from(self.scale)).terms().to_vec(), self.rho)
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.dim, self.rho, self.h, self.window.unwrap_or_else(|| Grid::default_window(self.rho)))
    }

    pub fn nonlinearity(&self, kernel: &KernelModel, grid: Grid) -> Result<Arc<dyn Nonlinearity>> {
        Ok(match self.form {
            FormSpec::Zero => Arc::new(ZeroNonlinearity { dim: self.dim }),
            FormSpec::CubicFunctional => {
                let profile = self.profile()?;
                Arc::new(CubicFunctional::new(profile.poly(), kernel, grid, self.eps_cubic, self.g_quartic))
            }
        })
    }

    pub fn spectral_options(&self) -> SpectralOptions {
        SpectralOptions {
            root_tol: self.root_tol,
            center_tol: self.center_tol,
            boundary_tol: self.boundary_tol,
            ..SpectralOptions::default()
        }
    }
}
