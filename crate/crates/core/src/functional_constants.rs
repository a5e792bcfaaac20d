//! Lower-bound estimates of the functional-inequality constants
//!
//! * K₂: `‖φ‖³_{L³} ≤ K₂ ‖φ‖²_{W^{1,2}} ‖φ‖_{L¹}`
//! * K₃: `‖∇φ‖_{L⁴} ≤ K₃ ‖Δφ‖^{1/2}_{L²} ‖∇φ‖^{1/2}_{L²}` (Neumann φ)
//! * C_poincare: `‖φ − φ̄‖_{L²} ≤ C ‖∇φ‖_{L¹}`
//!
//! by normalized gradient ascent on the discrete quotients from an ensemble
//! of seeds.
//!
//! All three quotients are dilation invariant in two dimensions, so their
//! discrete suprema are reached by fields concentrated at the grid scale in
//! a corner.  The ensemble therefore carries corner-concentrated seeds (and
//! the constant field) next to the low-pass random ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{divergence_into, gradient_into, laplacian_into, GridSpec, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstantName {
    K2,
    K3,
    CPoincare,
}

impl ConstantName {
    pub fn label(self) -> &'static str {
        match self {
            ConstantName::K2 => "K2",
            ConstantName::K3 => "K3",
            ConstantName::CPoincare => "C_poincare",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "K2" | "k2" => Ok(ConstantName::K2),
            "K3" | "k3" => Ok(ConstantName::K3),
            "C_poincare" | "c_poincare" | "poincare" => Ok(ConstantName::CPoincare),
            _ => Err(Error::InvalidArgument(format!("unknown constant {s:?}"))),
        }
    }
}

/// Denominators below this mark a degenerate trial field.
const DEGENERATE: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateSettings {
    pub ensemble_size: usize,
    pub ascent_iterations: usize,
    /// initial relative step of the normalized ascent
    pub step_size: f64,
    pub seed: u64,
}

impl Default for EstimateSettings {
    fn default() -> Self {
        Self { ensemble_size: 16, ascent_iterations: 50, step_size: 0.25, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantEstimate {
    pub name: ConstantName,
    pub value: f64,
    pub argmax_field: ScalarField,
    pub grid: GridSpec,
    pub ensemble_size: usize,
    pub ascent_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub violations: usize,
    /// largest quotient / (value·inflation) seen
    pub worst_ratio: f64,
    pub worst_field: Option<ScalarField>,
}

struct Terms {
    /// Q (not its log)
    q: f64,
    /// ∇ ln Q with respect to the cell values
    grad: Vec<f64>,
}

fn face_gradient(g: &GridSpec, phi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; g.x_faces()];
    let mut gy = vec![0.0; g.y_faces()];
    gradient_into(g, phi, &mut gx, &mut gy);
    (gx, gy)
}

/// Cell density ½(l² + r² + b² + t²) of face data.
fn cell_density(g: &GridSpec, gx: &[f64], gy: &[f64]) -> Vec<f64> {
    let (nx, ny) = (g.nx, g.ny);
    let mut w = vec![0.0; g.cells()];
    for j in 0..ny {
        for i in 0..nx {
            let (l, r) = (gx[j * (nx + 1) + i], gx[j * (nx + 1) + i + 1]);
            let (b, t) = (gy[j * nx + i], gy[(j + 1) * nx + i]);
            w[j * nx + i] = 0.5 * (l * l + r * r + b * b + t * t);
        }
    }
    w
}

/// Per face, `g_f · (a_L + a_R)` for cell data `a` (zero on the boundary).
fn face_weighted(g: &GridSpec, gx: &[f64], gy: &[f64], a: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (nx, ny) = (g.nx, g.ny);
    let mut vx = vec![0.0; g.x_faces()];
    let mut vy = vec![0.0; g.y_faces()];
    for j in 0..ny {
        for i in 1..nx {
            let f = j * (nx + 1) + i;
            vx[f] = gx[f] * (a[j * nx + i - 1] + a[j * nx + i]);
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            let f = j * nx + i;
            vy[f] = gy[f] * (a[(j - 1) * nx + i] + a[j * nx + i]);
        }
    }
    (vx, vy)
}

/// Adjoint of the face gradient: `Gᵀv = −∇·v`.
fn grad_adjoint(g: &GridSpec, vx: &[f64], vy: &[f64]) -> Vec<f64> {
    let mut d = vec![0.0; g.cells()];
    divergence_into(g, vx, vy, &mut d);
    d.iter_mut().for_each(|v| *v = -*v);
    d
}

fn dirichlet(g: &GridSpec, gx: &[f64], gy: &[f64]) -> f64 {
    (gx.iter().map(|v| v * v).sum::<f64>() + gy.iter().map(|v| v * v).sum::<f64>()) * g.cell_area()
}

fn terms(name: ConstantName, g: &GridSpec, phi: &[f64]) -> Option<Terms> {
    let da = g.cell_area();
    let (gx, gy) = face_gradient(g, phi);
    match name {
        ConstantName::K2 => {
            let a = phi.iter().map(|v| v.abs().powi(3)).sum::<f64>() * da;
            let c = phi.iter().map(|v| v.abs()).sum::<f64>() * da;
            let mut lap = vec![0.0; g.cells()];
            laplacian_into(g, phi, &mut lap);
            let b = phi.iter().map(|v| v * v).sum::<f64>() * da + dirichlet(g, &gx, &gy);
            if b * c < DEGENERATE || a < DEGENERATE {
                return None;
            }
            let grad = (0..phi.len())
                .map(|k| {
                    let p = phi[k];
                    (3.0 * p.abs() * p / a - 2.0 * (p - lap[k]) / b - p.signum() / c) * da
                })
                .collect();
            Some(Terms { q: a / (b * c), grad })
        }
        ConstantName::K3 => {
            let w = cell_density(g, &gx, &gy);
            let e = w.iter().map(|v| v * v).sum::<f64>() * da;
            let mut lap = vec![0.0; g.cells()];
            laplacian_into(g, phi, &mut lap);
            let d = lap.iter().map(|v| v * v).sum::<f64>() * da;
            let bq = dirichlet(g, &gx, &gy);
            if d < DEGENERATE || bq < DEGENERATE || e < DEGENERATE {
                return None;
            }
            let (vx, vy) = face_weighted(g, &gx, &gy, &w);
            let de = grad_adjoint(g, &vx, &vy);
            let mut dd = vec![0.0; g.cells()];
            laplacian_into(g, &lap, &mut dd);
            let grad = (0..phi.len())
                .map(|k| 0.25 * (2.0 * de[k] / e - 2.0 * dd[k] / d + 2.0 * lap[k] / bq) * da)
                .collect();
            Some(Terms { q: (e / (d * bq)).powf(0.25), grad })
        }
        ConstantName::CPoincare => {
            let mean = phi.iter().sum::<f64>() / phi.len() as f64;
            let v = phi.iter().map(|p| (p - mean).powi(2)).sum::<f64>() * da;
            let w = cell_density(g, &gx, &gy);
            let tiny = 1e-300;
            let s: Vec<f64> = w.iter().map(|w| (w + tiny).sqrt()).collect();
            let p = s.iter().sum::<f64>() * da;
            if p < DEGENERATE || v < DEGENERATE {
                return None;
            }
            let inv: Vec<f64> = s.iter().map(|s| 0.5 / s).collect();
            let (vx, vy) = face_weighted(g, &gx, &gy, &inv);
            let dp = grad_adjoint(g, &vx, &vy);
            let grad = (0..phi.len()).map(|k| (phi[k] - mean) / v * da - dp[k] / p * da).collect();
            Some(Terms { q: v.sqrt() / p, grad })
        }
    }
}

/// The discrete quotient of `name` on `phi`; `None` for degenerate fields.
pub fn quotient(name: ConstantName, phi: &ScalarField) -> Option<f64> {
    terms(name, &phi.grid, &phi.values).map(|t| t.q)
}

/// Gaussian noise on the lowest `modes × modes` cosine modes (which already
/// satisfy the reflective boundary condition).
pub fn low_pass_field(grid: GridSpec, modes: usize, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    low_pass_with(grid, modes, &mut rng, 0.0)
}

fn low_pass_with(grid: GridSpec, modes: usize, rng: &mut ChaCha8Rng, decay: f64) -> ScalarField {
    let (nx, ny) = (grid.nx, grid.ny);
    let mx = modes.min(nx).max(1);
    let my = modes.min(ny).max(1);
    let pi = std::f64::consts::PI;
    // cos(πk(i+½)/n) tables, row i
    let table = |n: usize, m: usize| -> Vec<f64> {
        let mut t = vec![0.0; n * m];
        for i in 0..n {
            for k in 0..m {
                t[i * m + k] = (pi * k as f64 * (i as f64 + 0.5) / n as f64).cos();
            }
        }
        t
    };
    let tx = table(nx, mx);
    let ty = table(ny, my);
    let mut a = vec![0.0; mx * my];
    for l in 0..my {
        for k in 0..mx {
            let z: f64 = StandardNormal.sample(rng);
            a[l * mx + k] = z / (1.0 + (k * k + l * l) as f64).powf(decay);
        }
    }
    // b[l][i] = Σ_k a[l][k] cos_k(i)
    let mut b = vec![0.0; my * nx];
    for l in 0..my {
        for i in 0..nx {
            b[l * nx + i] = (0..mx).map(|k| a[l * mx + k] * tx[i * mx + k]).sum();
        }
    }
    let mut v = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            v[j * nx + i] = (0..my).map(|l| ty[j * my + l] * b[l * nx + i]).sum();
        }
    }
    ScalarField { grid, values: v, bc: crate::grid::Bc::Neumann }
}

/// Fields concentrated at the grid scale in each corner, with Gaussian
/// profiles of width 1, 2 and 4 cells, plus the constant field (which is
/// where the K₂ quotient equals 1/|Ω|).
fn corner_seeds(grid: GridSpec) -> Vec<ScalarField> {
    let mut out = vec![ScalarField::constant(grid, 1.0)];
    let (lx, ly) = (grid.lx, grid.ly);
    let h = grid.hx().max(grid.hy());
    for width in [1.0, 2.0, 4.0] {
        for (cx, cy) in [(0.0, 0.0), (lx, 0.0), (0.0, ly), (lx, ly)] {
            let s = width * h;
            out.push(ScalarField::from_fn(grid, |x, y| (-((x - cx).powi(2) + (y - cy).powi(2)) / (s * s)).exp()));
        }
    }
    out
}

/// Normalized ascent from `phi`; returns the best (quotient, field) seen.
fn ascend(name: ConstantName, g: &GridSpec, mut phi: Vec<f64>, iterations: usize, step: f64) -> Option<(f64, Vec<f64>)> {
    let mut cur = terms(name, g, &phi)?;
    for _ in 0..iterations {
        let gnorm = cur.grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        let pnorm = phi.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(gnorm > 0.0) || !gnorm.is_finite() {
            break;
        }
        let mut s = step * pnorm / gnorm;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = phi.iter().zip(&cur.grad).map(|(p, d)| p + s * d).collect();
            if let Some(t) = terms(name, g, &trial) {
                if t.q > cur.q {
                    phi = trial;
                    cur = t;
                    accepted = true;
                    break;
                }
            }
            s *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Some((cur.q, phi))
}

pub fn estimate(name: ConstantName, grid: GridSpec, settings: EstimateSettings) -> Result<ConstantEstimate> {
    if !(settings.step_size > 0.0) {
        return Err(Error::InvalidArgument(format!("step_size must be positive, got {}", settings.step_size)));
    }
    let modes = grid.nx.max(grid.ny).div_ceil(4);
    let mut seeds: Vec<ScalarField> = (0..settings.ensemble_size)
        .map(|k| low_pass_field(grid, modes, settings.seed.wrapping_add(k as u64)))
        .collect();
    seeds.extend(corner_seeds(grid));
    refine_from(name, grid, seeds, settings)
}

fn refine_from(name: ConstantName, grid: GridSpec, seeds: Vec<ScalarField>, settings: EstimateSettings) -> Result<ConstantEstimate> {
    let best = seeds
        .into_par_iter()
        .filter_map(|s| ascend(name, &grid, s.values, settings.ascent_iterations, settings.step_size))
        .reduce_with(|a, b| if b.0 > a.0 { b } else { a });
    let (value, values) =
        best.ok_or_else(|| Error::InvalidArgument(format!("all {} trial fields degenerate", name.label())))?;
    Ok(ConstantEstimate {
        name,
        value,
        argmax_field: ScalarField { grid, values, bc: crate::grid::Bc::Neumann },
        grid,
        ensemble_size: settings.ensemble_size,
        ascent_iterations: settings.ascent_iterations,
    })
}

/// Fresh random field for verification trial `k`: random mode cutoff and
/// spectral decay, so both rough and smooth fields are drawn.
fn trial_field(grid: GridSpec, seed: u64, k: u64) -> ScalarField {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(k + 1));
    let max_modes = grid.nx.max(grid.ny).div_ceil(4);
    let modes = rng.random_range(1..=max_modes);
    let decay = rng.random_range(0.0..1.5);
    let shift = rng.random_range(-1.0..1.0);
    let f = low_pass_with(grid, modes + 1, &mut rng, decay);
    f.map(|v| v + shift)
}

/// Checks the inequality with `value·inflation` on `trials` fresh fields.
pub fn verify(est: &ConstantEstimate, trials: usize, inflation: f64, seed: u64) -> Result<VerifyReport> {
    if !(inflation >= 1.0) {
        return Err(Error::InvalidArgument(format!("inflation must be ≥ 1, got {inflation}")));
    }
    let bound = est.value * inflation;
    let results: Vec<(u64, f64)> = (0..trials as u64)
        .into_par_iter()
        .filter_map(|k| quotient(est.name, &trial_field(est.grid, seed, k)).map(|q| (k, q / bound)))
        .collect();
    let violations = results.iter().filter(|r| r.1 > 1.0).count();
    let worst = results.iter().copied().fold(None, |acc: Option<(u64, f64)>, r| match acc {
        Some(a) if a.1 >= r.1 => Some(a),
        _ => Some(r),
    });
    Ok(VerifyReport {
        violations,
        worst_ratio: worst.map_or(0.0, |w| w.1),
        worst_field: worst.map(|w| trial_field(est.grid, seed, w.0)),
    })
}

/// Ratio of the quotient on `field` to `value·inflation`.
pub fn ratio_on(est: &ConstantEstimate, field: &ScalarField, inflation: f64) -> Option<f64> {
    quotient(est.name, field).map(|q| q / (est.value * inflation))
}

/// Estimate followed by a verification pass; a violating field is fed back
/// as a new seed (up to three rounds).
pub fn estimate_verified(
    name: ConstantName,
    grid: GridSpec,
    settings: EstimateSettings,
    trials: usize,
    inflation: f64,
) -> Result<(ConstantEstimate, VerifyReport)> {
    let mut est = estimate(name, grid, settings)?;
    for round in 0..3u64 {
        let rep = verify(&est, trials, inflation, settings.seed.wrapping_add(1_000_003 * (round + 1)))?;
        if rep.violations == 0 {
            return Ok((est, rep));
        }
        log::warn!("{}: {} violations at inflation {inflation}, re-estimating", name.label(), rep.violations);
        let mut seeds = vec![est.argmax_field.clone()];
        seeds.extend(rep.worst_field);
        let next = refine_from(name, grid, seeds, settings)?;
        if next.value > est.value {
            est = ConstantEstimate { ensemble_size: est.ensemble_size, ..next };
        }
    }
    let rep = verify(&est, trials, inflation, settings.seed.wrapping_add(7))?;
    Ok((est, rep))
}
