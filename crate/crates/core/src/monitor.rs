//! Trajectory diagnostics: per-record metrics, the step audits of the
//! differential inequalities, the z-budget and K₄ audits over a trace, and
//! convergence fits.
//!
//! Audits never fail a run; they produce residual columns.  Columns in a
//! trace are normalized by the audit's scale, so "passes with 2% slack" is
//! simply `column ≤ 0.02`.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::dynamics::{Integrator, PotentialData, SimState, TransportSign};
use crate::energy::{self, Certificate, K4Trajectory};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField, VectorField};
use crate::regularize::Sensitivity;

/// One row of a run trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub mass_n: f64,
    /// ‖n − mean(n₀)‖_∞
    pub linf_n_dev: f64,
    pub linf_c: f64,
    pub linf_u: f64,
    /// ‖∇c/c‖_∞, evaluated as ‖∇z‖_∞.
    pub linf_gradc_over_c: f64,
    pub f_mu: f64,
    pub int_gradz_sq: f64,
    pub int_nlogn: f64,
    pub int_n_sq: f64,
    pub d_n: f64,
    pub d_z: f64,
    pub int_gradz_4: f64,
    pub int_z: f64,
    pub min_z: f64,
    pub residual_l2: f64,
    pub residual_z4: f64,
    pub residual_energy: f64,
    pub residual_zbound: f64,
}

pub const TRACE_HEADER: [&str; 19] = [
    "t",
    "mass_n",
    "linf_n_minus_mean",
    "linf_c",
    "linf_u",
    "linf_gradc_over_c",
    "F_mu",
    "int_gradz_sq",
    "int_nlogn",
    "int_n_sq",
    "dissipation_n",
    "dissipation_z",
    "int_gradz_4",
    "int_z",
    "min_z",
    "residual_l2",
    "residual_z4",
    "residual_energy",
    "residual_zbound",
];

impl TraceRecord {
    pub fn to_row(&self) -> [f64; 19] {
        [
            self.t,
            self.mass_n,
            self.linf_n_dev,
            self.linf_c,
            self.linf_u,
            self.linf_gradc_over_c,
            self.f_mu,
            self.int_gradz_sq,
            self.int_nlogn,
            self.int_n_sq,
            self.d_n,
            self.d_z,
            self.int_gradz_4,
            self.int_z,
            self.min_z,
            self.residual_l2,
            self.residual_z4,
            self.residual_energy,
            self.residual_zbound,
        ]
    }

    pub fn from_row(r: &[f64; 19]) -> Self {
        Self {
            t: r[0],
            mass_n: r[1],
            linf_n_dev: r[2],
            linf_c: r[3],
            linf_u: r[4],
            linf_gradc_over_c: r[5],
            f_mu: r[6],
            int_gradz_sq: r[7],
            int_nlogn: r[8],
            int_n_sq: r[9],
            d_n: r[10],
            d_z: r[11],
            int_gradz_4: r[12],
            int_z: r[13],
            min_z: r[14],
            residual_l2: r[15],
            residual_z4: r[16],
            residual_energy: r[17],
            residual_zbound: r[18],
        }
    }
}

/// Writes a trace as CSV; `comments` become leading `# ` lines.
pub fn write_trace_csv(path: &Path, comments: &[String], trace: &[TraceRecord]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for c in comments {
        writeln!(file, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record(TRACE_HEADER)?;
    for r in trace {
        w.write_record(r.to_row().iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRecord>> {
    let bad = |msg: String| Error::Format { path: path.to_path_buf(), msg };
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = rd.headers()?.clone();
    if header.iter().ne(TRACE_HEADER.iter().copied()) {
        return Err(bad(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut out = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let mut row = [0.0; 19];
        for (k, cell) in rec.iter().enumerate() {
            row[k] = cell.trim().parse().map_err(|_| bad(format!("row {}: bad number {cell:?}", line + 1)))?;
        }
        out.push(TraceRecord::from_row(&row));
    }
    Ok(out)
}

/// Checks the trace invariants: strictly increasing t and mass constant to
/// `rel_tol` of the first record.
pub fn validate_trace(trace: &[TraceRecord], rel_tol: f64) -> Result<()> {
    for w in trace.windows(2) {
        if !(w[1].t > w[0].t) {
            return Err(Error::InvalidArgument(format!("trace time not increasing at t = {}", w[1].t)));
        }
    }
    if let Some(first) = trace.first() {
        let m0 = first.mass_n;
        for r in trace {
            if (r.mass_n - m0).abs() > rel_tol * m0.abs().max(1e-300) {
                return Err(Error::InvalidArgument(format!("mass drift at t = {}: {} vs {m0}", r.t, r.mass_n)));
            }
        }
    }
    Ok(())
}

/// Every integral the audits need, evaluated once per state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateMetrics {
    pub t: f64,
    pub mass_n: f64,
    pub linf_n_dev: f64,
    pub linf_c: f64,
    pub linf_u: f64,
    pub linf_gradz: f64,
    pub f_mu: f64,
    pub int_gradz_sq: f64,
    pub int_nlogn: f64,
    pub int_n_sq: f64,
    pub d_n: f64,
    pub d_z: f64,
    pub int_gradz_4: f64,
    pub int_z: f64,
    pub min_z: f64,
    pub int_gradn_sq: f64,
    /// ∫n²|∇z|²
    pub int_n2_gradz2: f64,
    /// ∫|∇w|², w = |∇z|²
    pub int_grad_w_sq: f64,
    /// ∫|∇z|⁶
    pub int_gradz_6: f64,
    /// ∫|∇z|⁴|∇u|
    pub int_gradz4_gradu: f64,
}

impl StateMetrics {
    /// `n_ref` is the reference mean for `linf_n_dev`, `mu` the energy
    /// parameter.
    pub fn compute(state: &SimState, n_ref: f64, mu: f64) -> Self {
        let g = state.grid();
        let da = g.cell_area();
        let n = &state.n;
        let z = state.z_field();
        let w = z.grad_sq_density();
        let gradu = velocity_gradient_norm(&state.u);
        let diss = energy::dissipation(n, &z);
        let int_gradz_sq = z.dirichlet_energy();
        let mut acc = [0.0; 6];
        for k in 0..g.cells() {
            let (nv, wv) = (n.values[k], w.values[k]);
            acc[0] += nv * nv;
            acc[1] += wv * wv;
            acc[2] += nv * nv * wv;
            acc[3] += wv * wv * wv;
            acc[4] += wv * wv * gradu[k];
            acc[5] += if nv > 0.0 { nv * nv.ln() } else { 0.0 };
        }
        let c = state.c_field();
        Self {
            t: state.t,
            mass_n: n.integrate(),
            linf_n_dev: n.values.iter().fold(0.0f64, |m, v| m.max((v - n_ref).abs())),
            linf_c: c.values.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            linf_u: state.u.max_abs(),
            linf_gradz: z.gradient().max_abs(),
            f_mu: energy::entropy(n, mu) + 0.5 * int_gradz_sq,
            int_gradz_sq,
            int_nlogn: acc[5] * da,
            int_n_sq: acc[0] * da,
            d_n: diss.d_n,
            d_z: diss.d_z,
            int_gradz_4: acc[1] * da,
            int_z: z.integrate(),
            min_z: z.min(),
            int_gradn_sq: n.dirichlet_energy(),
            int_n2_gradz2: acc[2] * da,
            int_grad_w_sq: w.dirichlet_energy(),
            int_gradz_6: acc[3] * da,
            int_gradz4_gradu: acc[4] * da,
        }
    }
}

/// Cell-centred Frobenius norm of ∇u.  Normal derivatives are exact face
/// differences; tangential ones are centred differences of cell averages
/// with odd reflection at the no-slip walls.
pub fn velocity_gradient_norm(u: &VectorField) -> Vec<f64> {
    let g = u.grid;
    let (nx, ny) = (g.nx, g.ny);
    let (hx, hy) = (g.hx(), g.hy());
    let (ua, va) = u.cell_components();
    let at = |a: &[f64], i: isize, j: isize| -> f64 {
        let (ic, jc) = (i.clamp(0, nx as isize - 1), j.clamp(0, ny as isize - 1));
        let v = a[jc as usize * nx + ic as usize];
        if ic != i || jc != j {
            -v
        } else {
            v
        }
    };
    let mut out = vec![0.0; g.cells()];
    for j in 0..ny {
        for i in 0..nx {
            let (ii, jj) = (i as isize, j as isize);
            let ux_x = (u.ux[j * (nx + 1) + i + 1] - u.ux[j * (nx + 1) + i]) / hx;
            let uy_y = (u.uy[(j + 1) * nx + i] - u.uy[j * nx + i]) / hy;
            let ux_y = (at(&ua, ii, jj + 1) - at(&ua, ii, jj - 1)) / (2.0 * hy);
            let uy_x = (at(&va, ii + 1, jj) - at(&va, ii - 1, jj)) / (2.0 * hx);
            out[j * nx + i] = (ux_x * ux_x + uy_y * uy_y + ux_y * ux_y + uy_x * uy_x).sqrt();
        }
    }
    out
}

/// Signed residual and the scale it should be judged against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Audit {
    pub left: f64,
    pub right: f64,
    pub residual: f64,
    pub scale: f64,
}

impl Audit {
    fn new(left: f64, right: f64) -> Self {
        Self { left, right, residual: left - right, scale: left.abs() + right.abs() + 1.0 }
    }

    pub fn normalized(&self) -> f64 {
        self.residual / self.scale
    }
}

/// `d/dt∫n² + ∫|∇n|² ≤ ∫n²|∇z|²` from metrics of consecutive states.
pub fn l2_from_metrics(b: &StateMetrics, a: &StateMetrics, dt: f64) -> Audit {
    let left = (a.int_n_sq - b.int_n_sq) / dt + 0.5 * (a.int_gradn_sq + b.int_gradn_sq);
    Audit::new(left, 0.5 * (a.int_n2_gradz2 + b.int_n2_gradz2))
}

/// `d/dt∫|∇z|⁴ + (5/2 − 2η)∫|∇|∇z|²|² ≤ 8∫|∇z|⁶ + (12/η)∫n²|∇z|²
///  + 4∫|∇z|⁴|∇u| + C(∫|∇z|²)²`.
pub fn z4_from_metrics(b: &StateMetrics, a: &StateMetrics, dt: f64, eta: f64, c: f64) -> Result<Audit> {
    let (l, r) = z4_parts(b, a, dt, eta)?;
    let sq = 0.5 * (a.int_gradz_sq.powi(2) + b.int_gradz_sq.powi(2));
    Ok(Audit::new(l, r + c * sq))
}

fn z4_parts(b: &StateMetrics, a: &StateMetrics, dt: f64, eta: f64) -> Result<(f64, f64)> {
    if !(eta > 0.0 && eta <= 1.25) {
        return Err(Error::InvalidArgument(format!("eta must lie in (0, 5/4], got {eta}")));
    }
    let mid = |f: fn(&StateMetrics) -> f64| 0.5 * (f(a) + f(b));
    let left = (a.int_gradz_4 - b.int_gradz_4) / dt + (2.5 - 2.0 * eta) * mid(|m| m.int_grad_w_sq);
    let right =
        8.0 * mid(|m| m.int_gradz_6) + 12.0 / eta * mid(|m| m.int_n2_gradz2) + 4.0 * mid(|m| m.int_gradz4_gradu);
    Ok((left, right))
}

pub fn audit_l2(before: &SimState, after: &SimState, dt: f64) -> Audit {
    let (b, a) = (StateMetrics::compute(before, 0.0, 1.0), StateMetrics::compute(after, 0.0, 1.0));
    l2_from_metrics(&b, &a, dt)
}

/// `c` is the calibrated constant of the `(∫|∇z|²)²` term.
pub fn audit_z4(before: &SimState, after: &SimState, dt: f64, eta: f64, c: f64) -> Result<Audit> {
    let (b, a) = (StateMetrics::compute(before, 0.0, 1.0), StateMetrics::compute(after, 0.0, 1.0));
    z4_from_metrics(&b, &a, dt, eta, c)
}

/// Calibrates the constant of the `(∫|∇z|²)²` term: the smallest C ≥ 0 for
/// which every step of pure-diffusion runs (n ≡ 0, u ≡ 0) from random
/// low-mode z₀ satisfies the z⁴ inequality.
pub fn calibrate_z4_constant(grid: GridSpec, eta: f64, seeds: &[u64], dt: f64, steps: usize) -> Result<f64> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let it = Integrator::new(grid, TransportSign::ChainRule)?;
    let phi = PotentialData::new(ScalarField::zeros(grid));
    let per_seed: Vec<Result<f64>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let coef: Vec<f64> = (0..9).map(|_| StandardNormal.sample(&mut rng)).collect();
            let (lx, ly) = (grid.lx, grid.ly);
            let z0 = ScalarField::from_fn(grid, |x, y| {
                let mut s = 0.0;
                for k in 0..3 {
                    for l in 0..3 {
                        if k + l > 0 {
                            let kx = std::f64::consts::PI * k as f64 / lx;
                            let ly_ = std::f64::consts::PI * l as f64 / ly;
                            s += coef[3 * k + l] * (kx * x).cos() * (ly_ * y).cos() / (k * k + l * l) as f64;
                        }
                    }
                }
                s
            });
            let mut s = SimState::log(ScalarField::zeros(grid), z0, VectorField::zeros(grid), Sensitivity::Identity, 1.0)?;
            let mut prev = StateMetrics::compute(&s, 0.0, 1.0);
            let mut c = 0.0f64;
            for _ in 0..steps {
                s = it.step_log(&s, &phi, dt)?;
                let cur = StateMetrics::compute(&s, 0.0, 1.0);
                let (l, r) = z4_parts(&prev, &cur, dt, eta)?;
                let sq = 0.5 * (prev.int_gradz_sq.powi(2) + cur.int_gradz_sq.powi(2));
                if sq > 0.0 {
                    c = c.max((l - r) / sq);
                }
                prev = cur;
            }
            Ok(c)
        })
        .collect();
    let mut c = 0.0f64;
    for r in per_seed {
        c = c.max(r?);
    }
    log::info!("calibrated z4 constant C = {c:.6e} (eta = {eta}, {} runs)", seeds.len());
    Ok(c)
}

/// Monitor configuration: energy parameter, optional certificate for the
/// energy audit, and the z⁴ audit settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Monitor {
    /// Defaults to the certificate's μ, then to mean(n₀) (1 if n₀ ≡ 0).
    pub mu: Option<f64>,
    pub certificate: Option<Certificate>,
    pub eta: f64,
    pub z4_constant: f64,
}

impl Default for Monitor {
    fn default() -> Self {
        Self { mu: None, certificate: None, eta: 1.0, z4_constant: 0.0 }
    }
}

impl Monitor {
    pub fn with_certificate(cert: Certificate) -> Self {
        Self { mu: Some(cert.mu), certificate: Some(cert), ..Self::default() }
    }

    pub fn tracker(&self, initial: &SimState) -> Result<Tracker<'_>> {
        if !(self.eta > 0.0 && self.eta <= 1.25) {
            return Err(Error::InvalidArgument(format!("eta must lie in (0, 5/4], got {}", self.eta)));
        }
        let n_ref = initial.n.mean();
        let mu = self
            .mu
            .or(self.certificate.as_ref().map(|c| c.mu))
            .unwrap_or(if n_ref > 0.0 { n_ref } else { 1.0 });
        energy::EnergyParams::new(mu)?;
        let m = StateMetrics::compute(initial, n_ref, mu);
        Ok(Tracker {
            monitor: self,
            n_ref,
            mu,
            t0: initial.t,
            m0: m.mass_n,
            z0: m.int_z,
            budget: 0.0,
            cur: m,
            worst: [None; 4],
        })
    }
}

/// Running audit state inside [`crate::dynamics::Integrator::run`].
#[derive(Debug, Clone)]
pub struct Tracker<'a> {
    monitor: &'a Monitor,
    n_ref: f64,
    mu: f64,
    t0: f64,
    m0: f64,
    z0: f64,
    /// trapezoid of ∫|∇z|² since t0
    budget: f64,
    cur: StateMetrics,
    worst: [Option<f64>; 4],
}

impl Tracker<'_> {
    pub fn metrics(&self) -> &StateMetrics {
        &self.cur
    }

    pub fn advance(&mut self, next: &SimState, dt: f64) -> Result<()> {
        let prev = self.cur;
        let cur = StateMetrics::compute(next, self.n_ref, self.mu);
        let l2 = l2_from_metrics(&prev, &cur, dt).normalized();
        let z4 = z4_from_metrics(&prev, &cur, dt, self.monitor.eta, self.monitor.z4_constant)?.normalized();
        let en = match &self.monitor.certificate {
            Some(c) => {
                let gz = 0.5 * (prev.int_gradz_sq + cur.int_gradz_sq);
                let kappa = c.kappa_at(0.5 * (prev.t + cur.t), gz);
                let d_n = 0.5 * (prev.d_n + cur.d_n);
                let d_z = 0.5 * (prev.d_z + cur.d_z);
                let r = energy::energy_residual(prev.f_mu, cur.f_mu, dt, d_n, d_z, kappa);
                r / ((cur.f_mu - prev.f_mu).abs() / dt).max(1.0)
            }
            None => f64::NAN,
        };
        self.budget += 0.5 * dt * (prev.int_gradz_sq + cur.int_gradz_sq);
        let rhs = self.z0 + (cur.t - self.t0) * self.m0;
        let zb = cur.int_z + self.budget - rhs;
        let zb = if rhs > 0.0 { zb / rhs } else { zb };
        for (slot, v) in self.worst.iter_mut().zip([l2, z4, en, zb]) {
            *slot = Some(match *slot {
                Some(w) if !(v > w) => w,
                _ => v,
            });
        }
        self.cur = cur;
        Ok(())
    }

    /// Record for the current state; residual columns carry the worst value
    /// since the previous record (0 before the first step).
    pub fn record(&mut self) -> TraceRecord {
        let m = &self.cur;
        let w = std::mem::take(&mut self.worst);
        let energy_default = if self.monitor.certificate.is_some() { 0.0 } else { f64::NAN };
        TraceRecord {
            t: m.t,
            mass_n: m.mass_n,
            linf_n_dev: m.linf_n_dev,
            linf_c: m.linf_c,
            linf_u: m.linf_u,
            linf_gradc_over_c: m.linf_gradz,
            f_mu: m.f_mu,
            int_gradz_sq: m.int_gradz_sq,
            int_nlogn: m.int_nlogn,
            int_n_sq: m.int_n_sq,
            d_n: m.d_n,
            d_z: m.d_z,
            int_gradz_4: m.int_gradz_4,
            int_z: m.int_z,
            min_z: m.min_z,
            residual_l2: w[0].unwrap_or(0.0),
            residual_z4: w[1].unwrap_or(0.0),
            residual_energy: w[2].unwrap_or(energy_default),
            residual_zbound: w[3].unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZBoundAudit {
    /// max over t of `∫z(t) + ∫ₜ₀ᵗ∫|∇z|² − ∫z(t₀) − (t − t₀)m₀`
    pub max_residual: f64,
    /// the same residual relative to the right side
    pub max_ratio: f64,
}

/// z-budget audit over the records from `t0_index` on, with the trapezoid
/// rule over record times.
pub fn audit_zbound(trace: &[TraceRecord], t0_index: usize) -> Result<ZBoundAudit> {
    if t0_index >= trace.len() {
        return Err(Error::InvalidArgument(format!("t0_index {t0_index} outside trace of {}", trace.len())));
    }
    let r0 = &trace[t0_index];
    let mut acc = 0.0;
    let mut out = ZBoundAudit { max_residual: f64::NEG_INFINITY, max_ratio: f64::NEG_INFINITY };
    for k in t0_index..trace.len() {
        let r = &trace[k];
        if k > t0_index {
            let p = &trace[k - 1];
            acc += 0.5 * (r.t - p.t) * (r.int_gradz_sq + p.int_gradz_sq);
        }
        let rhs = r0.int_z + (r.t - r0.t) * r0.mass_n;
        let res = r.int_z + acc - rhs;
        out.max_residual = out.max_residual.max(res);
        let ratio = if rhs > 0.0 { res / rhs } else if res <= 0.0 { 0.0 } else { f64::INFINITY };
        out.max_ratio = out.max_ratio.max(ratio);
    }
    Ok(out)
}

/// `∫(n+1)²` samples of a trace, rebuilt from `int_n_sq` and `mass_n`.
pub fn k4_trajectory(trace: &[TraceRecord], area: f64, z0_integral: f64) -> K4Trajectory {
    K4Trajectory {
        area,
        mass: trace.first().map_or(0.0, |r| r.mass_n),
        z0_integral,
        samples: trace.iter().map(|r| (r.t, r.int_n_sq + 2.0 * r.mass_n + area)).collect(),
    }
}

/// `max_t [∫₀ᵗ ln{∫(n+1)²/|Ω|} − K₄(1+m)t − K₄(∫z₀ + m)]`, t measured from
/// the first record.
pub fn audit_k4(trace: &[TraceRecord], k4: f64, m: f64, z0_integral: f64, area: f64) -> f64 {
    let mut tr = k4_trajectory(trace, area, z0_integral);
    let t0 = trace.first().map_or(0.0, |r| r.t);
    for s in &mut tr.samples {
        s.0 -= t0;
    }
    energy::k4_integrals(&tr)
        .into_iter()
        .map(|(t, i)| i - k4 * (1.0 + m) * t - k4 * (z0_integral + m))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub n_dev: f64,
    pub c: f64,
    pub u: f64,
    pub gradc_over_c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantityReport {
    pub final_value: f64,
    /// λ in `value ≈ A e^{−λt}` over the window.
    pub fitted_rate: f64,
    pub fit_window: (f64, f64),
    /// Set when fewer than two window values sit above round-off level;
    /// the rate is then NaN.  Round-off values are left out of the fit.
    pub degenerate: bool,
    pub achieved_threshold: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceReport {
    pub n_dev: QuantityReport,
    pub c: QuantityReport,
    pub u: QuantityReport,
    pub gradc_over_c: QuantityReport,
    pub u_rate: f64,
    /// least-squares slope of min z over the window
    pub min_z_slope: f64,
}

/// Values below this are treated as round-off for rate fits.
const ROUNDOFF: f64 = 1e-13;

fn lsq_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(t, y) in pts {
        sxy += (t - mt) * (y - my);
        sxx += (t - mt) * (t - mt);
    }
    sxy / sxx
}

pub fn convergence_report(trace: &[TraceRecord], thresholds: Thresholds) -> Result<ConvergenceReport> {
    if trace.len() < 10 {
        return Err(Error::InvalidArgument(format!("convergence report needs ≥ 10 records, got {}", trace.len())));
    }
    let (ta, tb) = (trace[0].t, trace[trace.len() - 1].t);
    let start = tb - (tb - ta) / 3.0;
    let window: Vec<&TraceRecord> = trace.iter().filter(|r| r.t >= start).collect();
    let fit_window = (window[0].t, tb);
    let quantity = |get: fn(&TraceRecord) -> f64, thr: f64| -> QuantityReport {
        let final_value = get(&trace[trace.len() - 1]);
        let pts: Vec<(f64, f64)> = window.iter().filter(|r| get(r) > ROUNDOFF).map(|r| (r.t, get(r).ln())).collect();
        let degenerate = pts.len() < 2;
        let fitted_rate = if degenerate { f64::NAN } else { -lsq_slope(&pts) };
        QuantityReport { final_value, fitted_rate, fit_window, degenerate, achieved_threshold: final_value <= thr }
    };
    let u = quantity(|r| r.linf_u, thresholds.u);
    let min_z_slope = if window.len() < 2 {
        f64::NAN
    } else {
        lsq_slope(&window.iter().map(|r| (r.t, r.min_z)).collect::<Vec<_>>())
    };
    Ok(ConvergenceReport {
        n_dev: quantity(|r| r.linf_n_dev, thresholds.n_dev),
        c: quantity(|r| r.linf_c, thresholds.c),
        u,
        gradc_over_c: quantity(|r| r.linf_gradc_over_c, thresholds.gradc_over_c),
        u_rate: u.fitted_rate,
        min_z_slope,
    })
}
