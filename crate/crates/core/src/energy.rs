//! The entropy–energy functional `F_μ(n, z) = ∫ n ln(n/μ) + ½∫|∇z|²`, its
//! dissipation terms, and the smallness certificate built from the
//! functional-inequality constants.

use std::f64::consts::E;

use crate::dynamics::SimState;
use crate::error::{Error, Result};
use crate::grid::{ScalarField, VectorField};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyParams {
    pub mu: f64,
}

impl EnergyParams {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidArgument(format!("mu must be positive, got {mu}")));
        }
        Ok(Self { mu })
    }
}

/// Tolerance for "nonnegative" densities: undershoot below this relative to
/// max |n| is an error.
const NEG_TOL: f64 = 1e-10;

fn check_nonneg(n: &ScalarField) -> Result<()> {
    let scale = n.lp_norm(f64::INFINITY)?.max(1e-300);
    for (k, &v) in n.values.iter().enumerate() {
        if v < -NEG_TOL * scale {
            let nx = n.grid.nx;
            return Err(Error::NegativeDensity { i: k % nx, j: k / nx, value: v });
        }
    }
    Ok(())
}

fn xlogx(s: f64, mu: f64) -> f64 {
    if s > 0.0 {
        s * (s / mu).ln()
    } else {
        0.0
    }
}

/// ∫ n ln(n/μ), the integrand taken as 0 where n ≤ 0.
pub fn entropy(n: &ScalarField, mu: f64) -> f64 {
    n.values.iter().map(|&v| xlogx(v, mu)).sum::<f64>() * n.grid.cell_area()
}

pub fn f_mu(n: &ScalarField, z: &ScalarField, params: EnergyParams) -> Result<f64> {
    check_nonneg(n)?;
    n.grid.same_as(&z.grid)?;
    Ok(entropy(n, params.mu) + 0.5 * z.dirichlet_energy())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsCheck {
    pub nlogn_bound_ok: bool,
    pub gradz_bound_ok: bool,
    pub lower_bound_ok: bool,
    /// right side minus left side of ∫n|ln n| ≤ F_μ + ln μ ∫n + 2|Ω|/e
    pub nlogn_slack: f64,
    /// right minus left of ∫|∇z|² ≤ 2F_μ + 2μ|Ω|/e
    pub gradz_slack: f64,
    /// F_μ + μ|Ω|/e
    pub lower_slack: f64,
}

/// The three elementary bounds relating `F_μ` to ∫n|ln n| and ∫|∇z|².
/// A tiny relative rounding allowance is granted on each.
pub fn energy_bounds(n: &ScalarField, z: &ScalarField, params: EnergyParams) -> BoundsCheck {
    let mu = params.mu;
    let area = n.grid.area();
    let f = entropy(n, mu) + 0.5 * z.dirichlet_energy();
    let mass = n.integrate();
    let nabs = n.values.iter().map(|&v| if v > 0.0 { (v * v.ln()).abs() } else { 0.0 }).sum::<f64>() * n.grid.cell_area();
    let gz = z.dirichlet_energy();
    let nlogn_slack = f + mu.ln() * mass + 2.0 * area / E - nabs;
    let gradz_slack = 2.0 * f + 2.0 * mu * area / E - gz;
    let lower_slack = f + mu * area / E;
    let tol = |scale: f64| -1e-12 * (1.0 + scale);
    BoundsCheck {
        nlogn_bound_ok: nlogn_slack >= tol(nabs + f.abs()),
        gradz_bound_ok: gradz_slack >= tol(gz + f.abs()),
        lower_bound_ok: lower_slack >= tol(f.abs()),
        nlogn_slack,
        gradz_slack,
        lower_slack,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dissipation {
    /// ∫|∇n|²/n in the face form (n_R − n_L)(ln n_R − ln n_L)/h².
    pub d_n: f64,
    /// ∫|Δz|².
    pub d_z: f64,
    /// Set when some face joins an empty cell to an occupied one.
    pub d_n_infinite: bool,
}

/// Fisher information on faces uses the logarithmic mean of the two cell
/// values; it reduces to |∇n|²/n for smooth positive n and dominates
/// 4∫|∇√n|² exactly.
pub fn dissipation(n: &ScalarField, z: &ScalarField) -> Dissipation {
    let (d_n, d_n_infinite) = fisher(n);
    let lap = z.laplacian();
    let d_z = lap.dot(&lap);
    Dissipation { d_n, d_z, d_n_infinite }
}

fn fisher(n: &ScalarField) -> (f64, bool) {
    let g = n.grid;
    let (nx, ny) = (g.nx, g.ny);
    let mut inf = false;
    let mut face = |a: f64, b: f64, h: f64| -> f64 {
        let (a, b) = (a.max(0.0), b.max(0.0));
        if a == b {
            0.0
        } else if a == 0.0 || b == 0.0 {
            inf = true;
            0.0
        } else {
            (b - a) * (b.ln() - a.ln()) / (h * h)
        }
    };
    let mut s = 0.0;
    for j in 0..ny {
        for i in 1..nx {
            s += face(n.at(i - 1, j), n.at(i, j), g.hx());
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            s += face(n.at(i, j - 1), n.at(i, j), g.hy());
        }
    }
    let d = s * g.cell_area();
    if inf {
        (f64::INFINITY, true)
    } else {
        (d, false)
    }
}

/// Functional-inequality and Stokes constants feeding a certificate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub ku: f64,
    pub lambda1: f64,
    pub k4: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: Option<f64>,
    pub ku: f64,
    pub lambda1: f64,
    pub area: f64,
    /// Start time T of the certified interval.
    pub big_t: f64,
    pub mu: f64,
    pub mu_requested: f64,
    pub gamma: f64,
    pub big_m: f64,
    pub big_l: f64,
    /// A-priori κ at t₀ (floored at 0); the trajectory value is computed by
    /// the monitor.
    pub kappa: f64,
    pub eta: f64,
    pub m: f64,
    pub z0_integral: f64,
    pub m_star: f64,
    pub m_star_star: f64,
    pub ell: f64,
    pub t0: f64,
    pub t_star: f64,
    /// F_μ(n₀, z₀) at the certificate μ.
    pub f_mu0: f64,
    /// μ at which the global-existence energy condition was evaluated.
    pub mu_thm2: f64,
    pub flags: CertificateFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CertificateFlags {
    pub small_mass: bool,
    pub thm2_mass: bool,
    pub thm2_energy: bool,
    pub t0_finite: bool,
    pub mu_capped: bool,
}

impl Certificate {
    /// `K₃²K_u|Ω|^{1/4}`, the coupling factor in the energy inequality.
    pub fn coupling(&self) -> f64 {
        self.k3 * self.k3 * self.ku * self.area.powf(0.25)
    }

    /// `½ − (K₃/2)∫|∇z|² − K₃²K_u|Ω|^{1/4}(ℓe^{−λ₁(t−T)} + m)`.
    pub fn kappa_at(&self, t: f64, gradz_sq: f64) -> f64 {
        0.5 - 0.5 * self.k3 * gradz_sq
            - self.coupling() * (self.ell * (-self.lambda1 * (t - self.big_t)).exp() + self.m)
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let f = |v: f64| format!("{v}");
        let mut out = vec![
            ("K1", f(self.k1)),
            ("K2", f(self.k2)),
            ("K3", f(self.k3)),
            ("K4", self.k4.map_or("none".into(), f)),
            ("Ku", f(self.ku)),
            ("lambda1", f(self.lambda1)),
            ("area", f(self.area)),
            ("T", f(self.big_t)),
            ("mu", f(self.mu)),
            ("mu_requested", f(self.mu_requested)),
            ("Gamma", f(self.gamma)),
            ("M", f(self.big_m)),
            ("L", f(self.big_l)),
            ("kappa", f(self.kappa)),
            ("eta", f(self.eta)),
            ("m", f(self.m)),
            ("z0_integral", f(self.z0_integral)),
            ("m_star", f(self.m_star)),
            ("m_star_star", f(self.m_star_star)),
            ("ell", f(self.ell)),
            ("t0", f(self.t0)),
            ("t_star", f(self.t_star)),
            ("F_mu0", f(self.f_mu0)),
            ("mu_thm2", f(self.mu_thm2)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect::<Vec<_>>();
        let fl = self.flags;
        for (k, v) in [
            ("small_mass", fl.small_mass),
            ("thm2_mass", fl.thm2_mass),
            ("thm2_energy", fl.thm2_energy),
            ("t0_finite", fl.t0_finite),
            ("mu_capped", fl.mu_capped),
        ] {
            out.push((k.to_string(), v.to_string()));
        }
        out
    }
}

/// Evaluates the smallness conditions for initial data `(n₀, c₀, u₀)`.
///
/// Constants are fixed in the order M, μ, Γ, η, m⋆.  `mu` defaults to
/// mean(n₀) and is capped so that 2μ|Ω|/e ≤ M/2, μ|Ω|/e ≤ 1/(8K₃) and
/// μ ≤ ½ (the construction needs μ < 1).  `eta` overrides the η choice;
/// otherwise η = min(½, Γ/(4|Ω|e^{16K₄})) when K₄ is known and ½ if not.
pub fn certify(
    n0: &ScalarField,
    c0: &ScalarField,
    u0: &VectorField,
    consts: &Constants,
    mu: Option<f64>,
    eta: Option<f64>,
    big_t: f64,
) -> Result<Certificate> {
    n0.grid.same_as(&c0.grid)?;
    n0.grid.same_as(&u0.grid)?;
    for (name, v) in [("K1", consts.k1), ("K2", consts.k2), ("K3", consts.k3), ("Ku", consts.ku), ("lambda1", consts.lambda1)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
        }
    }
    if let Some(k4) = consts.k4 {
        if !(k4 >= 0.0 && k4.is_finite()) {
            return Err(Error::InvalidArgument(format!("K4 must be nonnegative, got {k4}")));
        }
    }
    for (k, &v) in c0.values.iter().enumerate() {
        if !(v > 0.0) {
            let nx = c0.grid.nx;
            return Err(Error::NonPositiveSignal { i: k % nx, j: k / nx, value: v });
        }
    }
    check_nonneg(n0)?;
    let (k2, k3, ku, lambda1) = (consts.k2, consts.k3, consts.ku, consts.lambda1);
    let area = n0.grid.area();
    let q = area.powf(0.25);
    let m = n0.integrate();
    let ell = u0.lp_norm(4.0)?.powi(4);

    let big_m = 0.99 / (4.0 * k2);
    let mu_requested = match mu {
        Some(v) if v > 0.0 => v,
        Some(v) => return Err(Error::InvalidArgument(format!("mu must be positive, got {v}"))),
        None => {
            let mean = m / area;
            if mean > 0.0 {
                mean
            } else {
                0.5
            }
        }
    };
    let mu_cap = (E * big_m / (4.0 * area)).min(E / (8.0 * k3 * area)).min(0.5);
    let mu_val = mu_requested.min(mu_cap);
    let gamma = (big_m / 4.0).min(0.99 * (1.0 / (4.0 * k3) - mu_val * area / E));
    let eta = match (eta, consts.k4) {
        (Some(e), _) => {
            if !(e > 0.0 && e < 1.0) {
                return Err(Error::InvalidArgument(format!("eta must lie in (0, 1), got {e}")));
            }
            e
        }
        (None, Some(k4)) => (gamma / (4.0 * area * (16.0 * k4).exp())).min(0.5),
        (None, None) => 0.5,
    };
    let coupling = k3 * k3 * ku * q;
    let m_star = 1.0f64
        .min(gamma / (4.0 * (1.0 / (eta * mu_val)).ln()))
        .min(gamma / 8.0)
        .min(1.0 / (5.0 * coupling));
    let m_star_star = 1.0 / (8.0 * coupling);
    let b = 1.0 / (4.0 * coupling);
    let t0 = if m >= b {
        f64::INFINITY
    } else if ell <= b - m {
        big_t
    } else {
        big_t + (ell / (b - m)).ln() / lambda1
    };

    let z0 = {
        let cmax = c0.max();
        c0.map(|c| -(c / cmax).ln())
    };
    let z0_integral = z0.integrate();
    let t_star = if t0.is_finite() {
        let mut ts = ((z0_integral + m) / (1.0 + m)).max(2.0 * t0);
        if m > 0.0 {
            ts = ts.max(z0_integral / m);
        }
        if ts <= 2.0 * t0 {
            ts = 2.0 * t0 + 1e-9 * (1.0 + t0);
        }
        ts
    } else {
        f64::INFINITY
    };

    let params = EnergyParams::new(mu_val)?;
    let f_mu0 = f_mu(n0, &z0, params)?;
    let thm2_rhs = |mu: f64| (1.0 / (4.0 * k3)).min(1.0 / (8.0 * k2)) - mu * area / E;
    let thm2_at = |mu: f64| -> Result<bool> { Ok(f_mu(n0, &z0, EnergyParams::new(mu)?)? < thm2_rhs(mu)) };
    // the condition is existential in μ; e·mean(n₀) maximises its margin
    let mu_opt = if m > 0.0 { E * m / area } else { mu_val };
    let (thm2_energy, mu_thm2) = if thm2_at(mu_opt)? {
        (true, mu_opt)
    } else {
        (thm2_at(mu_val)?, mu_val)
    };

    let big_l = 1.0 / (4.0 * k3) + 2.0 * area / E;
    let mut cert = Certificate {
        k1: consts.k1,
        k2,
        k3,
        k4: consts.k4,
        ku,
        lambda1,
        area,
        big_t,
        mu: mu_val,
        mu_requested,
        gamma,
        big_m,
        big_l,
        kappa: 0.0,
        eta,
        m,
        z0_integral,
        m_star,
        m_star_star,
        ell,
        t0,
        t_star,
        f_mu0,
        mu_thm2,
        flags: CertificateFlags {
            small_mass: m <= m_star,
            thm2_mass: m <= m_star_star && ell <= m_star_star,
            thm2_energy,
            t0_finite: t0.is_finite(),
            mu_capped: mu_val < mu_requested,
        },
    };
    let gz_bound = 2.0 * gamma.max(0.0) + 2.0 * mu_val * area / E;
    cert.kappa = if t0.is_finite() { cert.kappa_at(t0, gz_bound).max(0.0) } else { 0.0 };
    Ok(cert)
}

/// Signed residual of
/// `dF_μ/dt + ∫|∇n|²/n + κ(t)∫|Δz|² ≤ 0` between two consecutive states:
/// forward difference of `F_μ`, midpoint averages of the rest.
pub fn energy_step_audit(before: &SimState, after: &SimState, dt: f64, cert: &Certificate, big_t: f64) -> Result<f64> {
    let (zb, za) = (before.z_field(), after.z_field());
    let p = EnergyParams::new(cert.mu)?;
    let fb = f_mu(&before.n, &zb, p)?;
    let fa = f_mu(&after.n, &za, p)?;
    let (db, da) = (dissipation(&before.n, &zb), dissipation(&after.n, &za));
    let gz = 0.5 * (zb.dirichlet_energy() + za.dirichlet_energy());
    let t = 0.5 * (before.t + after.t);
    let mut c = cert.clone();
    c.big_t = big_t;
    Ok(energy_residual(fb, fa, dt, 0.5 * (db.d_n + da.d_n), 0.5 * (db.d_z + da.d_z), c.kappa_at(t, gz)))
}

pub(crate) fn energy_residual(f_before: f64, f_after: f64, dt: f64, d_n: f64, d_z: f64, kappa: f64) -> f64 {
    (f_after - f_before) / dt + d_n + kappa * d_z
}

/// Time series `(t, ∫(n+1)²)` of one trajectory, for the K₄ fit.
#[derive(Debug, Clone)]
pub struct K4Trajectory {
    pub area: f64,
    pub mass: f64,
    pub z0_integral: f64,
    pub samples: Vec<(f64, f64)>,
}

/// Cumulative trapezoid of `ln(∫(n+1)²/|Ω|)` at each sample time.
pub(crate) fn k4_integrals(tr: &K4Trajectory) -> Vec<(f64, f64)> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(tr.samples.len());
    let g = |v: f64| (v / tr.area).ln();
    for (k, &(t, v)) in tr.samples.iter().enumerate() {
        if k > 0 {
            let (tp, vp) = tr.samples[k - 1];
            acc += 0.5 * (t - tp) * (g(v) + g(vp));
        }
        out.push((t, acc));
    }
    out
}

/// Smallest K₄ ≥ 0 with
/// `∫₀ᵗ ln{∫(n+1)²/|Ω|} ≤ K₄(1+m)t + K₄(∫z₀ + m)` at every sample.
pub fn fit_k4(trajectories: &[K4Trajectory]) -> Result<f64> {
    if trajectories.is_empty() {
        return Err(Error::InvalidArgument("fit_k4 needs at least one trajectory".into()));
    }
    let mut k = 0.0f64;
    for tr in trajectories {
        for (t, i) in k4_integrals(tr) {
            let d = (1.0 + tr.mass) * t + tr.z0_integral + tr.mass;
            if d > 0.0 {
                k = k.max(i / d);
            }
        }
    }
    Ok(k)
}
