//! Stokes subsystem `u_t + ∇P = Δu + n∇φ, ∇·u = 0` with no-slip walls:
//! discrete Helmholtz projection, an implicit projection step, the first
//! Stokes eigenvalue and the decay constant fit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::{Bc, GridSpec, ScalarField, VectorField};
use crate::linalg::{pack_x, pack_y, unpack_x, unpack_y, Helmholtz, Layout};

#[derive(Debug, Clone)]
pub struct StokesSolver {
    pub grid: GridSpec,
    pub tol: f64,
    pub max_iter: usize,
    poisson: Helmholtz,
    xs: Helmholtz,
    ys: Helmholtz,
}

#[derive(Debug, Clone)]
pub struct StokesUpdate {
    pub u: VectorField,
    /// Pressure, mean zero.
    pub pressure: ScalarField,
}

impl StokesSolver {
    pub fn new(grid: GridSpec, tol: f64, max_iter: usize) -> Result<Self> {
        if !(tol > 0.0 && tol <= 1e-6) {
            return Err(Error::InvalidArgument(format!("solver tolerance must lie in (0, 1e-6], got {tol}")));
        }
        if grid.nx < 2 || grid.ny < 2 {
            return Err(Error::InvalidArgument("Stokes solver needs at least 2x2 cells".into()));
        }
        Ok(Self {
            grid,
            tol,
            max_iter,
            poisson: Helmholtz::new(grid, Layout::Cells, tol, max_iter),
            xs: Helmholtz::new(grid, Layout::XFaces, tol, max_iter),
            ys: Helmholtz::new(grid, Layout::YFaces, tol, max_iter),
        })
    }

    pub fn with_defaults(grid: GridSpec) -> Result<Self> {
        Self::new(grid, 1e-10, 200)
    }

    /// Helmholtz projection; also returns the mean-zero potential `q` with
    /// `v = P v + ∇q`.
    pub fn project_with_potential(&self, v: &VectorField) -> Result<(VectorField, ScalarField)> {
        self.grid.same_as(&v.grid)?;
        let div = v.divergence();
        let b: Vec<f64> = div.values.iter().map(|d| -d).collect();
        let (q, _) = self.poisson.solve(0.0, 1.0, &b, "pressure Poisson solve")?;
        let q = ScalarField { grid: self.grid, values: q, bc: Bc::Neumann };
        let mut u = v.sub(&q.gradient());
        u.zero_boundary();
        Ok((u, q))
    }

    pub fn project(&self, v: &VectorField) -> Result<VectorField> {
        Ok(self.project_with_potential(v)?.0)
    }

    /// Face-interpolated buoyancy `n ∇φ`.
    pub fn forcing(&self, n: &ScalarField, phi: &ScalarField) -> VectorField {
        let g = self.grid;
        let (nx, ny) = (g.nx, g.ny);
        let mut f = phi.gradient();
        for j in 0..ny {
            for i in 1..nx {
                f.ux[j * (nx + 1) + i] *= 0.5 * (n.at(i - 1, j) + n.at(i, j));
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                f.uy[j * nx + i] *= 0.5 * (n.at(i, j - 1) + n.at(i, j));
            }
        }
        f
    }

    /// `(I − dtΔ)u* = u + dt·P(n∇φ)`, then `u⁺ = P u*`.  Projecting the
    /// forcing first keeps gradient forcings (hydrostatic balance) out of
    /// the velocity entirely.
    pub fn step(&self, u: &VectorField, n: &ScalarField, phi: &ScalarField, dt: f64) -> Result<StokesUpdate> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        self.grid.same_as(&u.grid)?;
        self.grid.same_as(&n.grid)?;
        self.grid.same_as(&phi.grid)?;
        let (pf, qf) = self.project_with_potential(&self.forcing(n, phi))?;
        let mut rhs = u.clone();
        rhs.axpy(dt, &pf);
        let ustar = self.implicit_diffusion(&rhs, dt)?;
        let (u_new, q) = self.project_with_potential(&ustar)?;
        let mut p: Vec<f64> = qf.values.iter().zip(&q.values).map(|(a, b)| a + b / dt).collect();
        let m = p.iter().sum::<f64>() / p.len() as f64;
        p.iter_mut().for_each(|v| *v -= m);
        Ok(StokesUpdate { u: u_new, pressure: ScalarField { grid: self.grid, values: p, bc: Bc::None } })
    }

    /// Solves `(I − dtΔ_D) w = rhs` componentwise.
    pub fn implicit_diffusion(&self, rhs: &VectorField, dt: f64) -> Result<VectorField> {
        let g = self.grid;
        let (wx, _) = self.xs.solve(1.0, dt, &pack_x(&g, &rhs.ux), "velocity diffusion solve")?;
        let (wy, _) = self.ys.solve(1.0, dt, &pack_y(&g, &rhs.uy), "velocity diffusion solve")?;
        let mut w = VectorField::zeros(g);
        unpack_x(&g, &wx, &mut w.ux);
        unpack_y(&g, &wy, &mut w.uy);
        Ok(w)
    }

    /// Vector Laplacian `−Δ_D` with no-slip walls.
    pub fn neg_laplacian(&self, v: &VectorField) -> VectorField {
        let g = self.grid;
        let (px, py) = (pack_x(&g, &v.ux), pack_y(&g, &v.uy));
        let (mut ox, mut oy) = (vec![0.0; px.len()], vec![0.0; py.len()]);
        self.xs.neg_laplacian(&px, &mut ox);
        self.ys.neg_laplacian(&py, &mut oy);
        let mut w = VectorField::zeros(g);
        unpack_x(&g, &ox, &mut w.ux);
        unpack_y(&g, &oy, &mut w.uy);
        w
    }

    fn inv_neg_laplacian(&self, v: &VectorField) -> VectorField {
        let g = self.grid;
        let (px, py) = (pack_x(&g, &v.ux), pack_y(&g, &v.uy));
        let (mut ox, mut oy) = (vec![0.0; px.len()], vec![0.0; py.len()]);
        self.xs.spectral_solve(0.0, 1.0, &px, &mut ox);
        self.ys.spectral_solve(0.0, 1.0, &py, &mut oy);
        let mut w = VectorField::zeros(g);
        unpack_x(&g, &ox, &mut w.ux);
        unpack_y(&g, &oy, &mut w.uy);
        w
    }

    /// First eigenvalue of the discrete Stokes operator `P(−Δ_D)P` on
    /// solenoidal fields, with its eigenfield.
    ///
    /// Single-vector LOBPCG preconditioned by `P(−Δ_D)⁻¹P`; each search
    /// direction is projected so the iteration never leaves range(P).
    pub fn lambda1_with_field(&self) -> Result<(f64, VectorField)> {
        let tol = 1e-8;
        let max_iter = 500;
        let g = self.grid;
        let (lx, ly) = (g.lx, g.ly);
        let psi = |x: f64, y: f64| {
            let (a, b) = ((std::f64::consts::PI * x / lx).sin(), (std::f64::consts::PI * y / ly).sin());
            a * a * b * b
        };
        let mut x = self.project(&curl_of_nodal(&g, &nodal(&g, psi)))?;
        normalize(&mut x);
        let a = |v: &VectorField| self.project(&self.neg_laplacian(v));
        let mut ax = a(&x)?;
        let mut p: Option<VectorField> = None;
        let mut res = f64::INFINITY;
        for it in 0..max_iter {
            let theta = x.dot(&ax);
            let mut r = ax.clone();
            r.axpy(-theta, &x);
            res = r.norm_sq().sqrt() / theta.abs();
            if res <= tol {
                log::debug!("lambda1 converged in {it} iterations: {theta}");
                return Ok((theta, x));
            }
            let w = self.project(&self.inv_neg_laplacian(&r))?;
            let mut basis = vec![x.clone()];
            for mut v in std::iter::once(w).chain(p.take()) {
                for _ in 0..2 {
                    for q in &basis {
                        let c = q.dot(&v);
                        v.axpy(-c, q);
                    }
                }
                let nv = v.norm_sq().sqrt();
                if nv > 1e-10 {
                    v.scale(1.0 / nv);
                    basis.push(v);
                }
            }
            let mut abasis = vec![ax.clone()];
            for q in &basis[1..] {
                abasis.push(a(q)?);
            }
            let k = basis.len();
            let mut h = vec![0.0; k * k];
            for i in 0..k {
                for j in 0..k {
                    h[i * k + j] = 0.5 * (basis[i].dot(&abasis[j]) + basis[j].dot(&abasis[i]));
                }
            }
            let (_, c) = smallest_eigenpair(&h, k);
            let mut xn = VectorField::zeros(g);
            let mut pn = VectorField::zeros(g);
            for (i, q) in basis.iter().enumerate() {
                xn.axpy(c[i], q);
                if i > 0 {
                    pn.axpy(c[i], q);
                }
            }
            normalize(&mut xn);
            x = xn;
            ax = a(&x)?;
            p = Some(pn);
        }
        Err(Error::NoConvergence { what: "Stokes eigenvalue iteration", iterations: max_iter, residual: res })
    }

    pub fn lambda1(&self) -> Result<f64> {
        Ok(self.lambda1_with_field()?.0)
    }

    /// First eigenvalue of the componentwise Dirichlet Laplacian; logged
    /// next to λ₁ as a diagnostic only.
    pub fn dirichlet_laplacian_eigenvalue(&self) -> f64 {
        self.xs.first_eigenvalue().min(self.ys.first_eigenvalue())
    }
}

fn normalize(v: &mut VectorField) {
    let n = v.norm_sq().sqrt();
    if n > 0.0 {
        v.scale(1.0 / n);
    }
}

/// Smallest eigenpair of a small symmetric matrix by cyclic Jacobi.
pub(crate) fn smallest_eigenpair(a: &[f64], k: usize) -> (f64, Vec<f64>) {
    let mut a = a.to_vec();
    let mut v = vec![0.0; k * k];
    for i in 0..k {
        v[i * k + i] = 1.0;
    }
    for _ in 0..100 {
        let off: f64 = (0..k).flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i * k + j].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..k {
            for q in p + 1..k {
                let apq = a[p * k + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let tau = (a[q * k + q] - a[p * k + p]) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let t = if tau == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for r in 0..k {
                    let (arp, arq) = (a[r * k + p], a[r * k + q]);
                    a[r * k + p] = c * arp - s * arq;
                    a[r * k + q] = s * arp + c * arq;
                }
                for r in 0..k {
                    let (apr, aqr) = (a[p * k + r], a[q * k + r]);
                    a[p * k + r] = c * apr - s * aqr;
                    a[q * k + r] = s * apr + c * aqr;
                }
                for r in 0..k {
                    let (vrp, vrq) = (v[r * k + p], v[r * k + q]);
                    v[r * k + p] = c * vrp - s * vrq;
                    v[r * k + q] = s * vrp + c * vrq;
                }
            }
        }
    }
    let m = (0..k).min_by(|&i, &j| a[i * k + i].total_cmp(&a[j * k + j])).unwrap();
    (a[m * k + m], (0..k).map(|r| v[r * k + m]).collect())
}

/// Stream function sampled at the `(nx+1) × (ny+1)` cell corners.
pub fn nodal(g: &GridSpec, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity((g.nx + 1) * (g.ny + 1));
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            out.push(f(i as f64 * g.hx(), j as f64 * g.hy()));
        }
    }
    out
}

/// Discrete curl of a nodal stream function that vanishes on ∂Ω; the
/// result is exactly divergence free with zero normal boundary faces.
pub fn curl_of_nodal(g: &GridSpec, psi: &[f64]) -> VectorField {
    let (nx, ny, hx, hy) = (g.nx, g.ny, g.hx(), g.hy());
    let at = |i: usize, j: usize| {
        if i == 0 || j == 0 || i == nx || j == ny {
            0.0
        } else {
            psi[j * (nx + 1) + i]
        }
    };
    let mut v = VectorField::zeros(*g);
    for j in 0..ny {
        for i in 1..nx {
            v.ux[j * (nx + 1) + i] = (at(i, j + 1) - at(i, j)) / hy;
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            v.uy[j * nx + i] = -(at(i + 1, j) - at(i, j)) / hx;
        }
    }
    v
}

/// Random smooth solenoidal no-slip field: curl of a low-pass sine series,
/// scaled to `max |u| = amplitude` on faces.
pub fn random_solenoidal(g: &GridSpec, seed: u64, amplitude: f64) -> VectorField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes = 4usize;
    let mut a = vec![0.0; modes * modes];
    for (idx, c) in a.iter_mut().enumerate() {
        let (k, l) = ((idx % modes + 1) as f64, (idx / modes + 1) as f64);
        let z: f64 = StandardNormal.sample(&mut rng);
        *c = z / (k * k + l * l);
    }
    let (lx, ly) = (g.lx, g.ly);
    let psi = nodal(g, |x, y| {
        let mut s = 0.0;
        for (idx, c) in a.iter().enumerate() {
            let (k, l) = ((idx % modes + 1) as f64, (idx / modes + 1) as f64);
            s += c * (std::f64::consts::PI * k * x / lx).sin() * (std::f64::consts::PI * l * y / ly).sin();
        }
        s
    });
    let mut v = curl_of_nodal(g, &psi);
    let m = v.max_abs();
    if m > 0.0 {
        v.scale(amplitude / m);
    }
    v
}

/// One Stokes trajectory sampled for the decay-constant fit.
#[derive(Debug, Clone)]
pub struct KuTrial {
    pub t0: f64,
    /// Bound on ∫|n| along the trajectory.
    pub l_bound: f64,
    pub u0_l4: f64,
    /// `(t, ‖u(t)‖_{L⁴})` samples.
    pub samples: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KuFit {
    /// max(1, raw): the constant used in certificates.
    pub value: f64,
    /// Largest observed ratio ‖u‖₄ / (e^{−λ₁(t−t₀)}‖u(t₀)‖₄ + L).
    pub raw: f64,
}

pub fn fit_ku(trials: &[KuTrial], lambda1: f64) -> Result<KuFit> {
    if trials.is_empty() {
        return Err(Error::InvalidArgument("fit_ku needs at least one trial".into()));
    }
    let mut raw = 0.0f64;
    for tr in trials {
        for &(t, l4) in &tr.samples {
            let denom = (-lambda1 * (t - tr.t0)).exp() * tr.u0_l4 + tr.l_bound;
            if denom > 0.0 {
                raw = raw.max(l4 / denom);
            } else if l4 > 0.0 {
                raw = f64::INFINITY;
            }
        }
    }
    Ok(KuFit { value: raw.max(1.0), raw })
}

/// Pure Stokes run with frozen `n`, sampled every `every` steps.
pub fn stokes_trial(
    solver: &StokesSolver,
    u0: &VectorField,
    n: &ScalarField,
    phi: &ScalarField,
    dt: f64,
    steps: usize,
    every: usize,
) -> Result<(KuTrial, Vec<(f64, f64)>)> {
    let mut u = u0.clone();
    let l4 = |u: &VectorField| u.lp_norm(4.0);
    let u0_l4 = l4(&u)?;
    let mut samples = vec![(0.0, u0_l4)];
    let mut l2 = vec![(0.0, u.norm_sq().sqrt())];
    let every = every.max(1);
    for k in 1..=steps {
        u = solver.step(&u, n, phi, dt)?.u;
        if k % every == 0 {
            let t = k as f64 * dt;
            samples.push((t, l4(&u)?));
            l2.push((t, u.norm_sq().sqrt()));
        }
    }
    let l_bound = n.lp_norm(1.0)?;
    Ok((KuTrial { t0: 0.0, l_bound, u0_l4, samples }, l2))
}
