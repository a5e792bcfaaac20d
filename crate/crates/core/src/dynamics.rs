//! IMEX time stepping for both formulations:
//!
//! * original: `n_t + u·∇n = Δn − ∇·(n f'(n)/c ∇c)`, `c_t + u·∇c = Δc − f(n)c`
//! * logarithmic: `n_t + u·∇n = Δn + ∇·(n f'(n)∇z)`,
//!   `z_t + s·u·∇z = Δz − |∇z|² + f(n)` with `z = −ln(c/‖c₀‖_∞)`
//!
//! coupled to the Stokes step.  Diffusion is implicit, transport, chemotaxis
//! and reaction explicit with first-order upwinding in conservative form.

use crate::error::{Error, Result};
use crate::grid::{Bc, GridSpec, ScalarField, VectorField};
use crate::linalg::{Helmholtz, Layout};
use crate::monitor::{Monitor, TraceRecord};
use crate::regularize::Sensitivity;
use crate::stokes::StokesSolver;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formulation {
    Original,
    Log,
}

/// Sign of the fluid transport term in the z equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransportSign {
    /// `z_t + u·∇z`, what the change of variables gives.
    #[default]
    ChainRule,
    /// `z_t − u·∇z`.
    Reversed,
}

impl TransportSign {
    fn factor(self) -> f64 {
        match self {
            TransportSign::ChainRule => 1.0,
            TransportSign::Reversed => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub formulation: Formulation,
    pub n: ScalarField,
    /// `c` in the original formulation, `z` in the logarithmic one.
    pub signal: ScalarField,
    pub u: VectorField,
    pub pressure: ScalarField,
    pub t: f64,
    pub sens: Sensitivity,
    pub c0_max: f64,
}

impl SimState {
    /// Original-formulation state; `c0_max` is taken from `c`.
    pub fn original(n: ScalarField, c: ScalarField, u: VectorField, sens: Sensitivity) -> Result<Self> {
        n.grid.same_as(&c.grid)?;
        n.grid.same_as(&u.grid)?;
        sens.validate()?;
        first_nonpositive(&c)?;
        let c0_max = c.max();
        let pressure = ScalarField { bc: Bc::None, ..ScalarField::zeros(n.grid) };
        Ok(Self { formulation: Formulation::Original, n, signal: c, u, pressure, t: 0.0, sens, c0_max })
    }

    pub fn log(n: ScalarField, z: ScalarField, u: VectorField, sens: Sensitivity, c0_max: f64) -> Result<Self> {
        n.grid.same_as(&z.grid)?;
        n.grid.same_as(&u.grid)?;
        sens.validate()?;
        if !(c0_max > 0.0) {
            return Err(Error::InvalidArgument(format!("c0_max must be positive, got {c0_max}")));
        }
        let pressure = ScalarField { bc: Bc::None, ..ScalarField::zeros(n.grid) };
        Ok(Self { formulation: Formulation::Log, n, signal: z, u, pressure, t: 0.0, sens, c0_max })
    }

    pub fn grid(&self) -> GridSpec {
        self.n.grid
    }

    /// `z = −ln(c/‖c₀‖_∞)` in either formulation.
    pub fn z_field(&self) -> ScalarField {
        match self.formulation {
            Formulation::Log => self.signal.clone(),
            Formulation::Original => {
                let m = self.c0_max;
                self.signal.map(|c| -(c / m).ln())
            }
        }
    }

    pub fn c_field(&self) -> ScalarField {
        match self.formulation {
            Formulation::Original => self.signal.clone(),
            Formulation::Log => {
                let m = self.c0_max;
                self.signal.map(|z| m * (-z).exp())
            }
        }
    }
}

fn first_nonpositive(c: &ScalarField) -> Result<()> {
    let nx = c.grid.nx;
    match c.values.iter().position(|&v| !(v > 0.0)) {
        Some(k) => Err(Error::NonPositiveSignal { i: k % nx, j: k / nx, value: c.values[k] }),
        None => Ok(()),
    }
}

pub fn to_log(state: &SimState) -> Result<SimState> {
    if state.formulation != Formulation::Original {
        return Err(Error::InvalidArgument("to_log expects an original-formulation state".into()));
    }
    first_nonpositive(&state.signal)?;
    Ok(SimState { formulation: Formulation::Log, signal: state.z_field(), ..state.clone() })
}

pub fn to_original(state: &SimState) -> Result<SimState> {
    if state.formulation != Formulation::Log {
        return Err(Error::InvalidArgument("to_original expects a log-formulation state".into()));
    }
    Ok(SimState { formulation: Formulation::Original, signal: state.c_field(), ..state.clone() })
}

/// Potential φ and `K₁ = max(‖φ‖_∞, ‖∇φ‖_∞)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialData {
    pub phi: ScalarField,
    pub k1: f64,
}

impl PotentialData {
    pub fn new(phi: ScalarField) -> Self {
        let k1 = phi.lp_norm(f64::INFINITY).unwrap_or(0.0).max(phi.gradient().max_abs());
        Self { phi, k1 }
    }
}

/// Safety factor in `dt ≤ CFL·min(h)/V_max`.
pub const CFL: f64 = 0.4;

/// Signal floor relative to ‖c₀‖_∞ in the original formulation.
pub const C_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Integrator {
    pub grid: GridSpec,
    pub stokes: StokesSolver,
    scalar: Helmholtz,
    pub sign: TransportSign,
}

/// Result of [`Integrator::run`]; `failure` carries the step error that
/// stopped the run, with the trace up to that point kept.
#[derive(Debug)]
pub struct RunOutput {
    pub trace: Vec<TraceRecord>,
    pub state: SimState,
    pub failure: Option<Error>,
}

impl Integrator {
    pub fn new(grid: GridSpec, sign: TransportSign) -> Result<Self> {
        let stokes = StokesSolver::with_defaults(grid)?;
        let scalar = Helmholtz::new(grid, Layout::Cells, stokes.tol, stokes.max_iter);
        log::debug!(
            "z transport term: {}",
            match sign {
                TransportSign::ChainRule => "z_t + u.grad z (chain rule)",
                TransportSign::Reversed => "z_t - u.grad z (reversed sign)",
            }
        );
        Ok(Self { grid, stokes, scalar, sign })
    }

    fn implicit_diffusion(&self, rhs: &[f64], dt: f64) -> Result<ScalarField> {
        let (x, _) = self.scalar.solve(1.0, dt, rhs, "scalar diffusion solve")?;
        Ok(ScalarField { grid: self.grid, values: x, bc: Bc::Neumann })
    }

    /// Largest admissible step for the explicit fluxes of `state`.
    pub fn max_dt(&self, state: &SimState) -> f64 {
        let w = self.drift(state);
        let g = self.grid;
        let (nx, ny) = (g.nx, g.ny);
        let n = &state.n.values;
        let fp = |k: usize| state.sens.derivative(n[k]);
        let mut v = 0.0f64;
        for j in 0..ny {
            for i in 1..nx {
                let f = j * (nx + 1) + i;
                let d = fp(j * nx + i - 1).max(fp(j * nx + i));
                v = v.max(state.u.ux[f].abs() + d * w.ux[f].abs());
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                let f = j * nx + i;
                let d = fp((j - 1) * nx + i).max(fp(j * nx + i));
                v = v.max(state.u.uy[f].abs() + d * w.uy[f].abs());
            }
        }
        if v == 0.0 {
            f64::INFINITY
        } else {
            CFL * g.hx().min(g.hy()) / v
        }
    }

    /// Chemotactic drift velocity per unit `n f'(n)`: `−∇z` (log) or
    /// `∇c/c̄` with the face mean of c (original).
    fn drift(&self, state: &SimState) -> VectorField {
        match state.formulation {
            Formulation::Log => {
                let mut w = state.signal.gradient();
                w.scale(-1.0);
                w
            }
            Formulation::Original => {
                let c = &state.signal;
                let mut w = c.gradient();
                let (nx, ny) = (self.grid.nx, self.grid.ny);
                for j in 0..ny {
                    for i in 1..nx {
                        w.ux[j * (nx + 1) + i] /= 0.5 * (c.at(i - 1, j) + c.at(i, j));
                    }
                }
                for j in 1..ny {
                    for i in 0..nx {
                        w.uy[j * nx + i] /= 0.5 * (c.at(i, j - 1) + c.at(i, j));
                    }
                }
                w
            }
        }
    }

    fn check_cfl(&self, state: &SimState, dt: f64) -> Result<()> {
        let dt_max = self.max_dt(state);
        if dt > dt_max {
            Err(Error::Cfl { dt, dt_max })
        } else {
            Ok(())
        }
    }

    /// Explicit density update `n − dt·∇·(u n↑ + w G(n)↑)`, `G(n) = n f'(n)`.
    fn density_predictor(&self, state: &SimState, w: &VectorField, dt: f64) -> Vec<f64> {
        let g = self.grid;
        let (nx, ny) = (g.nx, g.ny);
        let n = &state.n.values;
        let gn: Vec<f64> = n.iter().map(|&v| v * state.sens.derivative(v)).collect();
        let up = |vel: f64, left: f64, right: f64| if vel > 0.0 { vel * left } else { vel * right };
        let mut fx = vec![0.0; g.x_faces()];
        let mut fy = vec![0.0; g.y_faces()];
        for j in 0..ny {
            for i in 1..nx {
                let (l, r) = (j * nx + i - 1, j * nx + i);
                let f = j * (nx + 1) + i;
                fx[f] = up(state.u.ux[f], n[l], n[r]) + up(w.ux[f], gn[l], gn[r]);
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                let (b, t) = ((j - 1) * nx + i, j * nx + i);
                let f = j * nx + i;
                fy[f] = up(state.u.uy[f], n[b], n[t]) + up(w.uy[f], gn[b], gn[t]);
            }
        }
        let mut div = vec![0.0; g.cells()];
        crate::grid::divergence_into(&g, &fx, &fy, &mut div);
        n.iter().zip(&div).map(|(n, d)| n - dt * d).collect()
    }

    /// `∇·(v s↑)` for cell data `s` and face velocity `v` (upwinded).
    fn upwind_divergence(&self, v: &VectorField, s: &[f64], factor: f64) -> Vec<f64> {
        let g = self.grid;
        let (nx, ny) = (g.nx, g.ny);
        let mut fx = vec![0.0; g.x_faces()];
        let mut fy = vec![0.0; g.y_faces()];
        for j in 0..ny {
            for i in 1..nx {
                let f = j * (nx + 1) + i;
                let a = factor * v.ux[f];
                fx[f] = if a > 0.0 { a * s[j * nx + i - 1] } else { a * s[j * nx + i] };
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                let f = j * nx + i;
                let a = factor * v.uy[f];
                fy[f] = if a > 0.0 { a * s[(j - 1) * nx + i] } else { a * s[j * nx + i] };
            }
        }
        let mut div = vec![0.0; g.cells()];
        crate::grid::divergence_into(&g, &fx, &fy, &mut div);
        div
    }

    pub fn step_log(&self, state: &SimState, phi: &PotentialData, dt: f64) -> Result<SimState> {
        if state.formulation != Formulation::Log {
            return Err(Error::InvalidArgument("step_log expects a log-formulation state".into()));
        }
        self.check_cfl(state, dt)?;
        let w = self.drift(state);
        let n_star = self.density_predictor(state, &w, dt);
        let n_new = self.implicit_diffusion(&n_star, dt)?;

        let z = &state.signal;
        let gsq = z.grad_sq_density();
        let adv = self.upwind_divergence(&state.u, &z.values, self.sign.factor());
        let z_star: Vec<f64> = (0..z.values.len())
            .map(|k| z.values[k] - dt * adv[k] + dt * (state.sens.value(state.n.values[k]) - gsq.values[k]))
            .collect();
        let z_new = self.implicit_diffusion(&z_star, dt)?;

        let st = self.stokes.step(&state.u, &state.n, &phi.phi, dt)?;
        Ok(SimState { n: n_new, signal: z_new, u: st.u, pressure: st.pressure, t: state.t + dt, ..state.clone() })
    }

    pub fn step_original(&self, state: &SimState, phi: &PotentialData, dt: f64) -> Result<SimState> {
        if state.formulation != Formulation::Original {
            return Err(Error::InvalidArgument("step_original expects an original-formulation state".into()));
        }
        self.check_cfl(state, dt)?;
        let floor = C_FLOOR * state.c0_max;
        let w = self.drift(state);
        let n_star = self.density_predictor(state, &w, dt);
        let n_new = self.implicit_diffusion(&n_star, dt)?;

        let c = &state.signal;
        let adv = self.upwind_divergence(&state.u, &c.values, 1.0);
        let c_star: Vec<f64> = (0..c.values.len())
            .map(|k| c.values[k] - dt * adv[k] - dt * state.sens.value(state.n.values[k]) * c.values[k])
            .collect();
        let c_new = self.implicit_diffusion(&c_star, dt)?;
        let nx = self.grid.nx;
        if let Some(k) = c_new.values.iter().position(|&v| !(v > floor)) {
            return Err(Error::SignalFloor { i: k % nx, j: k / nx, value: c_new.values[k], floor });
        }

        let st = self.stokes.step(&state.u, &state.n, &phi.phi, dt)?;
        Ok(SimState { n: n_new, signal: c_new, u: st.u, pressure: st.pressure, t: state.t + dt, ..state.clone() })
    }

    pub fn step(&self, state: &SimState, phi: &PotentialData, dt: f64) -> Result<SimState> {
        match state.formulation {
            Formulation::Log => self.step_log(state, phi, dt),
            Formulation::Original => self.step_original(state, phi, dt),
        }
    }

    /// Steps from `initial.t` to `t_end` (last step shortened to land on it
    /// exactly), emitting a record at the start and every `trace_every`
    /// steps.  Audits run every step; residual columns hold the worst value
    /// since the previous record.
    pub fn run(
        &self,
        initial: &SimState,
        phi: &PotentialData,
        dt: f64,
        t_end: f64,
        trace_every: usize,
        monitor: &Monitor,
    ) -> Result<RunOutput> {
        self.run_observed(initial, phi, dt, t_end, trace_every, monitor, &mut |_, _| Ok(()))
    }

    /// [`Self::run`] with `observe` called on the state behind every record.
    #[allow(clippy::too_many_arguments)]
    pub fn run_observed(
        &self,
        initial: &SimState,
        phi: &PotentialData,
        dt: f64,
        t_end: f64,
        trace_every: usize,
        monitor: &Monitor,
        observe: &mut dyn FnMut(&SimState, &TraceRecord) -> Result<()>,
    ) -> Result<RunOutput> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if trace_every == 0 {
            return Err(Error::InvalidArgument("trace_every must be at least 1".into()));
        }
        if t_end <= initial.t {
            return Ok(RunOutput { trace: Vec::new(), state: initial.clone(), failure: None });
        }
        let mut tracker = monitor.tracker(initial)?;
        let mut trace = vec![tracker.record()];
        observe(initial, &trace[0])?;
        let mut state = initial.clone();
        let mut k = 0usize;
        let tiny = 1e-12 * dt;
        while state.t < t_end - tiny {
            let h = if state.t + dt > t_end - tiny { t_end - state.t } else { dt };
            let next = match self.step(&state, phi, h) {
                Ok(s) => s,
                Err(e) => return Ok(RunOutput { trace, state, failure: Some(e) }),
            };
            let next = if t_end - next.t <= tiny { SimState { t: t_end, ..next } } else { next };
            tracker.advance(&next, h)?;
            state = next;
            k += 1;
            if k % trace_every == 0 {
                let r = tracker.record();
                observe(&state, &r)?;
                trace.push(r);
            }
        }
        Ok(RunOutput { trace, state, failure: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stokes::random_solenoidal;

    fn grid() -> GridSpec {
        GridSpec::unit_square(24)
    }

    fn zero_phi(g: GridSpec) -> PotentialData {
        PotentialData::new(ScalarField::zeros(g))
    }

    #[test]
    fn log_transform_round_trip() {
        let g = grid();
        let c = ScalarField::from_fn(g, |x, y| 0.2 + x * y + 0.3 * (5.0 * x).sin().abs());
        let s = SimState::original(ScalarField::constant(g, 1.0), c.clone(), VectorField::zeros(g), Sensitivity::Identity).unwrap();
        let l = to_log(&s).unwrap();
        assert!(l.signal.min() >= 0.0);
        let back = to_original(&l).unwrap();
        for (a, b) in back.signal.values.iter().zip(&c.values) {
            assert!((a - b).abs() <= 1e-14 * b);
        }
        let flat = SimState::original(ScalarField::zeros(g), ScalarField::constant(g, 3.0), VectorField::zeros(g), Sensitivity::Identity).unwrap();
        assert!(to_log(&flat).unwrap().signal.values.iter().all(|&z| z == 0.0));
        let e = SimState::original(ScalarField::zeros(g), ScalarField::from_fn(g, |x, _| if x < 0.5 { 3.0 } else { 3.0 / std::f64::consts::E }), VectorField::zeros(g), Sensitivity::Identity).unwrap();
        let z = to_log(&e).unwrap().signal;
        assert!(z.values.iter().all(|&v| v == 0.0 || (v - 1.0).abs() < 1e-15));
        let mut bad = c;
        bad.values[7] = 0.0;
        assert!(matches!(
            SimState::original(ScalarField::zeros(g), bad, VectorField::zeros(g), Sensitivity::Identity),
            Err(Error::NonPositiveSignal { i: 7, j: 0, .. })
        ));
        assert!(to_original(&s).is_err());
        assert!(to_log(&l).is_err());
    }

    #[test]
    fn constant_state_original_matches_ode() {
        let g = grid();
        let it = Integrator::new(g, TransportSign::ChainRule).unwrap();
        let (nb, cb, dt) = (0.7, 2.0, 1e-3);
        let s = SimState::original(ScalarField::constant(g, nb), ScalarField::constant(g, cb), VectorField::zeros(g), Sensitivity::Identity).unwrap();
        let s1 = it.step_original(&s, &zero_phi(g), dt).unwrap();
        for (&n, &c) in s1.n.values.iter().zip(&s1.signal.values) {
            assert!((n - nb).abs() < 1e-14);
            assert!((c - cb * (1.0 - dt * nb)).abs() < 1e-13);
            // first order against the exact decay c̄e^{−n̄dt}
            assert!((c - cb * (-nb * dt).exp()).abs() < dt * dt * nb * nb * cb);
        }
    }

    #[test]
    fn constant_state_log_grows_by_f() {
        let g = grid();
        let it = Integrator::new(g, TransportSign::ChainRule).unwrap();
        let s = SimState::log(ScalarField::constant(g, 30.0), ScalarField::constant(g, 0.25), VectorField::zeros(g), Sensitivity::Eps(0.05), 1.0).unwrap();
        let dt = 1e-3;
        let s1 = it.step_log(&s, &zero_phi(g), dt).unwrap();
        let want = 0.25 + dt * Sensitivity::Eps(0.05).value(30.0);
        assert!(s1.signal.values.iter().all(|&z| (z - want).abs() < 1e-14));
    }

    #[test]
    fn mass_conserved_and_max_principle() {
        let g = grid();
        let it = Integrator::new(g, TransportSign::ChainRule).unwrap();
        let n0 = ScalarField::from_fn(g, |x, y| 1.0 + 0.1 * (3.0 * x).cos() * (2.0 * y).sin());
        let c0 = ScalarField::from_fn(g, |x, y| 1.0 + 0.5 * (x * y));
        let mut s = SimState::original(n0, c0, VectorField::zeros(g), Sensitivity::Identity).unwrap();
        let m0 = s.n.integrate();
        let phi = zero_phi(g);
        for _ in 0..1000 {
            let cmax = s.signal.max();
            s = it.step_original(&s, &phi, 1e-3).unwrap();
            assert!(s.signal.max() <= cmax * (1.0 + 1e-14));
        }
        assert!((s.n.integrate() - m0).abs() <= 1e-12 * m0);
    }

    #[test]
    fn cfl_and_floor_errors() {
        let g = grid();
        let it = Integrator::new(g, TransportSign::ChainRule).unwrap();
        let u = random_solenoidal(&g, 1, 50.0);
        let s = SimState::log(ScalarField::constant(g, 1.0), ScalarField::zeros(g), u, Sensitivity::Identity, 1.0).unwrap();
        let dt_max = it.max_dt(&s);
        assert!(matches!(it.step(&s, &zero_phi(g), 1.01 * dt_max), Err(Error::Cfl { .. })));
        assert!(it.step(&s, &zero_phi(g), dt_max).is_ok());

        let s = SimState::original(ScalarField::constant(g, 1e3), ScalarField::constant(g, 1.0), VectorField::zeros(g), Sensitivity::Identity).unwrap();
        let mut s = s;
        let mut hit = None;
        for _ in 0..40 {
            match it.step(&s, &zero_phi(g), 1e-3) {
                Ok(n) => s = n,
                Err(e) => {
                    hit = Some(e);
                    break;
                }
            }
        }
        let msg = hit.expect("signal must cross the floor").to_string();
        assert!(msg.contains("log formulation"), "{msg}");
    }

    fn bump_state(g: GridSpec) -> SimState {
        let n0 = ScalarField::from_fn(g, |x, y| 0.5 + 4.0 * (-((x - 0.4).powi(2) + (y - 0.6).powi(2)) / 0.02).exp());
        let c0 = ScalarField::from_fn(g, |x, y| 1.0 + 0.2 * (std::f64::consts::PI * x).cos() * y);
        let s = SimState::original(n0, c0, random_solenoidal(&g, 9, 0.3), Sensitivity::Eps(0.1)).unwrap();
        to_log(&s).unwrap()
    }

    #[test]
    fn runs_are_bitwise_deterministic() {
        let g = GridSpec::unit_square(16);
        let it = Integrator::new(g, TransportSign::ChainRule).unwrap();
        let phi = PotentialData::new(ScalarField::from_fn(g, |_, y| y));
        let s0 = bump_state(g);
        let a = it.run(&s0, &phi, 1e-3, 0.05, 5, &Monitor::default()).unwrap();
        let b = it.run(&s0, &phi, 1e-3, 0.05, 5, &Monitor::default()).unwrap();
        assert_eq!(a.trace.len(), 11);
        for (ra, rb) in a.trace.iter().zip(&b.trace) {
            let (x, y) = (ra.to_row(), rb.to_row());
            assert!(x.iter().zip(&y).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        assert_eq!(a.state.n.values, b.state.n.values);
    }

    #[test]
    fn halving_trace_every_keeps_shared_records() {
        let g = GridSpec::unit_square(16);
        let it = Integrator::new(g, TransportSign::ChainRule).unwrap();
        let phi = zero_phi(g);
        let s0 = bump_state(g);
        let coarse = it.run(&s0, &phi, 1e-3, 0.04, 8, &Monitor::default()).unwrap();
        let fine = it.run(&s0, &phi, 1e-3, 0.04, 4, &Monitor::default()).unwrap();
        assert_eq!(fine.trace.len(), 2 * coarse.trace.len() - 1);
        for (k, rc) in coarse.trace.iter().enumerate() {
            let rf = &fine.trace[2 * k];
            // state columns agree; residual columns are maxima over the
            // interval since the previous record and may differ
            assert_eq!(&rc.to_row()[..15], &rf.to_row()[..15]);
            assert!(rc.residual_l2 >= rf.residual_l2 || rc.residual_l2.is_nan());
        }
        assert_eq!(coarse.state.signal.values, fine.state.signal.values);
    }

    #[test]
    fn empty_interval_gives_empty_trace() {
        let g = GridSpec::unit_square(8);
        let it = Integrator::new(g, TransportSign::ChainRule).unwrap();
        let s0 = bump_state(g);
        let out = it.run(&s0, &zero_phi(g), 1e-3, 0.0, 1, &Monitor::default()).unwrap();
        assert!(out.trace.is_empty());
        assert_eq!(out.state.t, s0.t);
    }
}
