//! Preconditioned conjugate gradients and the separable `α − βΔ` solvers
//! for the three unknown layouts of the MAC grid.

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::spectral::{Basis, Separable};

#[derive(Debug, Clone, Copy)]
pub struct CgStats {
    pub iterations: usize,
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// PCG for a symmetric positive (semi)definite operator.  `x` holds the
/// initial guess; the stopping test is on the unpreconditioned relative
/// residual.
pub fn pcg(
    what: &'static str,
    mut apply: impl FnMut(&[f64], &mut [f64]),
    mut precond: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgStats> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(CgStats { iterations: 0, residual: 0.0 });
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    r.iter_mut().zip(b).for_each(|(r, b)| *r = b - *r);
    let mut res = dot(&r, &r).sqrt() / bnorm;
    if res <= tol {
        return Ok(CgStats { iterations: 0, residual: res });
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::NoConvergence { what, iterations: it, residual: res });
        }
        let a = rz / pap;
        x.iter_mut().zip(&p).for_each(|(x, p)| *x += a * p);
        r.iter_mut().zip(&ap).for_each(|(r, ap)| *r -= a * ap);
        res = dot(&r, &r).sqrt() / bnorm;
        if res <= tol {
            return Ok(CgStats { iterations: it, residual: res });
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
    }
    Err(Error::NoConvergence { what, iterations: max_iter, residual: res })
}

/// `−Δ` on a packed `cols × rows` block whose ghosts follow the given bases:
/// reflected (Neumann), zero (node Dirichlet) or negated (cell Dirichlet).
pub(crate) fn neg_laplacian_packed(
    bx: Basis,
    by: Basis,
    cols: usize,
    rows: usize,
    hx: f64,
    hy: f64,
    x: &[f64],
    out: &mut [f64],
) {
    let (ihx2, ihy2) = (1.0 / (hx * hx), 1.0 / (hy * hy));
    let ghost = |b: Basis, c: f64| match b {
        Basis::NeumannCell => c,
        Basis::DirichletNode => 0.0,
        Basis::DirichletCell => -c,
    };
    for j in 0..rows {
        for i in 0..cols {
            let c = x[j * cols + i];
            let l = if i > 0 { x[j * cols + i - 1] } else { ghost(bx, c) };
            let r = if i + 1 < cols { x[j * cols + i + 1] } else { ghost(bx, c) };
            let b = if j > 0 { x[(j - 1) * cols + i] } else { ghost(by, c) };
            let t = if j + 1 < rows { x[(j + 1) * cols + i] } else { ghost(by, c) };
            out[j * cols + i] = (2.0 * c - l - r) * ihx2 + (2.0 * c - b - t) * ihy2;
        }
    }
}

/// Which grid layout a [`Helmholtz`] solver acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Cell-centred scalars, homogeneous Neumann.
    Cells,
    /// Interior x-faces of a Dirichlet velocity.
    XFaces,
    /// Interior y-faces of a Dirichlet velocity.
    YFaces,
}

/// Solver for `(α − βΔ) x = b` on one layout, CG with the exact spectral
/// inverse as preconditioner.
#[derive(Debug, Clone)]
pub struct Helmholtz {
    pub layout: Layout,
    grid: GridSpec,
    bx: Basis,
    by: Basis,
    sep: Separable,
    pub tol: f64,
    pub max_iter: usize,
}

impl Helmholtz {
    pub fn new(grid: GridSpec, layout: Layout, tol: f64, max_iter: usize) -> Self {
        let (bx, by) = match layout {
            Layout::Cells => (Basis::NeumannCell, Basis::NeumannCell),
            Layout::XFaces => (Basis::DirichletNode, Basis::DirichletCell),
            Layout::YFaces => (Basis::DirichletCell, Basis::DirichletNode),
        };
        Self { layout, grid, bx, by, sep: Separable::new(bx, by, &grid), tol, max_iter }
    }

    /// Unknown block shape `(cols, rows)`.
    pub fn shape(&self) -> (usize, usize) {
        self.sep.shape()
    }

    pub fn neg_laplacian(&self, x: &[f64], out: &mut [f64]) {
        let (c, r) = self.shape();
        neg_laplacian_packed(self.bx, self.by, c, r, self.grid.hx(), self.grid.hy(), x, out);
    }

    /// Exact spectral inverse of `α − βΔ` (pseudo-inverse on the Neumann
    /// constant mode when α = 0).
    pub fn spectral_solve(&self, alpha: f64, beta: f64, b: &[f64], x: &mut [f64]) {
        x.copy_from_slice(b);
        self.sep.solve(alpha, beta, x, &mut Vec::new());
    }

    pub fn first_eigenvalue(&self) -> f64 {
        self.sep.first_eigenvalue()
    }

    /// Solves `(α − βΔ) x = b`.  For the singular Neumann case (α = 0) the
    /// right side is reduced to mean zero and the mean-zero solution returned.
    pub fn solve(&self, alpha: f64, beta: f64, b: &[f64], what: &'static str) -> Result<(Vec<f64>, CgStats)> {
        let n = b.len();
        let singular = alpha == 0.0 && self.layout == Layout::Cells;
        let mut rhs = b.to_vec();
        if singular {
            let m = rhs.iter().sum::<f64>() / n as f64;
            rhs.iter_mut().for_each(|v| *v -= m);
        }
        let mut x = vec![0.0; n];
        let mut scratch = Vec::new();
        let stats = pcg(
            what,
            |v, out| {
                self.neg_laplacian(v, out);
                out.iter_mut().zip(v).for_each(|(o, v)| *o = alpha * v + beta * *o);
            },
            |r, z| {
                z.copy_from_slice(r);
                self.sep.solve(alpha, beta, z, &mut scratch);
            },
            &rhs,
            &mut x,
            self.tol,
            self.max_iter,
        )?;
        if singular {
            let m = x.iter().sum::<f64>() / n as f64;
            x.iter_mut().for_each(|v| *v -= m);
        }
        Ok((x, stats))
    }
}

/// Copies the interior x-faces of a full face array into a packed block.
pub(crate) fn pack_x(g: &GridSpec, ux: &[f64]) -> Vec<f64> {
    let (nx, ny) = (g.nx, g.ny);
    let mut out = Vec::with_capacity((nx - 1) * ny);
    for j in 0..ny {
        out.extend_from_slice(&ux[j * (nx + 1) + 1..j * (nx + 1) + nx]);
    }
    out
}

pub(crate) fn unpack_x(g: &GridSpec, packed: &[f64], ux: &mut [f64]) {
    let (nx, ny) = (g.nx, g.ny);
    for j in 0..ny {
        ux[j * (nx + 1)] = 0.0;
        ux[j * (nx + 1) + nx] = 0.0;
        ux[j * (nx + 1) + 1..j * (nx + 1) + nx].copy_from_slice(&packed[j * (nx - 1)..(j + 1) * (nx - 1)]);
    }
}

pub(crate) fn pack_y(g: &GridSpec, uy: &[f64]) -> Vec<f64> {
    let (nx, ny) = (g.nx, g.ny);
    uy[nx..ny * nx].to_vec()
}

pub(crate) fn unpack_y(g: &GridSpec, packed: &[f64], uy: &mut [f64]) {
    let (nx, ny) = (g.nx, g.ny);
    uy[..nx].fill(0.0);
    uy[ny * nx..].fill(0.0);
    uy[nx..ny * nx].copy_from_slice(packed);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{laplacian_into, ScalarField};

    fn field(n: usize, seed: usize) -> Vec<f64> {
        (0..n).map(|k| (((k + 3) * (seed + 7) % 23) as f64 - 11.0) / 7.0).collect()
    }

    #[test]
    fn cells_stencil_matches_grid_laplacian() {
        let g = GridSpec::new(6, 9, 0.5, 2.0).unwrap();
        let h = Helmholtz::new(g, Layout::Cells, 1e-12, 10);
        let x = field(g.cells(), 1);
        let (mut a, mut b) = (vec![0.0; g.cells()], vec![0.0; g.cells()]);
        h.neg_laplacian(&x, &mut a);
        laplacian_into(&g, &x, &mut b);
        for (a, b) in a.iter().zip(&b) {
            assert!((a + b).abs() < 1e-10);
        }
    }

    #[test]
    fn every_layout_solves_in_one_sweep() {
        let g = GridSpec::new(12, 7, 1.0, 0.8).unwrap();
        for layout in [Layout::Cells, Layout::XFaces, Layout::YFaces] {
            let h = Helmholtz::new(g, layout, 1e-10, 50);
            let (c, r) = h.shape();
            let b = field(c * r, 2);
            for (alpha, beta) in [(1.0, 0.3), (0.0, 1.0)] {
                let (x, st) = h.solve(alpha, beta, &b, "test").unwrap();
                assert!(st.iterations <= 2, "{layout:?} {}", st.iterations);
                let mut ax = vec![0.0; x.len()];
                h.neg_laplacian(&x, &mut ax);
                let mean = if alpha == 0.0 && layout == Layout::Cells {
                    b.iter().sum::<f64>() / b.len() as f64
                } else {
                    0.0
                };
                for ((ax, x), b) in ax.iter().zip(&x).zip(&b) {
                    assert!((alpha * x + beta * ax - (b - mean)).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn neumann_poisson_solution_has_zero_mean() {
        let g = GridSpec::unit_square(16);
        let h = Helmholtz::new(g, Layout::Cells, 1e-10, 50);
        let rhs = ScalarField::from_fn(g, |x, y| x * x - y + 0.2);
        let (x, _) = h.solve(0.0, 1.0, &rhs.values, "poisson").unwrap();
        assert!(x.iter().sum::<f64>().abs() < 1e-10);
    }
}
