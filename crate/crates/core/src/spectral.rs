//! Exact inverses of the separable grid operators `α − β·Δ` by dense
//! orthonormal sine/cosine transforms.  Used as preconditioners for the CG
//! solves; on a rectangle they are exact, so CG stops after one sweep.

use std::f64::consts::PI;

use crate::grid::GridSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Basis {
    /// Cell-centred unknowns with reflected ghosts.
    NeumannCell,
    /// Node unknowns 1..n-1 with zero end values.
    DirichletNode,
    /// Cell-centred unknowns with antisymmetric ghosts (zero on the wall).
    DirichletCell,
}

#[derive(Debug, Clone)]
struct Transform {
    n: usize,
    /// Row k holds mode k sampled at the unknowns; orthonormal.
    modes: Vec<f64>,
    eig: Vec<f64>,
}

impl Transform {
    fn new(basis: Basis, cells: usize, h: f64) -> Self {
        let nf = cells as f64;
        let (n, ks): (usize, Vec<usize>) = match basis {
            Basis::NeumannCell => (cells, (0..cells).collect()),
            Basis::DirichletNode => (cells - 1, (1..cells).collect()),
            Basis::DirichletCell => (cells, (1..=cells).collect()),
        };
        let mut modes = vec![0.0; n * n];
        let mut eig = vec![0.0; n];
        for (r, &k) in ks.iter().enumerate() {
            let kf = k as f64;
            eig[r] = (2.0 - 2.0 * (PI * kf / nf).cos()) / (h * h);
            let row = &mut modes[r * n..(r + 1) * n];
            for (j, m) in row.iter_mut().enumerate() {
                let jf = j as f64;
                *m = match basis {
                    Basis::NeumannCell => (PI * kf * (jf + 0.5) / nf).cos(),
                    Basis::DirichletNode => (PI * kf * (jf + 1.0) / nf).sin(),
                    Basis::DirichletCell => (PI * kf * (jf + 0.5) / nf).sin(),
                };
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v /= norm);
        }
        Self { n, modes, eig }
    }
}

/// Tensor-product solver on an `ny' × nx'` block of unknowns stored row-major.
#[derive(Debug, Clone)]
pub(crate) struct Separable {
    tx: Transform,
    ty: Transform,
}

impl Separable {
    pub(crate) fn new(bx: Basis, by: Basis, g: &GridSpec) -> Self {
        Self { tx: Transform::new(bx, g.nx, g.hx()), ty: Transform::new(by, g.ny, g.hy()) }
    }

    pub(crate) fn shape(&self) -> (usize, usize) {
        (self.tx.n, self.ty.n)
    }

    /// Solves `(α + β·(−Δ)) x = b` in place.  A vanishing symbol (the
    /// Neumann constant mode with α = 0) has its coefficient set to zero.
    pub(crate) fn solve(&self, alpha: f64, beta: f64, data: &mut [f64], scratch: &mut Vec<f64>) {
        let (nx, ny) = self.shape();
        debug_assert_eq!(data.len(), nx * ny);
        scratch.clear();
        scratch.resize(nx * ny, 0.0);
        forward_x(&self.tx, data, scratch, ny);
        forward_y(&self.ty, scratch, data, nx);
        for l in 0..ny {
            for k in 0..nx {
                let s = alpha + beta * (self.tx.eig[k] + self.ty.eig[l]);
                let v = &mut data[l * nx + k];
                *v = if s != 0.0 { *v / s } else { 0.0 };
            }
        }
        inverse_y(&self.ty, data, scratch, nx);
        inverse_x(&self.tx, scratch, data, ny);
    }

    /// Smallest positive symbol value, i.e. the first eigenvalue of −Δ.
    pub(crate) fn first_eigenvalue(&self) -> f64 {
        let mx = self.tx.eig.iter().copied().fold(f64::INFINITY, f64::min);
        let my = self.ty.eig.iter().copied().fold(f64::INFINITY, f64::min);
        mx + my
    }
}

fn forward_x(t: &Transform, input: &[f64], out: &mut [f64], rows: usize) {
    let n = t.n;
    for j in 0..rows {
        let row = &input[j * n..(j + 1) * n];
        for k in 0..n {
            let m = &t.modes[k * n..(k + 1) * n];
            out[j * n + k] = m.iter().zip(row).map(|(a, b)| a * b).sum();
        }
    }
}

fn inverse_x(t: &Transform, input: &[f64], out: &mut [f64], rows: usize) {
    let n = t.n;
    out.fill(0.0);
    for j in 0..rows {
        let o = &mut out[j * n..(j + 1) * n];
        for k in 0..n {
            let c = input[j * n + k];
            let m = &t.modes[k * n..(k + 1) * n];
            o.iter_mut().zip(m).for_each(|(o, m)| *o += c * m);
        }
    }
}

fn forward_y(t: &Transform, input: &[f64], out: &mut [f64], cols: usize) {
    let n = t.n;
    out.fill(0.0);
    for l in 0..n {
        let o = &mut out[l * cols..(l + 1) * cols];
        for j in 0..n {
            let c = t.modes[l * n + j];
            let r = &input[j * cols..(j + 1) * cols];
            o.iter_mut().zip(r).for_each(|(o, r)| *o += c * r);
        }
    }
}

fn inverse_y(t: &Transform, input: &[f64], out: &mut [f64], cols: usize) {
    let n = t.n;
    out.fill(0.0);
    for l in 0..n {
        let r = &input[l * cols..(l + 1) * cols];
        for j in 0..n {
            let c = t.modes[l * n + j];
            let o = &mut out[j * cols..(j + 1) * cols];
            o.iter_mut().zip(r).for_each(|(o, r)| *o += c * r);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::laplacian_into;

    #[test]
    fn transforms_are_orthonormal() {
        for b in [Basis::NeumannCell, Basis::DirichletNode, Basis::DirichletCell] {
            let t = Transform::new(b, 7, 0.3);
            for a in 0..t.n {
                for c in 0..t.n {
                    let d: f64 = (0..t.n).map(|j| t.modes[a * t.n + j] * t.modes[c * t.n + j]).sum();
                    let want = if a == c { 1.0 } else { 0.0 };
                    assert!((d - want).abs() < 1e-13, "{b:?} {a} {c} {d}");
                }
            }
        }
    }

    #[test]
    fn neumann_helmholtz_inverts_stencil() {
        let g = GridSpec::new(9, 6, 1.7, 0.9).unwrap();
        let s = Separable::new(Basis::NeumannCell, Basis::NeumannCell, &g);
        let x: Vec<f64> = (0..g.cells()).map(|k| ((k * 37 % 11) as f64).sin()).collect();
        let mut lap = vec![0.0; g.cells()];
        laplacian_into(&g, &x, &mut lap);
        let (a, b) = (1.0, 0.01);
        let mut rhs: Vec<f64> = x.iter().zip(&lap).map(|(x, l)| a * x - b * l).collect();
        s.solve(a, b, &mut rhs, &mut Vec::new());
        for (u, v) in rhs.iter().zip(&x) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
