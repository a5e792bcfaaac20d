//! Rectangular MAC grid: cell-centred scalars, face-centred velocities.
//!
//! Scalars carry homogeneous Neumann data through even-reflection ghosts, so
//! boundary gradient faces vanish and `laplacian = divergence ∘ gradient`
//! holds stencil for stencil.  Velocity components live on the faces normal
//! to them; the faces on ∂Ω are pinned to zero.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidArgument(format!("cell counts must be positive, got {nx}x{ny}")));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::InvalidArgument(format!("side lengths must be positive, got {lx}x{ly}")));
        }
        Ok(Self { nx, ny, lx, ly })
    }

    pub fn unit_square(n: usize) -> Self {
        Self::new(n, n, 1.0, 1.0).expect("n > 0")
    }

    #[inline]
    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }
    #[inline]
    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }
    #[inline]
    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }
    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }
    #[inline]
    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }
    /// Number of x-faces, `(nx + 1) · ny`.
    #[inline]
    pub fn x_faces(&self) -> usize {
        (self.nx + 1) * self.ny
    }
    /// Number of y-faces, `nx · (ny + 1)`.
    #[inline]
    pub fn y_faces(&self) -> usize {
        self.nx * (self.ny + 1)
    }
    pub fn x_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.hx()
    }
    pub fn y_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.hy()
    }

    pub fn same_as(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bc {
    Neumann,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub bc: Bc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: GridSpec,
    /// x-component on x-faces, index `j * (nx + 1) + i`.
    pub ux: Vec<f64>,
    /// y-component on y-faces, index `j * nx + i`.
    pub uy: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        Self { grid, values: vec![value; grid.cells()], bc: Bc::Neumann }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.cells());
        for j in 0..grid.ny {
            let y = grid.y_center(j);
            for i in 0..grid.nx {
                values.push(f(grid.x_center(i), y));
            }
        }
        Self { grid, values, bc: Bc::Neumann }
    }

    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cells() {
            return Err(Error::GridMismatch(format!(
                "{} values for a {}x{} grid",
                values.len(),
                grid.nx,
                grid.ny
            )));
        }
        Ok(Self { grid, values, bc: Bc::Neumann })
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.grid.nx + i]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect(), bc: self.bc }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn integrate(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    pub fn dot(&self, other: &ScalarField) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() * self.grid.cell_area()
    }

    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        lp(&self.values, p, self.grid.cell_area())
    }

    pub fn gradient(&self) -> VectorField {
        let mut v = VectorField::zeros(self.grid);
        gradient_into(&self.grid, &self.values, &mut v.ux, &mut v.uy);
        v
    }

    pub fn laplacian(&self) -> ScalarField {
        debug_assert_eq!(self.bc, Bc::Neumann);
        let mut out = vec![0.0; self.grid.cells()];
        laplacian_into(&self.grid, &self.values, &mut out);
        ScalarField { grid: self.grid, values: out, bc: Bc::None }
    }

    /// Cellwise |∇φ|², each face value shared half-and-half with its
    /// neighbour cell; sums to the face-form ∫|∇φ|².
    pub fn grad_sq_density(&self) -> ScalarField {
        let g = self.gradient();
        ScalarField { grid: self.grid, values: g.cell_sq_density(), bc: Bc::None }
    }

    /// ∫|∇φ|² over faces.
    pub fn dirichlet_energy(&self) -> f64 {
        self.gradient().norm_sq()
    }

    pub fn w12_norm_sq(&self) -> f64 {
        self.dot(self) + self.dirichlet_energy()
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&(self.grid.nx as u64).to_le_bytes())?;
        w.write_all(&(self.grid.ny as u64).to_le_bytes())?;
        w.write_all(&self.grid.lx.to_le_bytes())?;
        w.write_all(&self.grid.ly.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_snapshot(path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::Format { path: path.to_path_buf(), msg: msg.to_string() };
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut b = [0u8; 8];
        let mut next = |r: &mut BufReader<File>| -> Result<[u8; 8]> {
            r.read_exact(&mut b)?;
            Ok(b)
        };
        let nx = u64::from_le_bytes(next(&mut r)?) as usize;
        let ny = u64::from_le_bytes(next(&mut r)?) as usize;
        let lx = f64::from_le_bytes(next(&mut r)?);
        let ly = f64::from_le_bytes(next(&mut r)?);
        let grid = GridSpec::new(nx, ny, lx, ly).map_err(|e| bad(&e.to_string()))?;
        let mut values = Vec::with_capacity(grid.cells());
        for _ in 0..grid.cells() {
            values.push(f64::from_le_bytes(next(&mut r).map_err(|_| bad("truncated payload"))?));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { grid, values, bc: Bc::Neumann })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "y", "value"])?;
        for j in 0..self.grid.ny {
            for i in 0..self.grid.nx {
                w.serialize((self.grid.x_center(i), self.grid.y_center(j), self.at(i, j)))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"CSF1";

impl VectorField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, ux: vec![0.0; grid.x_faces()], uy: vec![0.0; grid.y_faces()] }
    }

    /// Samples a continuous field at face midpoints; boundary-normal faces are
    /// zeroed regardless of `f`.
    pub fn from_fn(grid: GridSpec, fx: impl Fn(f64, f64) -> f64, fy: impl Fn(f64, f64) -> f64) -> Self {
        let (nx, ny, hx, hy) = (grid.nx, grid.ny, grid.hx(), grid.hy());
        let mut v = Self::zeros(grid);
        for j in 0..ny {
            for i in 1..nx {
                v.ux[j * (nx + 1) + i] = fx(i as f64 * hx, grid.y_center(j));
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                v.uy[j * nx + i] = fy(grid.x_center(i), j as f64 * hy);
            }
        }
        v
    }

    pub fn boundary_is_zero(&self) -> bool {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        (0..ny).all(|j| self.ux[j * (nx + 1)] == 0.0 && self.ux[j * (nx + 1) + nx] == 0.0)
            && (0..nx).all(|i| self.uy[i] == 0.0 && self.uy[ny * nx + i] == 0.0)
    }

    pub fn zero_boundary(&mut self) {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        for j in 0..ny {
            self.ux[j * (nx + 1)] = 0.0;
            self.ux[j * (nx + 1) + nx] = 0.0;
        }
        for i in 0..nx {
            self.uy[i] = 0.0;
            self.uy[ny * nx + i] = 0.0;
        }
    }

    pub fn divergence(&self) -> ScalarField {
        let mut out = vec![0.0; self.grid.cells()];
        divergence_into(&self.grid, &self.ux, &self.uy, &mut out);
        ScalarField { grid: self.grid, values: out, bc: Bc::None }
    }

    /// Face-weighted inner product, every face carrying weight hx·hy.
    pub fn dot(&self, other: &VectorField) -> f64 {
        let s: f64 = self.ux.iter().zip(&other.ux).map(|(a, b)| a * b).sum::<f64>()
            + self.uy.iter().zip(&other.uy).map(|(a, b)| a * b).sum::<f64>();
        s * self.grid.cell_area()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn scale(&mut self, a: f64) {
        self.ux.iter_mut().chain(self.uy.iter_mut()).for_each(|v| *v *= a);
    }

    pub fn axpy(&mut self, a: f64, x: &VectorField) {
        for (y, x) in self.ux.iter_mut().zip(&x.ux) {
            *y += a * x;
        }
        for (y, x) in self.uy.iter_mut().zip(&x.uy) {
            *y += a * x;
        }
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Largest face magnitude of either component.
    pub fn max_abs(&self) -> f64 {
        self.ux.iter().chain(&self.uy).fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Cell-centred velocity components by averaging the two faces.
    pub fn cell_components(&self) -> (Vec<f64>, Vec<f64>) {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let mut cx = vec![0.0; nx * ny];
        let mut cy = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                cx[j * nx + i] = 0.5 * (self.ux[j * (nx + 1) + i] + self.ux[j * (nx + 1) + i + 1]);
                cy[j * nx + i] = 0.5 * (self.uy[j * nx + i] + self.uy[(j + 1) * nx + i]);
            }
        }
        (cx, cy)
    }

    /// ∫|u|^p for the cell-averaged velocity; p = ∞ gives the max of |u|.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        let (cx, cy) = self.cell_components();
        let mag: Vec<f64> = cx.iter().zip(&cy).map(|(a, b)| a.hypot(*b)).collect();
        lp(&mag, p, self.grid.cell_area())
    }

    /// Per-cell |v|² with each face shared by its two cells (boundary faces
    /// count half); sums to the face-form `norm_sq`.
    pub fn cell_sq_density(&self) -> Vec<f64> {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let mut out = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let l = self.ux[j * (nx + 1) + i];
                let r = self.ux[j * (nx + 1) + i + 1];
                let b = self.uy[j * nx + i];
                let t = self.uy[(j + 1) * nx + i];
                out[j * nx + i] = 0.5 * (l * l + r * r + b * b + t * t);
            }
        }
        out
    }
}

fn lp(values: &[f64], p: f64, w: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidArgument(format!("L^p norm needs p >= 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(values.iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    let s: f64 = if p == 1.0 {
        values.iter().map(|v| v.abs()).sum()
    } else if p == 2.0 {
        values.iter().map(|v| v * v).sum()
    } else {
        values.iter().map(|v| v.abs().powf(p)).sum()
    };
    Ok((s * w).powf(1.0 / p))
}

pub(crate) fn gradient_into(g: &GridSpec, phi: &[f64], ux: &mut [f64], uy: &mut [f64]) {
    let (nx, ny) = (g.nx, g.ny);
    let (ihx, ihy) = (1.0 / g.hx(), 1.0 / g.hy());
    for j in 0..ny {
        let row = &phi[j * nx..(j + 1) * nx];
        let out = &mut ux[j * (nx + 1)..(j + 1) * (nx + 1)];
        out[0] = 0.0;
        out[nx] = 0.0;
        for i in 1..nx {
            out[i] = (row[i] - row[i - 1]) * ihx;
        }
    }
    uy[..nx].fill(0.0);
    uy[ny * nx..].fill(0.0);
    for j in 1..ny {
        for i in 0..nx {
            uy[j * nx + i] = (phi[j * nx + i] - phi[(j - 1) * nx + i]) * ihy;
        }
    }
}

pub(crate) fn divergence_into(g: &GridSpec, ux: &[f64], uy: &[f64], out: &mut [f64]) {
    let (nx, ny) = (g.nx, g.ny);
    let (ihx, ihy) = (1.0 / g.hx(), 1.0 / g.hy());
    for j in 0..ny {
        for i in 0..nx {
            out[j * nx + i] = (ux[j * (nx + 1) + i + 1] - ux[j * (nx + 1) + i]) * ihx
                + (uy[(j + 1) * nx + i] - uy[j * nx + i]) * ihy;
        }
    }
}

/// Neumann five-point Laplacian, written as the divergence of the face
/// gradient so the two agree bitwise.
pub(crate) fn laplacian_into(g: &GridSpec, phi: &[f64], out: &mut [f64]) {
    let (nx, ny) = (g.nx, g.ny);
    let (ihx, ihy) = (1.0 / g.hx(), 1.0 / g.hy());
    for j in 0..ny {
        for i in 0..nx {
            let c = phi[j * nx + i];
            let gl = if i > 0 { (c - phi[j * nx + i - 1]) * ihx } else { 0.0 };
            let gr = if i + 1 < nx { (phi[j * nx + i + 1] - c) * ihx } else { 0.0 };
            let gb = if j > 0 { (c - phi[(j - 1) * nx + i]) * ihy } else { 0.0 };
            let gt = if j + 1 < ny { (phi[(j + 1) * nx + i] - c) * ihy } else { 0.0 };
            out[j * nx + i] = (gr - gl) * ihx + (gt - gb) * ihy;
        }
    }
}
