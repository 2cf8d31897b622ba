//! Periodic square lattice and the five-point evolution operators.
//!
//! Cells are addressed by a row index `i` and column index `j`, both in
//! `1..=n`, and stored column-major: `idx = (j - 1) * n + (i - 1)`.
//! Rows run along the x (east) axis and columns along the y (north) axis, so
//! the four neighbours of `(i, j)` are
//!
//! | name  | cell        | θ-stencil weight |
//! |-------|-------------|------------------|
//! | east  | `(i + 1, j)` | `α(β − ν_x)`    |
//! | west  | `(i − 1, j)` | `α(β + ν_x)`    |
//! | north | `(i, j + 1)` | `α(β − ν_y)`    |
//! | south | `(i, j − 1)` | `α(β + ν_y)`    |
//!
//! with indices wrapped modulo `n`. The centre weight is `α(1 − 4β)`.

use crate::error::{Error, Result};

/// Direction order used by [`Lattice::neighbors`].
pub const EAST: usize = 0;
pub const WEST: usize = 1;
pub const NORTH: usize = 2;
pub const SOUTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    n: usize,
    cell_size: f64,
}

impl GridSpec {
    /// `n` cells per side; `cell_size` in metres.
    pub fn new(n: usize, cell_size: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::invalid(format!(
                "grid needs at least 3 cells per side so periodic neighbours are distinct, got {n}"
            )));
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(Error::invalid(format!("cell size must be positive, got {cell_size}")));
        }
        Ok(Self { n, cell_size })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Total number of cells, `n²`.
    pub fn cells(&self) -> usize {
        self.n * self.n
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    /// Side length of the square domain in metres.
    pub fn extent(&self) -> f64 {
        self.n as f64 * self.cell_size
    }

    /// 1-based `(i, j)` to linear index.
    pub fn linear_index(&self, i: usize, j: usize) -> Result<usize> {
        if i == 0 || j == 0 || i > self.n || j > self.n {
            return Err(Error::Bounds(format!(
                "cell ({i}, {j}) outside 1..={} lattice",
                self.n
            )));
        }
        Ok((j - 1) * self.n + (i - 1))
    }

    /// Linear index back to 1-based `(i, j)`.
    pub fn cell_of(&self, idx: usize) -> Result<(usize, usize)> {
        if idx >= self.cells() {
            return Err(Error::Bounds(format!("cell index {idx} >= {}", self.cells())));
        }
        Ok((idx % self.n + 1, idx / self.n + 1))
    }

    /// East, west, north and south neighbours of `idx` under periodic wrap.
    pub fn periodic_neighbors(&self, idx: usize) -> Result<[usize; 4]> {
        if idx >= self.cells() {
            return Err(Error::Bounds(format!("cell index {idx} >= {}", self.cells())));
        }
        Ok(self.neighbors_unchecked(idx))
    }

    #[inline]
    fn neighbors_unchecked(&self, idx: usize) -> [usize; 4] {
        let n = self.n;
        let i0 = idx % n;
        let j0 = idx / n;
        let col = j0 * n;
        [
            col + (i0 + 1) % n,
            col + (i0 + n - 1) % n,
            ((j0 + 1) % n) * n + i0,
            ((j0 + n - 1) % n) * n + i0,
        ]
    }
}

/// A grid plus its precomputed neighbour table.
#[derive(Debug, Clone)]
pub struct Lattice {
    grid: GridSpec,
    neighbors: Vec<[u32; 4]>,
}

impl Lattice {
    pub fn new(grid: GridSpec) -> Self {
        let neighbors = (0..grid.cells())
            .map(|idx| grid.neighbors_unchecked(idx).map(|c| c as u32))
            .collect();
        Self { grid, neighbors }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn cells(&self) -> usize {
        self.grid.cells()
    }

    #[inline]
    pub fn neighbors(&self, idx: usize) -> [usize; 4] {
        self.neighbors[idx].map(|c| c as usize)
    }

    /// Applies a stencil: `out = G input`.
    pub fn apply(&self, stencil: &StencilWeights, input: &[f64], out: &mut [f64]) {
        let n = self.cells();
        assert_eq!(input.len(), n);
        assert_eq!(out.len(), n);
        for (idx, (o, nb)) in out.iter_mut().zip(&self.neighbors).enumerate() {
            *o = stencil.center * input[idx]
                + stencil.east * input[nb[EAST] as usize]
                + stencil.west * input[nb[WEST] as usize]
                + stencil.north * input[nb[NORTH] as usize]
                + stencil.south * input[nb[SOUTH] as usize];
        }
    }

    /// `out += G input`.
    pub fn apply_add(&self, stencil: &StencilWeights, input: &[f64], out: &mut [f64]) {
        for (idx, (o, nb)) in out.iter_mut().zip(&self.neighbors).enumerate() {
            *o += stencil.center * input[idx]
                + stencil.east * input[nb[EAST] as usize]
                + stencil.west * input[nb[WEST] as usize]
                + stencil.north * input[nb[NORTH] as usize]
                + stencil.south * input[nb[SOUTH] as usize];
        }
    }

    /// Sum of the four neighbours minus four times the centre (discrete Laplacian).
    pub fn laplacian(&self, input: &[f64], out: &mut [f64]) {
        for (idx, (o, nb)) in out.iter_mut().zip(&self.neighbors).enumerate() {
            *o = input[nb[EAST] as usize]
                + input[nb[WEST] as usize]
                + input[nb[NORTH] as usize]
                + input[nb[SOUTH] as usize]
                - 4.0 * input[idx];
        }
    }

    /// West-minus-east and south-minus-north differences: the coefficients of
    /// `ν_x` and `ν_y` (before scaling by α) in the θ-stencil.
    pub fn advection_differences(&self, input: &[f64], dx: &mut [f64], dy: &mut [f64]) {
        for (idx, nb) in self.neighbors.iter().enumerate() {
            dx[idx] = input[nb[WEST] as usize] - input[nb[EAST] as usize];
            dy[idx] = input[nb[SOUTH] as usize] - input[nb[NORTH] as usize];
        }
    }

    /// Materialises a stencil as a CSR matrix.
    pub fn to_sparse(&self, stencil: &StencilWeights) -> SparseOperator {
        let n = self.cells();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(5 * n);
        let mut values = Vec::with_capacity(5 * n);
        row_ptr.push(0);
        for idx in 0..n {
            let nb = self.neighbors(idx);
            let mut entries = [
                (idx, stencil.center),
                (nb[EAST], stencil.east),
                (nb[WEST], stencil.west),
                (nb[NORTH], stencil.north),
                (nb[SOUTH], stencil.south),
            ];
            entries.sort_by_key(|&(c, _)| c);
            for (c, v) in entries {
                cols.push(c);
                values.push(v);
            }
            row_ptr.push(cols.len());
        }
        SparseOperator {
            dim: n,
            row_ptr,
            cols,
            values,
        }
    }
}

/// The five weights of a first-order stencil.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StencilWeights {
    pub center: f64,
    pub east: f64,
    pub west: f64,
    pub north: f64,
    pub south: f64,
}

impl StencilWeights {
    /// Advection-diffusion stencil for θ.
    pub fn theta(alpha: f64, beta: f64, nu: Velocity) -> Self {
        Self {
            center: alpha * (1.0 - 4.0 * beta),
            east: alpha * (beta - nu.x),
            west: alpha * (beta + nu.x),
            north: alpha * (beta - nu.y),
            south: alpha * (beta + nu.y),
        }
    }

    /// Symmetric diffusion stencil for the source-sink field.
    pub fn source(alpha_star: f64, beta_star: f64) -> Self {
        Self {
            center: alpha_star * (1.0 - 4.0 * beta_star),
            east: alpha_star * beta_star,
            west: alpha_star * beta_star,
            north: alpha_star * beta_star,
            south: alpha_star * beta_star,
        }
    }

    pub fn sum(&self) -> f64 {
        self.center + self.east + self.west + self.north + self.south
    }
}

/// Advection velocity in cells per (augmented) time step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Velocity {
    pub x: f64,
    pub y: f64,
}

impl Velocity {
    pub const ZERO: Velocity = Velocity { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl SparseOperator {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn nnz_in_row(&self, r: usize) -> usize {
        self.row_ptr[r + 1] - self.row_ptr[r]
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate().take(self.dim) {
            *o = self.row(r).map(|(c, v)| v * x[c]).sum();
        }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }
}

/// Sparse θ evolution operator `G(ν)`.
pub fn build_theta_evolution(
    alpha: f64,
    beta: f64,
    nu: Velocity,
    lattice: &Lattice,
) -> Result<SparseOperator> {
    check_finite(&[alpha, beta, nu.x, nu.y])?;
    Ok(lattice.to_sparse(&StencilWeights::theta(alpha, beta, nu)))
}

/// Sparse source-sink evolution operator `G*`.
pub fn build_source_evolution(
    alpha_star: f64,
    beta_star: f64,
    lattice: &Lattice,
) -> Result<SparseOperator> {
    check_finite(&[alpha_star, beta_star])?;
    Ok(lattice.to_sparse(&StencilWeights::source(alpha_star, beta_star)))
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid("stencil parameters must be finite"))
    }
}
