//! Age/time discretization, sampled fields and midpoint quadrature.
//!
//! The time step always equals the age step, so transport along
//! characteristics is an exact one-cell shift.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

/// Smallest admissible number of age cells.
pub const MIN_AGE_CELLS: usize = 8;

/// Uniform cell-centred age mesh on `[0, a_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeGrid {
    a_max: f64,
    n_age: usize,
    da: f64,
}

impl AgeGrid {
    pub fn new(a_max: f64, n_age: usize) -> Result<Self> {
        if !(a_max.is_finite() && a_max > 0.0) {
            return Err(ModelError::config(format!(
                "a_max must be positive, got {a_max}"
            )));
        }
        if n_age < MIN_AGE_CELLS {
            return Err(ModelError::config(format!(
                "n_age must be at least {MIN_AGE_CELLS}, got {n_age}"
            )));
        }
        Ok(Self {
            a_max,
            n_age,
            da: a_max / n_age as f64,
        })
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    pub fn len(&self) -> usize {
        self.n_age
    }

    pub fn is_empty(&self) -> bool {
        self.n_age == 0
    }

    pub fn da(&self) -> f64 {
        self.da
    }

    /// Cell-centre age `(j + 1/2) * da`.
    pub fn node(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.da
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_age).map(|j| self.node(j))
    }

    /// Index of the cell containing age `a` (clamped to the mesh).
    pub fn cell_of(&self, a: f64) -> usize {
        let j = (a / self.da).floor();
        if j <= 0.0 {
            0
        } else {
            (j as usize).min(self.n_age - 1)
        }
    }

    /// Samples `f` at every cell centre.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Field1D {
        Field1D::new(self.nodes().map(f).collect())
    }

    pub fn constant(&self, value: f64) -> Field1D {
        Field1D::new(vec![value; self.n_age])
    }

    pub fn zeros(&self) -> Field1D {
        self.constant(0.0)
    }

    /// Midpoint rule: `da * sum_j f(a_j)`.
    pub fn integrate(&self, f: &Field1D) -> f64 {
        debug_assert_eq!(f.len(), self.n_age);
        self.da * f.values.iter().sum::<f64>()
    }

    /// Midpoint rule applied to a pointwise product, without allocating.
    pub fn integrate_product(&self, f: &Field1D, g: &Field1D) -> f64 {
        debug_assert_eq!(f.len(), self.n_age);
        debug_assert_eq!(g.len(), self.n_age);
        self.da
            * f.values
                .iter()
                .zip(&g.values)
                .map(|(x, y)| x * y)
                .sum::<f64>()
    }

    /// `out(a_j) = da * sum_k m(a_j, a_k) f(a_k)`.
    pub fn integrate_kernel(&self, m: &ContactKernel, f: &Field1D) -> Result<Field1D> {
        if m.len() != self.n_age || f.len() != self.n_age {
            return Err(ModelError::config(format!(
                "kernel of size {} and field of length {} do not match a grid of {} cells",
                m.len(),
                f.len(),
                self.n_age
            )));
        }
        Ok(m.apply(f, self.da))
    }

    /// Refines by an integer factor keeping `a_max`.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        Self::new(self.a_max, self.n_age * factor)
    }
}

/// Time mesh whose step is tied to the age step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    dt: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(ages: &AgeGrid, t0: f64, n_steps: usize) -> Self {
        Self {
            t0,
            dt: ages.da(),
            n_steps,
        }
    }

    /// Builds the grid covering `[t0, t_end]`; the span must be a whole number of age steps.
    pub fn spanning(ages: &AgeGrid, t0: f64, t_end: f64) -> Result<Self> {
        let span = t_end - t0;
        if !(span.is_finite() && span >= 0.0) {
            return Err(ModelError::config(format!(
                "t_end ({t_end}) must not precede t0 ({t0})"
            )));
        }
        let steps = span / ages.da();
        let n_steps = steps.round();
        if (steps - n_steps).abs() > 1e-9 * steps.max(1.0) {
            return Err(ModelError::config(format!(
                "horizon {span} is not a whole number of steps of {} (dt = da)",
                ages.da()
            )));
        }
        Ok(Self::new(ages, t0, n_steps as usize))
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.n_steps)
    }

    /// Time of node `k`.
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    /// Node index closest to time `t`, clamped to the grid.
    pub fn node_of(&self, t: f64) -> usize {
        let k = ((t - self.t0) / self.dt).round();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.n_steps)
        }
    }
}

/// Samples of a quantity on the age mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Field1D {
    values: Vec<f64>,
}

impl Field1D {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, j: usize) -> f64 {
        self.values[j]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field1D {
        Field1D::new(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Field1D, f: impl Fn(f64, f64) -> f64) -> Field1D {
        debug_assert_eq!(self.len(), other.len());
        Field1D::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn scale(&self, k: f64) -> Field1D {
        self.map(|v| k * v)
    }

    pub fn add(&self, other: &Field1D) -> Field1D {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field1D) -> Field1D {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Field1D) -> Field1D {
        self.zip_map(other, |a, b| a * b)
    }

    /// Unweighted discrete L2 inner product `da * sum f g`.
    pub fn dot(&self, other: &Field1D, da: f64) -> f64 {
        da * self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
    }

    /// Piecewise-constant transfer onto another mesh over the same `[0, a_max]`.
    pub fn resample(&self, from: &AgeGrid, to: &AgeGrid) -> Field1D {
        to.sample(|a| self.values[from.cell_of(a)])
    }
}

impl From<Vec<f64>> for Field1D {
    fn from(values: Vec<f64>) -> Self {
        Field1D::new(values)
    }
}

/// Samples on the (time node, age cell) lattice, row-major in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field2D {
    n_time: usize,
    n_age: usize,
    values: Vec<f64>,
}

impl Field2D {
    pub fn from_fn(n_time: usize, n_age: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(n_time * n_age);
        for k in 0..n_time {
            for j in 0..n_age {
                values.push(f(k, j));
            }
        }
        Self {
            n_time,
            n_age,
            values,
        }
    }

    pub fn constant(n_time: usize, n_age: usize, value: f64) -> Self {
        Self {
            n_time,
            n_age,
            values: vec![value; n_time * n_age],
        }
    }

    pub fn from_rows(rows: &[Field1D]) -> Result<Self> {
        let n_age = rows.first().map_or(0, Field1D::len);
        if rows.iter().any(|r| r.len() != n_age) {
            return Err(ModelError::config("ragged rows in Field2D"));
        }
        Ok(Self {
            n_time: rows.len(),
            n_age,
            values: rows
                .iter()
                .flat_map(|r| r.values().iter().copied())
                .collect(),
        })
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn n_age(&self) -> usize {
        self.n_age
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.values[k * self.n_age + j]
    }

    pub fn set(&mut self, k: usize, j: usize, v: f64) {
        self.values[k * self.n_age + j] = v;
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_age..(k + 1) * self.n_age]
    }

    pub fn row_field(&self, k: usize) -> Field1D {
        Field1D::new(self.row(k).to_vec())
    }

    pub fn set_row(&mut self, k: usize, row: &[f64]) {
        self.values[k * self.n_age..(k + 1) * self.n_age].copy_from_slice(row);
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Contact intensity `m(a, tau)` sampled on node pairs (dense, row-major in `a`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactKernel {
    n: usize,
    table: Vec<f64>,
}

impl ContactKernel {
    pub fn from_table(n: usize, table: Vec<f64>) -> Result<Self> {
        if table.len() != n * n {
            return Err(ModelError::config(format!(
                "contact table has {} entries, expected {}",
                table.len(),
                n * n
            )));
        }
        if table.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ModelError::config(
                "contact table entries must be finite and >= 0",
            ));
        }
        Ok(Self { n, table })
    }

    pub fn from_fn(grid: &AgeGrid, m: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let n = grid.len();
        let mut table = Vec::with_capacity(n * n);
        for j in 0..n {
            for k in 0..n {
                table.push(m(grid.node(j), grid.node(k)));
            }
        }
        Self::from_table(n, table)
    }

    pub fn constant(grid: &AgeGrid, m0: f64) -> Result<Self> {
        Self::from_fn(grid, |_, _| m0)
    }

    /// Separable family `m0 * g(a) * g(tau)`.
    pub fn separable(grid: &AgeGrid, m0: f64, profile: &Field1D) -> Result<Self> {
        if profile.len() != grid.len() {
            return Err(ModelError::config(
                "separable kernel profile length differs from n_age",
            ));
        }
        let n = grid.len();
        let g = profile.values();
        let mut table = Vec::with_capacity(n * n);
        for j in 0..n {
            for k in 0..n {
                table.push(m0 * g[j] * g[k]);
            }
        }
        Self::from_table(n, table)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.table[j * self.n + k]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.table[j * self.n..(j + 1) * self.n]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|j| (0..j).all(|k| self.get(j, k) == self.get(k, j)))
    }

    pub(crate) fn apply(&self, f: &Field1D, da: f64) -> Field1D {
        let fv = f.values();
        Field1D::new(
            (0..self.n)
                .map(|j| da * self.row(j).iter().zip(fv).map(|(m, x)| m * x).sum::<f64>())
                .collect(),
        )
    }

    /// Piecewise-constant transfer onto a finer or coarser mesh.
    pub fn resample(&self, from: &AgeGrid, to: &AgeGrid) -> Self {
        let n = to.len();
        let mut table = Vec::with_capacity(n * n);
        for j in 0..n {
            let jf = from.cell_of(to.node(j));
            for k in 0..n {
                table.push(self.get(jf, from.cell_of(to.node(k))));
            }
        }
        Self { n, table }
    }
}
