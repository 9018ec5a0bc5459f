use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff::write_atomic;
use crate::error::{Error, Result};

/// Regular lattice over a rectangle, `nx × ny` points including the edges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::square(4.0, 101)
    }
}

impl GridSpec {
    /// `n × n` points over `[−half_width, half_width]²`.
    pub fn square(half_width: f64, n: usize) -> Self {
        GridSpec {
            x_min: -half_width,
            x_max: half_width,
            y_min: -half_width,
            y_max: half_width,
            nx: n,
            ny: n,
        }
    }

    fn axis(min: f64, max: f64, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![min];
        }
        (0..n)
            .map(|i| min + (max - min) * i as f64 / (n - 1) as f64)
            .collect()
    }

    pub fn xs(&self) -> Vec<f64> {
        Self::axis(self.x_min, self.x_max, self.nx)
    }

    pub fn ys(&self) -> Vec<f64> {
        Self::axis(self.y_min, self.y_max, self.ny)
    }

    pub fn cell_area(&self) -> f64 {
        let dx = (self.x_max - self.x_min) / (self.nx.max(2) - 1) as f64;
        let dy = (self.y_max - self.y_min) / (self.ny.max(2) - 1) as f64;
        dx * dy
    }

    fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 || !(self.x_max > self.x_min) || !(self.y_max > self.y_min)
        {
            return Err(Error::contract(format!("degenerate grid {self:?}")));
        }
        Ok(())
    }
}

/// Values on a [`GridSpec`]; `values[[ix, iy]]` sits at `(xs[ix], ys[iy])`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub spec: GridSpec,
    pub values: Array2<f64>,
}

impl Grid {
    pub fn from_fn(spec: GridSpec, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let (xs, ys) = (spec.xs(), spec.ys());
        let values = Array2::from_shape_fn((spec.nx, spec.ny), |(i, j)| f(xs[i], ys[j]));
        Grid { spec, values }
    }

    /// Points as an `(nx·ny) × 2` matrix in the CSV row order.
    pub fn points(spec: &GridSpec) -> Array2<f64> {
        let (xs, ys) = (spec.xs(), spec.ys());
        let mut out = Array2::zeros((spec.nx * spec.ny, 2));
        for (i, x) in xs.iter().enumerate() {
            for (j, y) in ys.iter().enumerate() {
                let r = i * spec.ny + j;
                out[[r, 0]] = *x;
                out[[r, 1]] = *y;
            }
        }
        out
    }

    pub fn from_values(spec: GridSpec, flat: &[f64]) -> Result<Self> {
        let values = Array2::from_shape_vec((spec.nx, spec.ny), flat.to_vec())
            .map_err(|e| Error::contract(e.to_string()))?;
        Ok(Grid { spec, values })
    }

    pub fn integral(&self) -> f64 {
        self.values.sum() * self.spec.cell_area()
    }

    pub fn at(&self, ix: usize, iy: usize) -> (f64, f64, f64) {
        let x = self.spec.xs()[ix];
        let y = self.spec.ys()[iy];
        (x, y, self.values[[ix, iy]])
    }

    /// Interior points strictly below their eight neighbours.
    pub fn local_minima(&self) -> Vec<(f64, f64)> {
        let (xs, ys) = (self.spec.xs(), self.spec.ys());
        let v = &self.values;
        let mut out = Vec::new();
        for i in 1..self.spec.nx - 1 {
            for j in 1..self.spec.ny - 1 {
                let c = v[[i, j]];
                let lowest = (i - 1..=i + 1)
                    .flat_map(|a| (j - 1..=j + 1).map(move |b| (a, b)))
                    .filter(|&(a, b)| (a, b) != (i, j))
                    .all(|(a, b)| c < v[[a, b]]);
                if lowest {
                    out.push((xs[i], ys[j]));
                }
            }
        }
        out
    }

    /// CSV with header `x,y,value`, x-major row order.
    pub fn to_csv(&self) -> String {
        let (xs, ys) = (self.spec.xs(), self.spec.ys());
        let mut out = String::from("x,y,value\n");
        for (i, x) in xs.iter().enumerate() {
            for (j, y) in ys.iter().enumerate() {
                writeln!(out, "{x},{y},{}", self.values[[i, j]]).expect("write to string");
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bandwidth {
    /// Scott's rule per axis, `h = N^{-1/6} · std` in two dimensions.
    #[default]
    Scott,
    Fixed(f64),
}

/// Per-axis Scott bandwidths for an `n × 2` sample matrix.
pub fn scott_bandwidth(samples: ArrayView2<'_, f64>) -> (f64, f64) {
    let n = samples.nrows() as f64;
    let factor = n.powf(-1.0 / 6.0);
    let std = |col: usize| samples.column(col).std(if n > 1.0 { 1.0 } else { 0.0 });
    (factor * std(0), factor * std(1))
}

/// Gaussian-kernel density estimate of 2-D `samples` on `grid`, rescaled to
/// integrate to one over the grid.
pub fn kde_grid(samples: &Array2<f64>, grid: &GridSpec, bandwidth: Bandwidth) -> Result<Grid> {
    if samples.nrows() == 0 {
        return Err(Error::contract("KDE needs at least one sample"));
    }
    if samples.ncols() != 2 {
        return Err(Error::Unsupported(format!(
            "grid KDE needs 2-D samples, got {} columns",
            samples.ncols()
        )));
    }
    grid.validate()?;
    let (hx, hy) = match bandwidth {
        Bandwidth::Scott => scott_bandwidth(samples.view()),
        Bandwidth::Fixed(h) => (h, h),
    };
    if !(hx > 0.0 && hy > 0.0) {
        return Err(Error::contract(format!(
            "KDE bandwidth must be positive, got ({hx}, {hy})"
        )));
    }
    let kernel = |axis: &[f64], col: usize, h: f64| {
        let norm = 1.0 / ((2.0 * PI).sqrt() * h);
        Array2::from_shape_fn((samples.nrows(), axis.len()), |(k, i)| {
            let z = (axis[i] - samples[[k, col]]) / h;
            norm * (-0.5 * z * z).exp()
        })
    };
    let kx = kernel(&grid.xs(), 0, hx);
    let ky = kernel(&grid.ys(), 1, hy);
    // separable product kernel: density[ix, iy] = Σ_k kx[k, ix] · ky[k, iy] / N
    let mut values = kx.t().dot(&ky);
    values /= samples.nrows() as f64;
    let mass = values.sum() * grid.cell_area();
    if mass > 0.0 {
        values /= mass;
    }
    Ok(Grid {
        spec: *grid,
        values,
    })
}

/// Mean over the sample rows.
pub fn column_means(samples: &Array2<f64>) -> Vec<f64> {
    samples
        .mean_axis(Axis(0))
        .map(|m| m.to_vec())
        .unwrap_or_default()
}
