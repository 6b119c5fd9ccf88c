//! Periodic calculus on the flat torus `[0,1)^d`.
//!
//! Fields are stored as nodal samples on a uniform grid. Derivatives,
//! Laplacian powers and convolutions are Fourier multipliers; the transforms
//! stay inside this module and the operator/solver internals.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{MfgError, Result};

/// Relative magnitude below which a Fourier coefficient of nodal data is
/// indistinguishable from rounding of the nodal values.
pub(crate) const ROUNDOFF_FLOOR: f64 = 64.0 * f64::EPSILON;

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Uniform periodic grid with `N` points per axis in dimension `d ∈ {1, 2}`.
#[derive(Clone)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
    plans: Arc<Plans>,
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.n == other.n
    }
}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid")
            .field("dim", &self.dim)
            .field("n", &self.n)
            .finish()
    }
}

pub fn make_grid(d: usize, n: usize) -> Result<TorusGrid> {
    TorusGrid::new(d, n)
}

impl TorusGrid {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if !(1..=2).contains(&d) {
            return Err(MfgError::config("d", format!("dimension must be 1 or 2, got {d}")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(MfgError::config(
                "N",
                format!("points per axis must be a power of two >= 8, got {n}"),
            ));
        }
        let mut planner = FftPlanner::new();
        let plans = Plans {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        };
        Ok(TorusGrid {
            dim: d,
            n,
            plans: Arc::new(plans),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    /// Total node count `N^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Per-axis integer indices of a row-major node index (axis 0 slowest).
    pub fn node_indices(&self, node: usize) -> [usize; 2] {
        if self.dim == 1 {
            [node, 0]
        } else {
            [node / self.n, node % self.n]
        }
    }

    /// Coordinates `j/N` of a node; unused axes are zero.
    pub fn coords(&self, node: usize) -> [f64; 2] {
        let [i, j] = self.node_indices(node);
        let h = self.spacing();
        [i as f64 * h, j as f64 * h]
    }

    /// Centered integer frequency for a DFT index along one axis.
    pub fn frequency(&self, index: usize) -> i64 {
        let n = self.n as i64;
        let k = index as i64;
        if k <= n / 2 {
            k
        } else {
            k - n
        }
    }

    fn is_nyquist(&self, index: usize) -> bool {
        index == self.n / 2
    }

    /// Angular wave vector `2πk` of a spectral index, with Nyquist flags.
    pub(crate) fn wave_vector(&self, spec_index: usize) -> ([f64; 2], [bool; 2]) {
        let [i, j] = self.node_indices(spec_index);
        if self.dim == 1 {
            ([2.0 * PI * self.frequency(i) as f64, 0.0], [self.is_nyquist(i), false])
        } else {
            (
                [2.0 * PI * self.frequency(i) as f64, 2.0 * PI * self.frequency(j) as f64],
                [self.is_nyquist(i), self.is_nyquist(j)],
            )
        }
    }

    /// `|2πk|^2` for a spectral index.
    pub(crate) fn wave_norm_sq(&self, spec_index: usize) -> f64 {
        let (k, _) = self.wave_vector(spec_index);
        k[0] * k[0] + k[1] * k[1]
    }

    fn transform_axis(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        if self.dim == 1 {
            fft.process(data);
            return;
        }
        // rows (axis 1) are contiguous
        for row in data.chunks_exact_mut(n) {
            fft.process(row);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); n];
        for c in 0..n {
            for r in 0..n {
                column[r] = data[r * n + c];
            }
            fft.process(&mut column);
            for r in 0..n {
                data[r * n + c] = column[r];
            }
        }
    }

    /// Normalized forward transform: coefficient 0 is the mean.
    pub(crate) fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform_axis(&mut data, &self.plans.forward);
        let scale = 1.0 / self.len() as f64;
        for c in data.iter_mut() {
            *c *= scale;
        }
        data
    }

    /// Forward transform that zeroes coefficients at the rounding floor of
    /// the nodal data. High-order multipliers would otherwise amplify
    /// rounding noise by the symbol magnitude.
    pub(crate) fn forward_filtered(&self, values: &[f64]) -> Vec<Complex64> {
        let scale = values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let mut spec = self.forward(values);
        let floor = ROUNDOFF_FLOOR * scale;
        for c in spec.iter_mut() {
            if c.norm() <= floor {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        spec
    }

    /// Inverse of [`forward`](Self::forward); the imaginary part is discarded.
    pub(crate) fn inverse(&self, spec: &[Complex64]) -> Vec<f64> {
        let mut data = spec.to_vec();
        self.transform_axis(&mut data, &self.plans.inverse);
        data.into_iter().map(|c| c.re).collect()
    }

    /// Multiply a spectrum by `i 2π k_axis` (Nyquist zeroed).
    pub(crate) fn spec_derivative(&self, spec: &[Complex64], axis: usize) -> Vec<Complex64> {
        spec.iter()
            .enumerate()
            .map(|(idx, &c)| {
                let (k, nyq) = self.wave_vector(idx);
                if nyq[axis] {
                    Complex64::new(0.0, 0.0)
                } else {
                    c * Complex64::new(0.0, k[axis])
                }
            })
            .collect()
    }

    /// Multiply a spectrum by a real symbol of `|2πk|^2`.
    pub(crate) fn spec_radial<F: Fn(f64) -> f64>(&self, spec: &[Complex64], symbol: F) -> Vec<Complex64> {
        spec.iter()
            .enumerate()
            .map(|(idx, &c)| c * symbol(self.wave_norm_sq(idx)))
            .collect()
    }

    fn check_same(&self, other: &TorusGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(MfgError::GridMismatch(format!(
                "(d={}, N={}) vs (d={}, N={})",
                self.dim, self.n, other.dim, other.n
            )))
        }
    }
}

/// Real nodal samples of a scalar function on a [`TorusGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl Field {
    /// Checked constructor: length must match and all values be finite.
    pub fn new(grid: &TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(MfgError::GridMismatch(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(MfgError::NonFinite { what: "field", node });
        }
        Ok(Field {
            grid: grid.clone(),
            values,
        })
    }

    pub(crate) fn raw(grid: &TorusGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Field {
            grid: grid.clone(),
            values,
        }
    }

    pub fn constant(grid: &TorusGrid, c: f64) -> Self {
        Field::raw(grid, vec![c; grid.len()])
    }

    pub fn zeros(grid: &TorusGrid) -> Self {
        Field::constant(grid, 0.0)
    }

    /// Samples `f(x)` at every node; `x` has `d` entries.
    pub fn from_fn<F: Fn(&[f64]) -> f64>(grid: &TorusGrid, f: F) -> Self {
        let d = grid.dim();
        let values = (0..grid.len())
            .map(|node| {
                let x = grid.coords(node);
                f(&x[..d])
            })
            .collect();
        Field::raw(grid, values)
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Discrete `L^r` norm, `(∫|f|^r)^{1/r}`.
    pub fn lp_norm(&self, r: f64) -> f64 {
        let s = self.values.iter().map(|v| v.abs().powf(r)).sum::<f64>() / self.len() as f64;
        s.powf(1.0 / r)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Field {
        Field::raw(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map<F: Fn(f64, f64) -> f64>(&self, other: &Field, f: F) -> Field {
        debug_assert_eq!(self.grid, other.grid);
        Field::raw(
            &self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn scale(&self, s: f64) -> Field {
        self.map(|v| s * v)
    }

    pub(crate) fn check_grid(&self, other: &Field) -> Result<()> {
        self.grid.check_same(&other.grid)
    }
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul for &Field {
    type Output = Field;
    fn mul(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a * b)
    }
}

/// One [`Field`] per spatial component.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    comps: Vec<Field>,
}

impl VectorField {
    pub fn new(comps: Vec<Field>) -> Result<Self> {
        let first = comps
            .first()
            .ok_or_else(|| MfgError::GridMismatch("vector field needs components".into()))?;
        if comps.len() != first.grid().dim() {
            return Err(MfgError::GridMismatch(format!(
                "{} components for dimension {}",
                comps.len(),
                first.grid().dim()
            )));
        }
        for c in &comps[1..] {
            first.check_grid(c)?;
        }
        Ok(VectorField { comps })
    }

    pub fn constant(grid: &TorusGrid, v: &[f64]) -> Self {
        VectorField {
            comps: (0..grid.dim()).map(|a| Field::constant(grid, v[a])).collect(),
        }
    }

    pub fn component(&self, axis: usize) -> &Field {
        &self.comps[axis]
    }

    pub fn components(&self) -> &[Field] {
        &self.comps
    }

    pub fn grid(&self) -> &TorusGrid {
        self.comps[0].grid()
    }

    /// Vector value at one node (unused axes are zero).
    pub fn at(&self, node: usize) -> [f64; 2] {
        let mut p = [0.0; 2];
        for (a, c) in self.comps.iter().enumerate() {
            p[a] = c.values[node];
        }
        p
    }

    /// Pointwise Euclidean norm.
    pub fn norm(&self) -> Field {
        let g = self.grid();
        Field::raw(
            g,
            (0..g.len())
                .map(|i| {
                    let p = self.at(i);
                    (p[0] * p[0] + p[1] * p[1]).sqrt()
                })
                .collect(),
        )
    }

    /// Pointwise dot product.
    pub fn dot(&self, other: &VectorField) -> Field {
        let mut acc = Field::zeros(self.grid());
        for (a, b) in self.comps.iter().zip(&other.comps) {
            acc = &acc + &(a * b);
        }
        acc
    }

    /// Multiply every component by a scalar field.
    pub fn scale_by(&self, s: &Field) -> VectorField {
        VectorField {
            comps: self.comps.iter().map(|c| c * s).collect(),
        }
    }

    pub(crate) fn from_components_unchecked(comps: Vec<Field>) -> Self {
        VectorField { comps }
    }
}

/// Symmetric `d×d` field, storing the upper triangle row by row.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixField {
    dim: usize,
    comps: Vec<Field>,
}

impl MatrixField {
    fn slot(dim: usize, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        // (0,0)->0, (0,1)->1, (1,1)->2 for d=2
        i * dim - i * (i.saturating_sub(1)) / 2 + (j - i)
    }

    pub fn zeros(grid: &TorusGrid) -> Self {
        let dim = grid.dim();
        MatrixField {
            dim,
            comps: vec![Field::zeros(grid); dim * (dim + 1) / 2],
        }
    }

    /// Builds a field with the same matrix at every node.
    pub fn constant(grid: &TorusGrid, m: [[f64; 2]; 2]) -> Self {
        let mut out = MatrixField::zeros(grid);
        for i in 0..out.dim {
            for j in i..out.dim {
                out.comps[Self::slot(out.dim, i, j)] = Field::constant(grid, m[i][j]);
            }
        }
        out
    }

    pub fn get(&self, i: usize, j: usize) -> &Field {
        &self.comps[Self::slot(self.dim, i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, f: Field) {
        let s = Self::slot(self.dim, i, j);
        self.comps[s] = f;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Matrix value at one node.
    pub fn at(&self, node: usize) -> [[f64; 2]; 2] {
        let mut m = [[0.0; 2]; 2];
        for i in 0..self.dim {
            for j in 0..self.dim {
                m[i][j] = self.get(i, j).values[node];
            }
        }
        m
    }

    pub fn trace(&self) -> Field {
        let mut t = self.get(0, 0).clone();
        for i in 1..self.dim {
            t = &t + self.get(i, i);
        }
        t
    }
}

/// Spectral gradient. Nyquist modes are dropped for first derivatives.
pub fn gradient(f: &Field) -> VectorField {
    let g = f.grid();
    let spec = g.forward(&f.values);
    let comps = (0..g.dim())
        .map(|a| Field::raw(g, g.inverse(&g.spec_derivative(&spec, a))))
        .collect();
    VectorField::from_components_unchecked(comps)
}

/// Spectral Hessian.
pub fn hessian(f: &Field) -> MatrixField {
    let g = f.grid();
    let spec = g.forward(&f.values);
    let mut out = MatrixField::zeros(g);
    for i in 0..g.dim() {
        for j in i..g.dim() {
            let d2: Vec<Complex64> = spec
                .iter()
                .enumerate()
                .map(|(idx, &c)| {
                    let (k, nyq) = g.wave_vector(idx);
                    if i == j {
                        c * (-k[i] * k[i])
                    } else if nyq[i] || nyq[j] {
                        Complex64::new(0.0, 0.0)
                    } else {
                        c * (-k[i] * k[j])
                    }
                })
                .collect();
            out.set(i, j, Field::raw(g, g.inverse(&d2)));
        }
    }
    out
}

/// Spectral divergence, `Σ_a ∂_a V_a`.
pub fn divergence(v: &VectorField) -> Field {
    let g = v.grid();
    let mut acc = vec![Complex64::new(0.0, 0.0); g.len()];
    for (a, comp) in v.components().iter().enumerate() {
        let d = g.spec_derivative(&g.forward(comp.values()), a);
        for (s, x) in acc.iter_mut().zip(d) {
            *s += x;
        }
    }
    Field::raw(g, g.inverse(&acc))
}

/// `Δ^r f` as the Fourier multiplier `(−|2πk|^2)^r`. Orders above one drop
/// coefficients at the rounding floor first.
pub fn laplacian_power(f: &Field, order: u32) -> Result<Field> {
    if order < 1 {
        return Err(MfgError::config("order", "Laplacian power must be >= 1"));
    }
    let g = f.grid();
    let spec = if order > 1 {
        g.forward_filtered(&f.values)
    } else {
        g.forward(&f.values)
    };
    let out = g.spec_radial(&spec, |k2| (-k2).powi(order as i32));
    Ok(Field::raw(g, g.inverse(&out)))
}

pub fn laplacian(f: &Field) -> Field {
    laplacian_power(f, 1).expect("order 1 is valid")
}

/// `∫_{T^d} f dx` by the rectangle rule.
pub fn integrate(f: &Field) -> f64 {
    f.values.iter().sum::<f64>() / f.len() as f64
}

/// `∫ f g dx` evaluated from Fourier coefficients (Parseval).
pub fn spectral_inner(f: &Field, g: &Field) -> f64 {
    let grid = f.grid();
    let a = grid.forward(&f.values);
    let b = grid.forward(&g.values);
    a.iter().zip(&b).map(|(x, y)| (x * y.conj()).re).sum()
}

/// Circular convolution `(kernel ∗ f)(x_i) = Σ_j f(x_j) kernel(x_i − x_j) h^d`.
pub fn periodic_convolve(f: &Field, kernel: &Field) -> Result<Field> {
    f.check_grid(kernel)?;
    let g = f.grid();
    let a = g.forward(&f.values);
    let b = g.forward(&kernel.values);
    let prod: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
    Ok(Field::raw(g, g.inverse(&prod)))
}

fn gaussian_1d(x: f64, width: f64) -> f64 {
    if width < 0.3 {
        // image sum; terms beyond a few widths are below rounding
        let images = 3 + (8.0 * width).ceil() as i64;
        (-images..=images)
            .map(|n| {
                let y = x - n as f64;
                (-(y * y) / (2.0 * width * width)).exp()
            })
            .sum::<f64>()
            / (width * (2.0 * PI).sqrt())
    } else {
        // Fourier series of the same periodized Gaussian
        let mut s = 1.0;
        let mut k = 1.0_f64;
        loop {
            let w = (-2.0 * PI * PI * width * width * k * k).exp();
            if w < 1e-18 {
                break;
            }
            s += 2.0 * w * (2.0 * PI * k * x).cos();
            k += 1.0;
        }
        s
    }
}

/// Periodized Gaussian of standard deviation `width`, renormalized so that
/// its discrete integral is exactly one.
pub fn wrapped_gaussian_kernel(grid: &TorusGrid, width: f64) -> Result<Field> {
    if !(width > 0.0) || !width.is_finite() {
        return Err(MfgError::config("kernel_width", "must be > 0"));
    }
    let raw = Field::from_fn(grid, |x| x.iter().map(|&xi| gaussian_1d(xi, width)).product());
    let mass = integrate(&raw);
    Ok(raw.scale(1.0 / mass))
}

/// Writes a field as CSV: `# d=<d> N=<N>` then coordinates and value per node.
pub fn write_field_csv<W: Write>(field: &Field, mut w: W) -> Result<()> {
    let g = field.grid();
    writeln!(w, "# d={} N={}", g.dim(), g.points_per_axis())?;
    for (node, v) in field.values.iter().enumerate() {
        let x = g.coords(node);
        for xi in &x[..g.dim()] {
            write!(w, "{:.16e},", xi)?;
        }
        writeln!(w, "{:.16e}", v)?;
    }
    Ok(())
}

pub fn field_to_csv(field: &Field) -> String {
    let mut buf = Vec::new();
    write_field_csv(field, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let rest = line.strip_prefix('#')?.trim();
    let mut d = None;
    let mut n = None;
    for tok in rest.split_whitespace() {
        if let Some(v) = tok.strip_prefix("d=") {
            d = Some(v.parse().ok()?);
        } else {
            let v = tok.strip_prefix("N=")?;
            n = Some(v.parse().ok()?);
        }
    }
    Some((d?, n?))
}

/// Parses the CSV format written by [`write_field_csv`].
pub fn parse_field_csv(text: &str) -> Result<Field> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines.next().ok_or(MfgError::Parse {
        line: 1,
        msg: "empty input".into(),
    })?;
    let (d, n) = parse_header(header.trim()).ok_or_else(|| MfgError::Parse {
        line: hline + 1,
        msg: "expected header '# d=<d> N=<N>'".into(),
    })?;
    // reject absurd sizes before allocating
    if !(1..=2).contains(&d) || n > 4096 {
        return Err(MfgError::Parse {
            line: hline + 1,
            msg: format!("unsupported grid d={d} N={n}"),
        });
    }
    let grid = TorusGrid::new(d, n).map_err(|e| MfgError::Parse {
        line: hline + 1,
        msg: e.to_string(),
    })?;
    let mut values = Vec::with_capacity(grid.len());
    let tol = 1e-12;
    for (lno, line) in lines {
        let node = values.len();
        if node >= grid.len() {
            return Err(MfgError::Parse {
                line: lno + 1,
                msg: format!("more than {} rows", grid.len()),
            });
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != d + 1 {
            return Err(MfgError::Parse {
                line: lno + 1,
                msg: format!("expected {} columns, got {}", d + 1, cols.len()),
            });
        }
        let nums = cols
            .iter()
            .map(|c| c.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| MfgError::Parse {
                line: lno + 1,
                msg: e.to_string(),
            })?;
        let x = grid.coords(node);
        for a in 0..d {
            if !((nums[a] - x[a]).abs() <= tol) {
                return Err(MfgError::Parse {
                    line: lno + 1,
                    msg: format!(
                        "coordinate {} does not match node {} (expected {})",
                        nums[a], node, x[a]
                    ),
                });
            }
        }
        let v = nums[d];
        if !v.is_finite() {
            return Err(MfgError::Parse {
                line: lno + 1,
                msg: "non-finite value".into(),
            });
        }
        values.push(v);
    }
    if values.len() != grid.len() {
        return Err(MfgError::Parse {
            line: text.lines().count(),
            msg: format!("expected {} rows, got {}", grid.len(), values.len()),
        });
    }
    Field::new(&grid, values)
}
