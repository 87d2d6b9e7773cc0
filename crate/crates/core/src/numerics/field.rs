use crate::error::{Error, Result};

use super::grid::{Grid, Region};

/// Vector field `u(t_i, x_j) ∈ R^m` sampled on a time × space grid.
///
/// Slices are stored contiguously, node-major inside a slice:
/// `data[(i * nx + j) * dim + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    slices: usize,
    nx: usize,
    dim: usize,
    data: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(slices: usize, nx: usize, dim: usize) -> Self {
        Self {
            slices,
            nx,
            dim,
            data: vec![0.0; slices * nx * dim],
        }
    }

    /// Zero field on every time node of `grid`.
    pub fn on_nodes(grid: &Grid, dim: usize) -> Self {
        Self::zeros(grid.time.nodes(), grid.space.nodes(), dim)
    }

    pub fn from_vec(slices: usize, nx: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != slices * nx * dim {
            return Err(Error::DimensionMismatch {
                what: "grid function data",
                expected: slices * nx * dim,
                got: data.len(),
            });
        }
        Ok(Self {
            slices,
            nx,
            dim,
            data,
        })
    }

    /// Samples `f(t, x, out)` at every node of `grid`.
    pub fn from_fn(grid: &Grid, dim: usize, f: impl Fn(f64, f64, &mut [f64])) -> Self {
        let mut g = Self::on_nodes(grid, dim);
        for i in 0..g.slices {
            let t = grid.time.t(i);
            for j in 0..g.nx {
                let x = grid.space.x(j);
                f(t, x, g.at_mut(i, j));
            }
        }
        g
    }

    /// Field constant in `(t, x)`.
    pub fn constant(grid: &Grid, value: &[f64]) -> Self {
        Self::from_fn(grid, value.len(), |_, _, out| out.copy_from_slice(value))
    }

    /// Repeats one spatial slice at every time node.
    pub fn from_slice(grid: &Grid, dim: usize, slice: &[f64]) -> Result<Self> {
        let nx = grid.space.nodes();
        if slice.len() != nx * dim {
            return Err(Error::DimensionMismatch {
                what: "spatial slice",
                expected: nx * dim,
                got: slice.len(),
            });
        }
        let mut g = Self::on_nodes(grid, dim);
        for i in 0..g.slices {
            g.slice_mut(i).copy_from_slice(slice);
        }
        Ok(g)
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn slice(&self, i: usize) -> &[f64] {
        let w = self.nx * self.dim;
        &self.data[i * w..(i + 1) * w]
    }

    pub fn slice_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.nx * self.dim;
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn at(&self, i: usize, j: usize) -> &[f64] {
        let o = (i * self.nx + j) * self.dim;
        &self.data[o..o + self.dim]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let o = (i * self.nx + j) * self.dim;
        &mut self.data[o..o + self.dim]
    }

    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[(i * self.nx + j) * self.dim + c]
    }

    pub fn set(&mut self, i: usize, j: usize, c: usize, v: f64) {
        self.data[(i * self.nx + j) * self.dim + c] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.slices == other.slices && self.nx == other.nx && self.dim == other.dim
    }

    pub(crate) fn ensure_shape(&self, other: &Self, what: &'static str) -> Result<()> {
        if self.same_shape(other) {
            return Ok(());
        }
        Err(Error::DimensionMismatch {
            what,
            expected: self.data.len(),
            got: other.data.len(),
        })
    }

    /// Component `c` as a scalar field.
    pub fn component(&self, c: usize) -> Self {
        let data = self.data.iter().skip(c).step_by(self.dim).copied().collect();
        Self {
            slices: self.slices,
            nx: self.nx,
            dim: 1,
            data,
        }
    }

    /// Concatenates the components of fields with a common shape.
    pub fn stack(parts: &[&GridFunction]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| crate::error::invalid("cannot stack zero fields"))?;
        let dim: usize = parts.iter().map(|p| p.dim).sum();
        let mut out = Self::zeros(first.slices, first.nx, dim);
        for p in parts {
            if p.slices != first.slices || p.nx != first.nx {
                return Err(Error::DimensionMismatch {
                    what: "stacked field",
                    expected: first.slices * first.nx,
                    got: p.slices * p.nx,
                });
            }
        }
        for n in 0..first.slices * first.nx {
            let mut o = n * dim;
            for p in parts {
                out.data[o..o + p.dim].copy_from_slice(&p.data[n * p.dim..(n + 1) * p.dim]);
                o += p.dim;
            }
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            slices: self.slices,
            nx: self.nx,
            dim: self.dim,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Self) -> Result<()> {
        self.ensure_shape(other, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.ensure_shape(other, "difference")?;
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    /// Euclidean norm squared of the vector at every node, as a scalar field.
    pub fn norm_sq(&self) -> Self {
        let data = self
            .data
            .chunks_exact(self.dim)
            .map(|v| v.iter().map(|x| x * x).sum())
            .collect();
        Self {
            slices: self.slices,
            nx: self.nx,
            dim: 1,
            data,
        }
    }

    /// Euclidean norm of the vector at every node.
    pub fn norm(&self) -> Self {
        self.norm_sq().map(f64::sqrt)
    }

    /// Largest absolute entry over nodes in `region`.
    pub fn sup_abs(&self, grid: &Grid, region: Region) -> f64 {
        let range = grid.indices(region);
        let mut m = 0.0f64;
        for i in 0..self.slices {
            for j in range.clone() {
                for &v in self.at(i, j) {
                    m = m.max(v.abs());
                }
            }
        }
        m
    }

    /// Largest absolute difference to `other` over nodes in `region`.
    pub fn sup_diff(&self, other: &Self, grid: &Grid, region: Region) -> Result<f64> {
        Ok(self.sub(other)?.sup_abs(grid, region))
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(k) => {
                let component = k % self.dim;
                let node = (k / self.dim) % self.nx;
                let slice = k / (self.dim * self.nx);
                Err(Error::NonFinite {
                    what,
                    slice,
                    node,
                    component,
                })
            }
        }
    }

    /// Linear interpolation in `x` of slice `i`, clamped at the domain edges.
    pub fn interpolate(&self, grid: &Grid, i: usize, x: f64, out: &mut [f64]) {
        let (j, w) = grid.space.locate(x);
        let a = self.at(i, j);
        let b = self.at(i, j + 1);
        for c in 0..self.dim {
            out[c] = a[c] + w * (b[c] - a[c]);
        }
    }

    pub fn interpolate_scalar(&self, grid: &Grid, i: usize, x: f64) -> f64 {
        let (j, w) = grid.space.locate(x);
        let a = self.get(i, j, 0);
        a + w * (self.get(i, j + 1, 0) - a)
    }
}

/// Integrand of a `ds` integral on the time grid.
///
/// `Intervals` carries, for every step `[t_i, t_{i+1}]`, the integrand at both
/// endpoints as seen from inside that step. This lets a coefficient jump
/// exactly at a grid node without leaking into the neighbouring step.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Zero,
    /// One value per time node (`nt + 1` slices).
    Nodes(GridFunction),
    /// `left[i]` at `t_i` and `right[i]` at `t_{i+1}`, for step `i` (`nt` slices each).
    Intervals {
        left: GridFunction,
        right: GridFunction,
    },
}

impl Source {
    pub fn dim(&self) -> Option<usize> {
        match self {
            Source::Zero => None,
            Source::Nodes(g) => Some(g.dim()),
            Source::Intervals { left, .. } => Some(left.dim()),
        }
    }

    /// Integrand at `t_i` for step `i`.
    pub fn left(&self, step: usize) -> Option<&[f64]> {
        match self {
            Source::Zero => None,
            Source::Nodes(g) => Some(g.slice(step)),
            Source::Intervals { left, .. } => Some(left.slice(step)),
        }
    }

    /// Integrand at `t_{i+1}` for step `i`.
    pub fn right(&self, step: usize) -> Option<&[f64]> {
        match self {
            Source::Zero => None,
            Source::Nodes(g) => Some(g.slice(step + 1)),
            Source::Intervals { right, .. } => Some(right.slice(step)),
        }
    }

    pub(crate) fn validate(&self, grid: &Grid, dim: usize) -> Result<()> {
        let nx = grid.space.nodes();
        let nt = grid.time.steps();
        let check = |g: &GridFunction, slices: usize, what: &'static str| -> Result<()> {
            if g.dim() != dim {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: dim,
                    got: g.dim(),
                });
            }
            if g.slices() != slices || g.nx() != nx {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: slices * nx,
                    got: g.slices() * g.nx(),
                });
            }
            g.check_finite(what)
        };
        match self {
            Source::Zero => Ok(()),
            Source::Nodes(g) => check(g, nt + 1, "source"),
            Source::Intervals { left, right } => {
                check(left, nt, "source (left endpoints)")?;
                check(right, nt, "source (right endpoints)")
            }
        }
    }

    /// Applies `f` to every value.
    pub fn map(&self, f: impl Fn(f64) -> f64 + Copy) -> Source {
        match self {
            Source::Zero => Source::Zero,
            Source::Nodes(g) => Source::Nodes(g.map(f)),
            Source::Intervals { left, right } => Source::Intervals {
                left: left.map(f),
                right: right.map(f),
            },
        }
    }

    /// Pointwise Euclidean norm (or its square) of the integrand.
    pub fn norm(&self, squared: bool) -> Source {
        let n = |g: &GridFunction| if squared { g.norm_sq() } else { g.norm() };
        match self {
            Source::Zero => Source::Zero,
            Source::Nodes(g) => Source::Nodes(n(g)),
            Source::Intervals { left, right } => Source::Intervals {
                left: n(left),
                right: n(right),
            },
        }
    }

    /// Pointwise difference `self - other` of two sources on the same grid.
    pub fn sub(&self, other: &Source, grid: &Grid) -> Result<Source> {
        let (a, b) = (self.as_intervals(grid, other.dim()), other.as_intervals(grid, self.dim()));
        match (a, b) {
            (Some((al, ar)), Some((bl, br))) => Ok(Source::Intervals {
                left: al.sub(&bl)?,
                right: ar.sub(&br)?,
            }),
            _ => Ok(Source::Zero),
        }
    }

    /// Left/right endpoint fields; `None` for a zero source of unknown dimension.
    pub fn as_intervals(
        &self,
        grid: &Grid,
        dim_hint: Option<usize>,
    ) -> Option<(GridFunction, GridFunction)> {
        let nt = grid.time.steps();
        let nx = grid.space.nodes();
        match self {
            Source::Zero => dim_hint.map(|d| {
                (
                    GridFunction::zeros(nt, nx, d),
                    GridFunction::zeros(nt, nx, d),
                )
            }),
            Source::Nodes(g) => {
                let w = nx * g.dim();
                let left = GridFunction::from_vec(nt, nx, g.dim(), g.values()[..nt * w].to_vec());
                let right = GridFunction::from_vec(nt, nx, g.dim(), g.values()[w..].to_vec());
                Some((left.ok()?, right.ok()?))
            }
            Source::Intervals { left, right } => Some((left.clone(), right.clone())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::with_resolution(1.0, 4, 5).unwrap()
    }

    #[test]
    fn component_and_stack_are_inverse() {
        let g = grid();
        let f = GridFunction::from_fn(&g, 2, |t, x, o| {
            o[0] = t + x;
            o[1] = t * x;
        });
        let s = GridFunction::stack(&[&f.component(0), &f.component(1)]).unwrap();
        assert_eq!(s, f);
    }

    #[test]
    fn non_finite_is_located() {
        let g = grid();
        let mut f = GridFunction::on_nodes(&g, 2);
        f.set(3, 1, 1, f64::NAN);
        match f.check_finite("probe") {
            Err(Error::NonFinite {
                slice,
                node,
                component,
                ..
            }) => assert_eq!((slice, node, component), (3, 1, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn node_source_splits_into_endpoints() {
        let g = grid();
        let f = GridFunction::from_fn(&g, 1, |t, _, o| o[0] = t);
        let s = Source::Nodes(f.clone());
        let (l, r) = s.as_intervals(&g, None).unwrap();
        for i in 0..4 {
            assert_eq!(l.slice(i), f.slice(i));
            assert_eq!(r.slice(i), f.slice(i + 1));
        }
    }
}
