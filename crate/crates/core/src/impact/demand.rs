use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{Grid, GridFunction};

/// Level of a simple demand on one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    /// Deterministic holding `θ_i ∈ R^n`.
    Constant(Vec<f64>),
    /// Holding `θ_i(B_{τ_i})`, sampled at the spatial nodes (`nx * n` values).
    State(Vec<f64>),
}

/// `γ = Σ θ_i 1_{(τ_i, τ_{i+1}]}` with deterministic breakpoints on grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SimpleDemand {
    /// Node indices `0 = k_0 < k_1 < ... < k_m = nt`.
    breakpoints: Vec<usize>,
    levels: Vec<Level>,
    n: usize,
}

impl SimpleDemand {
    /// Breakpoints given as times; each must lie on the grid.
    pub fn new(grid: &Grid, times: &[f64], levels: Vec<Level>) -> Result<Self> {
        let mut nodes = Vec::with_capacity(times.len());
        for &t in times {
            let k = grid
                .time
                .index_of(t)
                .ok_or_else(|| invalid(format!("breakpoint {t} is not a grid time")))?;
            nodes.push(k);
        }
        Self::from_nodes(grid, nodes, levels)
    }

    pub fn from_nodes(grid: &Grid, breakpoints: Vec<usize>, levels: Vec<Level>) -> Result<Self> {
        let nt = grid.time.steps();
        if breakpoints.len() < 2 || breakpoints[0] != 0 || *breakpoints.last().unwrap() != nt {
            return Err(invalid("breakpoints must start at 0 and end at the horizon"));
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("breakpoints must be strictly increasing"));
        }
        if levels.len() != breakpoints.len() - 1 {
            return Err(Error::DimensionMismatch {
                what: "demand levels",
                expected: breakpoints.len() - 1,
                got: levels.len(),
            });
        }
        let n = match &levels[0] {
            Level::Constant(v) => v.len(),
            Level::State(v) => v.len() / grid.space.nodes(),
        };
        if n == 0 {
            return Err(invalid("demand levels must be nonempty"));
        }
        for l in &levels {
            let (len, want) = match l {
                Level::Constant(v) => (v.len(), n),
                Level::State(v) => (v.len(), n * grid.space.nodes()),
            };
            if len != want {
                return Err(Error::DimensionMismatch {
                    what: "demand level",
                    expected: want,
                    got: len,
                });
            }
            let vals = match l {
                Level::Constant(v) | Level::State(v) => v,
            };
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(invalid("demand levels must be finite"));
            }
        }
        Ok(Self {
            breakpoints,
            levels,
            n,
        })
    }

    pub fn breakpoints(&self) -> &[usize] {
        &self.breakpoints
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn has_state_levels(&self) -> bool {
        self.levels.iter().any(|l| matches!(l, Level::State(_)))
    }

    /// Period index containing step `s`, i.e. `(t_s, t_{s+1}] ⊂ (τ_i, τ_{i+1}]`.
    pub fn period_of_step(&self, s: usize) -> usize {
        self.breakpoints[1..].iter().position(|&k| s < k).expect("step inside horizon")
    }

    fn sup(&self) -> f64 {
        let norm = |c: &[f64]| c.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.levels
            .iter()
            .map(|l| match l {
                Level::Constant(v) => norm(v),
                Level::State(v) => v.chunks_exact(self.n).map(norm).fold(0.0, f64::max),
            })
            .fold(0.0, f64::max)
    }
}

/// Demand process `γ` as a function of `(t, B_t)`, or a simple demand.
#[derive(Debug, Clone, PartialEq)]
pub enum Demand {
    /// Values on the time nodes.
    Field(GridFunction),
    /// Values at both endpoints of every step, seen from inside the step.
    Intervals {
        left: GridFunction,
        right: GridFunction,
    },
    Simple(SimpleDemand),
}

impl Demand {
    pub fn constant(grid: &Grid, level: &[f64]) -> Self {
        Demand::Field(GridFunction::constant(grid, level))
    }

    pub fn dim(&self) -> usize {
        match self {
            Demand::Field(g) => g.dim(),
            Demand::Intervals { left, .. } => left.dim(),
            Demand::Simple(s) => s.dim(),
        }
    }

    /// `‖γ‖_∞` over the grid.
    pub fn sup_norm(&self) -> f64 {
        let sup = |g: &GridFunction| g.norm().values().iter().copied().fold(0.0, f64::max);
        match self {
            Demand::Field(g) => sup(g),
            Demand::Intervals { left, right } => sup(left).max(sup(right)),
            Demand::Simple(s) => s.sup(),
        }
    }

    pub fn scaled(&self, b: f64) -> Self {
        match self {
            Demand::Field(g) => Demand::Field(g.scaled(b)),
            Demand::Intervals { left, right } => Demand::Intervals {
                left: left.scaled(b),
                right: right.scaled(b),
            },
            Demand::Simple(s) => {
                let levels = s
                    .levels
                    .iter()
                    .map(|l| match l {
                        Level::Constant(v) => Level::Constant(v.iter().map(|x| b * x).collect()),
                        Level::State(v) => Level::State(v.iter().map(|x| b * x).collect()),
                    })
                    .collect();
                Demand::Simple(SimpleDemand {
                    breakpoints: s.breakpoints.clone(),
                    levels,
                    n: s.n,
                })
            }
        }
    }

    /// Endpoint values `(γ(t_s+), γ(t_{s+1}))` for every step.
    ///
    /// Fails for simple demands with state-dependent levels, which are not functions of `(t, B_t)`.
    pub fn intervals(&self, grid: &Grid) -> Result<(GridFunction, GridFunction)> {
        let nt = grid.time.steps();
        let nx = grid.space.nodes();
        match self {
            Demand::Field(g) => {
                if g.slices() != nt + 1 || g.nx() != nx {
                    return Err(invalid("demand field is not sampled on the market grid"));
                }
                let w = nx * g.dim();
                Ok((
                    GridFunction::from_vec(nt, nx, g.dim(), g.values()[..nt * w].to_vec())?,
                    GridFunction::from_vec(nt, nx, g.dim(), g.values()[w..].to_vec())?,
                ))
            }
            Demand::Intervals { left, right } => {
                if left.slices() != nt || left.nx() != nx || !left.same_shape(right) {
                    return Err(invalid("demand intervals are not sampled on the market grid"));
                }
                Ok((left.clone(), right.clone()))
            }
            Demand::Simple(s) => {
                if *s.breakpoints.last().unwrap() != nt {
                    return Err(invalid("simple demand built for a different grid"));
                }
                let n = s.n;
                let mut left = GridFunction::zeros(nt, nx, n);
                for step in 0..nt {
                    match &s.levels[s.period_of_step(step)] {
                        Level::Constant(v) => {
                            for j in 0..nx {
                                left.at_mut(step, j).copy_from_slice(v);
                            }
                        }
                        Level::State(_) => {
                            return Err(invalid(
                                "a simple demand with state-dependent levels is path dependent; \
                                 use the backward-induction oracle",
                            ))
                        }
                    }
                }
                Ok((left.clone(), left))
            }
        }
    }

    /// Step-wise constant approximation of `γ` with breakpoints every `every` steps, taking
    /// the value at the left end of each period.
    pub fn piecewise_constant(&self, grid: &Grid, every: usize) -> Result<Demand> {
        let nt = grid.time.steps();
        if every == 0 || nt % every != 0 {
            return Err(invalid(format!("{every} does not divide the step count {nt}")));
        }
        let (left, _) = self.intervals(grid)?;
        let mut out = GridFunction::zeros(nt, grid.space.nodes(), left.dim());
        for step in 0..nt {
            let first = step - step % every;
            let src = left.slice(first).to_vec();
            out.slice_mut(step).copy_from_slice(&src);
        }
        Ok(Demand::Intervals {
            left: out.clone(),
            right: out,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_demand_levels_per_step() {
        let g = Grid::with_resolution(1.0, 10, 11).unwrap();
        let d = SimpleDemand::new(
            &g,
            &[0.0, 0.4, 1.0],
            vec![Level::Constant(vec![1.0]), Level::Constant(vec![-2.0])],
        )
        .unwrap();
        assert_eq!(d.breakpoints(), &[0, 4, 10]);
        let (l, r) = Demand::Simple(d.clone()).intervals(&g).unwrap();
        assert_eq!(l.get(3, 0, 0), 1.0);
        assert_eq!(r.get(3, 0, 0), 1.0);
        assert_eq!(l.get(4, 5, 0), -2.0);
        assert_eq!(Demand::Simple(d).sup_norm(), 2.0);
        assert!(SimpleDemand::new(&g, &[0.0, 0.45, 1.0], vec![Level::Constant(vec![1.0]); 2]).is_err());
        assert!(SimpleDemand::new(&g, &[0.0, 1.0], vec![Level::Constant(vec![1.0]); 2]).is_err());
    }

    #[test]
    fn state_levels_are_not_markov() {
        let g = Grid::with_resolution(1.0, 10, 11).unwrap();
        let d = SimpleDemand::new(&g, &[0.0, 1.0], vec![Level::State(vec![1.0; 11])]).unwrap();
        assert!(Demand::Simple(d).intervals(&g).is_err());
    }

    #[test]
    fn piecewise_constant_uses_left_values() {
        let g = Grid::with_resolution(1.0, 8, 5).unwrap();
        let f = Demand::Field(GridFunction::from_fn(&g, 1, |t, _, o| o[0] = t));
        let pc = f.piecewise_constant(&g, 4).unwrap();
        let (l, r) = pc.intervals(&g).unwrap();
        for s in 0..8 {
            let want = if s < 4 { 0.0 } else { 0.5 };
            assert_eq!(l.get(s, 2, 0), want);
            assert_eq!(r.get(s, 2, 0), want);
        }
        assert!(f.piecewise_constant(&g, 3).is_err());
    }
}
