use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Half-width of the default spatial domain in units of `√T`.
pub const DEFAULT_HALF_WIDTH_SCALE: f64 = 12.0;
/// Radius of the core region, in units of `√T`, on which accuracy is asserted.
pub const CORE_RADIUS_SCALE: f64 = 4.0;
pub const DEFAULT_TIME_STEPS: usize = 200;
pub const DEFAULT_SPACE_NODES: usize = 401;

/// Uniform time grid `0 = t_0 < ... < t_nt = T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid(format!("time horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(invalid("time grid needs at least one step"));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn t(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            i as f64 * self.dt()
        }
    }

    /// Index of the node at time `t`, if `t` lies on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let r = t / self.dt();
        let i = r.round();
        if i < 0.0 || i > self.steps as f64 || (r - i).abs() > 1e-9 {
            return None;
        }
        Some(i as usize)
    }
}

/// Symmetric spatial grid with an odd node count, so that `x = 0` is a node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceGrid {
    half_width: f64,
    nodes: usize,
}

impl SpaceGrid {
    pub fn new(half_width: f64, nodes: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(invalid(format!("half width must be positive, got {half_width}")));
        }
        if nodes < 3 || nodes % 2 == 0 {
            return Err(invalid(format!(
                "space node count must be odd and at least 3, got {nodes}"
            )));
        }
        Ok(Self { half_width, nodes })
    }

    /// Default domain `[-12√T, 12√T]`.
    pub fn for_horizon(horizon: f64, nodes: usize) -> Result<Self> {
        Self::new(DEFAULT_HALF_WIDTH_SCALE * horizon.sqrt(), nodes)
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn center(&self) -> usize {
        (self.nodes - 1) / 2
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / (self.nodes - 1) as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        (j as f64 - self.center() as f64) * self.dx()
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.nodes).map(|j| self.x(j))
    }

    /// Left node and interpolation weight of `x`, clamped to the domain.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let r = (x + self.half_width) / self.dx();
        if !(r > 0.0) {
            return (0, 0.0);
        }
        let last = (self.nodes - 1) as f64;
        if r >= last {
            return (self.nodes - 2, 1.0);
        }
        let j = r.floor();
        (j as usize, r - j)
    }

    /// Nearest node index to `x` (clamped).
    pub fn nearest(&self, x: f64) -> usize {
        let (j, w) = self.locate(x);
        if w > 0.5 {
            j + 1
        } else {
            j
        }
    }
}

/// Subset of spatial nodes over which a supremum or accuracy check runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    /// Every grid node.
    #[default]
    Full,
    /// Nodes with `|x| <= core radius`.
    Core,
}

/// Time × space grid on which every adapted process lives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub time: TimeGrid,
    pub space: SpaceGrid,
    core_radius: f64,
}

impl Grid {
    pub fn new(time: TimeGrid, space: SpaceGrid) -> Self {
        let core_radius =
            (CORE_RADIUS_SCALE * time.horizon().sqrt()).min(space.half_width());
        Self {
            time,
            space,
            core_radius,
        }
    }

    /// `nt` steps on `[0, T]` and `nx` nodes on the default domain.
    pub fn with_resolution(horizon: f64, steps: usize, nodes: usize) -> Result<Self> {
        Ok(Self::new(
            TimeGrid::new(horizon, steps)?,
            SpaceGrid::for_horizon(horizon, nodes)?,
        ))
    }

    /// Default resolution: 200 steps, 401 nodes, half width 12√T.
    pub fn standard(horizon: f64) -> Result<Self> {
        Self::with_resolution(horizon, DEFAULT_TIME_STEPS, DEFAULT_SPACE_NODES)
    }

    pub fn with_core_radius(mut self, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius <= self.space.half_width()) {
            return Err(invalid(format!(
                "core radius {radius} must lie in (0, {}]",
                self.space.half_width()
            )));
        }
        self.core_radius = radius;
        Ok(self)
    }

    pub fn core_radius(&self) -> f64 {
        self.core_radius
    }

    pub fn dt(&self) -> f64 {
        self.time.dt()
    }

    pub fn dx(&self) -> f64 {
        self.space.dx()
    }

    pub fn contains(&self, j: usize, region: Region) -> bool {
        match region {
            Region::Full => true,
            Region::Core => self.space.x(j).abs() <= self.core_radius + 1e-12,
        }
    }

    /// Spatial indices belonging to `region`, in increasing order.
    pub fn indices(&self, region: Region) -> std::ops::Range<usize> {
        match region {
            Region::Full => 0..self.space.nodes(),
            Region::Core => {
                let c = self.space.center();
                let k = ((self.core_radius + 1e-12) / self.dx()).floor() as usize;
                let k = k.min(c);
                (c - k)..(c + k + 1)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_is_a_node_and_grid_is_symmetric() {
        let s = SpaceGrid::new(3.0, 7).unwrap();
        assert_eq!(s.x(s.center()), 0.0);
        for j in 0..7 {
            assert_eq!(s.x(j), -s.x(6 - j));
        }
        assert_eq!(s.x(0), -3.0);
    }

    #[test]
    fn rejects_even_or_tiny_node_counts() {
        assert!(SpaceGrid::new(1.0, 4).is_err());
        assert!(SpaceGrid::new(1.0, 1).is_err());
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn time_nodes_increase_and_end_at_horizon() {
        let g = TimeGrid::new(0.7, 9).unwrap();
        for i in 0..9 {
            assert!(g.t(i + 1) > g.t(i));
        }
        assert_eq!(g.t(9), 0.7);
        assert_eq!(g.index_of(0.7 * 4.0 / 9.0), Some(4));
        assert_eq!(g.index_of(0.05), None);
    }

    #[test]
    fn core_indices_match_predicate() {
        let g = Grid::standard(1.0).unwrap();
        let r = g.indices(Region::Core);
        for j in 0..g.space.nodes() {
            assert_eq!(r.contains(&j), g.contains(j, Region::Core));
        }
        assert!(g.space.x(r.start) >= -4.0 && g.space.x(r.start) - g.dx() < -4.0);
    }

    #[test]
    fn locate_clamps_outside() {
        let s = SpaceGrid::new(1.0, 5).unwrap();
        assert_eq!(s.locate(-5.0), (0, 0.0));
        assert_eq!(s.locate(5.0), (3, 1.0));
        let (j, w) = s.locate(0.25);
        assert_eq!(j, 2);
        assert!((w - 0.5).abs() < 1e-12);
    }
}
