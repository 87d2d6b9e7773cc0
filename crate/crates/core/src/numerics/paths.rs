use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};

use super::grid::TimeGrid;

/// Default cap on the increment array, in bytes.
pub const DEFAULT_MEMORY_BUDGET: usize = 1 << 30;

/// Independent RNG for path `index` under `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Brownian increments on a time grid, `npaths × nsteps`, path-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    npaths: usize,
    nsteps: usize,
    dt: f64,
    seed: u64,
    increments: Vec<f64>,
}

impl PathBundle {
    pub fn npaths(&self) -> usize {
        self.npaths
    }

    pub fn nsteps(&self) -> usize {
        self.nsteps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn path_increments(&self, p: usize) -> &[f64] {
        &self.increments[p * self.nsteps..(p + 1) * self.nsteps]
    }

    /// `B` at every time node of path `p`, starting from 0.
    pub fn trajectory(&self, p: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.nsteps + 1);
        let mut b = 0.0;
        out.push(b);
        for dw in self.path_increments(p) {
            b += dw;
            out.push(b);
        }
        out
    }

    /// Evaluates `f(trajectory)` on every path in parallel; results keep path order.
    pub fn map_paths<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        (0..self.npaths)
            .into_par_iter()
            .map(|p| f(&self.trajectory(p)))
            .collect()
    }

    /// `B_T` for every path.
    pub fn terminal_values(&self) -> Vec<f64> {
        (0..self.npaths)
            .map(|p| self.path_increments(p).iter().sum())
            .collect()
    }
}

/// Draws `npaths` Brownian paths on `grid`, refusing bundles above `budget` bytes.
///
/// Every path has its own stream, so the result does not depend on the thread count.
pub fn sample_paths_with_budget(
    seed: u64,
    npaths: usize,
    grid: &TimeGrid,
    budget: usize,
) -> Result<PathBundle> {
    if npaths == 0 {
        return Err(invalid("at least one path is required"));
    }
    let nsteps = grid.steps();
    let requested = npaths
        .checked_mul(nsteps)
        .and_then(|n| n.checked_mul(std::mem::size_of::<f64>()))
        .unwrap_or(usize::MAX);
    if requested > budget {
        return Err(Error::MemoryBudget { requested, budget });
    }
    let dt = grid.dt();
    let sd = dt.sqrt();
    let mut increments = vec![0.0; npaths * nsteps];
    increments
        .par_chunks_mut(nsteps)
        .enumerate()
        .for_each(|(p, chunk)| {
            let mut rng = path_rng(seed, p as u64);
            for v in chunk {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = sd * z;
            }
        });
    Ok(PathBundle {
        npaths,
        nsteps,
        dt,
        seed,
        increments,
    })
}

pub fn sample_paths(seed: u64, npaths: usize, grid: &TimeGrid) -> Result<PathBundle> {
    sample_paths_with_budget(seed, npaths, grid, DEFAULT_MEMORY_BUDGET)
}

/// Mean and standard error of a sample, summed in index order.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        assert_eq!(sample_paths(1, 2, &g).unwrap(), sample_paths(1, 2, &g).unwrap());
        assert_ne!(sample_paths(1, 2, &g).unwrap(), sample_paths(2, 2, &g).unwrap());
    }

    #[test]
    fn budget_is_enforced() {
        let g = TimeGrid::new(1.0, 100).unwrap();
        assert!(matches!(
            sample_paths_with_budget(0, 1000, &g, 1000),
            Err(Error::MemoryBudget { .. })
        ));
        assert!(sample_paths(0, 0, &g).is_err());
    }

    #[test]
    fn terminal_variance_and_mean() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let n = 100_000;
        let b = sample_paths(7, n, &g).unwrap();
        let bt = b.terminal_values();
        let (m, _) = mean_and_stderr(&bt);
        let var = bt.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!(m.abs() < 3.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.02);
        let (mi, _) = mean_and_stderr(b.increments());
        assert!(mi.abs() < 5.0 / ((n * 8) as f64).sqrt());
        let tr = b.trajectory(3);
        assert_eq!(tr.len(), 9);
        assert!((tr[8] - bt[3]).abs() < 1e-15);
    }
}
