use std::sync::OnceLock;

use gauss_quad::hermite::GaussHermite;

use crate::error::{invalid, Result};

pub const DEFAULT_QUAD_NODES: usize = 64;

/// Gauss–Hermite rule for expectations of functions of a normal variable.
#[derive(Debug, Clone)]
pub struct GaussianQuadrature {
    rule: GaussHermite,
    nodes: usize,
}

impl GaussianQuadrature {
    pub fn new(nodes: usize) -> Result<Self> {
        let rule = GaussHermite::new(nodes)
            .map_err(|_| invalid(format!("quadrature needs at least 2 nodes, got {nodes}")))?;
        Ok(Self { rule, nodes })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// `E[h(N(mean, variance))]`; exact for polynomials of degree `< 2 * nodes`.
    pub fn expect(&self, h: impl Fn(f64) -> f64, mean: f64, variance: f64) -> Result<f64> {
        if !(variance >= 0.0) {
            return Err(invalid(format!("variance must be >= 0, got {variance}")));
        }
        if variance == 0.0 {
            return Ok(h(mean));
        }
        let s = (2.0 * variance).sqrt();
        Ok(self.rule.integrate(|z| h(mean + s * z)) / std::f64::consts::PI.sqrt())
    }
}

fn default_rule() -> &'static GaussianQuadrature {
    static RULE: OnceLock<GaussianQuadrature> = OnceLock::new();
    RULE.get_or_init(|| GaussianQuadrature::new(DEFAULT_QUAD_NODES).expect("64 > 2"))
}

/// `E[h(N(mean, variance))]` with the default 64-node rule.
pub fn quad_expect(h: impl Fn(f64) -> f64, mean: f64, variance: f64) -> Result<f64> {
    default_rule().expect(h, mean, variance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn moments() {
        assert_relative_eq!(quad_expect(|x| x, 0.7, 2.0).unwrap(), 0.7, epsilon = 1e-13);
        assert_relative_eq!(quad_expect(|x| x * x, 0.0, 1.5).unwrap(), 1.5, epsilon = 1e-13);
        assert_relative_eq!(
            quad_expect(f64::exp, 0.0, 1.0).unwrap(),
            0.5f64.exp(),
            max_relative = 1e-12
        );
        assert!(quad_expect(|x| x, 0.0, -1.0).is_err());
    }

    #[test]
    fn small_rules_are_exact_up_to_their_degree() {
        let q = GaussianQuadrature::new(3).unwrap();
        // E[Z^4] = 3, degree 4 < 6.
        assert_relative_eq!(q.expect(|x| x.powi(4), 0.0, 1.0).unwrap(), 3.0, epsilon = 1e-12);
        // E[Z^6] = 15 is not reproduced by three nodes.
        assert!((q.expect(|x| x.powi(6), 0.0, 1.0).unwrap() - 15.0).abs() > 1.0);
    }
}
