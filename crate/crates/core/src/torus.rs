//! Geometry of the flat torus `T^d = R^d / Z^d`.
//!
//! Points carry canonical representatives in `[0,1)^d`; the metric is the
//! quotient of the Euclidean norm, which for representatives reduces to
//! minimising over the integer shifts `{-1,0,1}^d`. Per coordinate the
//! minimum is `min(|dx|, 1-|dx|)`, so the shift search is separable.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// A point on `T^d`, stored by its canonical representative in `[0,1)^d`.
/// Supported dimensions are `d ∈ {1,2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint {
    coords: Vec<f64>,
}

impl TorusPoint {
    /// Reduce arbitrary real coordinates modulo 1 into `[0,1)`.
    pub fn wrap(v: &[f64]) -> Result<TorusPoint> {
        if v.is_empty() {
            return Err(Error::invalid("torus point needs at least one coordinate"));
        }
        let mut coords = Vec::with_capacity(v.len());
        for &c in v {
            if !c.is_finite() {
                return Err(Error::invalid(format!("non-finite coordinate {c}")));
            }
            coords.push(wrap_coord(c));
        }
        Ok(TorusPoint { coords })
    }

    /// 1-dimensional convenience constructor.
    pub fn wrap1(x: f64) -> TorusPoint {
        TorusPoint::wrap(&[x]).expect("finite coordinate")
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Quotient Euclidean distance. Panics on dimension mismatch in debug
    /// builds; use [`torus_dist`] for the checked variant.
    pub fn dist(&self, other: &TorusPoint) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(&a, &b)| {
                let d = circ_dist(a, b);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Translate by `v` (wrapping back into `[0,1)^d`).
    pub fn shifted(&self, v: &[f64]) -> TorusPoint {
        debug_assert_eq!(self.dim(), v.len());
        let coords = self
            .coords
            .iter()
            .zip(v)
            .map(|(&c, &dv)| wrap_coord(c + dv))
            .collect();
        TorusPoint { coords }
    }

    /// Minimum-image displacement from `self` to `other`: the representative
    /// of `other - self` with each component in `[-1/2, 1/2)`.
    pub fn displacement_to(&self, other: &TorusPoint) -> Vec<f64> {
        debug_assert_eq!(self.dim(), other.dim());
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(&a, &b)| {
                let mut d = b - a;
                if d >= 0.5 {
                    d -= 1.0;
                } else if d < -0.5 {
                    d += 1.0;
                }
                d
            })
            .collect()
    }
}

fn wrap_coord(v: f64) -> f64 {
    let mut c = v - v.floor();
    // rounding can land exactly on 1.0 for tiny negative inputs
    if c >= 1.0 {
        c = 0.0;
    }
    c
}

/// Circle distance between representatives in `[0,1)`.
fn circ_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    d.min(1.0 - d)
}

/// Quotient Euclidean distance with dimension checking.
pub fn torus_dist(x: &TorusPoint, y: &TorusPoint) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    Ok(x.dist(y))
}

/// Uniform lattice on `T^d` with `n` points per axis (nodes `i/n`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusLattice {
    n: usize,
    dim: usize,
}

impl TorusLattice {
    pub fn new(n: usize, dim: usize) -> Result<TorusLattice> {
        if n < 2 {
            return Err(Error::invalid("lattice needs n >= 2 points per axis"));
        }
        if dim == 0 || dim > 2 {
            return Err(Error::invalid("lattice dimension must be 1 or 2"));
        }
        Ok(TorusLattice { n, dim })
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Lattice spacing `1/n`.
    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Total number of nodes, `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Node for a row-major flat index.
    pub fn node(&self, idx: usize) -> TorusPoint {
        debug_assert!(idx < self.len());
        let n = self.n;
        let mut coords = vec![0.0; self.dim];
        let mut rest = idx;
        for a in (0..self.dim).rev() {
            coords[a] = (rest % n) as f64 / n as f64;
            rest /= n;
        }
        TorusPoint { coords }
    }

    pub fn nodes(&self) -> impl Iterator<Item = TorusPoint> + '_ {
        (0..self.len()).map(move |i| self.node(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn wrap_reduces_mod_one() {
        assert_abs_diff_eq!(TorusPoint::wrap(&[1.25]).unwrap().coords()[0], 0.25);
        assert_abs_diff_eq!(TorusPoint::wrap(&[0.0]).unwrap().coords()[0], 0.0);
        let p = TorusPoint::wrap(&[-0.1, 2.3]).unwrap();
        assert_abs_diff_eq!(p.coords()[0], 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(p.coords()[1], 0.3, epsilon = 1e-12);
    }

    #[test]
    fn wrap_rejects_non_finite() {
        assert!(TorusPoint::wrap(&[f64::NAN]).is_err());
        assert!(TorusPoint::wrap(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn wrap_near_integer_stays_canonical() {
        let p = TorusPoint::wrap(&[-1e-18]).unwrap();
        assert!(p.coords()[0] < 1.0);
    }

    #[test]
    fn dist_takes_short_arc() {
        let x = TorusPoint::wrap1(0.1);
        let y = TorusPoint::wrap1(0.9);
        assert_abs_diff_eq!(x.dist(&y), 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(x.dist(&x), 0.0);
    }

    /// Oracle: enumerate all integer shifts in {-1,0,1}^d.
    fn dist_by_shift_enumeration(x: &TorusPoint, y: &TorusPoint) -> f64 {
        let d = x.dim();
        let shifts = [-1.0, 0.0, 1.0];
        let mut best = f64::INFINITY;
        let combos = 3usize.pow(d as u32);
        for c in 0..combos {
            let mut rest = c;
            let mut sq = 0.0;
            for a in 0..d {
                let k = shifts[rest % 3];
                rest /= 3;
                let diff = x.coords()[a] - y.coords()[a] + k;
                sq += diff * diff;
            }
            best = best.min(sq.sqrt());
        }
        best
    }

    #[test]
    fn dist_2d_matches_shift_enumeration() {
        let x = TorusPoint::wrap(&[0.1, 0.1]).unwrap();
        let y = TorusPoint::wrap(&[0.9, 0.9]).unwrap();
        let expected = dist_by_shift_enumeration(&x, &y);
        assert_abs_diff_eq!(x.dist(&y), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(x.dist(&y), 0.2 * 2f64.sqrt(), epsilon = 1e-7);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let x = TorusPoint::wrap(&[0.1]).unwrap();
        let y = TorusPoint::wrap(&[0.1, 0.2]).unwrap();
        assert!(torus_dist(&x, &y).is_err());
    }

    #[test]
    fn lattice_nodes_are_uniform() {
        let lat = TorusLattice::new(4, 2).unwrap();
        assert_eq!(lat.len(), 16);
        let p = lat.node(6); // (1, 2) row-major
        assert_abs_diff_eq!(p.coords()[0], 0.25);
        assert_abs_diff_eq!(p.coords()[1], 0.5);
        assert!(TorusLattice::new(1, 1).is_err());
    }

    proptest! {
        #[test]
        fn metric_axioms(
            xs in proptest::collection::vec(-5.0f64..5.0, 2),
            ys in proptest::collection::vec(-5.0f64..5.0, 2),
            zs in proptest::collection::vec(-5.0f64..5.0, 2),
        ) {
            let x = TorusPoint::wrap(&xs).unwrap();
            let y = TorusPoint::wrap(&ys).unwrap();
            let z = TorusPoint::wrap(&zs).unwrap();
            // symmetry
            prop_assert!((x.dist(&y) - y.dist(&x)).abs() <= 1e-15);
            // triangle inequality
            prop_assert!(x.dist(&z) <= x.dist(&y) + y.dist(&z) + 1e-12);
            // bounded by diameter
            prop_assert!(x.dist(&y) <= 0.5 * (2.0f64).sqrt() + 1e-15);
        }

        #[test]
        fn shift_invariance(
            xs in proptest::collection::vec(0.0f64..1.0, 2),
            ys in proptest::collection::vec(0.0f64..1.0, 2),
            k in -3i32..4,
        ) {
            let x = TorusPoint::wrap(&xs).unwrap();
            let y = TorusPoint::wrap(&ys).unwrap();
            let shift = vec![k as f64; 2];
            let xk = TorusPoint::wrap(&xs.iter().zip(&shift).map(|(a, b)| a + b).collect::<Vec<_>>()).unwrap();
            let yk = TorusPoint::wrap(&ys.iter().zip(&shift).map(|(a, b)| a + b).collect::<Vec<_>>()).unwrap();
            prop_assert!((x.dist(&y) - xk.dist(&yk)).abs() <= 1e-12);
        }

        #[test]
        fn matches_shift_enumeration(
            xs in proptest::collection::vec(0.0f64..1.0, 2),
            ys in proptest::collection::vec(0.0f64..1.0, 2),
        ) {
            let x = TorusPoint::wrap(&xs).unwrap();
            let y = TorusPoint::wrap(&ys).unwrap();
            prop_assert!((x.dist(&y) - dist_by_shift_enumeration(&x, &y)).abs() <= 1e-12);
        }

        #[test]
        fn displacement_is_inverse_of_shift(
            xs in proptest::collection::vec(0.0f64..1.0, 2),
            vs in proptest::collection::vec(-0.49f64..0.49, 2),
        ) {
            let x = TorusPoint::wrap(&xs).unwrap();
            let y = x.shifted(&vs);
            let d = x.displacement_to(&y);
            for (a, b) in d.iter().zip(&vs) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
