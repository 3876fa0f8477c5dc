//! Periodic lattice functions on `T^d` with multilinear interpolation.
//!
//! A [`GridFunction`] stores one value per lattice node (row-major) and
//! evaluates anywhere by periodic multilinear interpolation, which is
//! monotone and non-expansive in the sup norm. These carry the value
//! functions, payoffs and terminal rewards of the game.

use crate::error::{Error, Result};
use crate::torus::{TorusLattice, TorusPoint};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    lattice: TorusLattice,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(lattice: TorusLattice, values: Vec<f64>) -> Result<GridFunction> {
        if values.len() != lattice.len() {
            return Err(Error::invalid(format!(
                "expected {} values for the lattice, got {}",
                lattice.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid values must be finite"));
        }
        Ok(GridFunction { lattice, values })
    }

    pub fn constant(lattice: TorusLattice, c: f64) -> GridFunction {
        GridFunction {
            lattice,
            values: vec![c; lattice.len()],
        }
    }

    /// Sample a function at the lattice nodes.
    pub fn from_fn(lattice: TorusLattice, f: impl Fn(&TorusPoint) -> f64) -> GridFunction {
        let values = (0..lattice.len()).map(|i| f(&lattice.node(i))).collect();
        GridFunction { lattice, values }
    }

    pub fn lattice(&self) -> TorusLattice {
        self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Periodic multilinear interpolation at `p`.
    pub fn eval(&self, p: &TorusPoint) -> f64 {
        debug_assert_eq!(p.dim(), self.lattice.dim());
        let n = self.lattice.points_per_axis();
        let d = self.lattice.dim();
        let mut base = [0usize; 2];
        let mut frac = [0.0f64; 2];
        for a in 0..d {
            let t = p.coords()[a] * n as f64;
            let i = t.floor();
            base[a] = (i as usize).min(n - 1);
            frac[a] = t - i;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0usize;
            for a in 0..d {
                let bit = (corner >> a) & 1;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                let ia = (base[a] + bit) % n;
                idx = idx * n + ia;
            }
            acc += w * self.values[idx];
        }
        acc
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `||self - other||_inf` over the lattice nodes.
    pub fn linf_diff(&self, other: &GridFunction) -> f64 {
        debug_assert_eq!(self.lattice, other.lattice);
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Empirical Lipschitz constant: per node, Euclidean norm of the forward
    /// lattice-edge slopes; maximum over nodes. Exact for `d = 1` piecewise
    /// linear interpolants.
    pub fn empirical_lipschitz(&self) -> f64 {
        let n = self.lattice.points_per_axis();
        let d = self.lattice.dim();
        let h = self.lattice.spacing();
        let mut best: f64 = 0.0;
        for idx in 0..self.values.len() {
            let mut sq = 0.0;
            for a in 0..d {
                let nb = neighbor_index(idx, a, n, d);
                let slope = (self.values[nb] - self.values[idx]) / h;
                sq += slope * slope;
            }
            best = best.max(sq.sqrt());
        }
        best
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction {
            lattice: self.lattice,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_scalar(&self, c: f64) -> GridFunction {
        self.map(|v| v + c)
    }

    /// Pointwise convex combination `(1-t)·self + t·other`.
    pub fn lerp(&self, other: &GridFunction, t: f64) -> GridFunction {
        debug_assert_eq!(self.lattice, other.lattice);
        GridFunction {
            lattice: self.lattice,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (1.0 - t) * a + t * b)
                .collect(),
        }
    }
}

fn neighbor_index(idx: usize, axis: usize, n: usize, d: usize) -> usize {
    // row-major: last axis varies fastest
    let stride = n.pow((d - 1 - axis) as u32);
    let coord = (idx / stride) % n;
    idx - coord * stride + ((coord + 1) % n) * stride
}

#[derive(Serialize, Deserialize)]
struct GridFunctionDto {
    n: usize,
    dim: usize,
    values: Vec<f64>,
}

impl Serialize for GridFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GridFunctionDto {
            n: self.lattice.points_per_axis(),
            dim: self.lattice.dim(),
            values: self.values.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GridFunction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let dto = GridFunctionDto::deserialize(d)?;
        let lattice = TorusLattice::new(dto.n, dto.dim).map_err(serde::de::Error::custom)?;
        GridFunction::new(lattice, dto.values).map_err(serde::de::Error::custom)
    }
}
