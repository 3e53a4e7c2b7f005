//! Uniform-grid sinc (Colbert-Miller) DVR for the uncoupled bonds.

use std::f64::consts::PI;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{IvrError, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DvrGrid {
    pub r_min: f64,
    pub r_max: f64,
    pub points: usize,
}

impl DvrGrid {
    pub const MIN_POINTS: usize = 16;

    pub fn new(r_min: f64, r_max: f64, points: usize) -> Result<Self> {
        let g = DvrGrid { r_min, r_max, points };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points < Self::MIN_POINTS {
            return Err(IvrError::InvalidGrid(format!(
                "need at least {} points, got {}",
                Self::MIN_POINTS,
                self.points
            )));
        }
        if !(self.r_min.is_finite() && self.r_max.is_finite() && self.r_max > self.r_min) {
            return Err(IvrError::InvalidGrid(format!(
                "empty range [{}, {}]",
                self.r_min, self.r_max
            )));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        (self.r_max - self.r_min) / (self.points - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        self.r_min + i as f64 * self.spacing()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.point(i)).collect()
    }
}

fn parity(k: i64) -> f64 {
    if k % 2 == 0 { 1.0 } else { -1.0 }
}

pub fn kinetic_matrix(grid: &DvrGrid, mu: f64) -> Mat<f64> {
    let h = grid.spacing();
    let diag = PI * PI / (6.0 * mu * h * h);
    Mat::from_fn(grid.points, grid.points, |i, j| {
        if i == j {
            diag
        } else {
            let k = i as i64 - j as i64;
            parity(k) / (mu * h * h * (k * k) as f64)
        }
    })
}

/// Sinc-DVR representation of d/dR (antisymmetric, zero diagonal).
pub fn first_derivative_matrix(grid: &DvrGrid) -> Mat<f64> {
    let h = grid.spacing();
    Mat::from_fn(grid.points, grid.points, |i, j| {
        if i == j {
            0.0
        } else {
            let k = i as i64 - j as i64;
            parity(k) / (k as f64 * h)
        }
    })
}

/// Bound eigenstates of one Morse bond on a DVR grid.
#[derive(Debug, Clone)]
pub struct BondEigenbasis {
    pub grid: DvrGrid,
    pub mu: f64,
    /// Bound energies, ascending.
    pub energies: Vec<f64>,
    /// Grid amplitudes, one column per bound state (orthonormal columns).
    pub vectors: Mat<f64>,
    pub dissociation: f64,
    /// Probability of the highest bound state in the outer 5% of the grid.
    pub box_contamination: f64,
}

pub const BOX_CONTAMINATION_LIMIT: f64 = 1e-3;

pub fn solve_bond(
    grid: &DvrGrid,
    mu: f64,
    potential: impl Fn(f64) -> f64,
    dissociation: f64,
) -> Result<BondEigenbasis> {
    grid.validate()?;
    if mu.is_nan() || mu <= 0.0 {
        return Err(IvrError::InvalidInput(format!("reduced mass must be positive, got {mu}")));
    }
    let mut h = kinetic_matrix(grid, mu);
    for i in 0..grid.points {
        let v = potential(grid.point(i));
        if !v.is_finite() {
            return Err(IvrError::InvalidInput(format!(
                "potential not finite at R = {}",
                grid.point(i)
            )));
        }
        h[(i, i)] += v;
    }
    let (w, u) = linalg::sym_eigen(&h)?;
    let n_bound = w.iter().take_while(|&&e| e < dissociation).count();
    let mut vectors = Mat::from_fn(grid.points, n_bound, |i, j| u[(i, j)]);
    // Fix the arbitrary eigenvector sign: first significant amplitude positive.
    for j in 0..n_bound {
        let lead = (0..grid.points)
            .map(|i| vectors[(i, j)])
            .find(|x| x.abs() > 1e-8)
            .unwrap_or(1.0);
        if lead < 0.0 {
            for i in 0..grid.points {
                vectors[(i, j)] = -vectors[(i, j)];
            }
        }
    }
    let outer = (grid.points as f64 * 0.05).ceil() as usize;
    let box_contamination = if n_bound == 0 {
        0.0
    } else {
        (grid.points - outer..grid.points)
            .map(|i| vectors[(i, n_bound - 1)].powi(2))
            .sum()
    };
    if box_contamination > BOX_CONTAMINATION_LIMIT {
        log::warn!(
            "box contamination: highest bound state (E = {:.8}) carries {:.2e} of its probability in the outer 5% of [{}, {}]",
            w[n_bound - 1],
            box_contamination,
            grid.r_min,
            grid.r_max
        );
    }
    Ok(BondEigenbasis {
        grid: *grid,
        mu,
        energies: w[..n_bound].to_vec(),
        vectors,
        dissociation,
        box_contamination,
    })
}

impl BondEigenbasis {
    pub fn n_bound(&self) -> usize {
        self.energies.len()
    }

    /// `d = U^T D U`; momentum matrix elements are `<m|p|m'> = -i d_{mm'}`.
    pub fn derivative_matrix(&self) -> Mat<f64> {
        let d = first_derivative_matrix(&self.grid);
        let mut out = self.vectors.transpose() * &d * &self.vectors;
        // Restore exact antisymmetry lost to rounding.
        let n = out.nrows();
        for i in 0..n {
            out[(i, i)] = 0.0;
            for j in 0..i {
                let a = 0.5 * (out[(i, j)] - out[(j, i)]);
                out[(i, j)] = a;
                out[(j, i)] = -a;
            }
        }
        out
    }

    /// `<m|p^2|m'>` from the DVR kinetic matrix, `U^T (2 mu T) U`.
    pub fn momentum_squared_matrix(&self) -> Mat<f64> {
        let t = kinetic_matrix(&self.grid, self.mu);
        let mut out = self.vectors.transpose() * &t * &self.vectors;
        let n = out.nrows();
        for i in 0..n {
            for j in 0..i {
                let a = self.mu * (out[(i, j)] + out[(j, i)]);
                out[(i, j)] = a;
                out[(j, i)] = a;
            }
            out[(i, i)] *= 2.0 * self.mu;
        }
        out
    }

    pub fn to_file(&self) -> BondEigenbasisFile {
        BondEigenbasisFile {
            grid: self.grid,
            mu: self.mu,
            dissociation: self.dissociation,
            energies: self.energies.clone(),
            box_contamination: self.box_contamination,
            amplitudes: (0..self.n_bound()).map(|j| linalg::col(&self.vectors, j)).collect(),
        }
    }

    pub fn from_file(f: &BondEigenbasisFile) -> Result<Self> {
        f.grid.validate()?;
        if f.amplitudes.len() != f.energies.len() || f.amplitudes.iter().any(|a| a.len() != f.grid.points) {
            return Err(IvrError::Serde("eigenbasis amplitudes do not match grid/energies".into()));
        }
        Ok(BondEigenbasis {
            grid: f.grid,
            mu: f.mu,
            energies: f.energies.clone(),
            vectors: Mat::from_fn(f.grid.points, f.energies.len(), |i, j| f.amplitudes[j][i]),
            dissociation: f.dissociation,
            box_contamination: f.box_contamination,
        })
    }
}

/// JSON form of a [`BondEigenbasis`]: energies plus grid amplitudes per state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BondEigenbasisFile {
    pub grid: DvrGrid,
    pub mu: f64,
    pub dissociation: f64,
    pub energies: Vec<f64>,
    pub box_contamination: f64,
    pub amplitudes: Vec<Vec<f64>>,
}
