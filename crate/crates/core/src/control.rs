//! Optimal preparation coefficients: extrema of `c^dagger K(T) c` on the unit sphere.

use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Superposition, kernel};
use crate::error::{IvrError, Result};
use crate::feshbach::ResonanceSet;
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Keep as much population in Q as possible (suppress IVR).
    #[default]
    Maximize,
    /// Drain Q as fast as possible (enhance IVR).
    Minimize,
}

pub const DEGENERACY_GAP: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlResult {
    pub mode: Mode,
    pub t_fs: f64,
    pub superposition: Superposition,
    /// Extremal eigenvalue of `K(T)`: the retained Q population at T.
    pub lambda: f64,
    /// All eigenvalues of the S-restricted kernel, ascending.
    pub spectrum: Vec<f64>,
    /// The extremal eigenvalue is within [`DEGENERACY_GAP`] of its neighbour.
    pub degenerate: bool,
    /// `||K c - lambda c||`.
    pub residual: f64,
}

pub fn optimize(res: &ResonanceSet, s: &[usize], rows: &[usize], t_fs: f64, mode: Mode) -> Result<ControlResult> {
    if s.is_empty() {
        return Err(IvrError::InvalidInput("control subset S is empty".into()));
    }
    if !(t_fs >= 0.0 && t_fs.is_finite()) {
        return Err(IvrError::InvalidInput(format!("target time must be >= 0, got {t_fs}")));
    }
    let k = kernel(res, t_fs, rows, s)?;
    let (w, u) = linalg::herm_eigen(&k)?;
    let n = w.len();
    let j = match mode {
        Mode::Maximize => n - 1,
        Mode::Minimize => 0,
    };
    let degenerate = n > 1
        && match mode {
            Mode::Maximize => w[n - 1] - w[n - 2] < DEGENERACY_GAP,
            Mode::Minimize => w[1] - w[0] < DEGENERACY_GAP,
        };
    if degenerate {
        log::warn!("degenerate extremum: {mode:?} eigenvalue of K({t_fs} fs) is not isolated");
    }
    let mut c: Vec<Complex64> = (0..n).map(|i| u[(i, j)]).collect();
    let big = (0..n).max_by(|&a, &b| c[a].norm().total_cmp(&c[b].norm())).unwrap();
    let phase = c[big].conj() / c[big].norm();
    c.iter_mut().for_each(|z| *z *= phase);
    c[big] = Complex64::new(c[big].re, 0.0);
    let norm = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    c.iter_mut().for_each(|z| *z /= norm);
    let cm = Mat::from_fn(n, 1, |i, _| c[i]);
    let kc = &k * &cm;
    let residual = (0..n).map(|i| (kc[(i, 0)] - c[i] * w[j]).norm_sqr()).sum::<f64>().sqrt();
    Ok(ControlResult {
        mode,
        t_fs,
        superposition: Superposition::new(s.to_vec(), c)?,
        lambda: w[j],
        spectrum: w,
        degenerate,
        residual,
    })
}
