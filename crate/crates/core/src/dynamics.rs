//! Time-domain observables built from the exact eigenstates: overlap matrix,
//! population kernel, interference decomposition, decay fits and
//! wavepacket densities.

use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::ProductSystem;
use crate::error::{IvrError, Result};
use crate::feshbach::ResonanceSet;
use crate::model::fs_to_au;

/// Preparation coefficients over an ordered subset S of the Q states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Superposition {
    pub s_indices: Vec<usize>,
    pub c: Vec<Complex64>,
}

impl Superposition {
    pub const NORM_TOL: f64 = 1e-12;

    /// Checks that the coefficients are unit-normalized.
    pub fn new(s_indices: Vec<usize>, c: Vec<Complex64>) -> Result<Self> {
        let s = Superposition { s_indices, c };
        s.validate()?;
        Ok(s)
    }

    /// Rescales `c` to unit norm.
    pub fn normalized(s_indices: Vec<usize>, c: Vec<Complex64>) -> Result<Self> {
        let n = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(IvrError::InvalidInput("superposition has zero norm".into()));
        }
        Self::new(s_indices, c.into_iter().map(|z| z / n).collect())
    }

    pub fn single(index: usize) -> Self {
        Superposition { s_indices: vec![index], c: vec![Complex64::new(1.0, 0.0)] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.s_indices.len() != self.c.len() || self.c.is_empty() {
            return Err(IvrError::InvalidInput("superposition indices and coefficients differ in length".into()));
        }
        let mut seen = self.s_indices.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(IvrError::InvalidInput("superposition repeats a state".into()));
        }
        let n: f64 = self.c.iter().map(|z| z.norm_sqr()).sum();
        if (n - 1.0).abs() > Self::NORM_TOL {
            return Err(IvrError::InvalidInput(format!("superposition norm^2 = {n}, expected 1")));
        }
        Ok(())
    }

    pub fn weights(&self) -> Vec<f64> {
        self.c.iter().map(|z| z.norm_sqr()).collect()
    }
}

/// Q indices of the `count` highest Q states, highest first (kappa = 1, 2, ...).
pub fn top_states(n_q: usize, count: usize) -> Vec<usize> {
    (0..count.min(n_q)).map(|k| n_q - 1 - k).collect()
}

fn check_indices(res: &ResonanceSet, idx: &[usize]) -> Result<()> {
    if let Some(&bad) = idx.iter().find(|&&i| i >= res.n_q()) {
        return Err(IvrError::InvalidInput(format!("Q index {bad} out of range ({} states)", res.n_q())));
    }
    Ok(())
}

fn phases(res: &ResonanceSet, t_fs: f64) -> Vec<Complex64> {
    let t = fs_to_au(t_fs);
    res.energies.iter().map(|&e| Complex64::from_polar(1.0, -e * t)).collect()
}

/// `M[(r, c)](t) = sum_gamma a_{r gamma} a_{c gamma} exp(-i E_gamma t)`.
pub fn overlap_matrix(res: &ResonanceSet, t_fs: f64, rows: &[usize], cols: &[usize]) -> Result<Mat<Complex64>> {
    check_indices(res, rows)?;
    check_indices(res, cols)?;
    let ph = phases(res, t_fs);
    let n = res.len();
    let left = Mat::from_fn(rows.len(), n, |i, g| ph[g] * res.a[(rows[i], g)]);
    let right = Mat::from_fn(n, cols.len(), |g, j| Complex64::new(res.a[(cols[j], g)], 0.0));
    Ok(&left * &right)
}

/// `K(t) = M(t)^dagger M(t)`, Hermitized.
pub fn kernel(res: &ResonanceSet, t_fs: f64, rows: &[usize], cols: &[usize]) -> Result<Mat<Complex64>> {
    let m = overlap_matrix(res, t_fs, rows, cols)?;
    let mut k = m.adjoint() * &m;
    let n = k.nrows();
    for i in 0..n {
        k[(i, i)] = Complex64::new(k[(i, i)].re, 0.0);
        for j in 0..i {
            let z = (k[(i, j)] + k[(j, i)].conj()) * 0.5;
            k[(i, j)] = z;
            k[(j, i)] = z.conj();
        }
    }
    Ok(k)
}

/// `b_gamma = sum_kappa a_{kappa gamma} c_kappa`: the packet in the exact eigenbasis.
pub fn eigen_amplitudes(c: &Superposition, res: &ResonanceSet) -> Result<Vec<Complex64>> {
    c.validate()?;
    check_indices(res, &c.s_indices)?;
    Ok((0..res.len())
        .map(|g| {
            c.s_indices
                .iter()
                .zip(&c.c)
                .map(|(&k, &ck)| ck * res.a[(k, g)])
                .sum()
        })
        .collect())
}

/// Evaluates populations at many times without rebuilding `M`.
pub struct Propagator<'a> {
    res: &'a ResonanceSet,
    rows: Vec<usize>,
    b: Vec<Complex64>,
    c: Superposition,
}

impl<'a> Propagator<'a> {
    pub fn new(res: &'a ResonanceSet, c: &Superposition, rows: &[usize]) -> Result<Self> {
        check_indices(res, rows)?;
        let b = eigen_amplitudes(c, res)?;
        Ok(Propagator { res, rows: rows.to_vec(), b, c: c.clone() })
    }

    /// `(M c)_r(t)` for every measured row.
    pub fn amplitudes(&self, t_fs: f64) -> Vec<Complex64> {
        let ph = phases(self.res, t_fs);
        let pb: Vec<Complex64> = ph.iter().zip(&self.b).map(|(p, b)| p * b).collect();
        self.rows
            .iter()
            .map(|&r| (0..self.res.len()).map(|g| pb[g] * self.res.a[(r, g)]).sum())
            .collect()
    }

    pub fn population(&self, t_fs: f64) -> f64 {
        self.amplitudes(t_fs).iter().map(|z| z.norm_sqr()).sum()
    }

    /// `W(t) = sum_kappa |c_kappa M_{kappa kappa}(t)|^2`, over S states that are also measured.
    pub fn direct_measure(&self, t_fs: f64) -> f64 {
        let ph = phases(self.res, t_fs);
        self.c
            .s_indices
            .iter()
            .zip(&self.c.c)
            .filter(|(k, _)| self.rows.contains(k))
            .map(|(&k, ck)| {
                let m: Complex64 = (0..self.res.len()).map(|g| ph[g] * self.res.a[(k, g)].powi(2)).sum();
                (ck * m).norm_sqr()
            })
            .sum()
    }

    /// `<H>` of the packet from the exact spectrum.
    pub fn mean_energy(&self) -> f64 {
        self.b.iter().zip(&self.res.energies).map(|(b, e)| b.norm_sqr() * e).sum()
    }
}

pub fn population(c: &Superposition, res: &ResonanceSet, rows: &[usize], t_fs: f64) -> Result<f64> {
    Ok(Propagator::new(res, c, rows)?.population(t_fs))
}

/// `P = sum |c|^2 g + sum_{k' != k} c*_{k'} c_k f_{k' k}` with `g = diag K`, `f = offdiag K`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Decomposition {
    pub direct: f64,
    pub interference: f64,
    pub g: Vec<f64>,
}

pub fn decompose(c: &Superposition, res: &ResonanceSet, rows: &[usize], t_fs: f64) -> Result<Decomposition> {
    c.validate()?;
    let k = kernel(res, t_fs, rows, &c.s_indices)?;
    let n = c.c.len();
    let g: Vec<f64> = (0..n).map(|i| k[(i, i)].re).collect();
    let direct = (0..n).map(|i| c.c[i].norm_sqr() * g[i]).sum();
    let mut interference = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                interference += (c.c[i].conj() * c.c[j] * k[(i, j)]).re;
            }
        }
    }
    Ok(Decomposition { direct, interference, g })
}

/// `(W(t), P(t) - W(t))`.
pub fn overlap_measure(c: &Superposition, res: &ResonanceSet, rows: &[usize], t_fs: f64) -> Result<(f64, f64)> {
    let p = Propagator::new(res, c, rows)?;
    let w = p.direct_measure(t_fs);
    Ok((w, p.population(t_fs) - w))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopulationTrace {
    pub times: Vec<f64>,
    pub p: Vec<f64>,
    pub w: Vec<f64>,
    pub p_tilde: Vec<f64>,
    /// `|<kappa|Psi(t)>|^2` for each S state, when requested.
    pub per_state: Option<Vec<Vec<f64>>>,
}

/// Uniform time grid `0, dt, ..., t_end`.
pub fn time_grid(t_end_fs: f64, dt_fs: f64) -> Result<Vec<f64>> {
    if !(dt_fs > 0.0 && t_end_fs >= 0.0) {
        return Err(IvrError::InvalidInput("time grid needs dt > 0 and t_end >= 0".into()));
    }
    let n = (t_end_fs / dt_fs).round() as usize;
    Ok((0..=n).map(|i| i as f64 * dt_fs).collect())
}

pub fn population_trace(
    c: &Superposition,
    res: &ResonanceSet,
    rows: &[usize],
    times: &[f64],
    per_state: bool,
) -> Result<PopulationTrace> {
    use rayon::prelude::*;
    let prop = Propagator::new(res, c, rows)?;
    let s_rows: Vec<Option<usize>> = c.s_indices.iter().map(|k| rows.iter().position(|r| r == k)).collect();
    let samples: Vec<(f64, f64, Vec<f64>)> = times
        .par_iter()
        .map(|&t| {
            let amp = prop.amplitudes(t);
            let p: f64 = amp.iter().map(|z| z.norm_sqr()).sum();
            let w = prop.direct_measure(t);
            let ps = if per_state {
                s_rows.iter().map(|r| r.map_or(f64::NAN, |i| amp[i].norm_sqr())).collect()
            } else {
                Vec::new()
            };
            (p, w, ps)
        })
        .collect();
    let p: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let w: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let p_tilde = p.iter().zip(&w).map(|(p, w)| p - w).collect();
    let per_state = per_state.then(|| {
        (0..c.c.len()).map(|k| samples.iter().map(|s| s.2[k]).collect()).collect()
    });
    Ok(PopulationTrace { times: times.to_vec(), p, w, p_tilde, per_state })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FitProtocol {
    /// `P_inf` = time average of P over the averaging window, then a
    /// one-parameter least-squares fit of `t_delta` over the fit window.
    #[default]
    PlateauAverage,
    /// Least squares in both `P_inf` and `t_delta` over the fit window.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub protocol: FitProtocol,
    pub fit_window_fs: f64,
    pub average_window_fs: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { protocol: FitProtocol::PlateauAverage, fit_window_fs: 400.0, average_window_fs: 1000.0 }
    }
}

/// `P(t) = P_inf + (1 - P_inf) exp(-t / t_delta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub t_delta: f64,
    pub p_inf: f64,
    pub fit_window: f64,
    /// RMS deviation of the model over the fit window.
    pub residual: f64,
    pub protocol: FitProtocol,
}

impl DecayFit {
    pub fn model(&self, t: f64) -> f64 {
        self.p_inf + (1.0 - self.p_inf) * (-t / self.t_delta).exp()
    }
}

/// Trapezoidal time average of `y` over `[0, window]`.
fn window_mean(t: &[f64], y: &[f64], window: f64) -> f64 {
    let mut area = 0.0;
    let mut span = 0.0;
    for i in 1..t.len() {
        if t[i] > window + 1e-9 {
            break;
        }
        let h = t[i] - t[i - 1];
        area += 0.5 * h * (y[i] + y[i - 1]);
        span += h;
    }
    area / span
}

/// Golden-section minimization of `f` over `ln t` after a coarse scan.
fn minimize_log(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let n = 240;
    let (la, lb) = (lo.ln(), hi.ln());
    let xs: Vec<f64> = (0..=n).map(|i| la + (lb - la) * i as f64 / n as f64).collect();
    let vals: Vec<f64> = xs.iter().map(|&x| f(x.exp())).collect();
    let k = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    let (mut a, mut b) = (xs[k.saturating_sub(1)], xs[(k + 1).min(n)]);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c.exp()), f(d.exp()));
    for _ in 0..200 {
        if (b - a).abs() < 1e-13 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d.exp());
        }
    }
    (0.5 * (a + b)).exp()
}

pub fn fit_decay(trace: &PopulationTrace, opts: &FitOptions) -> Result<DecayFit> {
    let t = &trace.times;
    let p = &trace.p;
    if t.len() < 3 || t.len() != p.len() {
        return Err(IvrError::Fit("trace too short".into()));
    }
    let t_last = *t.last().unwrap();
    let needed = match opts.protocol {
        FitProtocol::PlateauAverage => opts.fit_window_fs.max(opts.average_window_fs),
        FitProtocol::Joint => opts.fit_window_fs,
    };
    if t_last + 1e-9 < needed {
        return Err(IvrError::Fit(format!("trace ends at {t_last} fs, fit needs {needed} fs")));
    }
    if p.iter().all(|&x| x >= 0.99) {
        return Err(IvrError::Fit("population never drops below 0.99; decay time unidentifiable".into()));
    }
    let n_fit = t.iter().take_while(|&&x| x <= opts.fit_window_fs + 1e-9).count();
    let (tf, pf) = (&t[..n_fit], &p[..n_fit]);
    let sse = |tau: f64, pinf: f64| -> f64 {
        tf.iter()
            .zip(pf)
            .map(|(&ti, &pi)| {
                let r = pi - pinf - (1.0 - pinf) * (-ti / tau).exp();
                r * r
            })
            .sum()
    };
    let joint_pinf = |tau: f64| -> f64 {
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (&ti, &pi) in tf.iter().zip(pf) {
            let e = (-ti / tau).exp();
            let x = 1.0 - e;
            sxy += x * (pi - e);
            sxx += x * x;
        }
        if sxx > 0.0 { sxy / sxx } else { 0.0 }
    };
    let (t_delta, p_inf) = match opts.protocol {
        FitProtocol::PlateauAverage => {
            let pinf = window_mean(t, p, opts.average_window_fs);
            if pinf >= 1.0 {
                return Err(IvrError::Fit(format!("plateau {pinf} >= 1")));
            }
            (minimize_log(|tau| sse(tau, pinf), 1e-2, 1e6), pinf)
        }
        FitProtocol::Joint => {
            let tau = minimize_log(|tau| sse(tau, joint_pinf(tau)), 1e-2, 1e6);
            (tau, joint_pinf(tau))
        }
    };
    let residual = (sse(t_delta, p_inf) / n_fit as f64).sqrt();
    Ok(DecayFit { t_delta, p_inf, fit_window: opts.fit_window_fs, residual, protocol: opts.protocol })
}

/// Packet density on the product grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensitySnapshot {
    pub t_fs: f64,
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
    /// Row-major over (r1, r2).
    pub rho: Vec<f64>,
    /// Integral of the density over the full DVR grid.
    pub norm: f64,
    /// Largest density on the grid boundary.
    pub boundary_max: f64,
    pub mean_r1: f64,
    pub mean_r2: f64,
}

pub const BOUNDARY_DENSITY_LIMIT: f64 = 1e-6;

/// Product-basis coefficients `d_{mn}(t)` of the packet; `vectors` are
/// eigenvectors in the product basis consistent in sign with `res.a`.
pub fn packet_coefficients(
    c: &Superposition,
    res: &ResonanceSet,
    vectors: &Mat<f64>,
    t_fs: f64,
) -> Result<Vec<Complex64>> {
    if vectors.ncols() != res.len() {
        return Err(IvrError::InvalidInput("eigenvector count differs from resonance count".into()));
    }
    let b = eigen_amplitudes(c, res)?;
    let ph = phases(res, t_fs);
    let coef: Vec<Complex64> = b.iter().zip(&ph).map(|(b, p)| b * p).collect();
    Ok((0..vectors.nrows())
        .map(|i| (0..res.len()).map(|g| coef[g] * vectors[(i, g)]).sum())
        .collect())
}

pub fn wavepacket_density(
    c: &Superposition,
    res: &ResonanceSet,
    vectors: &Mat<f64>,
    sys: &ProductSystem,
    t_fs: f64,
    stride: usize,
) -> Result<DensitySnapshot> {
    let d = packet_coefficients(c, res, vectors, t_fs)?;
    let (n1, n2) = (sys.n_cs(), sys.n_co());
    if d.len() != n1 * n2 {
        return Err(IvrError::InvalidInput("eigenvectors do not live in this product basis".into()));
    }
    let stride = stride.max(1);
    let dm = Mat::from_fn(n1, n2, |m, n| d[m * n2 + n]);
    let u1 = Mat::from_fn(sys.cs.vectors.nrows(), n1, |i, m| Complex64::new(sys.cs.vectors[(i, m)], 0.0));
    let u2t = Mat::from_fn(n2, sys.co.vectors.nrows(), |n, j| Complex64::new(sys.co.vectors[(j, n)], 0.0));
    let psi = &u1 * &dm * &u2t;
    let (h1, h2) = (sys.cs.grid.spacing(), sys.co.grid.spacing());
    let (g1, g2) = (sys.cs.grid.points(), sys.co.grid.points());
    let mut norm = 0.0;
    let mut boundary_max = 0.0f64;
    let (mut m1, mut m2) = (0.0, 0.0);
    for i in 0..g1.len() {
        for j in 0..g2.len() {
            let w = psi[(i, j)].norm_sqr();
            norm += w;
            m1 += w * g1[i];
            m2 += w * g2[j];
            if i == 0 || j == 0 || i + 1 == g1.len() || j + 1 == g2.len() {
                boundary_max = boundary_max.max(w / (h1 * h2));
            }
        }
    }
    if boundary_max > BOUNDARY_DENSITY_LIMIT {
        log::warn!("grid coverage: boundary density {boundary_max:.3e} at t = {t_fs} fs");
    }
    let rows: Vec<usize> = (0..g1.len()).step_by(stride).collect();
    let cols: Vec<usize> = (0..g2.len()).step_by(stride).collect();
    let mut rho = Vec::with_capacity(rows.len() * cols.len());
    for &i in &rows {
        for &j in &cols {
            rho.push(psi[(i, j)].norm_sqr() / (h1 * h2));
        }
    }
    Ok(DensitySnapshot {
        t_fs,
        r1: rows.iter().map(|&i| g1[i]).collect(),
        r2: cols.iter().map(|&j| g2[j]).collect(),
        rho,
        norm,
        boundary_max,
        mean_r1: m1 / norm,
        mean_r2: m2 / norm,
    })
}

/// `<Psi|H|Psi>` at t = 0 from the Q-space block alone (`c^dagger QHQ c`),
/// independent of the exact eigenstates.
pub fn q_block_energy(c: &Superposition, q_block: &Mat<f64>) -> Result<f64> {
    c.validate()?;
    let mut e = Complex64::new(0.0, 0.0);
    for (i, &ki) in c.s_indices.iter().enumerate() {
        for (j, &kj) in c.s_indices.iter().enumerate() {
            e += c.c[i].conj() * c.c[j] * q_block[(ki, kj)];
        }
    }
    Ok(e.re)
}
