//! Classical trajectories on the collinear surface: symplectic integration,
//! surfaces of section, finite-time Lyapunov exponents and bond-energy flow.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{IvrError, Result};
use crate::model::{AtomMasses, KineticConvention, MassConvention, MorseParams, SurfaceModel, au_to_fs, fs_to_au};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub r1: f64,
    pub r2: f64,
    pub p1: f64,
    pub p2: f64,
    pub t_fs: f64,
}

impl PhasePoint {
    fn vec(&self) -> [f64; 4] {
        [self.r1, self.r2, self.p1, self.p2]
    }

    fn from_vec(y: [f64; 4], t_fs: f64) -> Self {
        PhasePoint { r1: y[0], r2: y[1], p1: y[2], p2: y[3], t_fs }
    }
}

/// `H = (a P1^2 + 2 c P1 P2 + b P2^2)/2 + V(R1, R2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalModel {
    pub surface: SurfaceModel,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Masses used for the bond energies `P^2/(2 mu) + V_i`.
    pub bond_mass: (f64, f64),
    /// Include `V3` and the cross kinetic term.
    pub coupled: bool,
    /// Beyond these bond lengths a trajectory counts as dissociated.
    pub exit_radius: f64,
}

impl ClassicalModel {
    pub fn new(surface: SurfaceModel, atoms: &AtomMasses, kinetic: KineticConvention) -> Self {
        let mc = MassConvention::new(atoms, kinetic);
        let (a, b, c) = mc.inverse_mass();
        ClassicalModel { surface, a, b, c, bond_mass: (mc.full_1, mc.full_2), coupled: true, exit_radius: 20.0 }
    }

    /// The integrable limit: `V3` and the cross kinetic term removed.
    pub fn decoupled(&self) -> Self {
        ClassicalModel { coupled: false, c: 0.0, ..*self }
    }

    pub fn potential(&self, r1: f64, r2: f64) -> f64 {
        let s = &self.surface;
        if self.coupled { s.potential(r1, r2) } else { s.cs.value(r1) + s.co.value(r2) }
    }

    fn force(&self, r1: f64, r2: f64) -> (f64, f64) {
        let s = &self.surface;
        let (g1, g2) = if self.coupled {
            s.gradient(r1, r2)
        } else {
            (s.cs.derivative(r1), s.co.derivative(r2))
        };
        (-g1, -g2)
    }

    fn velocity(&self, p1: f64, p2: f64) -> (f64, f64) {
        (self.a * p1 + self.c * p2, self.c * p1 + self.b * p2)
    }

    pub fn kinetic(&self, p1: f64, p2: f64) -> f64 {
        0.5 * (self.a * p1 * p1 + 2.0 * self.c * p1 * p2 + self.b * p2 * p2)
    }

    pub fn energy(&self, y: &PhasePoint) -> f64 {
        self.kinetic(y.p1, y.p2) + self.potential(y.r1, y.r2)
    }

    /// Zeroth-order small-oscillation periods (fs) of the two bonds.
    pub fn periods_fs(&self) -> (f64, f64) {
        let s = &self.surface;
        (
            au_to_fs(2.0 * PI / s.cs.omega(self.bond_mass.0)),
            au_to_fs(2.0 * PI / s.co.omega(self.bond_mass.1)),
        )
    }

    /// `P2` placing `(r1, r2, p1)` on the shell `H = e` with `dR2/dt > 0`.
    pub fn shell_p2(&self, r1: f64, r2: f64, p1: f64, e: f64) -> Option<f64> {
        let v = self.potential(r1, r2);
        let disc = (self.c * p1).powi(2) - self.b * (self.a * p1 * p1 + 2.0 * (v - e));
        if disc < 0.0 {
            return None;
        }
        Some((-self.c * p1 + disc.sqrt()) / self.b)
    }

    /// Roots `P1` of `H(r1, r2, P1, p2) = e`, ascending.
    pub fn shell_p1(&self, r1: f64, r2: f64, p2: f64, e: f64) -> Option<(f64, f64)> {
        let v = self.potential(r1, r2);
        let disc = (self.c * p2).powi(2) - self.a * (self.b * p2 * p2 + 2.0 * (v - e));
        if disc < 0.0 {
            return None;
        }
        let s = disc.sqrt();
        Some(((-self.c * p2 - s) / self.a, (-self.c * p2 + s) / self.a))
    }

    /// Section seed at `R2 = r2_section` moving outward.
    pub fn section_point(&self, r1: f64, p1: f64, r2_section: f64, e: f64) -> Option<PhasePoint> {
        self.shell_p2(r1, r2_section, p1, e).map(|p2| PhasePoint { r1, r2: r2_section, p1, p2, t_fs: 0.0 })
    }

    /// `(E_CS, E_CO, remainder)` with `E_i = P_i^2/(2 mu_i) + V_i(R_i)`.
    pub fn bond_energies(&self, y: &PhasePoint) -> (f64, f64, f64) {
        let s = &self.surface;
        let e1 = 0.5 * y.p1 * y.p1 / self.bond_mass.0 + s.cs.value(y.r1);
        let e2 = 0.5 * y.p2 * y.p2 / self.bond_mass.1 + s.co.value(y.r2);
        (e1, e2, self.energy(y) - e1 - e2)
    }
}

const XI: f64 = 0.178_617_895_844_809_1;
const LAMBDA: f64 = -0.212_341_831_062_605_4;
const CHI: f64 = -0.066_264_582_669_818_5;

/// One step of the fourth-order position-extended Forest-Ruth-like splitting.
fn pefrl(m: &ClassicalModel, y: &mut [f64; 4], h: f64) {
    let drift = |y: &mut [f64; 4], s: f64| {
        let (v1, v2) = m.velocity(y[2], y[3]);
        y[0] += s * h * v1;
        y[1] += s * h * v2;
    };
    let kick = |y: &mut [f64; 4], s: f64| {
        let (f1, f2) = m.force(y[0], y[1]);
        y[2] += s * h * f1;
        y[3] += s * h * f2;
    };
    drift(y, XI);
    kick(y, 0.5 * (1.0 - 2.0 * LAMBDA));
    drift(y, CHI);
    kick(y, LAMBDA);
    drift(y, 1.0 - 2.0 * (CHI + XI));
    kick(y, LAMBDA);
    drift(y, CHI);
    kick(y, 0.5 * (1.0 - 2.0 * LAMBDA));
    drift(y, XI);
}

fn exited(m: &ClassicalModel, y: &[f64; 4]) -> bool {
    y[0] > m.exit_radius || y[1] > m.exit_radius || !y.iter().all(|x| x.is_finite())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<PhasePoint>,
    /// Time (fs) at which a bond passed the exit radius.
    pub dissociated_at: Option<f64>,
    /// `max |H - H(0)| / |H(0)|` over the samples.
    pub energy_drift: f64,
}

/// Integrate for `t_end_fs` with step `dt_fs` (negative steps run backwards),
/// keeping every `sample_every`-th point.
pub fn integrate(m: &ClassicalModel, initial: PhasePoint, t_end_fs: f64, dt_fs: f64, sample_every: usize) -> Result<Trajectory> {
    if dt_fs == 0.0 || !dt_fs.is_finite() || !t_end_fs.is_finite() || t_end_fs < 0.0 {
        return Err(IvrError::InvalidInput("integrate needs finite dt != 0 and t_end >= 0".into()));
    }
    let steps = (t_end_fs / dt_fs.abs()).round() as usize;
    let h = fs_to_au(dt_fs);
    let e0 = m.energy(&initial);
    let mut y = initial.vec();
    let mut points = vec![initial];
    let mut drift = 0.0f64;
    let every = sample_every.max(1);
    for k in 1..=steps {
        pefrl(m, &mut y, h);
        if exited(m, &y) {
            let t = initial.t_fs + k as f64 * dt_fs;
            points.push(PhasePoint::from_vec(y, t));
            return Ok(Trajectory { points, dissociated_at: Some(t), energy_drift: drift });
        }
        if k % every == 0 || k == steps {
            let p = PhasePoint::from_vec(y, initial.t_fs + k as f64 * dt_fs);
            drift = drift.max(((m.energy(&p) - e0) / e0).abs());
            points.push(p);
        }
    }
    Ok(Trajectory { points, dissociated_at: None, energy_drift: drift })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionPoint {
    pub traj: usize,
    pub r1: f64,
    pub p1: f64,
    pub p2: f64,
    pub t_fs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SosRecord {
    pub energy: f64,
    pub r2_section: f64,
    pub points: Vec<SectionPoint>,
}

/// RK4 step in `R2` from the state `y` to `R2 = r2s` (Henon's trick).
fn henon_to_section(m: &ClassicalModel, y: &[f64; 4], r2s: f64) -> ([f64; 4], f64) {
    // Independent variable R2; dependent (R1, P1, P2, t).
    let rhs = |z: &[f64; 4], r2: f64| -> [f64; 4] {
        let (v1, v2) = m.velocity(z[1], z[2]);
        let (f1, f2) = m.force(z[0], r2);
        [v1 / v2, f1 / v2, f2 / v2, 1.0 / v2]
    };
    let z0 = [y[0], y[2], y[3], 0.0];
    let r0 = y[1];
    let h = r2s - r0;
    let add = |z: &[f64; 4], k: &[f64; 4], s: f64| [z[0] + s * k[0], z[1] + s * k[1], z[2] + s * k[2], z[3] + s * k[3]];
    let k1 = rhs(&z0, r0);
    let k2 = rhs(&add(&z0, &k1, 0.5 * h), r0 + 0.5 * h);
    let k3 = rhs(&add(&z0, &k2, 0.5 * h), r0 + 0.5 * h);
    let k4 = rhs(&add(&z0, &k3, h), r0 + h);
    let z: Vec<f64> = (0..4).map(|i| z0[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect();
    ([z[0], r2s, z[1], z[2]], z[3])
}

/// Outward crossings of `R2 = r2s` along one trajectory.
pub fn section_crossings(
    m: &ClassicalModel,
    seed: PhasePoint,
    r2s: f64,
    t_end_fs: f64,
    dt_fs: f64,
    traj: usize,
) -> Vec<SectionPoint> {
    let steps = (t_end_fs / dt_fs).round() as usize;
    let h = fs_to_au(dt_fs);
    let mut y = seed.vec();
    let mut out = Vec::new();
    for k in 0..steps {
        let prev = y;
        pefrl(m, &mut y, h);
        if exited(m, &y) {
            break;
        }
        if prev[1] < r2s && y[1] >= r2s {
            let (z, dt_au) = henon_to_section(m, &prev, r2s);
            out.push(SectionPoint {
                traj,
                r1: z[0],
                p1: z[2],
                p2: z[3],
                t_fs: seed.t_fs + k as f64 * dt_fs + au_to_fs(dt_au),
            });
        }
    }
    out
}

/// Energetically allowed part of the section plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionBounds {
    pub r1_min: f64,
    pub r1_max: f64,
    pub p1_max: f64,
}

impl ClassicalModel {
    /// `(a - c^2/b) P1^2 / 2 + V(R1, r2s) <= e`.
    pub fn section_allowed(&self, r1: f64, p1: f64, r2s: f64, e: f64) -> bool {
        0.5 * (self.a - self.c * self.c / self.b) * p1 * p1 + self.potential(r1, r2s) <= e
    }

    pub fn section_bounds(&self, r2s: f64, e: f64) -> Result<SectionBounds> {
        let f = |r: f64| self.potential(r, r2s) - e;
        let n = 4000;
        let (lo, hi) = (0.8, self.exit_radius);
        let xs: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
        let inside: Vec<usize> = (0..=n).filter(|&i| f(xs[i]) < 0.0).collect();
        let (Some(&first), Some(&last)) = (inside.first(), inside.last()) else {
            return Err(IvrError::InvalidInput(format!("section at R2 = {r2s} is closed at E = {e}")));
        };
        if last == n {
            return Err(IvrError::InvalidInput(format!("E = {e} is above the dissociation onset on the section")));
        }
        let bisect = |mut a: f64, mut b: f64| {
            // f(a) and f(b) have opposite signs.
            let fa = f(a);
            for _ in 0..100 {
                let mid = 0.5 * (a + b);
                if (f(mid) < 0.0) == (fa < 0.0) { a = mid } else { b = mid }
            }
            0.5 * (a + b)
        };
        let r1_min = if first == 0 { lo } else { bisect(xs[first - 1], xs[first]) };
        let r1_max = bisect(xs[last], xs[last + 1]);
        let vmin = xs[first..=last].iter().map(|&r| self.potential(r, r2s)).fold(f64::INFINITY, f64::min);
        let p1_max = (2.0 * (e - vmin) / (self.a - self.c * self.c / self.b)).sqrt();
        Ok(SectionBounds { r1_min, r1_max, p1_max })
    }
}

/// Section cells on an `n x n` grid over the allowed region; returns the
/// allowed cell centres.
pub fn section_grid(m: &ClassicalModel, r2s: f64, e: f64, n: usize) -> Result<Vec<(f64, f64)>> {
    let b = m.section_bounds(r2s, e)?;
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let r1 = b.r1_min + (i as f64 + 0.5) * (b.r1_max - b.r1_min) / n as f64;
            let p1 = -b.p1_max + (j as f64 + 0.5) * 2.0 * b.p1_max / n as f64;
            if m.section_allowed(r1, p1, r2s, e) {
                out.push((r1, p1));
            }
        }
    }
    Ok(out)
}

pub fn surface_of_section(
    m: &ClassicalModel,
    e: f64,
    r2s: f64,
    n_traj: usize,
    t_end_fs: f64,
    dt_fs: f64,
) -> Result<SosRecord> {
    if e >= m.surface.dissociation_onset() {
        return Err(IvrError::InvalidInput(format!(
            "E = {e} is not below the dissociation onset {}",
            m.surface.dissociation_onset()
        )));
    }
    let side = ((n_traj as f64).sqrt().ceil() as usize).max(1);
    let mut cells = section_grid(m, r2s, e, side)?;
    // Thin out evenly to the requested count.
    if cells.len() > n_traj {
        let step = cells.len() as f64 / n_traj as f64;
        cells = (0..n_traj).map(|k| cells[(k as f64 * step) as usize]).collect();
    }
    let seeds: Vec<PhasePoint> = cells.iter().filter_map(|&(r1, p1)| m.section_point(r1, p1, r2s, e)).collect();
    let points = seeds
        .par_iter()
        .enumerate()
        .map(|(k, s)| section_crossings(m, *s, r2s, t_end_fs, dt_fs, k))
        .collect::<Vec<_>>()
        .concat();
    Ok(SosRecord { energy: e, r2_section: r2s, points })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Perturbation {
    /// Unit `P1` displacement projected onto the energy shell.
    #[default]
    ShellMomentum,
    /// Unit `R1` displacement projected onto the energy shell.
    ShellPosition,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovOptions {
    pub t_end_fs: f64,
    pub dt_fs: f64,
    pub d0: f64,
    pub renorm_fs: f64,
    pub sample_fs: f64,
    pub smoothing_fs: f64,
    pub perturbation: Perturbation,
}

impl Default for LyapunovOptions {
    fn default() -> Self {
        LyapunovOptions {
            t_end_fs: 1200.0,
            dt_fs: 0.05,
            d0: 1e-8,
            renorm_fs: 10.0,
            sample_fs: 1.0,
            smoothing_fs: 50.0,
            perturbation: Perturbation::ShellMomentum,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovTrace {
    pub times: Vec<f64>,
    /// `Lambda(t) = ln d(t)/d0` accumulated over renormalizations.
    pub raw: Vec<f64>,
    /// Trailing moving average of `raw`.
    pub smoothed: Vec<f64>,
    pub d0: f64,
    /// `smoothed(t_end) / t_end` in 1/ps.
    pub lambda_t: f64,
    pub dissociated: bool,
}

fn shell_direction(m: &ClassicalModel, y: &[f64; 4], kind: Perturbation) -> [f64; 4] {
    let (f1, f2) = m.force(y[0], y[1]);
    let (v1, v2) = m.velocity(y[2], y[3]);
    let grad = [-f1, -f2, v1, v2];
    let gn: f64 = grad.iter().map(|x| x * x).sum();
    let mut u = match kind {
        Perturbation::ShellMomentum => [0.0, 0.0, 1.0, 0.0],
        Perturbation::ShellPosition => [1.0, 0.0, 0.0, 0.0],
    };
    let proj: f64 = (0..4).map(|i| u[i] * grad[i]).sum::<f64>() / gn;
    for i in 0..4 {
        u[i] -= proj * grad[i];
    }
    let n: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    u.map(|x| x / n)
}

fn trailing_mean(y: &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(y.len());
    let mut acc = 0.0;
    for i in 0..y.len() {
        acc += y[i];
        if i >= width {
            acc -= y[i - width];
        }
        out.push(acc / (i.min(width - 1) + 1) as f64);
    }
    out
}

/// Twin-trajectory finite-time Lyapunov exponent with periodic renormalization.
pub fn lyapunov(m: &ClassicalModel, seed: PhasePoint, opts: &LyapunovOptions) -> Result<LyapunovTrace> {
    if !(opts.d0 > 0.0 && opts.dt_fs > 0.0 && opts.t_end_fs > 0.0) {
        return Err(IvrError::InvalidInput("lyapunov needs d0, dt, t_end > 0".into()));
    }
    let h = fs_to_au(opts.dt_fs);
    let steps = (opts.t_end_fs / opts.dt_fs).round() as usize;
    let renorm = ((opts.renorm_fs / opts.dt_fs).round() as usize).max(1);
    let sample = ((opts.sample_fs / opts.dt_fs).round() as usize).max(1);
    let mut y = seed.vec();
    let u = shell_direction(m, &y, opts.perturbation);
    let mut z: [f64; 4] = std::array::from_fn(|i| y[i] + opts.d0 * u[i]);
    let dist = |y: &[f64; 4], z: &[f64; 4]| (0..4).map(|i| (z[i] - y[i]).powi(2)).sum::<f64>().sqrt();
    let mut acc = 0.0;
    let mut times = vec![0.0];
    let mut raw = vec![0.0];
    let mut dissociated = false;
    for k in 1..=steps {
        pefrl(m, &mut y, h);
        pefrl(m, &mut z, h);
        if exited(m, &y) || exited(m, &z) {
            dissociated = true;
            break;
        }
        let d = dist(&y, &z);
        if k % sample == 0 {
            times.push(k as f64 * opts.dt_fs);
            raw.push(acc + (d / opts.d0).ln());
        }
        if k % renorm == 0 {
            acc += (d / opts.d0).ln();
            let s = opts.d0 / d;
            for i in 0..4 {
                z[i] = y[i] + s * (z[i] - y[i]);
            }
        }
    }
    let width = ((opts.smoothing_fs / (sample as f64 * opts.dt_fs)).round() as usize).max(1);
    let smoothed = trailing_mean(&raw, width);
    let t_last = *times.last().unwrap();
    let lambda_t = if t_last > 0.0 { smoothed.last().unwrap() / t_last * 1000.0 } else { 0.0 };
    Ok(LyapunovTrace { times, raw, smoothed, d0: opts.d0, lambda_t, dissociated })
}

/// Per-cell finite-time exponents over the section.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IslandEstimate {
    pub energy: f64,
    pub threshold: f64,
    pub grid: usize,
    /// `(R1, P1, lambda_t)` for each allowed cell.
    pub cells: Vec<(f64, f64, f64)>,
    pub regular: usize,
    pub fraction: f64,
    /// Mean exponent over the cells classified chaotic.
    pub chaotic_mean: f64,
}

pub fn island_fraction(
    m: &ClassicalModel,
    e: f64,
    r2s: f64,
    grid: usize,
    threshold: f64,
    opts: &LyapunovOptions,
) -> Result<IslandEstimate> {
    let cells = section_grid(m, r2s, e, grid)?;
    let ftle: Vec<f64> = cells
        .par_iter()
        .map(|&(r1, p1)| {
            let seed = m.section_point(r1, p1, r2s, e).expect("allowed cell has a section point");
            lyapunov(m, seed, opts).map(|t| if t.dissociated { f64::INFINITY } else { t.lambda_t })
        })
        .collect::<Result<_>>()?;
    let regular = ftle.iter().filter(|&&l| l < threshold).count();
    let chaotic: Vec<f64> = ftle.iter().copied().filter(|&l| l >= threshold && l.is_finite()).collect();
    let chaotic_mean = if chaotic.is_empty() { f64::NAN } else { chaotic.iter().sum::<f64>() / chaotic.len() as f64 };
    Ok(IslandEstimate {
        energy: e,
        threshold,
        grid,
        fraction: regular as f64 / cells.len() as f64,
        regular,
        chaotic_mean,
        cells: cells.iter().zip(&ftle).map(|(&(r, p), &l)| (r, p, l)).collect(),
    })
}

/// Elliptic fixed point of the section map near `start`, found by
/// repeatedly replacing the launch point with the centroid of its section orbit.
pub fn island_center(
    m: &ClassicalModel,
    e: f64,
    r2s: f64,
    start: (f64, f64),
    rounds: usize,
    t_end_fs: f64,
    dt_fs: f64,
) -> Result<(f64, f64)> {
    let mut c = start;
    for _ in 0..rounds {
        let Some(seed) = m.section_point(c.0, c.1, r2s, e) else { break };
        let pts = section_crossings(m, seed, r2s, t_end_fs, dt_fs, 0);
        if pts.is_empty() {
            break;
        }
        let n = pts.len() as f64;
        let next = (pts.iter().map(|p| p.r1).sum::<f64>() / n, pts.iter().map(|p| p.p1).sum::<f64>() / n);
        if !m.section_allowed(next.0, next.1, r2s, e) {
            break;
        }
        let moved = ((next.0 - c.0).powi(2) + ((next.1 - c.1) / 10.0).powi(2)).sqrt();
        c = next;
        if moved < 1e-6 {
            break;
        }
    }
    if m.section_point(c.0, c.1, r2s, e).is_none() {
        return Err(IvrError::InvalidInput("island centre left the allowed region".into()));
    }
    Ok(c)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BondEnergyTrace {
    pub times: Vec<f64>,
    pub e_cs: Vec<f64>,
    pub e_co: Vec<f64>,
    pub remainder: Vec<f64>,
}

pub fn bond_energy_trace(m: &ClassicalModel, traj: &Trajectory) -> BondEnergyTrace {
    let mut out = BondEnergyTrace { times: vec![], e_cs: vec![], e_co: vec![], remainder: vec![] };
    for p in &traj.points {
        let (a, b, r) = m.bond_energies(p);
        out.times.push(p.t_fs);
        out.e_cs.push(a);
        out.e_co.push(b);
        out.remainder.push(r);
    }
    out
}

/// Point on the analytic Morse orbit of energy `e` at phase `theta`.
fn morse_orbit(p: &MorseParams, mu: f64, e: f64, theta: f64) -> (f64, f64) {
    let eps = e / p.depth;
    let s = eps.sqrt();
    let w = p.range * (2.0 * p.depth * (1.0 - eps) / mu).sqrt();
    let den = 1.0 - s * theta.cos();
    let r = p.r_eq + (den / (1.0 - eps)).ln() / p.range;
    let mom = mu / p.range * s * w * theta.sin() / den;
    (r, mom)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub tau_fs: f64,
    pub asymptote: f64,
    pub amplitude: f64,
    pub residual_rms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleDecay {
    pub energy: f64,
    pub n_traj: usize,
    pub dissociated: usize,
    pub times: Vec<f64>,
    pub mean_e_cs: Vec<f64>,
    pub fit: ExpFit,
}

/// CO on its zero-point Morse orbit (uniform phase), `(R1, P1)` drawn on
/// the full-H energy shell by thin-shell rejection.
pub fn sample_cs_excited(m: &ClassicalModel, e: f64, r2s: f64, n: usize, seed: u64) -> Result<Vec<PhasePoint>> {
    let s = &m.surface;
    let w = s.co.omega(m.bond_mass.1);
    let e_co = 0.5 * w - w * w / (16.0 * s.co.depth);
    let b = m.section_bounds(r2s, e)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut tries = 0usize;
    while out.len() < n {
        tries += 1;
        if tries > 10_000 * n.max(1) {
            return Err(IvrError::InvalidInput("could not sample the CS-excited shell".into()));
        }
        let (r2, p2) = morse_orbit(&s.co, m.bond_mass.1, e_co, rng.r#gen::<f64>() * 2.0 * PI);
        let r1 = b.r1_min - 0.3 + rng.r#gen::<f64>() * (b.r1_max - b.r1_min + 0.6);
        let p1 = (2.0 * rng.r#gen::<f64>() - 1.0) * 1.5 * b.p1_max;
        let y = PhasePoint { r1, r2, p1, p2, t_fs: 0.0 };
        if (m.energy(&y) - e).abs() > 1e-3 * e {
            continue;
        }
        let Some((lo, hi)) = m.shell_p1(r1, r2, p2, e) else { continue };
        let p1 = if (lo - p1).abs() < (hi - p1).abs() { lo } else { hi };
        out.push(PhasePoint { p1, ..y });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOptions {
    pub n_traj: usize,
    pub t_end_fs: f64,
    pub dt_fs: f64,
    /// Spacing of the averaged samples.
    pub sample_fs: f64,
    pub seed: u64,
}

pub fn ensemble_decay(m: &ClassicalModel, e: f64, r2s: f64, opts: &EnsembleOptions) -> Result<EnsembleDecay> {
    let n_traj = opts.n_traj;
    let starts = sample_cs_excited(m, e, r2s, n_traj, opts.seed)?;
    let every = ((opts.sample_fs / opts.dt_fs).round() as usize).max(1);
    let runs: Vec<Trajectory> = starts
        .par_iter()
        .map(|s| integrate(m, *s, opts.t_end_fs, opts.dt_fs, every))
        .collect::<Result<_>>()?;
    let kept: Vec<&Trajectory> = runs.iter().filter(|t| t.dissociated_at.is_none()).collect();
    if kept.is_empty() {
        return Err(IvrError::InvalidInput("every ensemble trajectory dissociated".into()));
    }
    let len = kept.iter().map(|t| t.points.len()).min().unwrap();
    let times: Vec<f64> = kept[0].points[..len].iter().map(|p| p.t_fs).collect();
    let mean_e_cs: Vec<f64> = (0..len)
        .map(|i| kept.iter().map(|t| m.bond_energies(&t.points[i]).0).sum::<f64>() / kept.len() as f64)
        .collect();
    let fit = fit_exponential(&times, &mean_e_cs)?;
    Ok(EnsembleDecay { energy: e, n_traj, dissociated: runs.len() - kept.len(), times, mean_e_cs, fit })
}

/// Least squares `y = y_inf + (y0 - y_inf) exp(-t/tau)` with `y0 = y[0]`.
pub fn fit_exponential(t: &[f64], y: &[f64]) -> Result<ExpFit> {
    if t.len() < 4 {
        return Err(IvrError::Fit("too few samples".into()));
    }
    let y0 = y[0];
    let inf_for = |tau: f64| {
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (&ti, &yi) in t.iter().zip(y) {
            let e = (-ti / tau).exp();
            let x = 1.0 - e;
            sxy += x * (yi - y0 * e);
            sxx += x * x;
        }
        sxy / sxx
    };
    let sse = |tau: f64| {
        let yi = inf_for(tau);
        t.iter()
            .zip(y)
            .map(|(&ti, &v)| (v - yi - (y0 - yi) * (-ti / tau).exp()).powi(2))
            .sum::<f64>()
    };
    let t_max = *t.last().unwrap();
    let n = 400;
    let (la, lb) = ((t[1] - t[0]).max(1e-3).ln(), (50.0 * t_max).ln());
    let grid: Vec<f64> = (0..=n).map(|i| (la + (lb - la) * i as f64 / n as f64).exp()).collect();
    let k = (0..=n).min_by(|&a, &b| sse(grid[a]).total_cmp(&sse(grid[b]))).unwrap();
    let (mut a, mut b) = (grid[k.saturating_sub(1)].ln(), grid[(k + 1).min(n)].ln());
    for _ in 0..200 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if sse(m1.exp()) < sse(m2.exp()) { b = m2 } else { a = m1 }
    }
    let tau = (0.5 * (a + b)).exp();
    let asym = inf_for(tau);
    Ok(ExpFit {
        tau_fs: tau,
        asymptote: asym,
        amplitude: y0 - asym,
        residual_rms: (sse(tau) / t.len() as f64).sqrt(),
    })
}
