//! Energy-dependent effective Hamiltonian on Q and the exact eigenstates it
//! generates, plus the dense direct-diagonalization route.

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{CouplingBlock, PartitionedBasis};
use crate::error::{IvrError, Result};
use crate::linalg;

/// Minimum allowed distance between a trial energy and a P-space pole.
pub const POLE_GUARD: f64 = 1e-12;
/// Half-width of the cell around each pole inside which roots are treated
/// as pinned to that pole.
pub const PIN_WIDTH: f64 = 1e-11;
pub const DEDUP_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct EffectiveHamiltonian {
    pub energy: f64,
    pub matrix: Mat<f64>,
}

fn nearest_pole(e: f64, poles: &[f64]) -> (f64, f64) {
    let k = poles.partition_point(|&p| p < e);
    let mut best = (f64::INFINITY, f64::NAN);
    for &p in &poles[k.saturating_sub(1)..(k + 1).min(poles.len())] {
        let d = (e - p).abs();
        if d < best.0 {
            best = (d, p);
        }
    }
    best
}

fn check_pole(e: f64, pb: &PartitionedBasis) -> Result<()> {
    let (d, p) = nearest_pole(e, &pb.e_beta_hat);
    if d < POLE_GUARD {
        return Err(IvrError::PoleProximity { energy: e, pole: p, distance: d });
    }
    Ok(())
}

/// `Delta(E) = sum_beta V(.|beta) V(beta|.) / (E - Ehat_beta)`.
pub fn level_shift(e: f64, pb: &PartitionedBasis, v: &CouplingBlock) -> Result<Mat<f64>> {
    check_pole(e, pb)?;
    Ok(shift_unchecked(e, pb, v, None))
}

fn shift_unchecked(e: f64, pb: &PartitionedBasis, v: &CouplingBlock, skip: Option<usize>) -> Mat<f64> {
    let w: Vec<f64> = pb
        .e_beta_hat
        .iter()
        .enumerate()
        .map(|(b, &eb)| if Some(b) == skip { 0.0 } else { 1.0 / (e - eb) })
        .collect();
    let scaled = Mat::from_fn(v.v.nrows(), v.v.ncols(), |i, b| v.v[(i, b)] * w[b]);
    let mut d = &scaled * v.v.transpose();
    let n = d.nrows();
    for i in 0..n {
        for j in 0..i {
            let a = 0.5 * (d[(i, j)] + d[(j, i)]);
            d[(i, j)] = a;
            d[(j, i)] = a;
        }
    }
    d
}

pub fn effective_hamiltonian(e: f64, pb: &PartitionedBasis, v: &CouplingBlock) -> Result<EffectiveHamiltonian> {
    let delta = level_shift(e, pb, v)?;
    Ok(EffectiveHamiltonian { energy: e, matrix: &pb.q_block + &delta })
}

/// Contribution of one P state to the decay matrix, `2 pi V(.|beta) V(beta|.)`.
/// Diagnostic only: in a bound finite basis the widths never enter the dynamics.
pub fn width_matrix(v: &CouplingBlock, beta: usize) -> Mat<f64> {
    let c = v.column(beta);
    Mat::from_fn(c.len(), c.len(), |i, j| 2.0 * std::f64::consts::PI * c[i] * c[j])
}

/// Number of exact eigenvalues below `e`: poles below `e` plus eigenvalues of
/// `H_eff(e)` below `e` (inertia of the Schur complement).
pub fn inertia_count(e: f64, pb: &PartitionedBasis, v: &CouplingBlock) -> Result<usize> {
    let h = effective_hamiltonian(e, pb, v)?;
    let w = linalg::sym_eigenvalues(&h.matrix)?;
    let poles = pb.e_beta_hat.partition_point(|&p| p < e);
    Ok(poles + w.iter().filter(|&&l| l < e).count())
}

/// `|C|^2 = 1 / (1 + sum_beta (D . V_beta)^2 / (E - Ehat_beta)^2)`.
pub fn q_weight(e: f64, d: &[f64], pb: &PartitionedBasis, v: &CouplingBlock) -> f64 {
    let dm = Mat::from_fn(d.len(), 1, |i, _| d[i]);
    let proj = v.v.transpose() * &dm;
    let mut s = 0.0;
    for (b, &eb) in pb.e_beta_hat.iter().enumerate() {
        let x = proj[(b, 0)] / (e - eb);
        s += x * x;
    }
    1.0 / (1.0 + s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// Eigenvalue of `H_eff(E_i)` nearest the current trial energy.
    Nearest,
    /// The eigenvalue with this ascending index.
    FixedIndex(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Relaxation {
    /// `E <- lambda`.
    Plain,
    /// `E <- lambda`, averaging successive trial energies once a 2-cycle appears.
    Halving,
    /// `E <- E + |C|^2 (lambda - E)`: Newton's method on `lambda(E) - E`.
    #[default]
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RootOptions {
    pub tolerance: f64,
    pub max_iter: usize,
    pub relaxation: Relaxation,
}

impl Default for RootOptions {
    fn default() -> Self {
        RootOptions { tolerance: 1e-12, max_iter: 200, relaxation: Relaxation::Newton }
    }
}

#[derive(Debug, Clone)]
pub struct Root {
    pub energy: f64,
    /// Unit eigenvector of `H_eff(energy)` (sign: largest component positive).
    pub d: Vec<f64>,
    pub c_abs: f64,
    pub iterations: usize,
    /// Fixed-point residual `||(E - H_eff(E)) D||`.
    pub residual: f64,
}

fn fix_sign(d: &mut [f64]) {
    let k = (0..d.len())
        .max_by(|&a, &b| d[a].abs().total_cmp(&d[b].abs()))
        .unwrap_or(0);
    if d.get(k).is_some_and(|&x| x < 0.0) {
        d.iter_mut().for_each(|x| *x = -*x);
    }
}

struct Branch {
    lambda: f64,
    d: Vec<f64>,
    c2: f64,
}

fn branch(e: f64, pb: &PartitionedBasis, v: &CouplingBlock, sel: Selection) -> Result<Branch> {
    let h = effective_hamiltonian(e, pb, v)?;
    let (w, u) = linalg::sym_eigen(&h.matrix)?;
    let j = match sel {
        Selection::FixedIndex(j) => {
            if j >= w.len() {
                return Err(IvrError::InvalidInput(format!("branch index {j} out of range {}", w.len())));
            }
            j
        }
        Selection::Nearest => (0..w.len())
            .min_by(|&a, &b| (w[a] - e).abs().total_cmp(&(w[b] - e).abs()))
            .unwrap_or(0),
    };
    let mut d = linalg::col(&u, j);
    fix_sign(&mut d);
    let c2 = q_weight(e, &d, pb, v);
    Ok(Branch { lambda: w[j], d, c2 })
}

/// Iterate `E -> eig(H_eff(E))` from `seed` to a self-consistent root.
pub fn self_consistent_root(
    pb: &PartitionedBasis,
    v: &CouplingBlock,
    seed: f64,
    selection: Selection,
    opts: &RootOptions,
) -> Result<Root> {
    let mut e = seed;
    let mut prev_step = 0.0f64;
    let mut cycling = false;
    for it in 1..=opts.max_iter {
        let b = branch(e, pb, v, selection)?;
        let f = b.lambda - e;
        let next = match opts.relaxation {
            Relaxation::Plain => b.lambda,
            Relaxation::Halving => {
                if it > 1 && f * prev_step < 0.0 {
                    cycling = true;
                }
                if cycling { e + 0.5 * f } else { b.lambda }
            }
            Relaxation::Newton => e + b.c2 * f,
        };
        let step = next - e;
        prev_step = f;
        if step.abs() < opts.tolerance {
            let fin = branch(next, pb, v, selection)?;
            return Ok(Root {
                energy: next,
                residual: (fin.lambda - next).abs(),
                c_abs: fin.c2.sqrt(),
                d: fin.d,
                iterations: it,
            });
        }
        e = next;
    }
    Err(IvrError::NoConvergence { iterations: opts.max_iter, last_step: prev_step.abs() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RootKind {
    /// Converged self-consistent iteration.
    Iterated,
    /// Root within the pin width of a weakly coupled P pole.
    PolePinned,
    /// Read from a dense diagonalization.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootProvenance {
    pub kind: RootKind,
    pub iterations: usize,
    /// Implied energy error `|C|^2 |lambda(E) - E|` (hartree).
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    Feshbach,
    Direct,
}

/// Exact eigenvalues with their Q-space overlaps.
#[derive(Debug, Clone)]
pub struct ResonanceSet {
    pub solver: Solver,
    pub energies: Vec<f64>,
    /// `a[(kappa, gamma)] = <kappa|gamma>`.
    pub a: Mat<f64>,
    pub c_abs: Vec<f64>,
    pub provenance: Vec<RootProvenance>,
}

impl ResonanceSet {
    pub fn n_q(&self) -> usize {
        self.a.nrows()
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    /// `max |sum_gamma a a* - delta|` over the Q block.
    pub fn completeness_error(&self) -> f64 {
        let g = &self.a * self.a.transpose();
        let mut m = 0.0f64;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let t = if i == j { 1.0 } else { 0.0 };
                m = m.max((g[(i, j)] - t).abs());
            }
        }
        m
    }

    pub fn to_file(&self) -> ResonanceSetFile {
        ResonanceSetFile {
            solver: self.solver,
            energies: self.energies.clone(),
            c_abs: self.c_abs.clone(),
            provenance: self.provenance.clone(),
            overlaps: linalg::to_rows(&self.a),
        }
    }

    pub fn from_file(f: &ResonanceSetFile) -> Result<Self> {
        let a = linalg::from_rows(&f.overlaps)?;
        let n = f.energies.len();
        if a.ncols() != n || f.c_abs.len() != n || f.provenance.len() != n {
            return Err(IvrError::Serde("resonance set fields disagree in length".into()));
        }
        Ok(ResonanceSet {
            solver: f.solver,
            energies: f.energies.clone(),
            a,
            c_abs: f.c_abs.clone(),
            provenance: f.provenance.clone(),
        })
    }
}

/// Serialized [`ResonanceSet`]; `overlaps` is row-major over the Q states.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResonanceSetFile {
    pub solver: Solver,
    pub energies: Vec<f64>,
    pub c_abs: Vec<f64>,
    pub provenance: Vec<RootProvenance>,
    pub overlaps: Vec<Vec<f64>>,
}

struct Found {
    energy: f64,
    a: Vec<f64>,
    c2: f64,
    prov: RootProvenance,
}

/// One root known to lie in the pole-free interval `(lo, hi)`.
fn refine_leaf(pb: &PartitionedBasis, v: &CouplingBlock, lo: f64, hi: f64, opts: &RootOptions) -> Result<Found> {
    let j = {
        let h = effective_hamiltonian(lo, pb, v)?;
        linalg::sym_eigenvalues(&h.matrix)?.iter().filter(|&&l| l < lo).count()
    };
    let sel = Selection::FixedIndex(j);
    let (mut a, mut b) = (lo, hi);
    let mut e = 0.5 * (lo + hi);
    for it in 1..=opts.max_iter {
        let br = branch(e, pb, v, sel)?;
        let f = br.lambda - e;
        let step = br.c2 * f;
        let mut next = e + step;
        let converged = step.abs() < opts.tolerance;
        if !converged {
            if f > 0.0 { a = e } else { b = e }
            if !(next > a && next < b) {
                next = 0.5 * (a + b);
            }
        }
        if converged || (b - a) < opts.tolerance {
            let fin = branch(next, pb, v, sel)?;
            let c = fin.c2.sqrt();
            return Ok(Found {
                energy: next,
                a: fin.d.iter().map(|x| c * x).collect(),
                c2: fin.c2,
                prov: RootProvenance {
                    kind: RootKind::Iterated,
                    iterations: it,
                    residual: fin.c2 * (fin.lambda - next).abs(),
                },
            });
        }
        e = next;
    }
    Err(IvrError::NoConvergence { iterations: opts.max_iter, last_step: b - a })
}

/// Root attached to pole `beta`: iterate `E = Ehat + v^T (E - H'_eff(E))^-1 v`
/// from `start`, where `H'_eff` omits the pole itself. Well conditioned when
/// the root sits much closer to the pole than to any eigenvalue of `H'_eff`.
fn pole_root(pb: &PartitionedBasis, v: &CouplingBlock, beta: usize, start: f64) -> Result<Found> {
    let pole = pb.e_beta_hat[beta];
    let vb = v.column(beta);
    let n = vb.len();
    let mut e = start;
    let mut x = vec![0.0; n];
    let mut iterations = 0;
    for it in 1..=8 {
        iterations = it;
        let hp = &pb.q_block + &shift_unchecked(e, pb, v, Some(beta));
        let m = Mat::from_fn(n, n, |i, j| if i == j { e - hp[(i, j)] } else { -hp[(i, j)] });
        x = linalg::solve(&m, &vb);
        let next = pole + linalg::dot(&vb, &x);
        let done = (next - e).abs() < 1e-15;
        e = next;
        if done {
            break;
        }
    }
    // Norm of the full eigenvector with unit weight on |beta>.
    let xm = Mat::from_fn(n, 1, |i, _| x[i]);
    let proj = v.v.transpose() * &xm;
    let mut norm2 = 1.0 + linalg::dot(&x, &x);
    for (b, &eb) in pb.e_beta_hat.iter().enumerate() {
        if b != beta {
            let y = proj[(b, 0)] / (e - eb);
            norm2 += y * y;
        }
    }
    let scale = 1.0 / norm2.sqrt();
    let mut a: Vec<f64> = x.iter().map(|t| t * scale).collect();
    let c2 = linalg::dot(&a, &a);
    fix_sign(&mut a);
    Ok(Found { energy: e, a, c2, prov: RootProvenance { kind: RootKind::PolePinned, iterations, residual: 0.0 } })
}

/// Distance from a pole below which iterated roots get their overlaps
/// recomputed through [`pole_root`].
const POLISH_WIDTH: f64 = 1e-8;

fn polish(pb: &PartitionedBasis, v: &CouplingBlock, root: Found) -> Result<Found> {
    let k = pb.e_beta_hat.partition_point(|&p| p < root.energy);
    let beta = [k.wrapping_sub(1), k]
        .into_iter()
        .filter(|&b| b < pb.n_p())
        .min_by(|&x, &y| {
            (root.energy - pb.e_beta_hat[x]).abs().total_cmp(&(root.energy - pb.e_beta_hat[y]).abs())
        });
    let Some(beta) = beta else { return Ok(root) };
    if (root.energy - pb.e_beta_hat[beta]).abs() > POLISH_WIDTH {
        return Ok(root);
    }
    let p = pole_root(pb, v, beta, root.energy)?;
    if (p.energy - root.energy).abs() > 1e-12 {
        return Ok(root);
    }
    Ok(Found { a: p.a, c2: p.c2, ..root })
}

enum Cell {
    Open(f64, f64, usize),
    Pole(Vec<usize>, usize),
}

/// Locate all `N_T` exact eigenvalues through the effective Hamiltonian.
pub fn find_all_resonances(pb: &PartitionedBasis, v: &CouplingBlock, opts: &RootOptions) -> Result<ResonanceSet> {
    let n_total = pb.n_total();
    let poles = &pb.e_beta_hat;
    let qmin = linalg::sym_eigenvalues(&pb.q_block)?;
    let bound = linalg::frobenius(&v.v) + 1e-6;
    let lo = qmin.first().copied().unwrap_or(0.0).min(poles.first().copied().unwrap_or(f64::INFINITY)) - bound;
    let hi = qmin.last().copied().unwrap_or(0.0).max(poles.last().copied().unwrap_or(f64::NEG_INFINITY)) + bound;

    // Group poles closer than twice the pin width into shared cells.
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (b, &p) in poles.iter().enumerate() {
        match groups.last_mut() {
            Some(g) if p - poles[*g.last().unwrap()] < 2.0 * PIN_WIDTH => g.push(b),
            _ => groups.push(vec![b]),
        }
    }
    let mut samples = vec![lo];
    for g in &groups {
        samples.push(poles[g[0]] - PIN_WIDTH);
        samples.push(poles[*g.last().unwrap()] + PIN_WIDTH);
    }
    samples.push(hi);
    let counts: Vec<usize> = samples
        .par_iter()
        .map(|&x| inertia_count(x, pb, v))
        .collect::<Result<_>>()?;
    if counts[0] != 0 || *counts.last().unwrap() != n_total {
        return Err(IvrError::IncompleteSpectrum { found: counts.last().unwrap() - counts[0], expected: n_total });
    }

    let mut cells = Vec::new();
    for k in 0..samples.len() - 1 {
        let (c0, c1) = (counts[k], counts[k + 1]);
        if c1 < c0 {
            return Err(IvrError::Eigensolver(format!("inertia count decreased at {}", samples[k + 1])));
        }
        if c1 == c0 {
            continue;
        }
        if k % 2 == 0 {
            cells.push(Cell::Open(samples[k], samples[k + 1], c1 - c0));
        } else {
            cells.push(Cell::Pole(groups[k / 2].clone(), c1 - c0));
        }
    }

    // Split multi-root open intervals until each holds one root.
    let mut leaves: Vec<(f64, f64)> = Vec::new();
    let mut pinned: Vec<usize> = Vec::new();
    for cell in cells {
        match cell {
            Cell::Open(a, b, k) => {
                let mut stack = vec![(a, b, k)];
                let mut local = Vec::new();
                while let Some((a, b, k)) = stack.pop() {
                    if k == 1 {
                        local.push((a, b));
                        continue;
                    }
                    let m = 0.5 * (a + b);
                    if b - a < 1e-14 {
                        return Err(IvrError::IncompleteSpectrum { found: n_total - k + 1, expected: n_total });
                    }
                    let ca = inertia_count(a, pb, v)?;
                    let cm = inertia_count(m, pb, v)? - ca;
                    if cm > 0 {
                        stack.push((a, m, cm));
                    }
                    if k > cm {
                        stack.push((m, b, k - cm));
                    }
                }
                leaves.extend(local);
            }
            Cell::Pole(group, k) => {
                if k > group.len() {
                    return Err(IvrError::IncompleteSpectrum { found: n_total - k + group.len(), expected: n_total });
                }
                // The k roots belong to the k most strongly coupled poles of the cell.
                let mut g = group.clone();
                g.sort_by(|&x, &y| {
                    let nx = linalg::norm(&v.column(x));
                    let ny = linalg::norm(&v.column(y));
                    ny.total_cmp(&nx)
                });
                pinned.extend(g.iter().take(k));
            }
        }
    }

    let mut roots: Vec<Found> = leaves
        .par_iter()
        .map(|&(a, b)| refine_leaf(pb, v, a, b, opts).and_then(|r| polish(pb, v, r)))
        .collect::<Result<_>>()?;
    let pinned_roots: Vec<Found> = pinned
        .par_iter()
        .map(|&b| pole_root(pb, v, b, pb.e_beta_hat[b]))
        .collect::<Result<_>>()?;
    roots.extend(pinned_roots);
    roots.sort_by(|x, y| x.energy.total_cmp(&y.energy));
    let distinct = 1 + roots.windows(2).filter(|w| w[1].energy - w[0].energy > DEDUP_TOL).count();
    if roots.is_empty() || distinct != n_total {
        return Err(IvrError::IncompleteSpectrum { found: if roots.is_empty() { 0 } else { distinct }, expected: n_total });
    }

    let nq = pb.n_q();
    let a = Mat::from_fn(nq, n_total, |k, g| roots[g].a[k]);
    Ok(ResonanceSet {
        solver: Solver::Feshbach,
        energies: roots.iter().map(|r| r.energy).collect(),
        a,
        c_abs: roots.iter().map(|r| r.c2.sqrt()).collect(),
        provenance: roots.iter().map(|r| r.prov).collect(),
    })
}

/// Eigenpairs of the full product-basis Hamiltonian.
#[derive(Debug, Clone)]
pub struct DirectSpectrum {
    pub energies: Vec<f64>,
    /// Columns: eigenvectors in the product basis.
    pub vectors: Mat<f64>,
}

pub fn direct_spectrum(h: &Mat<f64>) -> Result<DirectSpectrum> {
    let (energies, vectors) = linalg::sym_eigen(h)?;
    Ok(DirectSpectrum { energies, vectors })
}

pub fn direct_resonances(pb: &PartitionedBasis, spec: &DirectSpectrum) -> ResonanceSet {
    let n = spec.energies.len();
    let prod = Mat::from_fn(pb.n_q(), n, |q, g| spec.vectors[(pb.q_global[q], g)]);
    let a = pb.u_q.transpose() * &prod;
    let c_abs = (0..n)
        .map(|g| (0..a.nrows()).map(|k| a[(k, g)] * a[(k, g)]).sum::<f64>().sqrt())
        .collect();
    ResonanceSet {
        solver: Solver::Direct,
        energies: spec.energies.clone(),
        a,
        c_abs,
        provenance: vec![RootProvenance { kind: RootKind::Direct, iterations: 0, residual: 0.0 }; n],
    }
}

/// Rebuild product-basis eigenvectors from a Feshbach resonance set: the
/// Q part is `a`, the P part follows from `(E - Ehat_beta) y_beta = V(beta|.) a`.
pub fn reconstruct_eigenvectors(pb: &PartitionedBasis, v: &CouplingBlock, res: &ResonanceSet) -> Mat<f64> {
    let n = res.len();
    let np = pb.n_p();
    let proj = v.v.transpose() * &res.a;
    let mut y = Mat::<f64>::zeros(np, n);
    for g in 0..n {
        let e = res.energies[g];
        let mut norm2: f64 = (0..pb.n_q()).map(|k| res.a[(k, g)].powi(2)).sum();
        let mut pinned = None;
        for b in 0..np {
            let gap = e - pb.e_beta_hat[b];
            if res.provenance[g].kind == RootKind::PolePinned && gap.abs() < PIN_WIDTH {
                pinned = Some(b);
                continue;
            }
            let t = proj[(b, g)] / gap;
            y[(b, g)] = t;
            norm2 += t * t;
        }
        if let Some(b) = pinned {
            y[(b, g)] = (1.0 - norm2).max(0.0).sqrt();
        }
    }
    let qpart = &pb.u_q * &res.a;
    let ppart = &pb.u_p * &y;
    let dim = pb.n_total();
    let mut out = Mat::<f64>::zeros(dim, n);
    for g in 0..n {
        for (q, &row) in pb.q_global.iter().enumerate() {
            out[(row, g)] = qpart[(q, g)];
        }
        for (p, &row) in pb.p_global.iter().enumerate() {
            out[(row, g)] = ppart[(p, g)];
        }
        let nrm: f64 = (0..dim).map(|i| out[(i, g)].powi(2)).sum::<f64>().sqrt();
        for i in 0..dim {
            out[(i, g)] /= nrm;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::tests::small_system;
    use crate::basis::{Couplings, QBasis, QSpace, build_partition, coupling_elements};

    fn setup(c: Couplings, qb: QBasis) -> (Mat<f64>, PartitionedBasis, CouplingBlock) {
        let sys = small_system(c);
        let h = sys.full_hamiltonian();
        let pb = build_partition(&sys, &h, QSpace::CsBond, qb).unwrap();
        let v = coupling_elements(&pb, &sys);
        (h, pb, v)
    }

    #[test]
    fn decoupled_limit() {
        let (_, pb, v) = setup(Couplings::Off, QBasis::Product);
        let e = 0.3;
        let h = effective_hamiltonian(e, &pb, &v).unwrap();
        assert!(linalg::max_abs_diff(&h.matrix, &pb.q_block) == 0.0);
        let r = self_consistent_root(&pb, &v, pb.e_kappa[2], Selection::Nearest, &RootOptions::default()).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.energy, pb.e_kappa[2]);
    }

    #[test]
    fn pole_guard() {
        let (_, pb, v) = setup(Couplings::Exact, QBasis::Product);
        let e = pb.e_beta_hat[3];
        assert!(matches!(effective_hamiltonian(e, &pb, &v), Err(IvrError::PoleProximity { .. })));
    }

    #[test]
    fn feshbach_matches_direct() {
        for qb in [QBasis::Product, QBasis::Diagonalized] {
            let (h, pb, v) = setup(Couplings::Exact, qb);
            let spec = direct_spectrum(&h).unwrap();
            let direct = direct_resonances(&pb, &spec);
            let fesh = find_all_resonances(&pb, &v, &RootOptions::default()).unwrap();
            assert_eq!(fesh.len(), direct.len());
            for g in 0..fesh.len() {
                assert!((fesh.energies[g] - direct.energies[g]).abs() < 1e-9);
                assert!((fesh.c_abs[g] - direct.c_abs[g]).abs() < 1e-8);
                for k in 0..fesh.n_q() {
                    assert!((fesh.a[(k, g)].abs() - direct.a[(k, g)].abs()).abs() < 1e-8);
                }
            }
            assert!(fesh.completeness_error() < 1e-6);
            assert!(direct.completeness_error() < 1e-10);
        }
    }

    #[test]
    fn reconstruction_matches_direct_vectors() {
        let (h, pb, v) = setup(Couplings::Exact, QBasis::Product);
        let spec = direct_spectrum(&h).unwrap();
        let fesh = find_all_resonances(&pb, &v, &RootOptions::default()).unwrap();
        let x = reconstruct_eigenvectors(&pb, &v, &fesh);
        for g in 0..fesh.len() {
            let ov: f64 = (0..h.nrows()).map(|i| x[(i, g)] * spec.vectors[(i, g)]).sum();
            assert!((ov.abs() - 1.0).abs() < 1e-8, "state {g}: overlap {ov}");
        }
    }

    #[test]
    fn iteration_reaches_direct_eigenvalue() {
        let (h, pb, v) = setup(Couplings::Exact, QBasis::Product);
        let spec = direct_spectrum(&h).unwrap();
        let top = *pb.e_kappa.last().unwrap();
        let r = self_consistent_root(&pb, &v, top, Selection::Nearest, &RootOptions::default()).unwrap();
        let best = spec.energies.iter().map(|e| (e - r.energy).abs()).fold(f64::INFINITY, f64::min);
        assert!(best < 1e-9);
        assert!(r.c_abs > 0.0 && r.c_abs <= 1.0);
    }
}
