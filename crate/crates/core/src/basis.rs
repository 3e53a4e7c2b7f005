//! Two-mode product basis, Q/P partition and the coupled Hamiltonian.

use std::collections::BTreeMap;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::dvr::BondEigenbasis;
use crate::error::{IvrError, Result};
use crate::linalg;
use crate::model::{MassConvention, SurfaceModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProductIndex {
    /// C-S quantum number.
    pub m: usize,
    /// C-O quantum number.
    pub n: usize,
}

/// Which terms of the intermode coupling enter the Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Couplings {
    /// V3 + offset, the -P1 P2 / m_C term and the diagonal p^2 corrections
    /// that turn the zeroth-order masses into the full-KE masses.
    #[default]
    Exact,
    /// V3 + offset and the P1 P2 term only.
    PaperLiteral,
    /// No coupling: H is the zeroth-order sum.
    Off,
}

/// Which product states form the initially excited Q space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum QSpace {
    /// Excitation only in the C-S bond: {(m, 0)}.
    #[default]
    CsBond,
    /// Excitation only in the C-O bond: {(0, n)}.
    CoBond,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum QBasis {
    /// Pure product states; QHQ off-diagonals stay in the effective Hamiltonian.
    #[default]
    Product,
    /// QHQ eigenstates.
    Diagonalized,
}

/// Bond eigenbases plus the one-mode operators needed for the coupling.
#[derive(Debug, Clone)]
pub struct ProductSystem {
    pub cs: BondEigenbasis,
    pub co: BondEigenbasis,
    pub surface: SurfaceModel,
    pub masses: MassConvention,
    pub couplings: Couplings,
    d_cs: Mat<f64>,
    d_co: Mat<f64>,
    p2_cs: Mat<f64>,
    p2_co: Mat<f64>,
}

impl ProductSystem {
    pub fn new(
        cs: BondEigenbasis,
        co: BondEigenbasis,
        surface: SurfaceModel,
        masses: MassConvention,
        couplings: Couplings,
    ) -> Self {
        let d_cs = cs.derivative_matrix();
        let d_co = co.derivative_matrix();
        let p2_cs = cs.momentum_squared_matrix();
        let p2_co = co.momentum_squared_matrix();
        ProductSystem { cs, co, surface, masses, couplings, d_cs, d_co, p2_cs, p2_co }
    }

    pub fn n_cs(&self) -> usize {
        self.cs.n_bound()
    }

    pub fn n_co(&self) -> usize {
        self.co.n_bound()
    }

    pub fn dim(&self) -> usize {
        self.n_cs() * self.n_co()
    }

    pub fn index(&self, p: ProductIndex) -> usize {
        p.m * self.n_co() + p.n
    }

    pub fn product(&self, g: usize) -> ProductIndex {
        ProductIndex { m: g / self.n_co(), n: g % self.n_co() }
    }

    pub fn zeroth_energy(&self, p: ProductIndex) -> f64 {
        self.cs.energies[p.m] + self.co.energies[p.n]
    }

    /// `(k1, k2)` with `k_i = (1/mu_full - 1/mu_zero) / 2`.
    pub fn kinetic_corrections(&self) -> (f64, f64) {
        match self.couplings {
            Couplings::Exact => (
                0.5 * (1.0 / self.masses.full_1 - 1.0 / self.masses.zero_cs),
                0.5 * (1.0 / self.masses.full_2 - 1.0 / self.masses.zero_co),
            ),
            _ => (0.0, 0.0),
        }
    }

    fn has_static(&self) -> bool {
        self.couplings != Couplings::Off
    }

    fn cross(&self) -> f64 {
        if self.has_static() { 1.0 / self.masses.cross } else { 0.0 }
    }

    /// `V3(R1 + R2) + offset` on the product grid, row = CS point.
    fn coupling_grid(&self) -> Mat<f64> {
        let x = self.cs.grid.points();
        let y = self.co.grid.points();
        Mat::from_fn(x.len(), y.len(), |i, j| self.surface.coupling(x[i] + y[j]))
    }

    /// Full Hamiltonian in the product basis, assembled with dense products.
    pub fn full_hamiltonian(&self) -> Mat<f64> {
        let (n1, n2) = (self.n_cs(), self.n_co());
        let dim = n1 * n2;
        let mut h = Mat::<f64>::zeros(dim, dim);
        for g in 0..dim {
            h[(g, g)] = self.zeroth_energy(self.product(g));
        }
        if self.has_static() {
            let vg = self.coupling_grid();
            let u1 = &self.cs.vectors;
            let u2 = &self.co.vectors;
            let npts = vg.nrows();
            // a[i, (n, n')] = sum_j U2[j,n] U2[j,n'] V(x_i + y_j)
            let mut a = Mat::<f64>::zeros(npts, n2 * n2);
            let mut scaled = u2.clone();
            for i in 0..npts {
                for n in 0..n2 {
                    for j in 0..u2.nrows() {
                        scaled[(j, n)] = u2[(j, n)] * vg[(i, j)];
                    }
                }
                let b = u2.transpose() * &scaled;
                for n in 0..n2 {
                    for np in 0..n2 {
                        a[(i, n * n2 + np)] = b[(n, np)];
                    }
                }
            }
            // w[(m, m'), i] = U1[i,m] U1[i,m']
            let w = Mat::from_fn(n1 * n1, npts, |r, i| u1[(i, r / n1)] * u1[(i, r % n1)]);
            let hv = &w * &a;
            for m in 0..n1 {
                for mp in 0..n1 {
                    for n in 0..n2 {
                        for np in 0..n2 {
                            h[(m * n2 + n, mp * n2 + np)] += hv[(m * n1 + mp, n * n2 + np)];
                        }
                    }
                }
            }
            let c = self.cross();
            let (k1, k2) = self.kinetic_corrections();
            for m in 0..n1 {
                for mp in 0..n1 {
                    for n in 0..n2 {
                        for np in 0..n2 {
                            let mut t = c * self.d_cs[(m, mp)] * self.d_co[(n, np)];
                            if n == np {
                                t += k1 * self.p2_cs[(m, mp)];
                            }
                            if m == mp {
                                t += k2 * self.p2_co[(n, np)];
                            }
                            h[(m * n2 + n, mp * n2 + np)] += t;
                        }
                    }
                }
            }
        }
        symmetrize(&mut h);
        h
    }

    /// Selected matrix elements `<row|H|col>`, each evaluated by its own
    /// grid quadrature (independent of [`Self::full_hamiltonian`]).
    pub fn matrix_elements(&self, rows: &[ProductIndex], cols: &[ProductIndex]) -> Mat<f64> {
        let u1 = &self.cs.vectors;
        let u2 = &self.co.vectors;
        let npts = u1.nrows();
        let static_on = self.has_static();
        // r[n][i, n'] = sum_j U2[j,n] U2[j,n'] V(x_i + y_j) for each row n needed.
        let mut partial: BTreeMap<usize, Mat<f64>> = BTreeMap::new();
        if static_on {
            let vg = self.coupling_grid();
            for r in rows {
                partial.entry(r.n).or_insert_with(|| {
                    let weighted = Mat::from_fn(npts, u2.nrows(), |i, j| vg[(i, j)] * u2[(j, r.n)]);
                    &weighted * u2
                });
            }
        }
        let c = self.cross();
        let (k1, k2) = self.kinetic_corrections();
        Mat::from_fn(rows.len(), cols.len(), |a, b| {
            let (r, q) = (rows[a], cols[b]);
            let mut h = if r == q { self.zeroth_energy(r) } else { 0.0 };
            if static_on {
                let pn = &partial[&r.n];
                let mut s = 0.0;
                for i in 0..npts {
                    s += u1[(i, r.m)] * u1[(i, q.m)] * pn[(i, q.n)];
                }
                h += s;
                h += c * self.d_cs[(r.m, q.m)] * self.d_co[(r.n, q.n)];
                if r.n == q.n {
                    h += k1 * self.p2_cs[(r.m, q.m)];
                }
                if r.m == q.m {
                    h += k2 * self.p2_co[(r.n, q.n)];
                }
            }
            h
        })
    }
}

fn symmetrize(h: &mut Mat<f64>) {
    let n = h.nrows();
    for i in 0..n {
        for j in 0..i {
            let a = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = a;
            h[(j, i)] = a;
        }
    }
}

fn submatrix(h: &Mat<f64>, rows: &[usize], cols: &[usize]) -> Mat<f64> {
    Mat::from_fn(rows.len(), cols.len(), |i, j| h[(rows[i], cols[j])])
}

/// Q/P partition of the product basis with the PHP (and optionally QHQ)
/// eigenbases.
#[derive(Debug, Clone)]
pub struct PartitionedBasis {
    pub q_space: QSpace,
    pub q_basis: QBasis,
    pub q_indices: Vec<ProductIndex>,
    pub p_indices: Vec<ProductIndex>,
    /// Global product-basis positions of the Q and P states.
    pub q_global: Vec<usize>,
    pub p_global: Vec<usize>,
    /// Zeroth-order energies of the Q states (QHQ eigenvalues when diagonalized).
    pub e_kappa: Vec<f64>,
    /// QHQ in the chosen Q basis (diagonal when diagonalized).
    pub q_block: Mat<f64>,
    /// Rotation from product Q states to the Q basis (identity for `Product`).
    pub u_q: Mat<f64>,
    /// PHP eigenvalues, ascending.
    pub e_beta_hat: Vec<f64>,
    /// Columns: PHP eigenvectors in the product P basis.
    pub u_p: Mat<f64>,
}

impl PartitionedBasis {
    pub fn n_q(&self) -> usize {
        self.q_indices.len()
    }

    pub fn n_p(&self) -> usize {
        self.p_indices.len()
    }

    pub fn n_total(&self) -> usize {
        self.n_q() + self.n_p()
    }
}

pub fn partition_indices(sys: &ProductSystem, q_space: QSpace) -> (Vec<ProductIndex>, Vec<ProductIndex>) {
    let mut q = Vec::new();
    let mut p = Vec::new();
    for g in 0..sys.dim() {
        let idx = sys.product(g);
        let in_q = match q_space {
            QSpace::CsBond => idx.n == 0,
            QSpace::CoBond => idx.m == 0,
        };
        if in_q { q.push(idx) } else { p.push(idx) }
    }
    (q, p)
}

/// Partition `h` (the full product-basis Hamiltonian of `sys`) and diagonalize PHP.
pub fn build_partition(
    sys: &ProductSystem,
    h: &Mat<f64>,
    q_space: QSpace,
    q_basis: QBasis,
) -> Result<PartitionedBasis> {
    if h.nrows() != sys.dim() || h.ncols() != sys.dim() {
        return Err(IvrError::InvalidInput(format!(
            "Hamiltonian is {}x{}, product basis has {} states",
            h.nrows(),
            h.ncols(),
            sys.dim()
        )));
    }
    let (q_indices, p_indices) = partition_indices(sys, q_space);
    let q_global: Vec<usize> = q_indices.iter().map(|&i| sys.index(i)).collect();
    let p_global: Vec<usize> = p_indices.iter().map(|&i| sys.index(i)).collect();
    let php = submatrix(h, &p_global, &p_global);
    let (e_beta_hat, u_p) = linalg::sym_eigen(&php)?;
    let qhq = submatrix(h, &q_global, &q_global);
    let nq = q_indices.len();
    let (e_kappa, q_block, u_q) = match q_basis {
        QBasis::Product => (
            q_indices.iter().map(|&i| sys.zeroth_energy(i)).collect(),
            qhq,
            Mat::<f64>::identity(nq, nq),
        ),
        QBasis::Diagonalized => {
            let (w, u) = linalg::sym_eigen(&qhq)?;
            let d = Mat::from_fn(nq, nq, |i, j| if i == j { w[i] } else { 0.0 });
            (w, d, u)
        }
    };
    Ok(PartitionedBasis {
        q_space,
        q_basis,
        q_indices,
        p_indices,
        q_global,
        p_global,
        e_kappa,
        q_block,
        u_q,
        e_beta_hat,
        u_p,
    })
}

/// `V(kappa|beta) = <kappa|QHP|beta>` in the Q basis and PHP eigenbasis.
#[derive(Debug, Clone)]
pub struct CouplingBlock {
    pub v: Mat<f64>,
}

impl CouplingBlock {
    pub fn column(&self, beta: usize) -> Vec<f64> {
        linalg::col(&self.v, beta)
    }
}

pub fn coupling_elements(pb: &PartitionedBasis, sys: &ProductSystem) -> CouplingBlock {
    let hqp = sys.matrix_elements(&pb.q_indices, &pb.p_indices);
    CouplingBlock { v: pb.u_q.transpose() * &hqp * &pb.u_p }
}

/// Same block taken from an assembled Hamiltonian.
pub fn coupling_from_hamiltonian(pb: &PartitionedBasis, h: &Mat<f64>) -> CouplingBlock {
    let hqp = submatrix(h, &pb.q_global, &pb.p_global);
    CouplingBlock { v: pb.u_q.transpose() * &hqp * &pb.u_p }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dvr::{DvrGrid, solve_bond};
    use crate::model::{AtomMasses, KineticConvention, MorseParams};

    /// Small shallow-well system so the tests stay fast.
    pub(crate) fn small_system(couplings: Couplings) -> ProductSystem {
        let surface = SurfaceModel::new(
            MorseParams { depth: 0.02, range: 1.5, r_eq: 2.9759 },
            MorseParams { depth: 0.03, range: 1.6251, r_eq: 2.2559 },
            MorseParams { depth: 0.16, range: 1.1589, r_eq: 2.8037 },
            0.1,
        );
        let masses = MassConvention::new(&AtomMasses::ocs(), KineticConvention::Standard);
        let cs = solve_bond(&DvrGrid::new(2.0, 8.0, 96).unwrap(), masses.zero_cs, |r| surface.cs.value(r), surface.cs.depth).unwrap();
        let co = solve_bond(&DvrGrid::new(1.6, 7.0, 96).unwrap(), masses.zero_co, |r| surface.co.value(r), surface.co.depth).unwrap();
        ProductSystem::new(cs, co, surface, masses, couplings)
    }

    #[test]
    fn partition_covers_products() {
        let sys = small_system(Couplings::Exact);
        let (q, p) = partition_indices(&sys, QSpace::CsBond);
        assert_eq!(q.len(), sys.n_cs());
        assert_eq!(q.len() + p.len(), sys.dim());
        assert!(q.iter().all(|i| i.n == 0));
        assert!(p.iter().all(|i| i.n >= 1));
    }

    #[test]
    fn two_assembly_routes_agree() {
        for c in [Couplings::Exact, Couplings::PaperLiteral] {
            let sys = small_system(c);
            let h = sys.full_hamiltonian();
            let all: Vec<_> = (0..sys.dim()).map(|g| sys.product(g)).collect();
            let e = sys.matrix_elements(&all, &all);
            assert!(linalg::max_abs_diff(&h, &e) < 1e-12);
        }
    }

    #[test]
    fn off_is_diagonal() {
        let sys = small_system(Couplings::Off);
        let h = sys.full_hamiltonian();
        for i in 0..sys.dim() {
            for j in 0..sys.dim() {
                if i != j {
                    assert_eq!(h[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn php_trace_and_coupling_block() {
        let sys = small_system(Couplings::Exact);
        let h = sys.full_hamiltonian();
        for qb in [QBasis::Product, QBasis::Diagonalized] {
            let pb = build_partition(&sys, &h, QSpace::CsBond, qb).unwrap();
            let tr: f64 = pb.p_global.iter().map(|&g| h[(g, g)]).sum();
            let s: f64 = pb.e_beta_hat.iter().sum();
            assert!((tr - s).abs() < 1e-8);
            let a = coupling_elements(&pb, &sys);
            let b = coupling_from_hamiltonian(&pb, &h);
            assert!(linalg::max_abs_diff(&a.v, &b.v) < 1e-10);
        }
    }

    #[test]
    fn co_partition() {
        let sys = small_system(Couplings::Exact);
        let h = sys.full_hamiltonian();
        let pb = build_partition(&sys, &h, QSpace::CoBond, QBasis::Product).unwrap();
        assert_eq!(pb.n_q(), sys.n_co());
        assert!(pb.q_indices.iter().all(|i| i.m == 0));
    }
}
