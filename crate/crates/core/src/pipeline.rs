//! Stage wiring: configuration in, reports and tables out.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::basis::{self, CouplingBlock, PartitionedBasis, ProductSystem};
use crate::classical::{self, ClassicalModel, ExpFit, LyapunovOptions};
use crate::config::RunConfig;
use crate::control::{self, ControlResult, Mode};
use crate::dvr::{self, BondEigenbasis};
use crate::dynamics::{self, DecayFit, Propagator, Superposition};
use crate::error::{IvrError, Result};
use crate::feshbach::{self, ResonanceSet, ResonanceSetFile, RootKind, Solver};
use crate::model::MassConvention;
use crate::output::{self, Metadata, Table};

/// The product basis, its Hamiltonian and the Q/P partition.
pub struct QuantumSystem {
    pub sys: ProductSystem,
    pub h: Mat<f64>,
    pub pb: PartitionedBasis,
    pub v: CouplingBlock,
}

pub fn solve_bonds(cfg: &RunConfig) -> Result<(BondEigenbasis, BondEigenbasis)> {
    let s = cfg.model.surface();
    let mc = MassConvention::new(&cfg.model.masses()?, cfg.quantum.kinetic);
    let cs = dvr::solve_bond(&cfg.grid.cs, mc.zero_cs, |r| s.cs.value(r), s.cs.depth)?;
    let co = dvr::solve_bond(&cfg.grid.co, mc.zero_co, |r| s.co.value(r), s.co.depth)?;
    Ok((cs, co))
}

pub fn build_system(cfg: &RunConfig) -> Result<QuantumSystem> {
    let t = Instant::now();
    let (cs, co) = solve_bonds(cfg)?;
    let mc = MassConvention::new(&cfg.model.masses()?, cfg.quantum.kinetic);
    let sys = ProductSystem::new(cs, co, cfg.model.surface(), mc, cfg.quantum.couplings);
    let h = sys.full_hamiltonian();
    let pb = basis::build_partition(&sys, &h, cfg.quantum.q_space, cfg.quantum.q_basis)?;
    let v = basis::coupling_elements(&pb, &sys);
    log::info!("product basis {} ({} Q, {} P) built in {:.1?}", sys.dim(), pb.n_q(), pb.n_p(), t.elapsed());
    Ok(QuantumSystem { sys, h, pb, v })
}

/// Lazily computed quantum stages for one configuration; the exact
/// eigenstates are cached on disk under the quantum hash when a cache
/// directory is given.
pub struct Session {
    pub cfg: RunConfig,
    cache: Option<PathBuf>,
    system: OnceLock<QuantumSystem>,
    resonances: OnceLock<ResonanceSet>,
    vectors: OnceLock<Mat<f64>>,
}

impl Session {
    pub fn new(cfg: RunConfig, cache: Option<PathBuf>) -> Self {
        Session { cfg, cache, system: OnceLock::new(), resonances: OnceLock::new(), vectors: OnceLock::new() }
    }

    pub fn system(&self) -> Result<&QuantumSystem> {
        if let Some(s) = self.system.get() {
            return Ok(s);
        }
        let s = build_system(&self.cfg)?;
        Ok(self.system.get_or_init(|| s))
    }

    fn cache_file(&self) -> Option<PathBuf> {
        self.cache.as_ref().map(|d| d.join(self.cfg.quantum_hash()).join("resonances.json"))
    }

    pub fn resonances(&self) -> Result<&ResonanceSet> {
        if let Some(r) = self.resonances.get() {
            return Ok(r);
        }
        if let Some(path) = self.cache_file().filter(|p| p.exists()) {
            let file: ResonanceSetFile = output::read_json(&path)?;
            let r = ResonanceSet::from_file(&file)?;
            log::info!("loaded {} eigenstates from {}", r.len(), path.display());
            return Ok(self.resonances.get_or_init(|| r));
        }
        let qs = self.system()?;
        let t = Instant::now();
        let r = match self.cfg.quantum.solver {
            Solver::Feshbach => feshbach::find_all_resonances(&qs.pb, &qs.v, &self.cfg.quantum.roots)?,
            Solver::Direct => {
                let spec = feshbach::direct_spectrum(&qs.h)?;
                let r = feshbach::direct_resonances(&qs.pb, &spec);
                let _ = self.vectors.set(spec.vectors);
                r
            }
        };
        log::info!("{} eigenstates ({:?}) in {:.1?}", r.len(), self.cfg.quantum.solver, t.elapsed());
        if let Some(path) = self.cache_file() {
            output::write_json(&path, &r.to_file())?;
        }
        Ok(self.resonances.get_or_init(|| r))
    }

    /// Product-basis eigenvectors consistent in sign with the overlaps.
    pub fn eigenvectors(&self) -> Result<&Mat<f64>> {
        if let Some(v) = self.vectors.get() {
            return Ok(v);
        }
        let res = self.resonances()?;
        if let Some(v) = self.vectors.get() {
            return Ok(v);
        }
        let qs = self.system()?;
        let v = match res.solver {
            Solver::Feshbach => feshbach::reconstruct_eigenvectors(&qs.pb, &qs.v, res),
            Solver::Direct => {
                let spec = feshbach::direct_spectrum(&qs.h)?;
                let fresh = feshbach::direct_resonances(&qs.pb, &spec);
                // Align column signs with the cached overlaps.
                let mut v = spec.vectors;
                for g in 0..v.ncols() {
                    let dot: f64 = (0..res.n_q()).map(|k| res.a[(k, g)] * fresh.a[(k, g)]).sum();
                    if dot < 0.0 {
                        for i in 0..v.nrows() {
                            v[(i, g)] = -v[(i, g)];
                        }
                    }
                }
                v
            }
        };
        Ok(self.vectors.get_or_init(|| v))
    }

    /// Q indices of the control subset S, highest state first.
    pub fn control_subset(&self) -> Result<Vec<usize>> {
        Ok(dynamics::top_states(self.resonances()?.n_q(), self.cfg.control.states))
    }

    /// The population measure: all of Q.
    pub fn measure_rows(&self) -> Result<Vec<usize>> {
        Ok((0..self.resonances()?.n_q()).collect())
    }

    pub fn optimize(&self, t_fs: f64, mode: Mode) -> Result<ControlResult> {
        control::optimize(self.resonances()?, &self.control_subset()?, &self.measure_rows()?, t_fs, mode)
    }
}

/// `kappa` label (1 = highest Q state) of a Q index.
pub fn kappa(n_q: usize, index: usize) -> usize {
    n_q - index
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BondSummary {
    pub mu: f64,
    pub n_bound: usize,
    pub dissociation: f64,
    pub box_contamination: f64,
    pub energies: Vec<f64>,
}

impl From<&BondEigenbasis> for BondSummary {
    fn from(b: &BondEigenbasis) -> Self {
        BondSummary {
            mu: b.mu,
            n_bound: b.n_bound(),
            dissociation: b.dissociation,
            box_contamination: b.box_contamination,
            energies: b.energies.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenstatesReport {
    pub config_hash: String,
    pub cs: BondSummary,
    pub co: BondSummary,
    /// `(kappa, m, E_m)` for the highest bound CS states.
    pub top_cs: Vec<(usize, usize, f64)>,
    pub seconds: f64,
}

pub fn eigenstates(cfg: &RunConfig) -> Result<EigenstatesReport> {
    let t = Instant::now();
    let (cs, co) = solve_bonds(cfg)?;
    let n = cs.n_bound();
    let top_cs = (0..cfg.control.states.min(n)).map(|k| (k + 1, n - 1 - k, cs.energies[n - 1 - k])).collect();
    Ok(EigenstatesReport {
        config_hash: cfg.hash(),
        cs: (&cs).into(),
        co: (&co).into(),
        top_cs,
        seconds: t.elapsed().as_secs_f64(),
    })
}

pub fn meta(cfg: &RunConfig, command: &str) -> Metadata {
    Metadata::new().with("command", command).with("config_hash", cfg.hash()).with("seed", cfg.seed)
}

pub fn write_eigenstates(out: &Path, cfg: &RunConfig, r: &EigenstatesReport) -> Result<()> {
    for (name, b) in [("cs", &r.cs), ("co", &r.co)] {
        let mut t = Table::new(meta(cfg, "eigenstates").with("bond", name).with("mu", b.mu), &["level", "energy"]);
        for (i, e) in b.energies.iter().enumerate() {
            t.push(vec![i as f64, *e]);
        }
        t.write(&out.join(format!("bond_{name}.csv")))?;
    }
    output::write_json(&out.join("eigenstates.json"), r)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResonanceReport {
    pub config_hash: String,
    pub solver: Solver,
    pub n_q: usize,
    pub n_total: usize,
    pub completeness_error: f64,
    pub pole_pinned: usize,
    pub max_iterations: usize,
    pub max_residual: f64,
}

pub fn resonance_report(cfg: &RunConfig, r: &ResonanceSet) -> ResonanceReport {
    ResonanceReport {
        config_hash: cfg.hash(),
        solver: r.solver,
        n_q: r.n_q(),
        n_total: r.len(),
        completeness_error: r.completeness_error(),
        pole_pinned: r.provenance.iter().filter(|p| p.kind == RootKind::PolePinned).count(),
        max_iterations: r.provenance.iter().map(|p| p.iterations).max().unwrap_or(0),
        max_residual: r.provenance.iter().map(|p| p.residual).fold(0.0, f64::max),
    }
}

pub fn write_resonances(out: &Path, cfg: &RunConfig, r: &ResonanceSet) -> Result<()> {
    let mut t = Table::new(meta(cfg, "resonances").with("solver", format!("{:?}", r.solver)), &["gamma", "energy", "c_abs"]);
    for g in 0..r.len() {
        t.push(vec![g as f64, r.energies[g], r.c_abs[g]]);
    }
    t.write(&out.join("resonances.csv"))?;
    output::write_json(&out.join("resonances.json"), &resonance_report(cfg, r))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlReport {
    pub config_hash: String,
    pub mode: Mode,
    pub t_fs: f64,
    pub lambda: f64,
    pub spectrum: Vec<f64>,
    pub degenerate: bool,
    pub residual: f64,
    /// `(kappa, |c|^2, Re c, Im c)`.
    pub weights: Vec<(usize, f64, f64, f64)>,
}

pub fn control_report(cfg: &RunConfig, n_q: usize, r: &ControlResult) -> ControlReport {
    let s = &r.superposition;
    ControlReport {
        config_hash: cfg.hash(),
        mode: r.mode,
        t_fs: r.t_fs,
        lambda: r.lambda,
        spectrum: r.spectrum.clone(),
        degenerate: r.degenerate,
        residual: r.residual,
        weights: s.s_indices.iter().zip(&s.c).map(|(&k, c)| (kappa(n_q, k), c.norm_sqr(), c.re, c.im)).collect(),
    }
}

pub fn write_control(out: &Path, cfg: &RunConfig, rep: &ControlReport) -> Result<()> {
    let mut t = Table::new(
        meta(cfg, "optimize").with("mode", format!("{:?}", rep.mode)).with("t_fs", rep.t_fs).with("lambda", rep.lambda),
        &["kappa", "weight", "re", "im"],
    );
    for &(k, w, re, im) in &rep.weights {
        t.push(vec![k as f64, w, re, im]);
    }
    t.write(&out.join("control.csv"))?;
    output::write_json(&out.join("control.json"), rep)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotSummary {
    pub t_fs: f64,
    pub norm: f64,
    pub boundary_max: f64,
    pub mean_r1: f64,
    pub mean_r2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolveReport {
    pub config_hash: String,
    pub s_kappa: Vec<usize>,
    pub weights: Vec<f64>,
    pub fit: DecayFit,
    /// Population left in Q at 50 fs.
    pub p_50fs: f64,
    /// `<H>` from the exact spectrum and from the Q block alone.
    pub mean_energy: f64,
    pub q_block_energy: f64,
    pub snapshots: Vec<SnapshotSummary>,
}

pub struct Evolution {
    pub report: EvolveReport,
    pub trace: dynamics::PopulationTrace,
    pub densities: Vec<dynamics::DensitySnapshot>,
}

pub fn evolve(session: &Session, c: &Superposition, with_densities: bool) -> Result<Evolution> {
    let cfg = &session.cfg;
    let res = session.resonances()?;
    let rows = session.measure_rows()?;
    let times = dynamics::time_grid(cfg.dynamics.t_end_fs, cfg.dynamics.dt_fs)?;
    let trace = dynamics::population_trace(c, res, &rows, &times, true)?;
    let fit = dynamics::fit_decay(&trace, &cfg.dynamics.fit)?;
    let prop = Propagator::new(res, c, &rows)?;
    let mut densities = Vec::new();
    let mut q_block_energy = f64::NAN;
    if with_densities {
        let qs = session.system()?;
        let vectors = session.eigenvectors()?;
        for &t in &cfg.dynamics.snapshots_fs {
            densities.push(dynamics::wavepacket_density(c, res, vectors, &qs.sys, t, cfg.dynamics.density_stride)?);
        }
        q_block_energy = dynamics::q_block_energy(c, &qs.pb.q_block)?;
    }
    let report = EvolveReport {
        config_hash: cfg.hash(),
        s_kappa: c.s_indices.iter().map(|&k| kappa(res.n_q(), k)).collect(),
        weights: c.weights(),
        fit,
        p_50fs: prop.population(50.0),
        mean_energy: prop.mean_energy(),
        q_block_energy,
        snapshots: densities
            .iter()
            .map(|d| SnapshotSummary {
                t_fs: d.t_fs,
                norm: d.norm,
                boundary_max: d.boundary_max,
                mean_r1: d.mean_r1,
                mean_r2: d.mean_r2,
            })
            .collect(),
    };
    Ok(Evolution { report, trace, densities })
}

pub fn write_evolution(out: &Path, cfg: &RunConfig, ev: &Evolution) -> Result<()> {
    let tr = &ev.trace;
    let mut cols = vec!["t_fs".to_string(), "p".into(), "w".into(), "p_tilde".into()];
    cols.extend(ev.report.s_kappa.iter().map(|k| format!("kappa_{k}")));
    let names: Vec<&str> = cols.iter().map(String::as_str).collect();
    let m = meta(cfg, "evolve")
        .with("t_delta_fs", ev.report.fit.t_delta)
        .with("p_inf", ev.report.fit.p_inf)
        .with("fit_protocol", format!("{:?}", ev.report.fit.protocol));
    let mut t = Table::new(m, &names);
    for i in 0..tr.times.len() {
        let mut row = vec![tr.times[i], tr.p[i], tr.w[i], tr.p_tilde[i]];
        if let Some(ps) = &tr.per_state {
            row.extend(ps.iter().map(|s| s[i]));
        }
        t.push(row);
    }
    t.write(&out.join("population.csv"))?;
    for d in &ev.densities {
        let mut t = Table::new(meta(cfg, "evolve").with("t_fs", d.t_fs).with("norm", d.norm), &["r1", "r2", "density"]);
        for (i, r1) in d.r1.iter().enumerate() {
            for (j, r2) in d.r2.iter().enumerate() {
                t.push(vec![*r1, *r2, d.rho[i * d.r2.len() + j]]);
            }
        }
        t.write(&out.join(format!("density_{:06.1}fs.csv", d.t_fs)))?;
    }
    output::write_json(&out.join("evolve.json"), &ev.report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassicalReport {
    pub config_hash: String,
    pub energy: f64,
    pub r2_section: f64,
    pub periods_fs: (f64, f64),
    /// Largest relative energy drift over the Lyapunov horizon.
    pub energy_drift: f64,
    pub island_fraction: f64,
    pub island_cells: (usize, usize),
    pub island_center: (f64, f64),
    pub lambda_stable: f64,
    pub lambda_chaotic: f64,
    pub ensemble: ExpFit,
    pub ensemble_dissociated: usize,
}

pub struct ClassicalRun {
    pub report: ClassicalReport,
    pub sos: classical::SosRecord,
    pub island: classical::IslandEstimate,
    pub stable: classical::LyapunovTrace,
    pub chaotic: classical::LyapunovTrace,
    pub chaotic_energy: classical::BondEnergyTrace,
    pub ensemble: classical::EnsembleDecay,
}

pub fn classical_model(cfg: &RunConfig) -> Result<ClassicalModel> {
    Ok(ClassicalModel::new(cfg.model.surface(), &cfg.model.masses()?, cfg.classical.kinetic))
}

pub fn run_classical(cfg: &RunConfig) -> Result<ClassicalRun> {
    let c = &cfg.classical;
    let m = classical_model(cfg)?;
    let e = c.energy;
    let r2s = c.r2_section.unwrap_or(m.surface.co.r_eq);
    let lyap = LyapunovOptions { dt_fs: c.dt_fs, ..c.lyapunov };
    let t = Instant::now();
    let sos = classical::surface_of_section(&m, e, r2s, c.sos_trajectories, c.sos_t_end_fs, c.dt_fs)?;
    let island = classical::island_fraction(&m, e, r2s, c.island_grid, c.chaos_threshold, &lyap)?;
    log::info!("section and island grid in {:.1?}", t.elapsed());
    let seed_of = |r1: f64, p1: f64| {
        m.section_point(r1, p1, r2s, e)
            .ok_or_else(|| IvrError::InvalidInput(format!("({r1}, {p1}) is outside the allowed section")))
    };
    let calm = island
        .cells
        .iter()
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .ok_or_else(|| IvrError::InvalidInput("empty section grid".into()))?;
    let center = classical::island_center(&m, e, r2s, (calm.0, calm.1), 30, 2000.0, c.dt_fs)?;
    let stable = classical::lyapunov(&m, seed_of(center.0, center.1)?, &lyap)?;
    // The chaotic cell whose exponent is closest to the chaotic mean.
    let typical = island
        .cells
        .iter()
        .filter(|x| x.2 >= c.chaos_threshold && x.2.is_finite())
        .min_by(|a, b| (a.2 - island.chaotic_mean).abs().total_cmp(&(b.2 - island.chaotic_mean).abs()))
        .ok_or_else(|| IvrError::InvalidInput("no chaotic cells on the section".into()))?;
    let chaotic_seed = seed_of(typical.0, typical.1)?;
    let chaotic = classical::lyapunov(&m, chaotic_seed, &lyap)?;
    let every = ((c.sample_fs / c.dt_fs).round() as usize).max(1);
    let run_a = classical::integrate(&m, chaotic_seed, c.ensemble_t_end_fs, c.dt_fs, every)?;
    let run_b = classical::integrate(&m, seed_of(center.0, center.1)?, lyap.t_end_fs, c.dt_fs, every)?;
    let chaotic_energy = classical::bond_energy_trace(&m, &run_a);
    let ens = classical::EnsembleOptions {
        n_traj: c.ensemble_size,
        t_end_fs: c.ensemble_t_end_fs,
        dt_fs: c.dt_fs,
        sample_fs: c.sample_fs,
        seed: cfg.seed,
    };
    let ensemble = classical::ensemble_decay(&m, e, r2s, &ens)?;
    let report = ClassicalReport {
        config_hash: cfg.hash(),
        energy: e,
        r2_section: r2s,
        periods_fs: m.periods_fs(),
        energy_drift: run_a.energy_drift.max(run_b.energy_drift),
        island_fraction: island.fraction,
        island_cells: (island.regular, island.cells.len()),
        island_center: center,
        lambda_stable: stable.lambda_t,
        lambda_chaotic: island.chaotic_mean,
        ensemble: ensemble.fit,
        ensemble_dissociated: ensemble.dissociated,
    };
    Ok(ClassicalRun { report, sos, island, stable, chaotic, chaotic_energy, ensemble })
}

pub fn write_classical(out: &Path, cfg: &RunConfig, run: &ClassicalRun) -> Result<()> {
    let c = &cfg.classical;
    let base = || meta(cfg, "classical").with("energy", c.energy).with("dt_fs", c.dt_fs);
    let mut t = Table::new(base().with("r2_section", run.sos.r2_section), &["trajectory", "r1", "p1", "p2", "t_fs"]);
    for p in &run.sos.points {
        t.push(vec![p.traj as f64, p.r1, p.p1, p.p2, p.t_fs]);
    }
    t.write(&out.join("sos.csv"))?;
    let mut t = Table::new(base().with("threshold", run.island.threshold), &["r1", "p1", "lambda_t"]);
    for &(r, p, l) in &run.island.cells {
        t.push(vec![r, p, l]);
    }
    t.write(&out.join("ftle_grid.csv"))?;
    for (name, tr) in [("stable", &run.stable), ("chaotic", &run.chaotic)] {
        let mut t = Table::new(base().with("d0", tr.d0).with("lambda_t", tr.lambda_t), &["t_fs", "lambda_raw", "lambda_smoothed"]);
        for i in 0..tr.times.len() {
            t.push(vec![tr.times[i], tr.raw[i], tr.smoothed[i]]);
        }
        t.write(&out.join(format!("lyapunov_{name}.csv")))?;
    }
    let b = &run.chaotic_energy;
    let mut t = Table::new(base(), &["t_fs", "e_cs", "e_co", "remainder"]);
    for i in 0..b.times.len() {
        t.push(vec![b.times[i], b.e_cs[i], b.e_co[i], b.remainder[i]]);
    }
    t.write(&out.join("bond_energy_chaotic.csv"))?;
    let en = &run.ensemble;
    let mut t = Table::new(
        base().with("n_traj", en.n_traj).with("tau_fs", en.fit.tau_fs).with("asymptote", en.fit.asymptote),
        &["t_fs", "mean_e_cs"],
    );
    for i in 0..en.times.len() {
        t.push(vec![en.times[i], en.mean_e_cs[i]]);
    }
    t.write(&out.join("ensemble_e_cs.csv"))?;
    output::write_json(&out.join("classical.json"), &run.report)
}
