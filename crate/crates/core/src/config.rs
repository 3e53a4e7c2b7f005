//! Run configuration: every numerical choice of a run in one TOML document.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::{Couplings, QBasis, QSpace};
use crate::classical::LyapunovOptions;
use crate::control::Mode;
use crate::dvr::DvrGrid;
use crate::dynamics::FitOptions;
use crate::error::{IvrError, Result};
use crate::feshbach::{RootOptions, Solver};
use crate::model::{AMU_TO_ME, AtomMasses, KineticConvention, MorseParams, SurfaceModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub cs: MorseParams,
    pub co: MorseParams,
    pub outer: MorseParams,
    /// Dissociation onset of the full surface (hartree).
    pub onset: f64,
    /// Atomic masses in amu.
    pub oxygen: f64,
    pub carbon: f64,
    pub sulfur: f64,
    pub amu_to_me: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let s = SurfaceModel::ocs();
        ModelConfig {
            cs: s.cs,
            co: s.co,
            outer: s.outer,
            onset: SurfaceModel::DEFAULT_ONSET,
            oxygen: 15.9994,
            carbon: 12.011,
            sulfur: 32.06,
            amu_to_me: AMU_TO_ME,
        }
    }
}

impl ModelConfig {
    pub fn surface(&self) -> SurfaceModel {
        SurfaceModel::new(self.cs, self.co, self.outer, self.onset)
    }

    pub fn masses(&self) -> Result<AtomMasses> {
        AtomMasses::from_amu(self.oxygen, self.carbon, self.sulfur, self.amu_to_me)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub cs: DvrGrid,
    pub co: DvrGrid,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            cs: DvrGrid { r_min: 1.6, r_max: 14.0, points: 640 },
            co: DvrGrid { r_min: 1.4, r_max: 22.0, points: 1200 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantumConfig {
    pub kinetic: KineticConvention,
    pub couplings: Couplings,
    pub q_space: QSpace,
    pub q_basis: QBasis,
    pub solver: Solver,
    pub roots: RootOptions,
}

impl Default for QuantumConfig {
    fn default() -> Self {
        QuantumConfig {
            kinetic: KineticConvention::Standard,
            couplings: Couplings::Exact,
            q_space: QSpace::CsBond,
            q_basis: QBasis::Product,
            solver: Solver::Feshbach,
            roots: RootOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    /// Size of S: the highest Q states.
    pub states: usize,
    pub t_fs: f64,
    pub mode: Mode,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig { states: 9, t_fs: 100.0, mode: Mode::Maximize }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    pub t_end_fs: f64,
    pub dt_fs: f64,
    pub fit: FitOptions,
    /// Times (fs) of wavepacket density snapshots.
    pub snapshots_fs: Vec<f64>,
    /// Keep every n-th grid point in emitted densities.
    pub density_stride: usize,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            t_end_fs: 2000.0,
            dt_fs: 1.0,
            fit: FitOptions::default(),
            snapshots_fs: vec![0.0, 25.0, 50.0, 100.0],
            density_stride: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassicalConfig {
    pub energy: f64,
    pub kinetic: KineticConvention,
    /// Section plane `R2 = r2_section`; defaults to the CO equilibrium.
    pub r2_section: Option<f64>,
    pub dt_fs: f64,
    pub sos_trajectories: usize,
    pub sos_t_end_fs: f64,
    pub lyapunov: LyapunovOptions,
    pub island_grid: usize,
    /// Finite-time exponent (1/ps) separating regular from chaotic cells.
    pub chaos_threshold: f64,
    pub ensemble_size: usize,
    pub ensemble_t_end_fs: f64,
    pub sample_fs: f64,
}

impl Default for ClassicalConfig {
    fn default() -> Self {
        ClassicalConfig {
            energy: 0.097964,
            kinetic: KineticConvention::PaperLiteral,
            r2_section: None,
            dt_fs: 0.05,
            sos_trajectories: 64,
            sos_t_end_fs: 5000.0,
            lyapunov: LyapunovOptions::default(),
            island_grid: 50,
            chaos_threshold: 6.0,
            ensemble_size: 1000,
            ensemble_t_end_fs: 2000.0,
            sample_fs: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub quantum: QuantumConfig,
    pub control: ControlConfig,
    pub dynamics: DynamicsConfig,
    pub classical: ClassicalConfig,
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok { Ok(()) } else { Err(IvrError::Config(msg())) }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| IvrError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| IvrError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.surface().validate()?;
        self.model.masses()?;
        self.grid.cs.validate()?;
        self.grid.co.validate()?;
        let r = &self.quantum.roots;
        check(r.tolerance > 0.0 && r.max_iter > 0, || "roots: tolerance and max_iter must be positive".into())?;
        check(self.control.states > 0, || "control.states must be positive".into())?;
        check(self.control.t_fs >= 0.0 && self.control.t_fs.is_finite(), || "control.t_fs must be >= 0".into())?;
        let d = &self.dynamics;
        check(d.dt_fs > 0.0 && d.t_end_fs > 0.0, || "dynamics: dt_fs and t_end_fs must be positive".into())?;
        check(d.fit.fit_window_fs > 0.0 && d.fit.average_window_fs > 0.0, || "dynamics.fit windows must be positive".into())?;
        check(d.snapshots_fs.iter().all(|t| t.is_finite() && *t >= 0.0), || "snapshot times must be >= 0".into())?;
        let c = &self.classical;
        check(c.energy < self.model.onset, || {
            format!("classical.energy {} is not below the dissociation onset {}", c.energy, self.model.onset)
        })?;
        check(c.dt_fs > 0.0 && c.sample_fs > 0.0, || "classical: dt_fs and sample_fs must be positive".into())?;
        check(c.island_grid > 0 && c.ensemble_size > 0, || "classical: grid and ensemble sizes must be positive".into())?;
        let l = &c.lyapunov;
        check(l.d0 > 0.0 && l.dt_fs > 0.0 && l.renorm_fs > 0.0, || "classical.lyapunov: d0, dt_fs, renorm_fs must be positive".into())?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON form; two configurations with the
    /// same hash produce the same results.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("configuration serializes");
        hex(&Sha256::digest(&json))
    }

    /// Hash of the parts that determine the exact eigenstates only, so
    /// control and classical settings can change without invalidating them.
    pub fn quantum_hash(&self) -> String {
        let json = serde_json::to_vec(&(&self.model, &self.grid, &self.quantum)).expect("configuration serializes");
        hex(&Sha256::digest(&json))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c = RunConfig::from_toml("seed = 7\n[control]\nt_fs = 1500.0\nmode = \"minimize\"\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.control.mode, Mode::Minimize);
        assert_eq!(c.control.states, 9);
        assert_eq!(c.grid, GridConfig::default());
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(RunConfig::from_toml("[control]\ntee = 3.0\n").is_err());
        assert!(RunConfig::from_toml("[grid.cs]\nr_min = 5.0\nr_max = 2.0\npoints = 100\n").is_err());
        assert!(RunConfig::from_toml("[classical]\nenergy = 0.2\n").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.control.t_fs = 1500.0;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.quantum_hash(), b.quantum_hash());
        b.grid.cs.points = 600;
        assert_ne!(a.quantum_hash(), b.quantum_hash());
    }
}
