//! Collinear O-C-S model: atomic masses, kinetic-energy conventions and the
//! three-Morse potential surface.

use serde::{Deserialize, Serialize};

use crate::error::{IvrError, Result};

/// Femtoseconds per atomic unit of time.
pub const FS_PER_AU: f64 = 0.024_188_84;
/// Electron masses per unified atomic mass unit.
pub const AMU_TO_ME: f64 = 1822.888;

pub fn fs_to_au(t_fs: f64) -> f64 {
    t_fs / FS_PER_AU
}

pub fn au_to_fs(t_au: f64) -> f64 {
    t_au * FS_PER_AU
}

/// Atomic masses in electron masses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomMasses {
    pub oxygen: f64,
    pub carbon: f64,
    pub sulfur: f64,
}

impl AtomMasses {
    pub fn from_amu(oxygen: f64, carbon: f64, sulfur: f64, amu_to_me: f64) -> Result<Self> {
        let m = AtomMasses {
            oxygen: oxygen * amu_to_me,
            carbon: carbon * amu_to_me,
            sulfur: sulfur * amu_to_me,
        };
        m.validate()?;
        Ok(m)
    }

    /// Standard isotopic-average masses (O 15.9994, C 12.011, S 32.06 amu).
    pub fn ocs() -> Self {
        AtomMasses {
            oxygen: 15.9994 * AMU_TO_ME,
            carbon: 12.011 * AMU_TO_ME,
            sulfur: 32.06 * AMU_TO_ME,
        }
    }

    pub fn total(&self) -> f64 {
        self.oxygen + self.carbon + self.sulfur
    }

    pub fn validate(&self) -> Result<()> {
        for (name, m) in [("oxygen", self.oxygen), ("carbon", self.carbon), ("sulfur", self.sulfur)] {
            if !(m.is_finite() && m > 0.0) {
                return Err(IvrError::InvalidInput(format!("{name} mass must be positive, got {m}")));
            }
        }
        Ok(())
    }
}

fn reduced(a: f64, b: f64) -> f64 {
    a * b / (a + b)
}

/// Which diatomic reduced mass multiplies each bond momentum in the full
/// kinetic energy.
///
/// `Standard` is the exact collinear result: P1 (C-S stretch) carries
/// mu(C,S), P2 (C-O stretch) carries mu(C,O). `PaperLiteral` swaps the
/// pairing to P1 with mu(O,C) and P2 with mu(S,C), which is the form that
/// reproduces the quoted zeroth-order periods of 27.45 and 18.10 fs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KineticConvention {
    #[default]
    Standard,
    PaperLiteral,
}

/// Reduced masses for the zeroth-order (uncoupled) bonds and for the full
/// kinetic energy `T = P1^2/(2 mu1) + P2^2/(2 mu2) - P1 P2 / m_C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassConvention {
    /// Zeroth-order C-S bond mass, m_S (m_C + m_O) / M.
    pub zero_cs: f64,
    /// Zeroth-order C-O bond mass, m_O (m_C + m_S) / M.
    pub zero_co: f64,
    /// Diagonal mass on P1 in the full kinetic energy.
    pub full_1: f64,
    /// Diagonal mass on P2 in the full kinetic energy.
    pub full_2: f64,
    /// Cross-term mass (carbon): the kinetic energy carries -P1 P2 / m_C.
    pub cross: f64,
}

impl MassConvention {
    pub fn new(m: &AtomMasses, kinetic: KineticConvention) -> Self {
        let total = m.total();
        let (full_1, full_2) = match kinetic {
            KineticConvention::Standard => (reduced(m.carbon, m.sulfur), reduced(m.carbon, m.oxygen)),
            KineticConvention::PaperLiteral => (reduced(m.oxygen, m.carbon), reduced(m.sulfur, m.carbon)),
        };
        MassConvention {
            zero_cs: m.sulfur * (m.carbon + m.oxygen) / total,
            zero_co: m.oxygen * (m.carbon + m.sulfur) / total,
            full_1,
            full_2,
            cross: m.carbon,
        }
    }

    /// Inverse-mass matrix entries `(a, b, c)` with `T = (a P1^2 + 2 c P1 P2 + b P2^2)/2`.
    pub fn inverse_mass(&self) -> (f64, f64, f64) {
        (1.0 / self.full_1, 1.0 / self.full_2, -1.0 / self.cross)
    }
}

/// One Morse term `D (1 - exp(-beta (R - R0)))^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorseParams {
    pub depth: f64,
    pub range: f64,
    pub r_eq: f64,
}

impl MorseParams {
    pub fn value(&self, r: f64) -> f64 {
        let x = 1.0 - (-self.range * (r - self.r_eq)).exp();
        self.depth * x * x
    }

    pub fn derivative(&self, r: f64) -> f64 {
        let e = (-self.range * (r - self.r_eq)).exp();
        2.0 * self.depth * self.range * (1.0 - e) * e
    }

    /// Harmonic angular frequency for reduced mass `mu`.
    pub fn omega(&self, mu: f64) -> f64 {
        self.range * (2.0 * self.depth / mu).sqrt()
    }

    /// Analytic bound levels `omega (n + 1/2) - [omega (n + 1/2)]^2 / (4 D)`.
    pub fn levels(&self, mu: f64) -> Vec<f64> {
        let w = self.omega(mu);
        let mut out = Vec::new();
        let mut n = 0usize;
        loop {
            let x = w * (n as f64 + 0.5);
            // Past the vertex of the parabola the formula no longer describes a bound level.
            if x > 2.0 * self.depth {
                break;
            }
            let e = x - x * x / (4.0 * self.depth);
            if e >= self.depth {
                break;
            }
            out.push(e);
            n += 1;
        }
        out
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.depth > 0.0 && self.range > 0.0 && self.r_eq > 0.0) {
            return Err(IvrError::InvalidInput(format!(
                "{name}: Morse depth, range and equilibrium must be positive"
            )));
        }
        Ok(())
    }
}

/// `V(R1, R2) = V_CS(R1) + V_CO(R2) + V_3(R1 + R2) + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceModel {
    pub cs: MorseParams,
    pub co: MorseParams,
    pub outer: MorseParams,
    pub offset: f64,
}

impl SurfaceModel {
    pub const DEFAULT_ONSET: f64 = 0.100;

    pub fn ocs() -> Self {
        Self::new(
            MorseParams { depth: 0.08518, range: 1.5000, r_eq: 2.9759 },
            MorseParams { depth: 0.21238, range: 1.6251, r_eq: 2.2559 },
            MorseParams { depth: 0.16000, range: 1.1589, r_eq: 2.8037 },
            Self::DEFAULT_ONSET,
        )
    }

    /// Build a surface whose C-S dissociation channel opens at `onset`, i.e.
    /// `offset = onset - (D_CS + D_3)`.
    pub fn new(cs: MorseParams, co: MorseParams, outer: MorseParams, onset: f64) -> Self {
        SurfaceModel { cs, co, outer, offset: onset - (cs.depth + outer.depth) }
    }

    pub fn validate(&self) -> Result<()> {
        self.cs.validate("cs")?;
        self.co.validate("co")?;
        self.outer.validate("outer")
    }

    /// Energy at which S + CO separates.
    pub fn dissociation_onset(&self) -> f64 {
        self.cs.depth + self.outer.depth + self.offset
    }

    pub fn potential(&self, r1: f64, r2: f64) -> f64 {
        self.cs.value(r1) + self.co.value(r2) + self.coupling(r1 + r2)
    }

    /// The `V_3(R1 + R2) + offset` part, which couples the two bonds.
    pub fn coupling(&self, r3: f64) -> f64 {
        self.outer.value(r3) + self.offset
    }

    pub fn gradient(&self, r1: f64, r2: f64) -> (f64, f64) {
        let d3 = self.outer.derivative(r1 + r2);
        (self.cs.derivative(r1) + d3, self.co.derivative(r2) + d3)
    }
}
