//! Published reference values for the collinear OCS model, used by the
//! acceptance suite in `tests/acceptance.rs`.

/// Zeroth-order energies (hartree) of the nine highest CS-bond states, kappa = 1..9.
pub const TOP_CS_ENERGIES: [f64; 9] =
    [0.0851446, 0.0850268, 0.0848265, 0.0845437, 0.0841783, 0.0837303, 0.0831998, 0.0825867, 0.0818910];

/// CO ground-state energy (hartree).
pub const CO_GROUND: f64 = 0.00360475;

/// Bound-state counts of the CS and CO bonds.
pub const BOUND_STATES: (usize, usize) = (45, 59);

/// Optimal weights `|c_kappa|^2` at T = 100 fs, indexed by kappa - 1.
pub const SUPPRESSION_WEIGHTS: [f64; 9] =
    [0.00084, 0.02994, 0.05380, 0.38716, 0.09127, 0.06411, 0.07216, 0.23455, 0.06616];
pub const ENHANCEMENT_WEIGHTS: [f64; 9] =
    [0.01915, 0.14467, 0.01097, 0.00713, 0.00449, 0.04183, 0.41392, 0.19699, 0.16082];

/// Fitted decay times (fs) of the suppression and enhancement packets.
pub const DECAY_TIMES: (f64, f64) = (57.35, 8.60);

/// Asymptotic Q populations of the suppression and enhancement packets.
pub const ASYMPTOTES: (f64, f64) = (0.4, 0.3);

/// Q population transferred out by 50 fs (suppression, enhancement).
pub const TRANSFERRED_50FS: (f64, f64) = (0.24, 0.82);

/// Q population retained at 1.5 ps (suppression, enhancement).
pub const RETAINED_1500FS: (f64, f64) = (0.55, 0.22);

/// Mean energies (hartree) of the suppression and enhancement packets and the reference energy.
pub const PACKET_ENERGIES: (f64, f64) = (0.09849, 0.09743);
pub const REFERENCE_ENERGY: f64 = 0.097964;

/// Finite-time Lyapunov exponents (1/ps) in the stable island and the chaotic sea.
pub const LYAPUNOV: (f64, f64) = (1.46, 17.41);

/// Zeroth-order vibrational periods (fs) of the CS and CO bonds.
pub const PERIODS_FS: (f64, f64) = (27.45, 18.10);

/// Stable-island share of the section area.
pub const ISLAND_FRACTION: f64 = 0.33;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_are_normalized() {
        for w in [SUPPRESSION_WEIGHTS, ENHANCEMENT_WEIGHTS] {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-3);
        }
    }
}
