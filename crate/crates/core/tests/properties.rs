//! Invariants of the quantum dynamics and the classical integrator on a
//! small model that solves in well under a second.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use proptest::prelude::*;

use ivr_core::classical::{self, ClassicalModel};
use ivr_core::config::RunConfig;
use ivr_core::control::Mode;
use ivr_core::dvr::DvrGrid;
use ivr_core::dynamics::{self, Superposition};
use ivr_core::feshbach::{ResonanceSet, Solver};
use ivr_core::model::{AtomMasses, KineticConvention, SurfaceModel};
use ivr_core::pipeline::Session;

const S: usize = 4;

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model.cs.depth = 0.02;
    cfg.model.co.depth = 0.03;
    cfg.grid.cs = DvrGrid { r_min: 1.6, r_max: 9.0, points: 96 };
    cfg.grid.co = DvrGrid { r_min: 1.4, r_max: 8.0, points: 96 };
    cfg.control.states = S;
    cfg
}

fn session() -> &'static Session {
    static CELL: OnceLock<Session> = OnceLock::new();
    CELL.get_or_init(|| {
        let s = Session::new(small_config(), None);
        s.resonances().expect("small model solves");
        s
    })
}

fn parts() -> (&'static ResonanceSet, Vec<usize>, Vec<usize>) {
    let s = session();
    (s.resonances().unwrap(), s.control_subset().unwrap(), s.measure_rows().unwrap())
}

fn packet(re: &[f64], im: &[f64]) -> Option<Superposition> {
    let c: Vec<Complex64> = re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect();
    let n = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    (n > 1e-3).then(|| Superposition::normalized(parts().1, c).unwrap())
}

fn coeffs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(-1.0..1.0f64, S), prop::collection::vec(-1.0..1.0f64, S))
}

#[test]
fn feshbach_and_direct_agree_on_small_model() {
    let (f, _, _) = parts();
    let mut cfg = small_config();
    cfg.quantum.solver = Solver::Direct;
    let d = Session::new(cfg, None);
    let d = d.resonances().unwrap();
    let de = f.energies.iter().zip(&d.energies).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(de < 1e-10, "{de:e}");
    assert!(f.completeness_error() < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn population_identities((re, im) in coeffs(), t in 0.0..3000.0f64) {
        let Some(c) = packet(&re, &im) else { return Ok(()) };
        let (res, _, rows) = parts();
        prop_assert!((dynamics::population(&c, res, &rows, 0.0).unwrap() - 1.0).abs() < 1e-12);
        let p = dynamics::population(&c, res, &rows, t).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&p));
        let (w, pt) = dynamics::overlap_measure(&c, res, &rows, t).unwrap();
        prop_assert!((p - w - pt).abs() < 1e-12);
        let d = dynamics::decompose(&c, res, &rows, t).unwrap();
        prop_assert!((p - d.direct - d.interference).abs() < 1e-12);
    }

    #[test]
    fn global_phase_does_not_matter((re, im) in coeffs(), phi in 0.0..(2.0 * PI), t in 0.0..3000.0f64) {
        let Some(c) = packet(&re, &im) else { return Ok(()) };
        let (res, s, rows) = parts();
        let z = Complex64::from_polar(1.0, phi);
        let rotated = Superposition::new(s, c.c.iter().map(|x| x * z).collect()).unwrap();
        let a = dynamics::population(&c, res, &rows, t).unwrap();
        let b = dynamics::population(&rotated, res, &rows, t).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn real_packets_are_time_symmetric(re in prop::collection::vec(-1.0..1.0f64, S), t in 0.0..3000.0f64) {
        let Some(c) = packet(&re, &[0.0; S]) else { return Ok(()) };
        let (res, _, rows) = parts();
        let a = dynamics::population(&c, res, &rows, t).unwrap();
        let b = dynamics::population(&c, res, &rows, -t).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn optimum_bounds_every_packet((re, im) in coeffs(), t in 0.0..2000.0f64) {
        let Some(c) = packet(&re, &im) else { return Ok(()) };
        let (res, _, rows) = parts();
        let hi = session().optimize(t, Mode::Maximize).unwrap();
        let lo = session().optimize(t, Mode::Minimize).unwrap();
        let p = dynamics::population(&c, res, &rows, t).unwrap();
        prop_assert!(lo.lambda - 1e-12 <= p && p <= hi.lambda + 1e-12);
        let at_hi = dynamics::population(&hi.superposition, res, &rows, t).unwrap();
        prop_assert!((at_hi - hi.lambda).abs() < 1e-10);
    }

    #[test]
    fn integrator_is_reversible(r1 in 2.7..3.6f64, p1 in -20.0..20.0f64) {
        let m = ClassicalModel::new(SurfaceModel::ocs(), &AtomMasses::ocs(), KineticConvention::PaperLiteral);
        let Some(s) = m.section_point(r1, p1, m.surface.co.r_eq, 0.097964) else { return Ok(()) };
        let fwd = classical::integrate(&m, s, 100.0, 0.05, 2000).unwrap();
        let end = *fwd.points.last().unwrap();
        let back = classical::integrate(&m, end, 100.0, -0.05, 2000).unwrap();
        let b = back.points.last().unwrap();
        for (x, y) in [(b.r1, s.r1), (b.r2, s.r2), (b.p1, s.p1), (b.p2, s.p2)] {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}
