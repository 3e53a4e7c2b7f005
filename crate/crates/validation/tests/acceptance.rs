//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

use std::process::ExitCode;
use std::time::Instant;

use faer::Mat;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ivr_core::config::RunConfig;
use ivr_core::control::{ControlResult, Mode};
use ivr_core::dynamics::{self, Superposition};
use ivr_core::feshbach::{self, ResonanceSet, RootKind};
use ivr_core::pipeline::{self, Evolution, Session};
use ivr_validation as refv;

struct Verdict {
    pass: bool,
    lines: Vec<String>,
}

impl Verdict {
    fn new() -> Self {
        Verdict { pass: true, lines: Vec::new() }
    }

    fn check(&mut self, ok: bool, what: String) {
        self.pass &= ok;
        self.lines.push(format!("{} {what}", if ok { "ok  " } else { "MISS" }));
    }
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    (x - target).abs() <= rel * target.abs()
}

fn criterion1() -> Verdict {
    let mut v = Verdict::new();
    let r = pipeline::eigenstates(&RunConfig::default()).expect("bond eigenstates");
    let err = r.top_cs.iter().zip(refv::TOP_CS_ENERGIES).map(|(&(_, _, e), t)| (e - t).abs()).fold(0.0, f64::max);
    v.check(err <= 5e-6, format!("top nine CS energies max |dE| = {err:.3e} (<= 5e-6)"));
    let e0 = r.co.energies[0];
    v.check((e0 - refv::CO_GROUND).abs() <= 2e-6, format!("CO ground energy {e0:.9} ({} +- 2e-6)", refv::CO_GROUND));
    let counts = (r.cs.n_bound, r.co.n_bound);
    v.check(counts == refv::BOUND_STATES, format!("bound states {counts:?} ({:?})", refv::BOUND_STATES));
    v.check(r.seconds < 10.0, format!("runtime {:.2} s (< 10 s)", r.seconds));
    v
}

struct Quantum {
    session: Session,
    direct: ResonanceSet,
    feshbach_seconds: f64,
}

fn criterion2(q: &Quantum) -> Verdict {
    let mut v = Verdict::new();
    let f = q.session.resonances().unwrap();
    let d = &q.direct;
    let qs = q.session.system().unwrap();
    v.check(f.len() == d.len() && f.len() == 2655, format!("N_T = {} (direct {})", f.len(), d.len()));
    let de = f.energies.iter().zip(&d.energies).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    v.check(de <= 1e-9, format!("max |E_feshbach - E_direct| = {de:.3e} (<= 1e-9)"));
    let mut da = 0.0f64;
    for g in 0..f.len() {
        for k in 0..f.n_q() {
            da = da.max((f.a[(k, g)].abs() - d.a[(k, g)].abs()).abs());
        }
    }
    v.check(da <= 1e-8, format!("max ||a|_feshbach - |a|_direct| = {da:.3e} (<= 1e-8)"));
    // Normalization: the Q weight implied by the Q vector and the P-space
    // resolvent must equal the Q weight of the exact eigenvector.
    let mut a8 = 0.0f64;
    let mut pinned = 0;
    for g in 0..f.len() {
        if f.provenance[g].kind == RootKind::PolePinned {
            pinned += 1;
            continue;
        }
        let norm = f.c_abs[g];
        let dvec: Vec<f64> = (0..f.n_q()).map(|k| f.a[(k, g)] / norm).collect();
        let c2 = feshbach::q_weight(f.energies[g], &dvec, &qs.pb, &qs.v);
        a8 = a8.max((c2 - d.c_abs[g].powi(2)).abs());
    }
    let pin_err = f
        .provenance
        .iter()
        .enumerate()
        .filter(|(_, p)| p.kind == RootKind::PolePinned)
        .map(|(g, _)| (f.c_abs[g].powi(2) - d.c_abs[g].powi(2)).abs())
        .fold(0.0, f64::max);
    v.check(a8 <= 1e-10, format!("normalization identity max error {a8:.3e} over iterated roots (<= 1e-10)"));
    v.check(pin_err <= 1e-10, format!("{pinned} pole-pinned roots, max |C|^2 error {pin_err:.3e} (<= 1e-10)"));
    v.check(q.feshbach_seconds < 600.0, format!("Feshbach runtime {:.1} s (< 600 s)", q.feshbach_seconds));
    v
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    let c: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.r#gen::<f64>() - 0.5, rng.r#gen::<f64>() - 0.5)).collect();
    let norm = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    c.into_iter().map(|z| z / norm).collect()
}

fn criterion3(q: &Quantum) -> Verdict {
    let mut v = Verdict::new();
    let res = q.session.resonances().unwrap();
    let s = q.session.control_subset().unwrap();
    let rows = q.session.measure_rows().unwrap();
    let m0 = dynamics::overlap_matrix(res, 0.0, &rows, &rows).unwrap();
    let mut e = 0.0f64;
    for i in 0..rows.len() {
        for j in 0..rows.len() {
            let want = if i == j { 1.0 } else { 0.0 };
            e = e.max((m0[(i, j)] - Complex64::new(want, 0.0)).norm());
        }
    }
    v.check(e <= 1e-12, format!("M(0) = I, max error {e:.3e}"));

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let times = [0.0, 7.3, 25.0, 50.0, 100.0, 480.0, 1500.0];
    let (mut e_p0, mut e_w, mut e_dec, mut e_phase) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let c = Superposition::new(s.clone(), random_unit(&mut rng, s.len())).unwrap();
        e_p0 = e_p0.max((dynamics::population(&c, res, &rows, 0.0).unwrap() - 1.0).abs());
        e_w = e_w.max((dynamics::overlap_measure(&c, res, &rows, 0.0).unwrap().0 - 1.0).abs());
        let phi = Complex64::from_polar(1.0, rng.r#gen::<f64>() * std::f64::consts::TAU);
        let rotated = Superposition::new(s.clone(), c.c.iter().map(|z| z * phi).collect()).unwrap();
        let mut flipped = res.clone();
        for g in 0..flipped.len() {
            if rng.r#gen::<bool>() {
                for k in 0..flipped.n_q() {
                    flipped.a[(k, g)] = -flipped.a[(k, g)];
                }
            }
        }
        for &t in &times {
            let p = dynamics::population(&c, res, &rows, t).unwrap();
            let (w, pt) = dynamics::overlap_measure(&c, res, &rows, t).unwrap();
            e_w = e_w.max((p - w - pt).abs());
            let dec = dynamics::decompose(&c, res, &rows, t).unwrap();
            e_dec = e_dec.max((p - dec.direct - dec.interference).abs());
            let pr = dynamics::population(&rotated, res, &rows, t).unwrap();
            let pf = dynamics::population(&c, &flipped, &rows, t).unwrap();
            e_phase = e_phase.max((pr - p).abs()).max((pf - p).abs());
        }
    }
    v.check(e_p0 <= 1e-12, format!("P(0) = 1, max error {e_p0:.3e}"));
    v.check(e_w <= 1e-12, format!("P = W + P~ with W(0) = 1, max error {e_w:.3e}"));
    v.check(e_dec <= 1e-12, format!("P = direct + interference, max error {e_dec:.3e}"));
    v.check(e_phase <= 1e-12, format!("global-phase and eigenvector-sign invariance, max error {e_phase:.3e}"));

    let k = dynamics::kernel(res, 100.0, &rows, &s).unwrap();
    let lo = q.session.optimize(100.0, Mode::Minimize).unwrap().lambda;
    let hi = q.session.optimize(100.0, Mode::Maximize).unwrap().lambda;
    let mut outside = 0;
    let mut herm = 0.0f64;
    for _ in 0..1000 {
        let c = random_unit(&mut rng, s.len());
        let cm = Mat::from_fn(s.len(), 1, |i, _| c[i]);
        let kc = &k * &cm;
        let val: Complex64 = (0..s.len()).map(|i| c[i].conj() * kc[(i, 0)]).sum();
        herm = herm.max(val.im.abs());
        if val.re < lo - 1e-12 || val.re > hi + 1e-12 {
            outside += 1;
        }
    }
    v.check(outside == 0 && herm <= 1e-12, format!("K(100 fs) sandwich: {outside} of 1000 outside [{lo:.6}, {hi:.6}], max |Im| {herm:.1e}"));
    v
}

struct Controlled {
    result: ControlResult,
    evolution: Evolution,
}

fn controlled(q: &Quantum, t_fs: f64, mode: Mode) -> Controlled {
    let result = q.session.optimize(t_fs, mode).unwrap();
    let evolution = pipeline::evolve(&q.session, &result.superposition, true).unwrap();
    Controlled { result, evolution }
}

fn criterion4(sup: &Controlled, enh: &Controlled) -> Verdict {
    let mut v = Verdict::new();
    let (lmax, lmin) = (sup.result.lambda, enh.result.lambda);
    v.check(lmax / lmin >= 2.0, format!("lambda_max / lambda_min = {lmax:.4} / {lmin:.4} = {:.2} (>= 2)", lmax / lmin));
    let (fs, fe) = (&sup.evolution.report.fit, &enh.evolution.report.fit);
    v.check(
        fs.t_delta / fe.t_delta >= 3.0,
        format!("t_delta ratio {:.2} / {:.2} fs = {:.2} (>= 3)", fs.t_delta, fe.t_delta, fs.t_delta / fe.t_delta),
    );
    let (td_s, td_e) = refv::DECAY_TIMES;
    let (pi_s, pi_e) = refv::ASYMPTOTES;
    v.check(within(fs.t_delta, td_s, 0.4), format!("t_delta(max) {:.2} fs ({td_s} +- 40%)", fs.t_delta));
    v.check(within(fe.t_delta, td_e, 0.4), format!("t_delta(min) {:.2} fs ({td_e} +- 40%)", fe.t_delta));
    v.check(within(fs.p_inf, pi_s, 0.4), format!("P_inf(max) {:.3} ({pi_s} +- 40%)", fs.p_inf));
    v.check(within(fe.p_inf, pi_e, 0.4), format!("P_inf(min) {:.3} ({pi_e} +- 40%)", fe.p_inf));
    let (ts, te) = (1.0 - sup.evolution.report.p_50fs, 1.0 - enh.evolution.report.p_50fs);
    let (ps, pe) = refv::TRANSFERRED_50FS;
    v.check(ts <= 0.35, format!("transferred by 50 fs under suppression {ts:.3} (<= 0.35; published {ps})"));
    v.check(te >= 0.65, format!("transferred by 50 fs under enhancement {te:.3} (>= 0.65; published {pe})"));
    v
}

fn weights_by_kappa(r: &ControlResult, n_q: usize) -> Vec<(usize, f64)> {
    let s = &r.superposition;
    let mut w: Vec<(usize, f64)> = s.s_indices.iter().zip(&s.c).map(|(&k, c)| (pipeline::kappa(n_q, k), c.norm_sqr())).collect();
    w.sort_by(|a, b| b.1.total_cmp(&a.1));
    w
}

fn criterion5(q: &Quantum, sup: &Controlled, enh: &Controlled) -> Verdict {
    let mut v = Verdict::new();
    let n_q = q.session.resonances().unwrap().n_q();
    let ws = weights_by_kappa(&sup.result, n_q);
    let we = weights_by_kappa(&enh.result, n_q);
    let get = |w: &[(usize, f64)], k: usize| w.iter().find(|x| x.0 == k).map_or(0.0, |x| x.1);
    let top2: Vec<usize> = ws.iter().take(2).map(|x| x.0).collect();
    let show = |w: &[(usize, f64)]| w.iter().take(4).map(|(k, x)| format!("k{k}:{x:.3}")).collect::<Vec<_>>().join(" ");
    v.check(top2.contains(&4) && top2.contains(&8), format!("suppression top two {top2:?} (kappa 4 and 8); ranked {}", show(&ws)));
    let comb = get(&ws, 4) + get(&ws, 8);
    v.check(comb >= 0.45, format!("suppression weight on kappa 4 + 8 = {comb:.3} (>= 0.45)"));
    for k in [4, 8] {
        let (x, want) = (get(&ws, k), refv::SUPPRESSION_WEIGHTS[k - 1]);
        v.check((x - want).abs() <= 0.15, format!("suppression |c_{k}|^2 = {x:.3} ({want} +- 0.15)"));
    }
    v.check(we[0].0 == 7, format!("enhancement ranks kappa {} first (kappa 7); ranked {}", we[0].0, show(&we)));
    let want = refv::ENHANCEMENT_WEIGHTS[6];
    v.check((get(&we, 7) - want).abs() <= 0.15, format!("enhancement |c_7|^2 = {:.3} ({want} +- 0.15)", get(&we, 7)));
    v
}

fn criterion6(q: &Quantum) -> Verdict {
    let mut v = Verdict::new();
    let hi = q.session.optimize(1500.0, Mode::Maximize).unwrap().lambda;
    let lo = q.session.optimize(1500.0, Mode::Minimize).unwrap().lambda;
    let (ps, pe) = refv::RETAINED_1500FS;
    v.check(hi >= 0.40, format!("retained at 1.5 ps under suppression {hi:.4} (>= 0.40; published {ps})"));
    v.check(lo <= 0.30, format!("retained at 1.5 ps under enhancement {lo:.4} (<= 0.30; published {pe})"));
    v
}

fn criterion7() -> Verdict {
    let mut v = Verdict::new();
    let cfg = RunConfig::default();
    let run = pipeline::run_classical(&cfg).expect("classical run");
    let r = &run.report;
    let (ls, lc) = refv::LYAPUNOV;
    let (c, st) = (r.lambda_chaotic, r.lambda_stable);
    v.check((8.0..=26.0).contains(&c), format!("lambda_t(chaotic) {c:.2} /ps ([8, 26]; published {lc})"));
    v.check((0.7..=3.0).contains(&st), format!("lambda_t(stable) {st:.2} /ps ([0.7, 3]; published {ls})"));
    let ratio = r.lambda_chaotic / r.lambda_stable;
    v.check(ratio >= 5.0, format!("ratio {ratio:.1} (>= 5)"));
    v.check(r.energy_drift < 1e-8, format!("relative energy drift {:.2e} (< 1e-8)", r.energy_drift));
    v.check(
        (r.island_fraction - refv::ISLAND_FRACTION).abs() <= 0.10,
        format!("island fraction {:.3} = {}/{} cells (0.33 +- 0.10)", r.island_fraction, r.island_cells.0, r.island_cells.1),
    );
    let (p1, p2) = r.periods_fs;
    let (q1, q2) = refv::PERIODS_FS;
    v.check(within(p1, q1, 0.02) && within(p2, q2, 0.02), format!("periods {p1:.2} / {p2:.2} fs ({q1} / {q2} +- 2%)"));
    v
}

fn criterion8(sup: &Controlled, enh: &Controlled) -> Verdict {
    let mut v = Verdict::new();
    let mut worst = 0.0f64;
    for c in [sup, enh] {
        for s in &c.evolution.report.snapshots {
            worst = worst.max((s.norm - 1.0).abs());
        }
    }
    let n = sup.evolution.report.snapshots.len() + enh.evolution.report.snapshots.len();
    v.check(worst <= 1e-6, format!("density norm over {n} snapshots, max |norm - 1| {worst:.2e} (<= 1e-6)"));
    let (ep, em) = (sup.evolution.report.mean_energy, enh.evolution.report.mean_energy);
    let (wp, wm) = refv::PACKET_ENERGIES;
    v.check((ep - wp).abs() <= 0.002, format!("<H> suppression {ep:.5} ({wp} +- 0.002)"));
    v.check((em - wm).abs() <= 0.002, format!("<H> enhancement {em:.5} ({wm} +- 0.002)"));
    let mean = 0.5 * (ep + em);
    let e0 = refv::REFERENCE_ENERGY;
    v.check((mean - e0).abs() <= 0.001, format!("mean <H> {mean:.5} ({e0} +- 0.001)"));
    v
}

fn report(n: usize, title: &str, v: &Verdict) -> bool {
    println!("criterion {n} {}: {title}", if v.pass { "PASS" } else { "FAIL" });
    for l in &v.lines {
        println!("    {l}");
    }
    v.pass
}

fn main() -> ExitCode {
    // `cargo test -- --list` and filters expect a harness; there is only one target here.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let mut all = true;
    all &= report(1, "zeroth-order spectrum", &criterion1());

    let t = Instant::now();
    let session = Session::new(RunConfig::default(), None);
    session.resonances().expect("Feshbach eigenstates");
    let feshbach_seconds = t.elapsed().as_secs_f64();
    let qs = session.system().unwrap();
    let spec = feshbach::direct_spectrum(&qs.h).expect("direct diagonalization");
    let direct = feshbach::direct_resonances(&qs.pb, &spec);
    let q = Quantum { session, direct, feshbach_seconds };

    all &= report(2, "Feshbach vs direct diagonalization", &criterion2(&q));
    all &= report(3, "exact identities", &criterion3(&q));
    let sup = controlled(&q, 100.0, Mode::Maximize);
    let enh = controlled(&q, 100.0, Mode::Minimize);
    all &= report(4, "control contrast at 100 fs", &criterion4(&sup, &enh));
    all &= report(5, "optimal-weight structure", &criterion5(&q, &sup, &enh));
    all &= report(6, "long-horizon control", &criterion6(&q));
    all &= report(7, "classical diagnostics", &criterion7());
    all &= report(8, "wavepacket checks", &criterion8(&sup, &enh));
    if all { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
