//! One PASS/FAIL line per acceptance criterion, at the stated tolerances.
//!
//! Criteria listed in `KNOWN_RED` are expected to fail for the reasons
//! given; the test asserts they are still red so a change in behavior is
//! noticed either way.

use std::fs;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use clap::Parser;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stalr_cli::{compare_runs, oracle_table, run, verify_report, Cli, VerifyOptions, EXIT_CERTIFICATION};
use stalr_core::control::{xi1, xi1_jacobian, xi2, ControllerSpec};
use stalr_core::dde::{simulate, InitialFunction, SimConfig};
use stalr_core::lyapunov::{
    certify_assumption1, eta_constants, nominal_runs, pst_matrix, qhat_sweep, random_constant_phis,
    reaching_time_bound, QuadraticLkf,
};
use stalr_core::model::{example, example_law, example_system, NoUncertainty, NominalLaw};
use stalr_core::reduced_oracle::{comparison_solution, RandomConfig};
use stalr_core::scenario::Scenario;

const KNOWN_RED: &[(u8, &str)] = &[
    (
        2,
        "property 3 equality is false for k = 1: the scalar Jacobian is 1/(2|w|^1/2) + k3, \
         so the stated norm is only an upper bound there",
    ),
    (
        5,
        "the printed P, Q, R do not make the functional decrease along the nominal example loop",
    ),
];

struct Verdict {
    id: u8,
    title: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn timed(id: u8, title: &'static str, limit: Option<f64>, f: impl FnOnce() -> (bool, String)) -> Verdict {
    let start = Instant::now();
    let (mut pass, mut detail) = f();
    let elapsed = start.elapsed();
    if let Some(limit) = limit {
        if elapsed.as_secs_f64() >= limit {
            pass = false;
            detail.push_str(&format!("; over the {limit} s budget"));
        }
    }
    Verdict {
        id,
        title,
        pass,
        detail,
        elapsed,
    }
}

fn value(report: &str, key: &str) -> Option<f64> {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .and_then(|v| v.parse().ok())
}

fn criterion1() -> (bool, String) {
    let out = verify_report(&Scenario::example(), &VerifyOptions::default());
    let w1 = value(&out.stdout, "w_coeff_1").unwrap_or(f64::NAN);
    let w2 = value(&out.stdout, "w_coeff_2").unwrap_or(f64::NAN);
    let c = value(&out.stdout, "c").unwrap_or(f64::NAN);
    let pass = (w1 - 7.2251).abs() <= 1e-3 && (w2 - 2.9244).abs() <= 1e-3 && (c - 3.3832).abs() <= 5e-4;
    (pass, format!("2B^T P = ({w1:.5}, {w2:.5}), c = {c:.5}"))
}

fn criterion2() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let cases = 1000;
    let mut fail = [0usize; 4];
    let mut p3_by_k = [0usize; 3];
    let mut per_k = [0usize; 3];
    for _ in 0..cases {
        let k = rng.gen_range(1..=3);
        let k3 = rng.gen_range(0.0..5.0);
        let raw = DVector::from_fn(k, |_, _| rng.gen_range(-10.0..10.0));
        if raw.norm() < 1e-6 {
            continue;
        }
        let w = &raw / raw.norm() * 10f64.powf(rng.gen_range(-3.0..2.0));
        per_k[k - 1] += 1;
        let j = xi1_jacobian(&w, k3).unwrap();

        let lhs = xi2(&w, k3);
        let rhs = &j * xi1(&w, k3);
        if (&lhs - &rhs).norm() > 1e-9 * (1.0 + lhs.norm()) {
            fail[0] += 1;
        }
        let step = 1e-6 * w.norm();
        let mut fd = DMatrix::zeros(k, k);
        for c in 0..k {
            let mut plus = w.clone();
            let mut minus = w.clone();
            plus[c] += step;
            minus[c] -= step;
            fd.set_column(c, &((xi1(&plus, k3) - xi1(&minus, k3)) / (2.0 * step)));
        }
        if (&j - &fd).amax() > 1e-5 * (1.0 + j.amax()) {
            fail[1] += 1;
        }
        let eig = j.symmetric_eigenvalues();
        let lmin_expected = 0.5 / w.norm().sqrt() + k3;
        if (eig.min() - lmin_expected).abs() > 1e-9 * lmin_expected.max(1.0) {
            fail[2] += 1;
        }
        let norm_expected = 1.0 / w.norm().sqrt() + k3;
        if (eig.abs().max() - norm_expected).abs() > 1e-9 * norm_expected.max(1.0) {
            fail[3] += 1;
            p3_by_k[k - 1] += 1;
        }
    }
    let pass = fail.iter().all(|&f| f == 0);
    let detail = format!(
        "failures: P1 {} | finite differences {} | P2 {} | P3 {} (k=1: {}/{}, k=2: {}/{}, k=3: {}/{})",
        fail[0], fail[1], fail[2], fail[3], p3_by_k[0], per_k[0], p3_by_k[1], per_k[1], p3_by_k[2], per_k[2]
    );
    (pass, detail)
}

fn criterion3() -> (bool, String) {
    let (worst, failures) = qhat_sweep(2024, 10_000, 100.0);
    (
        failures == 0 && worst > 0.0,
        format!("10000 draws, {failures} failures, smallest margin {worst:.3e}"),
    )
}

/// Largest gap between the closed form and RK4 on `v' = -η₁√v - η₂v`
/// up to 90% of the closed form's zero.
fn closed_form_gap(eta1: f64, eta2: f64, v0: f64) -> f64 {
    let f = |v: f64| -eta1 * v.max(0.0).sqrt() - eta2 * v;
    let h = 1e-4;
    let horizon = 0.9 * reaching_time_bound(eta1, eta2, v0);
    let steps = (horizon / h) as usize;
    let mut v = v0;
    let mut gap: f64 = 0.0;
    for i in 0..steps {
        let k1 = f(v);
        let k2 = f(v + 0.5 * h * k1);
        let k3 = f(v + 0.5 * h * k2);
        let k4 = f(v + h * k3);
        v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        let t = (i + 1) as f64 * h;
        gap = gap.max((v - comparison_solution(eta1, eta2, v0, t)).abs());
    }
    gap
}

fn criterion4() -> (bool, String) {
    let (_, failed) = oracle_table(&RandomConfig::default(), 0, 100).expect("oracle runs");
    let pst = pst_matrix(1.0, 0.3, 1);
    let (e1, e2) = eta_constants(0.3, 1.0, pst.lambda_min, pst.lambda_max);
    let gap = [(e1, e2, 5.44), (e1, e2, 0.3), (e1, 0.0, 5.44), (2.0 * e1, 0.5 * e2, 20.0)]
        .iter()
        .map(|&(a, b, v)| closed_form_gap(a, b, v))
        .fold(0.0, f64::max);
    (
        failed == 0 && gap <= 1e-6,
        format!("{} of 100 runs within T and under the comparison solution; closed form vs RK4 gap {gap:.2e}", 100 - failed),
    )
}

fn criterion5() -> (bool, String) {
    let sys = example_system();
    let law = example_law(&sys);
    let lkf = QuadraticLkf::new(example::p(), example::q(), example::r(), example::H).unwrap();
    let phis = random_constant_phis(7, 10, 2, 1.0);
    let runs = nominal_runs(&sys, &law, &lkf, &phis, 1e-2, 60.0).unwrap();
    let certified = certify_assumption1(&lkf, &sys, &law, &runs);

    let flipped = NominalLaw::new(&sys, vec![-example::k0(), -example::k1()]).unwrap();
    let counter = match nominal_runs(&sys, &flipped, &lkf, &phis, 1e-2, 60.0) {
        Ok(runs) => certify_assumption1(&lkf, &sys, &flipped, &runs).is_err(),
        Err(_) => true,
    };
    let detail = match &certified {
        Ok(c) => format!("alpha3 = {:.4e}; counterexample rejected: {counter}", c.alpha3),
        Err(e) => format!("example: {e}; counterexample rejected: {counter}"),
    };
    (certified.is_ok_and(|c| c.alpha3 > 0.0) && counter, detail)
}

fn criterion6() -> (bool, String) {
    let names: Vec<String> = ["unit", "boundary_layer", "sta_lr"].map(String::from).to_vec();
    let runs = compare_runs(&Scenario::example(), &names).expect("example runs");
    let (unit, bl, sta) = (&runs[0], &runs[1], &runs[2]);
    let (ud, bd, sd) = (&unit.diagnostics, &bl.diagnostics, &sta.diagnostics);
    let unit_final = unit.x.last().unwrap().norm();
    let ratio = ud.control_total_variation / sd.control_total_variation;
    let checks = [
        sd.t_reach.is_some(),
        sd.residual_radius <= 1e-2,
        bd.residual_radius > sd.residual_radius,
        bd.residual_radius >= 1e-3,
        unit_final <= 1e-2,
        ratio >= 5.0,
    ];
    let detail = format!(
        "sta_lr reach {:?}, residual {:.2e}; boundary_layer residual {:.2e}; unit |x(T)| {:.2e}, TV ratio {ratio:.2}",
        sd.t_reach, sd.residual_radius, bd.residual_radius, unit_final
    );
    (checks.iter().all(|&c| c), detail)
}

fn criterion7() -> (bool, String) {
    let sys = example_system();
    let law = example_law(&sys);
    let lkf = QuadraticLkf::new(example::p(), example::q(), example::r(), example::H).unwrap();
    let phi = InitialFunction::Sine(vec![1.0, -0.5]);
    let at_one = |step: f64| {
        let cfg = SimConfig::new(step, 1.0, phi.clone(), 1);
        let run = simulate(&sys, &law, &NoUncertainty::new(1), ControllerSpec::None, &lkf, &cfg).unwrap();
        run.x.last().unwrap().clone()
    };
    let (a, b, c) = (at_one(0.02), at_one(0.01), at_one(0.005));
    let rate = ((&a - &b).norm() / (&b - &c).norm()).log2();
    (rate >= 3.5, format!("observed order {rate:.3}"))
}

fn criterion8() -> (bool, String) {
    let base = std::env::temp_dir().join(format!("stalr-acceptance-{}", std::process::id()));
    let _ = fs::remove_dir_all(&base);
    let outputs: Vec<(Vec<u8>, Vec<u8>, String)> = ["a", "b"]
        .iter()
        .map(|tag| {
            let dir: PathBuf = base.join(tag);
            let cli = Cli::try_parse_from(["stalr", "--out", dir.to_str().unwrap(), "simulate"]).unwrap();
            let o = run(&cli);
            assert_eq!(o.code, 0, "{}", o.stderr);
            let verify = verify_report(&Scenario::example(), &VerifyOptions::default());
            (
                fs::read(dir.join("trajectory.csv")).unwrap(),
                fs::read(dir.join("report.txt")).unwrap(),
                verify.stdout,
            )
        })
        .collect();
    let _ = fs::remove_dir_all(&base);
    let same = outputs[0] == outputs[1];
    (same, format!("trajectory.csv {} bytes, report and verify output compared", outputs[0].0.len()))
}

#[test]
fn acceptance() {
    let verdicts = vec![
        timed(1, "derived constants", Some(1.0), criterion1),
        timed(2, "xi identities", Some(5.0), criterion2),
        timed(3, "gain inequality", Some(10.0), criterion3),
        timed(4, "oracle vs bound", Some(60.0), criterion4),
        timed(5, "functional certification", Some(30.0), criterion5),
        timed(6, "example regression", Some(60.0), criterion6),
        timed(7, "integrator order", Some(10.0), criterion7),
        timed(8, "determinism", None, criterion8),
    ];
    let mut unexpected = Vec::new();
    for v in &verdicts {
        let known = KNOWN_RED.iter().find(|(id, _)| *id == v.id);
        let status = if v.pass { "PASS" } else { "FAIL" };
        let mut line = format!(
            "{status} criterion {} ({}): {} [{:.2} s]",
            v.id,
            v.title,
            v.detail,
            v.elapsed.as_secs_f64()
        );
        if let Some((_, reason)) = known {
            line.push_str(&format!(" [known red: {reason}]"));
        }
        println!("{line}");
        match (v.pass, known.is_some()) {
            (false, false) => unexpected.push(format!("criterion {} failed", v.id)),
            (true, true) => unexpected.push(format!("criterion {} is listed as known red but passed", v.id)),
            _ => {}
        }
    }
    assert!(unexpected.is_empty(), "{unexpected:?}");
}

#[test]
fn verify_exit_code_reflects_certification() {
    let out = verify_report(&Scenario::example(), &VerifyOptions::default());
    assert_eq!(out.code, EXIT_CERTIFICATION);
}
