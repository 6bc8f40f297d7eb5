//! Acceptance gate: runs every criterion and prints one PASS/FAIL line each.
//! Exits non-zero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{
    centralized_size, derivative_check, feasible_multipliers, random_hull_case, random_pair, rng, separated_pair,
    sweep_body, FdTally, Motion,
};
use nalgebra::DVector;
use polycbf::braking::{hull_distance_primal, hull_geometry, reduced_dual};
use polycbf::distance::{lagrangian_value, min_distance_dual, min_distance_primal, solve_dual_qp};
use polycbf::ncbf::hdot_lp_masked;
use polycbf::oracle::{polygon_distance_2d, polyhedron_distance_3d, sampled_sweep_min};
use polycbf::scenario::ScenarioConfig;
use polycbf::sim::{FleetRun, SofaOutcome, SofaRun};
use polycbf::{par, Execution};
use rand::Rng;

type Verdict = (bool, String);

fn scenario(name: &str) -> ScenarioConfig {
    let path = format!("{}/../../scenarios/{name}", env!("CARGO_MANIFEST_DIR"));
    ScenarioConfig::from_file(path).expect("scenario file")
}

fn strong_duality() -> Verdict {
    let start = Instant::now();
    let mut r = rng(1001);
    let mut worst = 0.0f64;
    let mut errors = 0;
    for k in 0..500 {
        let (pi, pj) = random_pair(&mut r, if k % 2 == 0 { 2 } else { 3 }).placed();
        match (min_distance_primal(&pi, &pj), solve_dual_qp(&pi, &pj)) {
            (Ok((hp, _, _)), Ok((hd, _, _))) => worst = worst.max((hp - hd).abs() / (1.0 + hp)),
            _ => errors += 1,
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        errors == 0 && worst <= 1e-6 && secs < 10.0,
        format!("500 pairs, max |h_p - h_d|/(1+h) = {worst:.2e}, errors {errors}, {secs:.2} s"),
    )
}

fn oracle_equivalence() -> Verdict {
    let mut r = rng(1002);
    let mut worst2 = 0.0f64;
    for _ in 0..500 {
        let (pi, pj) = random_pair(&mut r, 2).placed();
        let h = min_distance_dual(&pi, &pj).map_or(f64::INFINITY, |d| d.h);
        worst2 = worst2.max((h - polygon_distance_2d(&pi, &pj).value).abs());
    }
    let mut worst3 = 0.0f64;
    for _ in 0..200 {
        let (pi, pj) = random_pair(&mut r, 3).placed();
        let h = min_distance_dual(&pi, &pj).map_or(f64::INFINITY, |d| d.h);
        worst3 = worst3.max((h - polyhedron_distance_3d(&pi, &pj).value).abs());
    }
    (worst2 <= 1e-8 && worst3 <= 1e-5, format!("2D max error {worst2:.2e} (500), 3D max error {worst3:.2e} (200)"))
}

fn derivative_lp() -> Verdict {
    let mut r = rng(1003);
    let mut total = FdTally::default();
    for k in 0..10 {
        let m = Motion::random(&mut r, if k < 5 { 2 } else { 3 });
        let t = derivative_check(&m, 40);
        total.matched += t.matched;
        total.compared += t.compared;
        total.switches += t.switches;
    }
    let share = total.matched as f64 / total.compared.max(1) as f64;
    (
        total.compared > 0 && share >= 0.95,
        format!(
            "10 motions, {}/{} samples within 1e-3 ({:.1}%), {} excluded near switches",
            total.matched,
            total.compared,
            100.0 * share,
            total.switches
        ),
    )
}

fn sofa_safety(out: &SofaOutcome, eps1: f64) -> Verdict {
    let eps_sq = eps1 * eps1;
    (
        out.min_h >= eps_sq && out.v_final < 0.1 * out.v_initial,
        format!(
            "{} steps, min h = {:.6e} (>= {eps_sq:.2e}), V final/initial = {:.2e}",
            out.trace.rows.len(),
            out.min_h,
            out.v_final / out.v_initial
        ),
    )
}

fn sofa_size(out: &SofaOutcome) -> Verdict {
    let vars_ok = out.filter_sizes.iter().all(|s| s.variables == 51);
    let max_c = out.filter_sizes.iter().map(|s| s.constraints_max()).max().unwrap_or(0);
    let max_built = out.filter_sizes.iter().map(|s| s.constraints_built()).max().unwrap_or(0);
    (
        vars_ok && max_c <= 72 && max_built <= 72,
        format!("variables 51 at every step: {vars_ok}, constraints <= {max_c} (largest built {max_built})"),
    )
}

fn sofa_timing(out: &SofaOutcome) -> Verdict {
    (out.mean_step_ms <= 20.0, format!("mean step {:.3} ms", out.mean_step_ms))
}

fn hull_correctness() -> Verdict {
    let mut r = rng(1007);
    let cases: Vec<_> = (0..200).map(|_| random_hull_case(&mut r)).collect();
    let errs = par::map(Execution::default(), &cases, |(pi, pj, si, sj, tm)| {
        let g = hull_geometry(si, sj, pi, pj, *tm);
        let h = hull_distance_primal(&g).map_or(f64::NAN, |p| p.h);
        let sweep = sampled_sweep_min(&sweep_body(pi, si), &sweep_body(pj, sj), *tm, 1000).value;
        let hd = reduced_dual(&g).map_or(f64::NAN, |d| d.0);
        ((h - sweep).abs(), (hd - h).abs())
    });
    let sweep_err = errs.iter().map(|e| e.0).fold(0.0, f64::max);
    let dual_err = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    let finite = errs.iter().all(|e| e.0.is_finite() && e.1.is_finite());
    (
        finite && sweep_err <= 1e-3 && dual_err <= 1e-6,
        format!("200 pairs, hull vs sweep {sweep_err:.2e}, reduced dual vs primal {dual_err:.2e}"),
    )
}

fn centralized_sizes() -> Verdict {
    let got: Vec<(usize, usize)> = [3, 5, 10].iter().map(|&n| centralized_size(n)).collect();
    let want = vec![(48, 72), (130, 205), (510, 835)];
    (got == want, format!("N=3,5,10 variables/constraints {got:?}"))
}

fn braking_safety() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ["fleet3.json", "fleet3_forced.json"] {
        let cfg = scenario(name);
        match FleetRun::from_config(&cfg).and_then(|r| r.run(Execution::default())) {
            Ok(out) => {
                ok &= out.min_sqrt_rho >= cfg.centralized.eps - 1e-4;
                if !cfg.supervisor.force_infeasible_steps.is_empty() {
                    ok &= out.latch_count >= 1;
                }
                parts.push(format!("{name}: min sqrt(rho) {:.4e}, latches {}", out.min_sqrt_rho, out.latch_count));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{name}: {e}"));
            }
        }
    }
    (ok, parts.join("; "))
}

fn property_suites() -> Verdict {
    // row removal on random contexts
    let mut r = rng(1010);
    let mut removal_ok = 0;
    for k in 0..100 {
        let m = Motion::random(&mut r, if k % 2 == 0 { 2 } else { 3 });
        let ctx = m.context(r.random_range(0.0..2.0));
        let u = DVector::zeros(0);
        let full = ctx.sign_mask(1e-5);
        let base = hdot_lp_masked(&ctx, &u, &full, 1e3).map(|x| x.g);
        let mut good = base.is_ok();
        if let Ok(base) = base {
            for drop in 0..full.len() {
                if !full[drop] {
                    continue;
                }
                let mut mask = full.clone();
                mask[drop] = false;
                good &= hdot_lp_masked(&ctx, &u, &mask, 1e3).is_ok_and(|x| x.g >= base - 1e-9 * (1.0 + base.abs()));
            }
        }
        removal_ok += good as usize;
    }

    // other input cost on the reference sofa
    let mut cfg = scenario("sofa.json");
    cfg.controller.q_diag = Some(vec![5.0, 0.2]);
    let eps_sq = cfg.controller.eps1 * cfg.controller.eps1;
    let swapped = SofaRun::from_config(&cfg).and_then(|s| s.run(Execution::default()));
    let swap_ok = swapped.as_ref().is_ok_and(|o| o.min_h >= eps_sq);

    // weak duality
    let mut weak_ok = 0;
    for k in 0..100 {
        let (pi, pj) = separated_pair(&mut r, if k % 2 == 0 { 2 } else { 3 }).placed();
        let h = min_distance_dual(&pi, &pj).map_or(f64::NEG_INFINITY, |d| d.h);
        for _ in 0..10 {
            let (li, lj) = feasible_multipliers(&mut r, &pi, &pj);
            weak_ok += lagrangian_value(&li, &lj, &pi, &pj).is_ok_and(|v| v <= h + 1e-7) as usize;
        }
    }
    (
        removal_ok == 100 && swap_ok && weak_ok == 1000,
        format!("row removal {removal_ok}/100, cost swap safe: {swap_ok}, weak duality {weak_ok}/1000"),
    )
}

fn main() -> ExitCode {
    let cfg = scenario("sofa.json");
    let sofa = SofaRun::from_config(&cfg).and_then(|s| s.run(Execution::default()));
    let sofa_failed = |e: &polycbf::Error| (false, format!("sofa run failed: {e}"));

    let results: Vec<(&str, Verdict)> = vec![
        ("1 strong duality", strong_duality()),
        ("2 oracle equivalence", oracle_equivalence()),
        ("3 derivative LP", derivative_lp()),
        ("4 sofa safety", sofa.as_ref().map_or_else(sofa_failed, |o| sofa_safety(o, cfg.controller.eps1))),
        ("5 sofa QP size", sofa.as_ref().map_or_else(sofa_failed, sofa_size)),
        ("6 timing", sofa.as_ref().map_or_else(sofa_failed, sofa_timing)),
        ("7 hull QP", hull_correctness()),
        ("8 centralized sizes", centralized_sizes()),
        ("9 braking safety", braking_safety()),
        ("10 property suites", property_suites()),
    ];
    let mut all = true;
    for (name, (ok, detail)) in &results {
        println!("{} criterion {name}: {detail}", if *ok { "PASS" } else { "FAIL" });
        all &= ok;
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
