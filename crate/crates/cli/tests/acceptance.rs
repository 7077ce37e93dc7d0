//! End-to-end acceptance suite. Every test writes one verdict line to stderr
//! (bypassing the test harness capture) and then asserts it.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use bdls::analysis::{convergence_study, metastability_probe, ConvergenceSetup, InitialProfile, MetastabilitySetup};
use bdls::experiment::{run, ExperimentConfig};
use bdls::kinetics::{classify_regime, discrete_rates, RateFn, RateModel};
use bdls::ls::{weak_form_report, LsGrid, LsOptions, LsSolver, LsState};
use bdls::measure::weak_form_family;
use bdls::moments::{integrate_moments, MomentParams, MomentState};
use bdls::stationary::{sample_frozen_bath, verify_stationary_measure_support, FrozenBathRun, SupportReport};

fn verdict(id: u32, title: &str, passed: bool, detail: &str) {
    let line = format!("[criterion {id:>2}] {} {title}: {detail}\n", if passed { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(passed, "criterion {id} ({title}) failed: {detail}");
}

fn fig1_model() -> RateModel {
    RateModel::new(RateFn::Constant(1.0), RateFn::Constant(2.0), 1.0, 1.0).unwrap()
}

fn fig1_setup(eps_list: Vec<f64>, workers: usize) -> ConvergenceSetup {
    let cfg = ExperimentConfig::preset("fig1").unwrap();
    let g = cfg.grid.unwrap();
    ConvergenceSetup {
        model: fig1_model(),
        m: cfg.m,
        eps_list,
        n_traj: cfg.ensemble.n_traj,
        t_end: cfg.t_end.unwrap(),
        n_out: cfg.n_out,
        seed: cfg.ensemble.seed,
        workers,
        event_budget: cfg.budget.per_trajectory,
        initial: InitialProfile::pure_monomer(),
        grid: LsGrid::new(g.x_max, g.cells).unwrap(),
        cfl: g.cfl,
        occupation_n_max: cfg.occupation_n_max,
        full_mass_check: false,
    }
}

fn fmt(values: &[f64]) -> String {
    let items: Vec<String> = values.iter().map(|v| format!("{v:.4}")).collect();
    format!("[{}]", items.join(", "))
}

#[test]
fn criterion_01_exact_conservation() {
    let mut setup = fig1_setup(vec![0.02], 1);
    setup.full_mass_check = true;
    let start = Instant::now();
    let table = convergence_study(&setup).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let row = &table.rows[0];
    let passed = row.mass_failures == 0 && row.mass_checks == row.events && row.events > 0 && secs < 60.0;
    verdict(
        1,
        "exact conservation",
        passed,
        &format!(
            "{} events, {} identity checks, {} failures, {:.1} s single-threaded",
            row.events, row.mass_checks, row.mass_failures, secs
        ),
    );
}

fn ls_gap(cells: usize) -> f64 {
    let times: Vec<f64> = (0..=64).map(|k| k as f64 / 64.0).collect();
    let params = MomentParams::from_model(&fig1_model(), 3.0).unwrap();
    let ode = integrate_moments(MomentState::pure_monomer(3.0), &params, &times, 1e-2).unwrap();
    let opts = LsOptions { cfl: 0.9, output_times: times, profile_times: vec![], keep_steps: false };
    let grid = LsGrid::new(4.0, cells).unwrap();
    let pde = LsSolver::new(fig1_model(), 0.9).unwrap().solve(LsState::pure_monomer(grid, 3.0), &opts).unwrap();
    ode.points.iter().zip(&pde.series).map(|(o, p)| (o.u - p.u).abs()).fold(0.0, f64::max)
}

#[test]
fn criterion_02_moment_ode_vs_pde() {
    let (coarse, fine) = (ls_gap(800), ls_gap(1600));
    let ratio = coarse / fine;
    let passed = coarse <= 0.02 * 3.0 && (1.6..=2.4).contains(&ratio);
    verdict(
        2,
        "moment ODE / PDE cross-validation",
        passed,
        &format!("sup gap J=800 {coarse:.3e} ({:.3}% of m), J=1600 {fine:.3e}, ratio {ratio:.3}", 100.0 * coarse / 3.0),
    );
}

#[test]
fn criteria_03_04_convergence_and_boundary_layer() {
    let start = Instant::now();
    let table = convergence_study(&fig1_setup(vec![0.04, 0.02, 0.01], 8)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let errors: Vec<f64> = table.rows.iter().map(|r| r.error).collect();
    let finest = *errors.last().unwrap();
    let c3 = table.monotone && finest <= 0.05 * 3.0 && secs < 1800.0;
    let k2: Vec<f64> = table.rows.iter().map(|r| r.occupancy.as_ref().unwrap()[0]).collect();
    let c4 = k2.windows(2).all(|w| w[1] < w[0]);
    let window = table.reference.incoming_until.unwrap_or(0.0);
    let c3_detail = format!(
        "e(eps) = {} for eps = [0.04, 0.02, 0.01], e(0.01) = {:.2}% of m, orders {}, {:.1} s",
        fmt(&errors),
        100.0 * finest / 3.0,
        fmt(&table.orders),
        secs
    );
    let c4_detail = format!("eps<k2> on [0, {window}] = {}", fmt(&k2));
    let line3 = format!("[criterion  3] {} SSA -> LS convergence: {c3_detail}\n", if c3 { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line3.as_bytes());
    verdict(4, "boundary-layer vanishing", c4, &c4_detail);
    assert!(c3, "criterion 3 failed: {c3_detail}");
}

#[test]
fn criterion_05_stationary_profile() {
    let model = RateModel::new(RateFn::Constant(1.0), RateFn::Constant(2.0), 1.0, 1.0).unwrap();
    let regime = classify_regime(&model).unwrap();
    let run = FrozenBathRun {
        model: model.clone(),
        c: 1.0,
        burn_in: 10.0,
        window: 40.0,
        n_max: 5,
        n_traj: 32,
        seed: 5,
        workers: 0,
        event_budget: 1 << 32,
    };
    let sample = sample_frozen_bath(&run, 0.05).unwrap();
    let rates = discrete_rates(&model, 6).unwrap();
    let SupportReport::Ratios(tables) =
        verify_stationary_measure_support(&[sample], &regime, &rates, 1.0, 0.05).unwrap()
    else {
        panic!("expected a ratio table");
    };
    let rows = &tables[0].1;
    let first = rows[1].ratio;
    let worst = rows[1..=5].iter().map(|r| r.z_score().abs()).fold(0.0, f64::max);
    let passed = (0.45..=0.55).contains(&first) && worst <= 3.0;
    let ratios: Vec<f64> = rows[1..=5].iter().map(|r| r.ratio).collect();
    verdict(
        5,
        "stationary profile",
        passed,
        &format!("<k3>/<k2> = {first:.4} (target 0.5), ratios n=1..5 {}, max |z| = {worst:.2}", fmt(&ratios)),
    );
}

#[test]
fn criterion_06_stationary_uniqueness() {
    let model = RateModel::new(RateFn::Constant(1.0), RateFn::Constant(2.0), 1.0, 1.0).unwrap();
    let regime = classify_regime(&model).unwrap();
    let run = FrozenBathRun {
        model: model.clone(),
        c: 3.0,
        burn_in: 1.0,
        window: 3.0,
        n_max: 2,
        n_traj: 16,
        seed: 6,
        workers: 0,
        event_budget: 1 << 32,
    };
    let samples: Vec<_> = [0.1, 0.05, 0.025].iter().map(|&e| sample_frozen_bath(&run, e).unwrap()).collect();
    let rates = discrete_rates(&model, 3).unwrap();
    let SupportReport::Vanishing { levels, .. } =
        verify_stationary_measure_support(&samples, &regime, &rates, 3.0, 0.05).unwrap()
    else {
        panic!("expected vanishing occupancies");
    };
    let factors: Vec<f64> =
        levels.windows(2).flat_map(|w| (0..3).map(|n| w[0].mean[n] / w[1].mean[n]).collect::<Vec<_>>()).collect();
    let passed = factors.iter().all(|f| *f >= 1.5);
    let k2: Vec<f64> = levels.iter().map(|l| l.mean[0]).collect();
    verdict(
        6,
        "stationary uniqueness above threshold",
        passed,
        &format!("eps<k2> at eps = 0.1, 0.05, 0.025: {}, halving factors (n = 0,1,2) {}", fmt(&k2), fmt(&factors)),
    );
}

#[test]
fn criterion_07_first_passage_scaling() {
    let cfg = ExperimentConfig::preset("fig2").unwrap();
    let out = run(&cfg, Path::new(".")).unwrap();
    let csv = String::from_utf8(out.artifacts.get("passage.csv").unwrap().to_vec()).unwrap();
    let rows: Vec<Vec<f64>> = csv.lines().skip(1).map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    let (t0, se): (Vec<f64>, Vec<f64>) = rows.iter().map(|r| (r[5], r[6])).unzip();
    let n = t0.len();
    let changes: Vec<f64> = (n - 2..n).map(|k| (t0[k] - t0[k - 1]).abs() / t0[k - 1]).collect();
    let passed = changes.iter().all(|c| *c < 0.25) && se.iter().all(|s| s.is_finite() && *s > 0.0);
    verdict(
        7,
        "first-passage scaling",
        passed,
        &format!("eps T0 = {} ± {}, relative changes at the small end {}", fmt(&t0), fmt(&se), fmt(&changes)),
    );
}

#[test]
fn criterion_08_metastability_direction() {
    let cfg = ExperimentConfig::preset("fig3").unwrap();
    let ms = cfg.metastability.unwrap();
    let setup = MetastabilitySetup {
        model: RateModel::new(RateFn::Linear { slope: 1.0, intercept: 0.0 }, RateFn::Constant(1.0), 1.0, 1.0).unwrap(),
        m: cfg.m,
        eps_list: cfg.eps.clone(),
        n_traj: cfg.ensemble.n_traj,
        threshold: ms.threshold,
        band: ms.band,
        time_limit: ms.time_limit,
        seed: cfg.ensemble.seed,
        workers: 0,
        event_budget: cfg.budget.per_trajectory,
    };
    let table = metastability_probe(&setup).unwrap();
    let means: Vec<f64> = table.rows.iter().map(|r| r.mean_switch).collect();
    let direction = means.windows(2).all(|w| w[1] > w[0]) && table.rows.iter().all(|r| r.n_censored == 0);
    let bands: Vec<f64> = table.rows.iter().map(|r| r.min_band_fraction).collect();
    let band = bands.iter().all(|b| *b >= 0.9);
    verdict(
        8,
        "metastability direction",
        direction && band,
        &format!(
            "mean switch time at eps = 0.04, 0.025: {} (increasing: {direction}); smallest pre-switch fraction within 10% of m: {} (>= 0.9: {band})",
            fmt(&means),
            fmt(&bands)
        ),
    );
}

fn bump_model() -> RateModel {
    RateModel::new(RateFn::Constant(1.0), RateFn::Constant(0.0), 0.0, 0.0).unwrap()
}

const BUMP_CENTER: f64 = 1.0;
const BUMP_WIDTH: f64 = 0.5;

fn bump(x: f64) -> f64 {
    let s = (x - BUMP_CENTER) / BUMP_WIDTH;
    if s.abs() >= 1.0 {
        0.0
    } else {
        0.5 * (1.0 - s * s).powi(4)
    }
}

/// L¹ distance between the scheme and the transported bump at `t_end`.
fn characteristics_error(cells: usize, t_end: f64) -> f64 {
    let m = 3.0;
    // ∫ 0.5 (1 - s²)^4 dx = 0.5 w · 256/315, centred at BUMP_CENTER
    let n0 = 0.5 * BUMP_WIDTH * 256.0 / 315.0;
    let u0 = m - BUMP_CENTER * n0;
    // u' = -a N u with N fixed, so the profile moves by ∫ u = u0 (1 - e^{-N t}) / N
    let shift = u0 * (1.0 - (-n0 * t_end).exp()) / n0;
    let grid = LsGrid::new(4.0, cells).unwrap();
    let init = LsState::from_profile(grid, m, bump).unwrap();
    let opts = LsOptions { cfl: 0.9, output_times: vec![t_end], profile_times: vec![], keep_steps: false };
    let run = LsSolver::new(bump_model(), 0.9).unwrap().solve(init, &opts).unwrap();
    let exact = LsState::from_profile(grid, m, |x| bump(x - shift)).unwrap();
    run.final_state.f.iter().zip(&exact.f).map(|(a, b)| (a - b).abs()).sum::<f64>() * grid.dx()
}

#[test]
fn criterion_09_scheme_order() {
    let errors: Vec<f64> = [200, 400, 800, 1600].iter().map(|&j| characteristics_error(j, 0.5)).collect();
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let passed = ratios.iter().all(|r| (1.7..=2.3).contains(r));
    verdict(
        9,
        "scheme order",
        passed,
        &format!(
            "L1 errors J = 200..1600: {:?}, ratios {}",
            errors.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>(),
            fmt(&ratios)
        ),
    );
}

#[test]
fn criterion_10_weak_form_residual() {
    let grid = LsGrid::new(4.0, 800).unwrap();
    let tests = weak_form_family(4.0);
    let reports =
        weak_form_report(&fig1_model(), |g| Ok(LsState::pure_monomer(g, 3.0)), grid, 1.0, 0.9, &tests).unwrap();
    let ratios: Vec<f64> = reports.iter().map(|r| r.ratio()).collect();
    let passed = ratios.iter().all(|r| *r <= 3.0);
    verdict(
        10,
        "weak-form residual",
        passed,
        &format!("residual / quadrature estimate per test function {}", fmt(&ratios)),
    );
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn criterion_11_determinism() {
    let bin = env!("CARGO_BIN_EXE_bdls");
    let tmp = tempfile::tempdir().unwrap();
    let mut details = Vec::new();
    let mut passed = true;
    for preset in ["fig1", "fig2", "fig3"] {
        let status = Command::new(bin).args(["preset", preset, "--out"]).arg(tmp.path()).output().unwrap();
        assert!(status.status.success());
        let config = tmp.path().join(format!("{preset}.json"));
        let mut runs = Vec::new();
        for (k, workers) in ["1", "4"].iter().enumerate() {
            let out = tmp.path().join(format!("{preset}-{k}"));
            let res = Command::new(bin)
                .arg("run")
                .arg(&config)
                .args(["--workers", workers, "--out"])
                .arg(&out)
                .output()
                .unwrap();
            assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
            runs.push(csv_files(&out));
        }
        let same = runs[0] == runs[1] && !runs[0].is_empty();
        passed &= same;
        details.push(format!("{preset}: {} CSV files {}", runs[0].len(), if same { "identical" } else { "DIFFER" }));
    }
    verdict(11, "determinism", passed, &details.join("; "));
}
