//! End-to-end acceptance run. Every criterion prints one `PASS`/`FAIL` line;
//! the test fails if any criterion fails.
//!
//! Bath sizes go up to L = 12 (total dimension 8192), so a full run takes
//! several minutes. Eigensystems are cached in a temporary directory shared
//! by all stages.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use faer::{c64, Mat};
use nalgebra::Matrix2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde_json::{json, Value};

use ethbath::config::{ExperimentConfig, ExperimentKind};
use ethbath::dynamics::{
    build_lindblad, fit_exponential_rate, lindblad_evolve, lowering_operators, mean_field_shift,
    sigma_x, TimeGrid,
};
use ethbath::eth::{rate_matrix_multi, RateFunction, SpectralWindow};
use ethbath::hamiltonian::SystemParams;
use ethbath::linalg::DenseMatrix;
use ethbath::runner::run;
use ethbath::spectra::{diagonalize_matrix, gap_ratios, EigenSystem};

// Pinned tolerances.
const DIAG_COLLAPSE_FACTOR: f64 = 3.0;
const INTEGRABLE_DRIFT_FACTOR: f64 = 2.0;
const DB_ALGEBRAIC: f64 = 1e-12;
const DB_RESIDUAL: f64 = 0.3;
const RK4_POPULATION: f64 = 1e-6;
const STATIONARY_RATIO: f64 = 1e-12;
const COHERENCE_RATIO: f64 = 0.01;
const HWHM_RANGE: (f64, f64) = (0.3, 0.7);
const REVIVAL_LEVEL: f64 = 0.3;
const CLOSURE: f64 = 0.15;
const TRACE_DISTANCE_MAX: f64 = 0.08;
const EXACT_RATE: f64 = 0.25;
const LINDBLAD_RATE: f64 = 0.02;
const CHAOTIC_RATIO: (f64, f64) = (0.50, 0.56);
const INTEGRABLE_RATIO: (f64, f64) = (0.35, 0.45);
const GOE_RATIO: f64 = 0.5307;
const GOE_TOL: f64 = 0.01;
const POISSON_TOL: f64 = 0.01;
const SPREAD_FACTOR: f64 = 3.0;
const SYNTHETIC_EIGEN: f64 = 1e-6;
const NEGATIVITY: f64 = 0.02;
const CENTRAL_OMEGA: f64 = 4.0;

struct Harness {
    root: tempfile::TempDir,
    cache: PathBuf,
    results: Vec<(String, bool)>,
}

impl Harness {
    fn new() -> Self {
        let root = tempfile::tempdir().unwrap();
        let cache = root.path().join("cache");
        Self {
            root,
            cache,
            results: Vec::new(),
        }
    }

    /// Runs one experiment kind and returns its output directory.
    fn run(&self, tag: &str, kind: &str, config: Value) -> PathBuf {
        let kind = ExperimentKind::parse(kind).unwrap();
        let mut cfg = ExperimentConfig::from_json(&config.to_string()).unwrap();
        let out = self.root.path().join(tag);
        cfg.out = out.clone();
        cfg.cache_dir = Some(self.cache.clone());
        run(&cfg, kind).unwrap_or_else(|e| panic!("{tag}: {e}"));
        out
    }

    fn report(&mut self, id: &str, pass: bool, detail: String) {
        println!(
            "{} criterion {id}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        self.results.push((id.to_string(), pass));
    }
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn num(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

/// Rows of a CSV file written by the runner, keyed by header.
fn csv(path: &Path) -> Vec<std::collections::HashMap<String, String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    lines
        .map(|l| {
            header
                .iter()
                .cloned()
                .zip(l.split(',').map(String::from))
                .collect()
        })
        .collect()
}

fn bath(sites: usize, preset: &str) -> Value {
    json!({ "bath": { "L": sites, "preset": preset } })
}

fn criterion_1(h: &mut Harness) {
    let mut series = Vec::new();
    for preset in ["chaotic", "integrable"] {
        let values: Vec<f64> = [6, 8, 10, 12]
            .iter()
            .map(|&l| {
                let dir = h.run(
                    &format!("eth_{preset}_{l}"),
                    "eth-stats",
                    json!({ "model": bath(l, preset) }),
                );
                num(&summary(&dir)["fluctuation"])
            })
            .collect();
        series.push(values);
    }
    let chaotic_steps: Vec<f64> = series[0].windows(2).map(|w| w[0] / w[1]).collect();
    let chaotic_ok = chaotic_steps.iter().all(|&r| r >= DIAG_COLLAPSE_FACTOR);
    let (lo, hi) = series[1]
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    let integrable_ok = hi / lo < INTEGRABLE_DRIFT_FACTOR;
    h.report(
        "1 (diagonal collapse)",
        chaotic_ok && integrable_ok,
        format!(
            "chaotic {:.4?} step ratios {:.2?} (need ≥ {DIAG_COLLAPSE_FACTOR}); integrable {:.4?} max/min {:.2} (need < {INTEGRABLE_DRIFT_FACTOR})",
            series[0], chaotic_steps, series[1], hi / lo
        ),
    );
}

fn criterion_2(h: &mut Harness) {
    let beta = 0.1;
    let dir = h.run(
        "rates_12",
        "rates",
        json!({ "model": bath(12, "chaotic"), "state": { "beta": beta } }),
    );
    let rows = csv(&dir.join("rates.csv"));
    let omega: Vec<f64> = rows.iter().map(|r| r["omega"].parse().unwrap()).collect();
    let gamma: Vec<f64> = rows.iter().map(|r| r["gamma"].parse().unwrap()).collect();
    let n = omega.len();
    let algebraic = (0..n)
        .filter(|&k| gamma[k] > 0.0)
        .map(|k| (gamma[k] - (beta * omega[k]).exp() * gamma[n - 1 - k]).abs() / gamma[k])
        .fold(0.0, f64::max);
    let residual = num(&summary(&dir)["detailed_balance_residual"]);
    h.report(
        "2 (local detailed balance)",
        algebraic <= DB_ALGEBRAIC && residual <= DB_RESIDUAL,
        format!(
            "symmetrized relative residual {algebraic:.1e} (≤ {DB_ALGEBRAIC:.0e}); unsymmetrized residual at ω₀', β = {beta}: {residual:.4} (≤ {DB_RESIDUAL})"
        ),
    );
}

fn criterion_3(h: &mut Harness) {
    let beta = 0.5;
    let sys = SystemParams { omega0: 1.525 };
    let shifted = mean_field_shift(&sys, 0.0, 0.0);
    let w = shifted.omega;
    let down = 0.03;
    let up = down * (-beta * w).exp();
    let rates = RateFunction::tabulated(&[(-w, up), (w, down)], 0.1, beta).unwrap();
    let model = build_lindblad(
        &shifted,
        &lowering_operators(&shifted.hamiltonian, &sigma_x()).unwrap(),
        &rates,
        false,
    )
    .unwrap();
    let grid = TimeGrid::new(200.0, 0.25).unwrap();
    let one = c64::new(1.0, 0.0);
    let excited = Matrix2::new(one, c64::ZERO, c64::ZERO, c64::ZERO);
    let traj = lindblad_evolve(&model, &excited, &grid).unwrap();
    let g = down + up;
    let p_inf = up / g;
    let population = traj
        .times
        .iter()
        .zip(traj.populations())
        .map(|(t, p)| (p - (p_inf + (1.0 - p_inf) * (-g * t).exp())).abs())
        .fold(0.0, f64::max);
    let steady = model.stationary_state().unwrap();
    let ratio = steady[(0, 0)].re / steady[(1, 1)].re;
    let stationary = (ratio - (-beta * w).exp()).abs();
    let half = c64::new(0.5, 0.0);
    let plus = Matrix2::new(half, half, half, half);
    let coh = lindblad_evolve(&model, &plus, &grid).unwrap();
    let fit = fit_exponential_rate(&coh.times, &coh.coherences(), 0.0).unwrap();
    let coh_ratio = fit.rate / model.population_rate();
    h.report(
        "3 (two-level oracle)",
        population <= RK4_POPULATION && stationary <= STATIONARY_RATIO && (coh_ratio - 0.5).abs() <= 0.5 * COHERENCE_RATIO,
        format!(
            "population error {population:.1e} (≤ {RK4_POPULATION:.0e}); p_e/p_g error {stationary:.1e} (≤ {STATIONARY_RATIO:.0e}); γ_coh/γ_pop = {coh_ratio:.5} (1/2 within 1%)"
        ),
    );
}

fn criteria_4_5(h: &mut Harness) {
    let grid = json!({ "t_max": 30.0, "dt": 0.01 });
    let chaotic = summary(&h.run(
        "bcf_chaotic",
        "bcf",
        json!({ "model": bath(12, "chaotic"), "grid": grid }),
    ));
    let integrable = summary(&h.run(
        "bcf_integrable",
        "bcf",
        json!({ "model": bath(12, "integrable"), "grid": grid }),
    ));
    let hwhm = num(&chaotic["half_width"]);
    let revival = num(&integrable["revival_8_25"]);
    let chaotic_late = num(&chaotic["late_max_after_2"]);
    h.report(
        "4 (correlation function structure)",
        (HWHM_RANGE.0..=HWHM_RANGE.1).contains(&hwhm) && revival > REVIVAL_LEVEL && chaotic_late <= REVIVAL_LEVEL,
        format!(
            "chaotic HWHM {hwhm:.3} (in {HWHM_RANGE:?}); integrable max |C|/C(0) on [8, 25] = {revival:.4} (need > {REVIVAL_LEVEL}); chaotic max after τ = 2: {chaotic_late:.4} (need ≤ {REVIVAL_LEVEL})"
        ),
    );
    let closure = num(&chaotic["closure_deviation"]);
    h.report(
        "5 (spectral closure)",
        closure <= CLOSURE,
        format!("max |C_exact − C_ETH| / C(0) on [0, 2] = {closure:.4} (≤ {CLOSURE})"),
    );
}

fn criteria_6_7(h: &mut Harness) {
    let dir = h.run(
        "scaling",
        "scaling",
        json!({ "model": bath(12, "chaotic"), "grid": { "t_max": 100.0, "sizes": [6, 8, 10, 12] } }),
    );
    let s = summary(&dir);
    let chaotic: Vec<f64> = s["presets"]["chaotic"]["avg_trace_distance"]
        .as_array()
        .unwrap()
        .iter()
        .map(num)
        .collect();
    let integrable: Vec<f64> = s["presets"]["integrable"]["avg_trace_distance"]
        .as_array()
        .unwrap()
        .iter()
        .map(num)
        .collect();
    let chaotic_monotone = s["presets"]["chaotic"]["monotone_decrease"]
        .as_bool()
        .unwrap();
    let integrable_monotone = s["presets"]["integrable"]["monotone_decrease"]
        .as_bool()
        .unwrap();
    let last = chaotic[chaotic.len() - 1];
    h.report(
        "6 (exact vs Lindblad scaling)",
        last <= TRACE_DISTANCE_MAX && chaotic_monotone && !integrable_monotone,
        format!(
            "chaotic ⟨T⟩ {chaotic:.4?} (L = 12 ≤ {TRACE_DISTANCE_MAX}, monotone: {chaotic_monotone}); integrable ⟨T⟩ {integrable:.4?} (monotone: {integrable_monotone}, must be false)"
        ),
    );
    let row = csv(&dir.join("scaling.csv"))
        .into_iter()
        .find(|r| r["L"] == "12" && r["preset"] == "chaotic")
        .unwrap();
    let gamma: f64 = row["gamma_pop"].parse().unwrap();
    let exact: f64 = row["fitted_rate_exact"].parse().unwrap();
    let lindblad: f64 = row["fitted_rate_lindblad"].parse().unwrap();
    let (de, dl) = ((exact - gamma) / gamma, (lindblad - gamma) / gamma);
    h.report(
        "7 (rate prediction)",
        de.abs() <= EXACT_RATE && dl.abs() <= LINDBLAD_RATE,
        format!(
            "γ_pop = {gamma:.5}; exact fit {exact:.5} ({:+.1}%, need ±{:.0}%); Lindblad fit {lindblad:.5} ({:+.2}%, need ±{:.0}%)",
            100.0 * de,
            100.0 * EXACT_RATE,
            100.0 * dl,
            100.0 * LINDBLAD_RATE
        ),
    );
}

fn criterion_8(h: &mut Harness) {
    let dir = h.run(
        "mean_force",
        "dynamics",
        json!({
            "model": bath(10, "chaotic"),
            "state": { "bath": "typical", "beta": 0.25, "window": 0.5 },
            "grid": { "t_max": 325.0 },
        }),
    );
    let eq = &summary(&dir)["equilibrium"];
    let (mf, gibbs) = (
        num(&eq["late_minus_mean_force"]),
        num(&eq["late_minus_gibbs"]),
    );
    h.report(
        "8 (mean-force correction)",
        mf < gibbs,
        format!(
            "|late − mean force| = {mf:.6}, |late − Gibbs| = {gibbs:.6} at β_total = {:.4}; correction closes {:.2}% of the bias",
            num(&eq["beta_total"]),
            100.0 * (gibbs - mf) / gibbs
        ),
    );
}

fn goe_mean_ratio(n: usize, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut total = 0.0;
    for _ in 0..samples {
        let mut m = Mat::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let x: f64 = StandardNormal.sample(rng);
                let x = if i == j { x * 2f64.sqrt() } else { x };
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
        }
        let eig = diagonalize_matrix(&DenseMatrix::Real(m)).unwrap();
        total += gap_ratios(eig.eigenvalues(), 0.5).unwrap().mean_ratio;
    }
    total / samples as f64
}

fn criterion_9(h: &mut Harness) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let goe = goe_mean_ratio(400, 20, &mut rng);
    let uni = Uniform::new(0.0, 1.0).unwrap();
    let mut levels: Vec<f64> = (0..40_000).map(|_| uni.sample(&mut rng)).collect();
    levels.sort_by(f64::total_cmp);
    let poisson = gap_ratios(&levels, 1.0).unwrap().mean_ratio;
    let poisson_exact = 2.0 * 2f64.ln() - 1.0;
    let s = summary(&h.run(
        "levelstats",
        "levelstats",
        json!({ "model": bath(10, "chaotic") }),
    ));
    let chaotic = num(&s["presets"]["chaotic"]["mean_ratio"]);
    let integrable = num(&s["presets"]["integrable"]["mean_ratio"]);
    h.report(
        "9 (level statistics)",
        (CHAOTIC_RATIO.0..=CHAOTIC_RATIO.1).contains(&chaotic)
            && (INTEGRABLE_RATIO.0..=INTEGRABLE_RATIO.1).contains(&integrable)
            && (goe - GOE_RATIO).abs() <= GOE_TOL
            && (poisson - poisson_exact).abs() <= POISSON_TOL,
        format!(
            "total chaotic ⟨r⟩ = {chaotic:.4} (in {CHAOTIC_RATIO:?}); integrable {integrable:.4} (in {INTEGRABLE_RATIO:?}); GOE oracle {goe:.4}; Poisson oracle {poisson:.4} vs {poisson_exact:.4}"
        ),
    );
}

fn criterion_10(h: &mut Harness) {
    let run = |h: &Harness, l: usize| {
        summary(&h.run(
            &format!("typicality_{l}"),
            "typicality",
            json!({ "model": bath(l, "chaotic"), "grid": { "t_max": 30.0 } }),
        ))
    };
    let (small, large) = (run(h, 8), run(h, 12));
    let violated =
        small["bound_violated"].as_bool().unwrap() || large["bound_violated"].as_bool().unwrap();
    let (s8, s12) = (num(&small["median_spread"]), num(&large["median_spread"]));
    h.report(
        "10 (typicality)",
        !violated && s8 / s12 >= SPREAD_FACTOR,
        format!(
            "Levy bound violated: {violated}; median spread L = 8 {s8:.4}, L = 12 {s12:.4}, ratio {:.2} (need ≥ {SPREAD_FACTOR})",
            s8 / s12
        ),
    );
}

/// Two operators with known cross-correlations in the ω = 1 bin.
fn synthetic_rate_matrix() -> f64 {
    let levels = [0.0, 1.0, 3.0, 4.0];
    let u = [0.3, -0.4];
    let v = [0.5, 0.2];
    let mk = |mu: usize| {
        let mut m = [[0.0; 4]; 4];
        for (a, b, x) in [
            (1, 0, u[mu]),
            (3, 2, v[mu]),
            (2, 0, 0.1),
            (3, 1, 0.1),
            (2, 1, 0.2),
            (3, 0, 0.3),
        ] {
            m[a][b] = x;
            m[b][a] = x;
        }
        DenseMatrix::Real(Mat::from_fn(4, 4, |i, j| m[i][j]))
    };
    let (b0, b1) = (mk(0), mk(1));
    let eig =
        EigenSystem::from_parts(levels.to_vec(), DenseMatrix::Real(Mat::identity(4, 4))).unwrap();
    let (kappa, beta, density) = (0.2, 0.3, 2.0);
    let win = SpectralWindow {
        min_states: 1,
        ..SpectralWindow::new(2.0, 100.0, 0.25)
    };
    let mats = rate_matrix_multi(&[&b0, &b1], &eig, &win, kappa, beta, Some(density)).unwrap();
    let r = mats.iter().find(|r| (r.omega - 1.0).abs() < 1e-12).unwrap();
    let pre = 2.0 * PI * kappa * kappa * (0.5 * beta).exp() * density / 2.0;
    let f = [
        [u[0] * u[0] + v[0] * v[0], u[0] * u[1] + v[0] * v[1]],
        [u[1] * u[0] + v[1] * v[0], u[1] * u[1] + v[1] * v[1]],
    ];
    let (tr, det) = (f[0][0] + f[1][1], f[0][0] * f[1][1] - f[0][1] * f[1][0]);
    let disc = (tr * tr / 4.0 - det).sqrt();
    let expect = [pre * (tr / 2.0 - disc), pre * (tr / 2.0 + disc)];
    r.eigenvalues
        .iter()
        .zip(expect)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn criterion_11(h: &mut Harness) {
    let synthetic = synthetic_rate_matrix();
    let dir = h.run(
        "multi_op",
        "multi-op-rates",
        json!({ "model": bath(12, "chaotic") }),
    );
    let worst = csv(&dir.join("ratematrix.csv"))
        .iter()
        .filter(|r| r["omega"].parse::<f64>().unwrap().abs() <= CENTRAL_OMEGA)
        .map(|r| {
            let lo: f64 = r["min_eigenvalue"].parse().unwrap();
            let hi: f64 = r["max_eigenvalue"].parse().unwrap();
            if hi > 0.0 {
                lo / hi
            } else {
                0.0
            }
        })
        .fold(f64::INFINITY, f64::min);
    h.report(
        "11 (multi-operator rate matrix)",
        synthetic <= SYNTHETIC_EIGEN && worst >= -NEGATIVITY,
        format!(
            "synthetic eigenvalue error {synthetic:.1e} (≤ {SYNTHETIC_EIGEN:.0e}); worst min/max eigenvalue for |ω| ≤ {CENTRAL_OMEGA}: {worst:.2e} (≥ −{NEGATIVITY})"
        ),
    );
}

#[test]
fn acceptance() {
    let mut h = Harness::new();
    criterion_1(&mut h);
    criterion_2(&mut h);
    criterion_3(&mut h);
    criteria_4_5(&mut h);
    criteria_6_7(&mut h);
    criterion_8(&mut h);
    criterion_9(&mut h);
    criterion_10(&mut h);
    criterion_11(&mut h);
    let failed: Vec<&str> = h
        .results
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(id, _)| id.as_str())
        .collect();
    println!(
        "{} of {} criteria pass",
        h.results.len() - failed.len(),
        h.results.len()
    );
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
