//! Experiment orchestration: one kind per invocation, CSV tables plus a
//! JSON summary and manifest in the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{
    beta_domain_lint, markov_lint, validate, BathPrepKind, Diagnostic, ExperimentConfig,
    ExperimentKind,
};
use crate::dynamics::{
    bath_correlation_function, bcf_from_spectral_function, trace_distance, trace_distance_series,
    typicality_spread, Rho, TimeGrid,
};
use crate::error::{Error, Result, StageExt};
use crate::eth::{anchored_spectrum, diagonal_profile, rate_matrix_multi, SpectralFunctionTable};
use crate::hamiltonian::{Preset, SpinChainParams};
use crate::linalg::DenseMatrix;
use crate::pipeline::{
    eth_rates, finite_size_rates, run_dynamics, total_eigensystem, BathAnalysis, DynamicsResult,
    DynamicsSetup,
};
use crate::spectra::{gap_ratios, spec_hash, DEFAULT_CENTRAL_FRACTION};
use crate::states::{
    eigenstate_preparation, product_state_with_energy, typical_microcanonical_state,
    MicrocanonicalWindow, SystemStateKind,
};
use crate::thermo::{
    canonical_inverse_temperature, default_bin_width, density_of_states, heat_capacity,
};

pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Serialize)]
pub struct FileRecord {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Versions {
    pub ethbath: &'static str,
    pub manifest_format: u32,
}

/// Record of one run, written once as `manifest.json`.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub seed: u64,
    pub versions: Versions,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    pub warnings: Vec<Diagnostic>,
    pub files: Vec<FileRecord>,
}

/// Files written so far, removed again if the run fails.
struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
    created_dir: bool,
}

impl Outputs {
    fn open(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            created_dir,
        })
    }

    fn write(&mut self, name: &str, body: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        self.written.push(path.clone());
        fs::write(&path, body)?;
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &str, rows: &[String]) -> Result<()> {
        let mut body = String::with_capacity(64 * (rows.len() + 1));
        body.push_str(header);
        body.push('\n');
        for r in rows {
            body.push_str(r);
            body.push('\n');
        }
        self.write(name, body.as_bytes())
    }

    fn json(&mut self, name: &str, value: &Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn records(&self) -> Result<Vec<FileRecord>> {
        self.written
            .iter()
            .map(|p| {
                let body = fs::read(p)?;
                Ok(FileRecord {
                    name: p.file_name().unwrap().to_string_lossy().into_owned(),
                    bytes: body.len() as u64,
                    sha256: hex::encode(Sha256::digest(&body)),
                })
            })
            .collect()
    }

    fn discard(self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        let _ = fs::remove_file(self.dir.join(MANIFEST_FILE));
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

/// Joins values into one CSV row.
macro_rules! row {
    ($($v:expr),+ $(,)?) => {{
        let mut s = String::new();
        $( if !s.is_empty() { s.push(','); } let _ = write!(s, "{}", $v); )+
        s
    }};
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    cache: Option<&'a Path>,
    warnings: Vec<Diagnostic>,
}

/// Runs `kind` end to end and writes its outputs under `config.out`. On
/// failure every file this run wrote is removed.
pub fn run(config: &ExperimentConfig, kind: ExperimentKind) -> Result<RunManifest> {
    let started = Instant::now();
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let warnings = validate(config, kind)?;
    let config_hash = hex::encode(spec_hash(&(kind, config))?);
    let mut out = Outputs::open(&config.out)?;
    let mut ctx = Context {
        config,
        cache: config.cache_dir.as_deref(),
        warnings,
    };
    let result = match kind {
        ExperimentKind::EthStats => eth_stats(&mut ctx, &mut out),
        ExperimentKind::Thermo => thermo(&mut ctx, &mut out),
        ExperimentKind::Rates => rates(&mut ctx, &mut out),
        ExperimentKind::Bcf => bcf(&mut ctx, &mut out),
        ExperimentKind::Dynamics => dynamics(&mut ctx, &mut out),
        ExperimentKind::Scaling => scaling(&mut ctx, &mut out),
        ExperimentKind::Levelstats => levelstats(&mut ctx, &mut out),
        ExperimentKind::Typicality => typicality(&mut ctx, &mut out),
        ExperimentKind::MultiOpRates => multi_op_rates(&mut ctx, &mut out),
    };
    let finish =
        |out: &mut Outputs, summary: Value, warnings: Vec<Diagnostic>| -> Result<RunManifest> {
            let mut summary = summary;
            summary["warnings"] = serde_json::to_value(&warnings)?;
            out.json(SUMMARY_FILE, &summary)?;
            let manifest = RunManifest {
                kind,
                config_hash,
                seed: config.seed,
                versions: Versions {
                    ethbath: env!("CARGO_PKG_VERSION"),
                    manifest_format: 1,
                },
                started_unix,
                wall_clock_seconds: started.elapsed().as_secs_f64(),
                warnings,
                files: out.records()?,
            };
            let mut text = serde_json::to_string_pretty(&manifest)?;
            text.push('\n');
            fs::write(out.dir.join(MANIFEST_FILE), text)?;
            Ok(manifest)
        };
    match result.and_then(|summary| finish(&mut out, summary, ctx.warnings)) {
        Ok(m) => Ok(m),
        Err(e) => {
            out.discard();
            Err(e)
        }
    }
}

impl Context<'_> {
    fn bath(&mut self, chain: &SpinChainParams) -> Result<BathAnalysis> {
        let probe = self.config.model.probe();
        let bath = BathAnalysis::new(chain, probe.site, probe.axis, self.cache)?;
        self.warnings
            .extend(beta_domain_lint(&bath.fit, self.config.state.beta));
        Ok(bath)
    }

    fn default_bath(&mut self) -> Result<BathAnalysis> {
        let chain = self.config.model.chain()?;
        self.bath(&chain)
    }

    fn freq_bin(&self) -> f64 {
        self.config.grid.freq_bin_for(self.config.model.preset())
    }

    fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.config.grid.t_max, self.config.grid.dt)
    }

    fn setup(&self, chain: SpinChainParams, freq_bin: f64) -> DynamicsSetup {
        let c = self.config;
        let mut s = DynamicsSetup::new(chain, c.state.beta, c.state.system, c.grid.t_max);
        s.system = c.model.system();
        s.coupling = c.model.coupling();
        s.prep = c.bath_prep();
        s.dt = c.grid.dt;
        s.window = c.grid.energy_window;
        s.freq_bin = freq_bin;
        s
    }

    /// Markov lint from produced rates, with `τ_B` the half width of the
    /// correlation function rebuilt from the spectral table.
    fn lint_markov(&mut self, gamma: f64, table: &SpectralFunctionTable) -> Result<f64> {
        let tau_b = correlation_time(table)?;
        self.warnings.extend(markov_lint(gamma, tau_b));
        Ok(tau_b)
    }
}

/// Half width at half maximum of `|C(τ)|` from a normalized table, searched
/// up to `τ = 50`.
pub fn correlation_time(table: &SpectralFunctionTable) -> Result<f64> {
    let beta = table.beta.unwrap_or(0.0);
    let grid = TimeGrid::new(50.0, 0.01)?;
    let c = bcf_from_spectral_function(table, beta, &grid).stage("correlation time")?;
    c.half_width()
        .ok_or_else(|| Error::numerical("correlation function does not decay to half"))
}

fn eth_stats(ctx: &mut Context, out: &mut Outputs) -> Result<Value> {
    let c = ctx.config;
    let bath = ctx.default_bath()?;
    let profile = diagonal_profile(&bath.probe, &bath.eig).stage("diagonal profile")?;
    let rows: Vec<String> = profile
        .energies
        .iter()
        .zip(&profile.diagonals)
        .map(|(e, d)| row!(e, d))
        .collect();
    out.csv("diagonals.csv", "E,Bnn", &rows)?;
    let fb = ctx.freq_bin();
    let eth = eth_rates(
        &bath,
        c.state.beta,
        c.model.kappa(),
        c.grid.energy_window,
        fb,
    )?;
    write_specfun(out, &eth.table)?;
    Ok(json!({
        "kind": "eth-stats",
        "sites": c.model.sites(),
        "fluctuation": profile.fluctuation,
        "central_states": profile.central_states,
        "beta": c.state.beta,
        "e0": eth.e0,
        "b_expect": eth.b_expect,
        "var_b": eth.var_b,
        "window_states": eth.table.window.members(&bath.eig).len(),
        "raw_asymmetry": eth.table.raw_asymmetry(),
        "empty_bins": eth.table.empty_bins().len(),
        "normalization": eth.table.normalization,
    }))
}

fn write_specfun(out: &mut Outputs, t: &SpectralFunctionTable) -> Result<()> {
    let rows: Vec<String> = (0..t.omega.len())
        .map(|k| row!(t.omega[k], t.values[k], t.counts[k], t.raw[k]))
        .collect();
    out.csv("specfun.csv", "omega,f2,count,f2_raw", &rows)
}

fn thermo(ctx: &mut Context, out: &mut Outputs) -> Result<Value> {
    let c = ctx.config;
    let bath = ctx.default_bath()?;
    let levels = bath.eig.eigenvalues();
    let dos = density_of_states(levels, default_bin_width(levels)).stage("density of states")?;
    let fit = &bath.fit;
    let rows: Vec<String> = dos
        .centers
        .iter()
        .zip(&dos.counts)
        .map(|(&e, &n)| {
            let s = fit.entropy(e).unwrap_or(f64::NAN);
            let b = fit.beta(e).unwrap_or(f64::NAN);
            let cap = heat_capacity(fit, e).unwrap_or(f64::NAN);
            let canonical = canonical_inverse_temperature(levels, e).unwrap_or(f64::NAN);
            row!(e, s, b, cap, canonical, n)
        })
        .collect();
    out.csv("thermo.csv", "E,S,beta,C,beta_canonical,count", &rows)?;
    let e_beta = bath.energy_at_beta(c.state.beta)?;
    let canonical = canonical_inverse_temperature(levels, e_beta).stage("canonical β")?;
    Ok(json!({
        "kind": "thermo",
        "sites": c.model.sites(),
        "bin_width": dos.bin_width,
        "skewness": dos.skewness(),
        "fit": fit,
        "beta": c.state.beta,
        "energy_at_beta": e_beta,
        "heat_capacity_at_beta": heat_capacity(fit, e_beta).ok(),
        "canonical_beta_at_energy": canonical,
    }))
}

fn rates(ctx: &mut Context, out: &mut Outputs) -> Result<Value> {
    let c = ctx.config;
    let bath = ctx.default_bath()?;
    let fb = ctx.freq_bin();
    let beta = c.state.beta;
    let eth = eth_rates(&bath, beta, c.model.kappa(), c.grid.energy_window, fb)?;
    write_specfun(out, &eth.table)?;
    let r = &eth.rates;
    let fs = finite_size_rates(&bath, &eth, c.model.kappa(), c.grid.energy_window)?;
    let rows: Vec<String> = (0..r.omega.len())
        .map(|k| row!(r.omega[k], r.gamma[k], fs[k].rate, u8::from(fs[k].clipped)))
        .collect();
    out.csv("rates.csv", "omega,gamma,gamma_fs,fs_clipped", &rows)?;
    let shifted =
        crate::dynamics::mean_field_shift(&c.model.system(), c.model.kappa(), eth.b_expect);
    let w = shifted.omega;
    let down = r.rate(w)?;
    let up = r.rate(-w)?;
    let gamma_pop = down + up;
    let tau_b = ctx.lint_markov(gamma_pop, &eth.table)?;
    let anchored = anchored_spectrum(&bath.probe, &bath.eig, &eth.table.window)?;
    let fs_at = |x: f64| {
        let k = r.omega.iter().position(|&o| (o - x).abs() <= 0.5 * fb);
        k.map(|k| fs[k].rate)
    };
    Ok(json!({
        "kind": "rates",
        "sites": c.model.sites(),
        "beta": beta,
        "e0": eth.e0,
        "omega_shifted": w,
        "gamma_down": down,
        "gamma_up": up,
        "gamma_pop": gamma_pop,
        "gamma_fs_down": fs_at(w),
        "gamma_fs_up": fs_at(-w),
        "tau_b": tau_b,
        "markov_product": gamma_pop * tau_b,
        "detailed_balance_residual": anchored.detailed_balance_residual(beta, w).ok(),
    }))
}

/// Bath state in energy coefficients for the configured preparation.
fn bath_coefficients(ctx: &Context, bath: &BathAnalysis, e0: f64) -> Result<Vec<faer::c64>> {
    let c = ctx.config;
    match c.state.bath {
        BathPrepKind::Eigenstate => Ok(eigenstate_preparation(&bath.eig, e0).amplitudes),
        BathPrepKind::Typical => {
            let win = MicrocanonicalWindow::new(&bath.eig, e0, c.state.window)?;
            Ok(typical_microcanonical_state(&bath.eig, &win, c.seed, false)?.amplitudes)
        }
        BathPrepKind::Product => {
            let tol = 1e-10 * bath.eig.bandwidth();
            let p = product_state_with_energy(&bath.params, e0, tol)?;
            bath.eig.project(&p.state.amplitudes)
        }
    }
}

fn bcf(ctx: &mut Context, out: &mut Outputs) -> Result<Value> {
    let c = ctx.config;
    let bath = ctx.default_bath()?;
    let fb = ctx.freq_bin();
    let beta = c.state.beta;
    let eth = eth_rates(&bath, beta, c.model.kappa(), c.grid.energy_window, fb)?;
    let coeffs = bath_coefficients(ctx, &bath, eth.e0).stage("prepare bath")?;
    let grid = ctx.grid()?;
    let prep = format!("{:?}", c.state.bath).to_lowercase();
    let exact = bath_correlation_function(&bath.eig, &bath.probe, &coeffs, &grid, &prep)
        .stage("exact correlation")?;
    let model = bcf_from_spectral_function(&eth.table, beta, &grid).stage("eth correlation")?;
    let rows: Vec<String> = (0..exact.tau.len())
        .map(|k| {
            let (a, b) = (exact.values[k], model.values[k]);
            row!(exact.tau[k], a.re, a.im, a.norm(), b.re, b.im)
        })
        .collect();
    out.csv("bcf.csv", "tau,re,im,abs,eth_re,eth_im", &rows)?;
    let c0 = exact.variance_at_zero;
    let closure = exact
        .values
        .iter()
        .zip(&model.values)
        .zip(&exact.tau)
        .filter(|(_, &t)| t <= 2.0)
        .map(|((a, b), _)| (a - b).norm())
        .fold(0.0, f64::max);
    Ok(json!({
        "kind": "bcf",
        "sites": c.model.sites(),
        "beta": beta,
        "preparation": prep,
        "c0": c0,
        "half_width": exact.half_width(),
        "eth_half_width": model.half_width(),
        "closure_deviation": closure / c0,
        "revival_8_25": exact.max_abs_between(8.0, 25.0) / c0,
        "late_max_after_2": exact.max_abs_between(2.0, c.grid.t_max) / c0,
    }))
}

fn preset_name(p: Preset) -> &'static str {
    match p {
        Preset::Chaotic => "chaotic",
        Preset::Integrable => "integrable",
    }
}

fn rho_pops(r: &Rho) -> [f64; 2] {
    [r[(0, 0)].re, r[(1, 1)].re]
}

fn dynamics_summary(ctx: &mut Context, r: &DynamicsResult) -> Result<Value> {
    let c = ctx.config;
    let (fit_exact, fit_lind) = r.fitted_rates(c.state.system)?;
    let tau_b = ctx.lint_markov(r.gamma_pop, &r.eth.table)?;
    let eq = &r.equilibrium;
    let late = r.exact.late_average(0.5 * c.grid.t_max);
    let steady = r.model.stationary_state()?;
    let late_p = late[(0, 0)].re;
    Ok(json!({
        "beta": r.eth.beta,
        "e0": r.eth.e0,
        "b_expect_eigenstate": r.eth.b_expect,
        "b_expect_state": r.bath_expect,
        "omega_shifted": r.shifted.omega,
        "gamma_down": r.model.rate_at(r.shifted.omega),
        "gamma_up": r.model.rate_at(-r.shifted.omega),
        "gamma_pop": r.gamma_pop,
        "gamma_coh_predicted": 0.5 * r.gamma_pop,
        "fitted_rate_exact": fit_exact,
        "fitted_rate_lindblad": fit_lind,
        "avg_trace_distance": r.avg_trace_distance,
        "tau_b": tau_b,
        "markov_product": r.gamma_pop * tau_b,
        "lindblad_steady_populations": rho_pops(&steady),
        "exact_late_populations": rho_pops(&late),
        "equilibrium": {
            "initial_energy": eq.initial_energy,
            "beta_total": eq.beta_total,
            "mean_force_populations": rho_pops(&eq.mean_force),
            "gibbs_populations": rho_pops(&eq.gibbs),
            "late_minus_mean_force": (late_p - eq.mean_force[(0, 0)].re).abs(),
            "late_minus_gibbs": (late_p - eq.gibbs[(0, 0)].re).abs(),
            "trace_distance_mean_force": trace_distance(&late, &eq.mean_force),
            "trace_distance_gibbs": trace_distance(&late, &eq.gibbs),
        },
        "invariants": {
            "lindblad_max_trace_error": r.lindblad.max_trace_error,
            "lindblad_min_eigenvalue": r.lindblad.min_eigenvalue,
            "exact_max_norm_error": r.exact.max_norm_error,
        },
    }))
}

fn dynamics(ctx: &mut Context, out: &mut Outputs) -> Result<Value> {
    let c = ctx.config;
    let setup = ctx.setup(c.model.chain()?, ctx.freq_bin());
    let r = run_dynamics(&setup, ctx.cache)?;
    let dist = trace_distance_series(&r.exact, &r.lindblad)?;
    // Exact columns first, then the Lindblad solution.
    let rows: Vec<String> = (0..r.exact.times.len())
        .map(|k| {
            let (a, b) = (&r.exact.states[k], &r.lindblad.states[k]);
            row!(
                r.exact.times[k],
                a[(0, 0)].re,
                a[(1, 1)].re,
                a[(0, 1)].re,
                a[(0, 1)].im,
                dist[k],
                b[(0, 0)].re,
                b[(1, 1)].re,
                b[(0, 1)].re,
                b[(0, 1)].im
            )
        })
        .collect();
    out.csv(
        "trajectory.csv",
        "t,p0,p1,re_rho01,im_rho01,trace_dist_vs_lindblad,lindblad_p0,lindblad_p1,lindblad_re_rho01,lindblad_im_rho01",
        &rows,
    )?;
    let mut summary = dynamics_summary(ctx, &r)?;
    summary["kind"] = json!("dynamics");
    summary["sites"] = json!(c.model.sites());
    Ok(summary)
}

fn scaling(ctx: &mut Context, out: &mut Outputs) -> Result<Value> {
    let c = ctx.config;
    let mut rows = Vec::new();
    let mut per_preset = serde_json::Map::new();
    let state_name = match c.state.system {
        SystemStateKind::Polarized => "polarized",
        SystemStateKind::Superposition => "superposition",
    };
    for &preset in &c.grid.presets {
        let mut series = Vec::new();
        let name = preset_name(preset);
        for &l in &c.grid.sizes {
            let setup = ctx.setup(
                SpinChainParams::preset(preset, l),
                c.grid.freq_bin_for(preset),
            );
            let r = run_dynamics(&setup, ctx.cache)?;
            // Rate fits fail when a small bath never relaxes; keep the row.
            let (fe, fl) = match r.fitted_rates(c.state.system) {
                Ok((a, b)) => (a.rate, b.rate),
                Err(_) => (f64::NAN, f64::NAN),
            };
            rows.push(row!(
                l,
                r.avg_trace_distance,
                state_name,
                name,
                r.gamma_pop,
                fe,
                fl
            ));
            series.push(r.avg_trace_distance);
        }
        let monotone = series.windows(2).all(|w| w[1] < w[0]);
        per_preset.insert(
            name.to_string(),
            json!({ "avg_trace_distance": series, "monotone_decrease": monotone }),
        );
    }
    out.csv(
        "scaling.csv",
        "L,avg_trace_distance,state_kind,preset,gamma_pop,fitted_rate_exact,fitted_rate_lindblad",
        &rows,
    )?;
    Ok(json!({ "kind": "scaling", "sizes": c.grid.sizes, "presets": per_preset }))
}

fn levelstats(ctx: &mut Context, out: &mut Outputs) -> Result<Value> {
    let c = ctx.config;
    let mut rows = Vec::new();
    let mut summary = serde_json::Map::new();
    let coupling = c.model.coupling();
    for &preset in &c.grid.presets {
        let chain = SpinChainParams::preset(preset, c.model.sites());
        let total = total_eigensystem(&c.model.system(), &chain, &coupling, ctx.cache)?;
        let stats = gap_ratios(total.eigenvalues(), DEFAULT_CENTRAL_FRACTION)?;
        let name = preset_name(preset).to_string();
        for k in 0..stats.counts.len() {
            rows.push(row!(
                name,
                stats.bin_edges[k],
                stats.bin_edges[k + 1],
                stats.counts[k]
            ));
        }
        summary.insert(
            name,
            json!({
                "mean_ratio": stats.mean_ratio,
                "levels_used": stats.levels_used,
                "degenerate_gaps": stats.degenerate_gaps,
            }),
        );
    }
    out.csv("levelstats.csv", "preset,r_lo,r_hi,count", &rows)?;
    Ok(json!({
        "kind": "levelstats",
        "sites": c.model.sites(),
        "hamiltonian": "total",
        "presets": summary,
    }))
}

fn typicality(ctx: &mut Context, out: &mut Outputs) -> Result<Value> {
    let c = ctx.config;
    let bath = ctx.default_bath()?;
    let e0 = bath.energy_at_beta(c.state.beta)?;
    let win = MicrocanonicalWindow::new(&bath.eig, e0, c.state.window)?;
    let grid = ctx.grid()?;
    let report = typicality_spread(
        &bath.eig,
        &bath.probe,
        &win,
        c.state.samples,
        c.seed,
        &grid,
        1.0,
    )
    .stage("typicality")?;
    let rows: Vec<String> = report
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| row!(i, s.max_dev_b, s.max_dev_c, s.seed, s.long_time_b))
        .collect();
    out.csv(
        "typicality.csv",
        "sample,max_dev_B,max_dev_C,seed,long_time_B",
        &rows,
    )?;
    Ok(json!({
        "kind": "typicality",
        "sites": c.model.sites(),
        "e0": e0,
        "window_dim": report.window_dim,
        "mc_average": report.mc_average,
        "median_spread": report.median_spread,
        "exceedance": report.exceedance,
        "bound_violated": report.bound_violated,
    }))
}

fn multi_op_rates(ctx: &mut Context, out: &mut Outputs) -> Result<Value> {
    let c = ctx.config;
    let bath = ctx.default_bath()?;
    let extra: Vec<DenseMatrix> = c
        .model
        .extra_ops
        .iter()
        .map(|op| bath.operator(op.site, op.axis))
        .collect::<Result<_>>()?;
    let mut ops: Vec<&DenseMatrix> = vec![&bath.probe];
    ops.extend(extra.iter());
    let e0 = bath.energy_at_beta(c.state.beta)?;
    let n = bath.eig.nearest_index(e0);
    let win = bath.window(
        bath.eig.eigenvalues()[n],
        c.grid.energy_window,
        ctx.freq_bin(),
    );
    let mats = rate_matrix_multi(&ops, &bath.eig, &win, c.model.kappa(), c.state.beta, None)
        .stage("rate matrix")?;
    let rows: Vec<String> = mats
        .iter()
        .map(|m| {
            row!(
                m.omega,
                m.count,
                m.min_eigenvalue,
                m.max_eigenvalue,
                m.clip_magnitude,
                m.hermiticity_residual
            )
        })
        .collect();
    out.csv(
        "ratematrix.csv",
        "omega,pairs,min_eigenvalue,max_eigenvalue,clip_magnitude,hermiticity_residual",
        &rows,
    )?;
    let worst = mats
        .iter()
        .filter(|m| m.max_eigenvalue > 0.0)
        .map(|m| m.min_eigenvalue / m.max_eigenvalue)
        .fold(f64::INFINITY, f64::min);
    Ok(json!({
        "kind": "multi-op-rates",
        "sites": c.model.sites(),
        "operators": ops.len(),
        "bins": mats.len(),
        "worst_min_over_max": worst,
        "flagged_non_hermitian": mats.iter().filter(|m| m.flagged_non_hermitian).count(),
    }))
}
