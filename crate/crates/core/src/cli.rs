//! Command-line driver: `simulate`, `sweep <kind>`, `validate`, and
//! `spectrum`, with exit code 0 on success, 1 on configuration or usage
//! errors, and 2 on numerical failure.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{self, LoadedConfig};
use crate::dynamics::{
    default_horizon, efficiency_ode, jump_unraveling, EfficiencyResult, EfficiencySolver,
    MasterRhs,
};
use crate::eigen::{self, EigenBasis};
use crate::error::{Error, Result};
use crate::experiments::{
    self, approx_compare, disorder_study, eigenstate_efficiency_scan, invariant_battery,
    reference_states, sweep_correlation_length, sweep_delocalization, sweep_reorganization,
    StateSpec, SweepKind, SweepRecord, SweepSpec,
};
use crate::lindblad::{
    build_effective_hamiltonian, build_liouvillian, lindblad_operators, rate_matrices_for_bins,
    EffectiveHamiltonian, LindbladSet,
};
use crate::model::{self, PureState, Sign};
use crate::output::{self, format_float, RunManifest};

#[derive(Parser)]
#[command(name = "excitonic", version, about = "Excitation transfer through a ring antenna under spatially correlated dephasing")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,

    /// TOML system/bath configuration; the built-in LH1-RC core by default
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the reorganization energy E_R, cm⁻¹
    #[arg(long, global = true)]
    er: Option<f64>,

    /// Override the bath correlation length R_B, Å; accepts `inf`
    #[arg(long, global = true)]
    rb: Option<f64>,

    /// Override the temperature, K
    #[arg(long, global = true)]
    temp: Option<f64>,

    /// Override the Drude cutoff ω_c, cm⁻¹
    #[arg(long, global = true)]
    cutoff: Option<f64>,

    /// Initial state(s): `m+`, `m-`, or `eig:<k>`; repeatable
    #[arg(long, global = true)]
    state: Vec<String>,

    #[arg(long, global = true, value_enum, default_value_t = MethodArg::Linear)]
    method: MethodArg,

    /// Trajectories for the jump method
    #[arg(long, global = true, default_value_t = 1000)]
    traj: usize,

    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    /// Output directory for CSV results and the run manifest
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for sweeps (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Sweep grid: comma-separated values (`0,10,40,inf`) or `start:stop:n`
    #[arg(long, global = true)]
    grid: Option<String>,

    /// Disorder realizations for `sweep disorder`
    #[arg(long, global = true, default_value_t = 20)]
    samples: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Single transfer-efficiency evaluation
    Simulate,
    /// Parameter sweep: reorg | corrlen | deloc | eigscan | approx | disorder
    Sweep { kind: SweepKind },
    /// Run the limit-consistency invariant battery
    Validate,
    /// Emit the exciton spectrum of the configured Hamiltonian
    Spectrum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Ode,
    Linear,
    Jumps,
}

impl std::fmt::Display for MethodArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MethodArg::Ode => write!(f, "ode"),
            MethodArg::Linear => write!(f, "linear"),
            MethodArg::Jumps => write!(f, "jumps"),
        }
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        // a second call in the same process keeps the first pool; fine
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_)
                | Error::InvalidInput(_)
                | Error::InvalidGeometry(_)
                | Error::SingularGeometry(_) => 1,
                Error::NonCompletelyPositive(_)
                | Error::Stiffness(_)
                | Error::UnboundedIntegral(_)
                | Error::Io(_) => 2,
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    match &cli.cmd {
        Cmd::Simulate => simulate(cli, &cfg),
        Cmd::Sweep { kind } => sweep(cli, &cfg, *kind),
        Cmd::Validate => validate(&cfg),
        Cmd::Spectrum => spectrum(cli, &cfg),
    }
}

fn load(cli: &Cli) -> Result<LoadedConfig> {
    let mut cfg = match &cli.config {
        // an unreadable config file is a configuration error, not an I/O
        // failure of the run itself
        Some(path) => config::load_config(path).map_err(|e| match e {
            Error::Io(io) => Error::Config(format!("cannot read {}: {io}", path.display())),
            other => other,
        })?,
        None => config::default_config(),
    };
    if let Some(er) = cli.er {
        cfg.bath.reorg_energy = er;
    }
    if let Some(rb) = cli.rb {
        cfg.bath.corr_length = rb;
    }
    if let Some(t) = cli.temp {
        cfg.bath.temperature = t;
    }
    if let Some(wc) = cli.cutoff {
        cfg.bath.cutoff = wc;
    }
    cfg.bath.validate()?;
    Ok(cfg)
}

fn parse_states(cli: &Cli, defaults: Vec<StateSpec>) -> Result<Vec<StateSpec>> {
    if cli.state.is_empty() {
        return Ok(defaults);
    }
    cli.state.iter().map(|s| s.parse()).collect()
}

/// `start:stop:n` linspace or a comma-separated value list (`inf` allowed).
fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = |what: &str| Error::InvalidInput(format!("bad grid '{s}': {what}"));
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected start:stop:n"));
        }
        let a: f64 = parts[0].parse().map_err(|_| bad("start"))?;
        let b: f64 = parts[1].parse().map_err(|_| bad("stop"))?;
        let n: usize = parts[2].parse().map_err(|_| bad("count"))?;
        if n < 2 || !(a < b) {
            return Err(bad("need n >= 2 and start < stop"));
        }
        return Ok((0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect());
    }
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| bad(v)))
        .collect()
}

struct Assembled {
    basis: EigenBasis,
    lset: LindbladSet,
    h_eff: EffectiveHamiltonian,
    rates: Vec<crate::bath::RateMatrix>,
}

fn assemble(cfg: &LoadedConfig) -> Result<Assembled> {
    let h = cfg.system.clean_hamiltonian();
    let mut basis = eigen::eigendecompose(&h)?;
    basis.compute_bins(cfg.numerics.bin_tolerance)?;
    let lset = lindblad_operators(&basis)?;
    let h_eff = build_effective_hamiltonian(&cfg.system, &h)?;
    let rates = rate_matrices_for_bins(&basis.bins, &cfg.system.positions(), &cfg.bath)?;
    Ok(Assembled {
        basis,
        lset,
        h_eff,
        rates,
    })
}

fn pure_state(state: StateSpec, cfg: &LoadedConfig, basis: &EigenBasis) -> Result<PureState> {
    match state {
        StateSpec::Window { m, sign } => model::initial_state(m, sign, 0, &cfg.system),
        StateSpec::Eigenstate(k) => {
            if k >= basis.dim() {
                return Err(Error::InvalidInput(format!(
                    "eigenstate index {k} out of range"
                )));
            }
            PureState::from_real(&basis.modes.column(k).into_owned())
        }
    }
}

/// Write one line to stdout. A closed pipe (`excitonic spectrum | head`)
/// ends the output quietly instead of failing the run.
fn emit(args: std::fmt::Arguments) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout();
    match out.write_fmt(args).and_then(|()| out.write_all(b"\n")) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        Err(e) => Err(Error::Io(e)),
    }
}

fn simulate(cli: &Cli, cfg: &LoadedConfig) -> Result<()> {
    let start = std::time::Instant::now();
    let states = parse_states(cli, vec![StateSpec::Window { m: 1, sign: Sign::Plus }])?;
    let parts = assemble(cfg)?;
    let mut records = Vec::new();
    emit(format_args!("state\teta\teta_loss\tresidual\tmethod"))?;
    for &state in &states {
        let psi = pure_state(state, cfg, &parts.basis)?;
        let rho0 = psi.density_matrix();
        let r: EfficiencyResult = match cli.method {
            MethodArg::Linear => {
                let liouv = build_liouvillian(&parts.h_eff, &parts.lset, &parts.rates)?;
                EfficiencySolver::new(&liouv, &cfg.system)?.efficiency(&rho0)?
            }
            MethodArg::Ode => {
                let rhs = MasterRhs::new(&parts.h_eff, &parts.lset, &parts.rates)?;
                let t_max = default_horizon(&cfg.system)?;
                efficiency_ode(&rho0, &cfg.system, &rhs, t_max, cfg.numerics.tail_tol, cfg.numerics.ode_rtol)?
            }
            MethodArg::Jumps => jump_unraveling(
                &psi,
                &cfg.system,
                &parts.h_eff,
                &parts.lset,
                &parts.rates,
                cli.traj,
                cli.seed,
            )?,
        };
        emit(format_args!(
            "{state}\t{:.12}\t{:.12}\t{:.3e}\t{}",
            r.eta, r.eta_loss, r.residual_trace, r.method
        ))?;
        if let Some(w) = &r.warning {
            eprintln!("warning: {w}");
        }
        records.push(SweepRecord {
            param: cfg.bath.corr_length,
            state: state.to_string(),
            eta_mean: r.eta,
            eta_spread: 0.0,
            eta_loss: r.eta_loss,
            residual: r.residual_trace.abs(),
            n_samples: 1,
            method: r.method,
            config_hash: cfg.hash.clone(),
        });
    }
    if let Some(dir) = &cli.out {
        let mut manifest = RunManifest::new(cfg.hash.clone(), cli.seed, "simulate");
        manifest.method = cli.method.to_string();
        manifest.wall_time = start.elapsed().as_secs_f64();
        output::write_results(&records, &manifest, dir)?;
    }
    Ok(())
}

fn sweep(cli: &Cli, cfg: &LoadedConfig, kind: SweepKind) -> Result<()> {
    let start = std::time::Instant::now();
    let n_ring = cfg.system.n_ring();
    let grid = match &cli.grid {
        Some(s) => parse_grid(s)?,
        None => match kind {
            SweepKind::ReorgSweep => experiments::default_reorg_grid(),
            SweepKind::CorrlenSweep | SweepKind::DisorderStudy => {
                experiments::default_corrlen_grid()
            }
            SweepKind::ApproxCompare => {
                let mut g = experiments::default_corrlen_grid();
                g.retain(|x| x.is_finite());
                g
            }
            SweepKind::DelocSweep => experiments::default_m_grid(n_ring),
            // eigscan ignores the grid; the two R_B values come from the bath
            SweepKind::EigenstateScan => vec![0.0, 1.0],
        },
    };
    let default_states = match kind {
        SweepKind::ApproxCompare => vec![
            StateSpec::Window { m: 8.min(n_ring), sign: Sign::Minus },
            StateSpec::Window { m: 1, sign: Sign::Plus },
        ],
        _ => reference_states(n_ring),
    };
    let spec = SweepSpec {
        kind,
        grid: grid.clone(),
        states: parse_states(cli, default_states)?,
        fixed: cfg.bath.clone(),
        n_disorder: cli.samples,
        seed: cli.seed,
    };

    let mut manifest = RunManifest::new(cfg.hash.clone(), cli.seed, kind.to_string());
    manifest.grid = grid;
    manifest.method = cli.method.to_string();
    if cli.method != MethodArg::Linear {
        manifest
            .warnings
            .push("sweeps always use the linear-solve method".into());
    }

    let dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("results_{kind}")));
    let records = match kind {
        SweepKind::ReorgSweep => sweep_reorganization(&spec, cfg)?,
        SweepKind::CorrlenSweep => {
            let out = sweep_correlation_length(&spec, cfg)?;
            let rows: Vec<String> = out
                .split
                .iter()
                .map(|s| {
                    format!(
                        "{},{},{},{}",
                        format_float(s.param),
                        format_float(s.sym_mean),
                        format_float(s.asym_mean),
                        format_float(s.within_spread)
                    )
                })
                .collect();
            output::write_diagnostic(&dir, "split", "param,sym_mean,asym_mean,within_spread", &rows)?;
            out.records
        }
        SweepKind::ApproxCompare => {
            let out = approx_compare(&spec, cfg)?;
            let rows: Vec<String> = out
                .neighbors
                .iter()
                .map(|(rb, n)| format!("{},{n}", format_float(*rb)))
                .collect();
            output::write_diagnostic(&dir, "neighbors", "param,correlated_neighbors", &rows)?;
            out.records
        }
        SweepKind::DelocSweep => {
            let out = sweep_delocalization(&spec, cfg)?;
            let rows: Vec<String> = out
                .onsets
                .iter()
                .map(|o| {
                    format!(
                        "{},{},{},{}",
                        format_float(o.corr_length),
                        o.sym_mc,
                        o.asym_mc,
                        o.m_c
                    )
                })
                .collect();
            output::write_diagnostic(&dir, "plateau", "corr_length,sym_mc,asym_mc,m_c", &rows)?;
            out.records
        }
        SweepKind::EigenstateScan => {
            let out = eigenstate_efficiency_scan(&spec, cfg)?;
            let rows: Vec<String> = out
                .rank_correlation
                .iter()
                .map(|(rb, rho)| format!("{},{}", format_float(*rb), format_float(*rho)))
                .collect();
            output::write_diagnostic(&dir, "rank_correlation", "corr_length,spearman", &rows)?;
            out.records
        }
        SweepKind::DisorderStudy => disorder_study(&spec, cfg)?,
    };
    manifest.wall_time = start.elapsed().as_secs_f64();
    let files = output::write_results(&records, &manifest, &dir)?;
    emit(format_args!(
        "{} records in {} file(s) under {}",
        records.len(),
        files.len(),
        dir.display()
    ))?;
    Ok(())
}

fn validate(cfg: &LoadedConfig) -> Result<()> {
    let checks = invariant_battery(cfg)?;
    let mut failed = 0;
    for c in &checks {
        emit(format_args!(
            "{} {} ({})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        ))?;
        if !c.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Error::UnboundedIntegral(format!(
            "{failed} invariant check(s) failed"
        )));
    }
    Ok(())
}

fn spectrum(cli: &Cli, cfg: &LoadedConfig) -> Result<()> {
    let basis = eigen::eigendecompose(&cfg.system.clean_hamiltonian())?;
    let trap_sites: Vec<usize> = (0..cfg.system.len())
        .filter(|&i| cfg.system.sites()[i].trap_rate > 0.0)
        .collect();
    let mut rows = Vec::new();
    emit(format_args!("k\tenergy\ttrap_overlap"))?;
    for k in 0..basis.dim() {
        let col = basis.modes.column(k);
        let trap: f64 = trap_sites.iter().map(|&i| col[i] * col[i]).sum();
        emit(format_args!("{k}\t{:.6}\t{:.3e}", basis.energies[k], trap))?;
        rows.push(format!(
            "{k},{},{}",
            format_float(basis.energies[k]),
            format_float(trap)
        ));
    }
    if let Some(dir) = &cli.out {
        output::write_diagnostic(dir, "spectrum", "k,energy,trap_overlap", &rows)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config_file() -> PathBuf {
        let path = std::env::temp_dir().join("excitonic_cli_test.toml");
        std::fs::write(
            &path,
            r#"
            schema = 1
            label = "six around one"

            [ring]
            n_sites = 6
            radius = 12.0
            site_energy = 12000.0
            trap_rate = 0.0
            loss_rate = 0.001
            dipole_orientation = "vertical"

            [[center.sites]]
            position = [0.0, 0.0, 2.0]
            dipole = [0.0, 0.0, 1.0]
            site_energy = 11700.0
            trap_rate = 4.0
            loss_rate = 0.001

            [couplings]
            dipole_strength = 200000.0

            [disorder]
            sigma = 0.0

            [bath]
            reorg_energy = 50.0
            cutoff = 300.0
            temperature = 293.0
            corr_length = 10.0
            "#,
        )
        .unwrap();
        path
    }

    fn args(rest: &[&str]) -> Vec<String> {
        let mut v = vec!["excitonic".to_string()];
        v.extend(rest.iter().map(|s| s.to_string()));
        v
    }

    fn read_eta(dir: &PathBuf, file: &str) -> f64 {
        let text = std::fs::read_to_string(dir.join(file)).unwrap();
        let line = text.lines().nth(1).unwrap();
        line.split(',').nth(2).unwrap().parse().unwrap()
    }

    #[test]
    fn unknown_flag_exits_one() {
        assert_eq!(run(args(&["simulate", "--bogus"])), 1);
        assert_eq!(run(args(&["frobnicate"])), 1);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(args(&["--help"])), 0);
    }

    #[test]
    fn missing_config_file_exits_one() {
        assert_eq!(run(args(&["simulate", "--config", "/nonexistent/x.toml"])), 1);
    }

    #[test]
    fn bad_state_exits_one() {
        let cfg = small_config_file();
        let cfg = cfg.to_str().unwrap();
        assert_eq!(run(args(&["simulate", "--config", cfg, "--state", "9q"])), 1);
    }

    #[test]
    fn coherent_limit_from_the_command_line() {
        // --rb inf must reproduce --er 0 exactly
        let cfg_path = small_config_file();
        let cfg = cfg_path.to_str().unwrap();
        let d1 = std::env::temp_dir().join("excitonic_cli_rbinf");
        let d2 = std::env::temp_dir().join("excitonic_cli_er0");
        for d in [&d1, &d2] {
            let _ = std::fs::remove_dir_all(d);
        }
        assert_eq!(
            run(args(&[
                "simulate", "--config", cfg, "--rb", "inf", "--state", "6+",
                "--out", d1.to_str().unwrap(),
            ])),
            0
        );
        assert_eq!(
            run(args(&[
                "simulate", "--config", cfg, "--er", "0", "--state", "6+",
                "--out", d2.to_str().unwrap(),
            ])),
            0
        );
        let a = read_eta(&d1, "simulate_6p.csv");
        let b = read_eta(&d2, "simulate_6p.csv");
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        for d in [&d1, &d2] {
            let _ = std::fs::remove_dir_all(d);
        }
    }

    #[test]
    fn sweep_writes_csv_and_manifest() {
        let cfg_path = small_config_file();
        let cfg = cfg_path.to_str().unwrap();
        let dir = std::env::temp_dir().join("excitonic_cli_sweep");
        let _ = std::fs::remove_dir_all(&dir);
        assert_eq!(
            run(args(&[
                "sweep", "corrlen", "--config", cfg, "--er", "50",
                "--grid", "0,15", "--state", "3-", "--state", "3+",
                "--out", dir.to_str().unwrap(),
            ])),
            0
        );
        let manifest = std::fs::read_to_string(dir.join("manifest.toml")).unwrap();
        assert!(manifest.contains("sweep_kind = \"corrlen\""));
        assert!(dir.join("corrlen_3m.csv").exists());
        assert!(dir.join("split.csv").exists());
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn validate_passes_on_small_config() {
        let cfg_path = small_config_file();
        assert_eq!(
            run(args(&["validate", "--config", cfg_path.to_str().unwrap()])),
            0
        );
    }

    #[test]
    fn spectrum_writes_expected_rows() {
        let cfg_path = small_config_file();
        let dir = std::env::temp_dir().join("excitonic_cli_spectrum");
        let _ = std::fs::remove_dir_all(&dir);
        assert_eq!(
            run(args(&[
                "spectrum", "--config", cfg_path.to_str().unwrap(),
                "--out", dir.to_str().unwrap(),
            ])),
            0
        );
        let text = std::fs::read_to_string(dir.join("spectrum.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + 7);
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0,10,inf").unwrap(), vec![0.0, 10.0, f64::INFINITY]);
        assert_eq!(parse_grid("0:10:3").unwrap(), vec![0.0, 5.0, 10.0]);
        assert!(parse_grid("0:10").is_err());
        assert!(parse_grid("a,b").is_err());
    }
}
