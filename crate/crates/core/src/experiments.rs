//! Sweep drivers: transfer efficiency versus reorganization energy,
//! correlation length, delocalization length, and eigenstate energy, with
//! translation and static-disorder averaging.
//!
//! Every sweep runs its parameter points on the rayon pool and reduces in
//! grid order, so results are independent of thread count and completion
//! order.

use rayon::prelude::*;

use crate::bath::{self, BathSpec, RateMatrix};
use crate::config::LoadedConfig;
use crate::dynamics::{EfficiencyResult, EfficiencySolver, Method};
use crate::eigen::{self, EigenBasis};
use crate::error::{Error, Result};
use crate::lindblad::{self, build_effective_hamiltonian, build_liouvillian, LindbladSet};
use crate::model::{self, disorder_sample, ExcitonSystem, PureState, Sign};

/// An initial-state descriptor: a ring window |Ψ_m^±⟩ or an exact
/// eigenstate of H_S by ascending index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateSpec {
    Window { m: usize, sign: Sign },
    Eigenstate(usize),
}

impl std::fmt::Display for StateSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StateSpec::Window { m, sign } => write!(f, "{m}{sign}"),
            StateSpec::Eigenstate(k) => write!(f, "eig:{k}"),
        }
    }
}

impl std::str::FromStr for StateSpec {
    type Err = Error;

    /// Accepts `m+`, `m-`, or `eig:<k>`.
    fn from_str(s: &str) -> Result<Self> {
        if let Some(k) = s.strip_prefix("eig:") {
            let k = k
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad eigenstate index in '{s}'")))?;
            return Ok(StateSpec::Eigenstate(k));
        }
        let (head, sign) = match s.as_bytes().last() {
            Some(b'+') => (&s[..s.len() - 1], Sign::Plus),
            Some(b'-') => (&s[..s.len() - 1], Sign::Minus),
            _ => {
                return Err(Error::InvalidInput(format!(
                    "state '{s}' must end in + or - (or be eig:<k>)"
                )))
            }
        };
        let m = head
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad delocalization length in '{s}'")))?;
        Ok(StateSpec::Window { m, sign })
    }
}

/// The four reference states |Ψ₈^±⟩, |Ψ₃₂^±⟩ (clamped to the ring size).
pub fn reference_states(n_ring: usize) -> Vec<StateSpec> {
    let mut ms = vec![8.min(n_ring), n_ring];
    ms.dedup();
    ms.iter()
        .flat_map(|&m| {
            [Sign::Plus, Sign::Minus]
                .iter()
                .map(move |&sign| StateSpec::Window { m, sign })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    ReorgSweep,
    CorrlenSweep,
    DelocSweep,
    EigenstateScan,
    ApproxCompare,
    DisorderStudy,
}

impl std::fmt::Display for SweepKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SweepKind::ReorgSweep => "reorg",
            SweepKind::CorrlenSweep => "corrlen",
            SweepKind::DelocSweep => "deloc",
            SweepKind::EigenstateScan => "eigscan",
            SweepKind::ApproxCompare => "approx",
            SweepKind::DisorderStudy => "disorder",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reorg" => Ok(SweepKind::ReorgSweep),
            "corrlen" => Ok(SweepKind::CorrlenSweep),
            "deloc" => Ok(SweepKind::DelocSweep),
            "eigscan" => Ok(SweepKind::EigenstateScan),
            "approx" => Ok(SweepKind::ApproxCompare),
            "disorder" => Ok(SweepKind::DisorderStudy),
            _ => Err(Error::InvalidInput(format!(
                "unknown sweep kind '{s}' (reorg|corrlen|deloc|eigscan|approx|disorder)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub kind: SweepKind,
    /// Swept parameter values: E_R in cm⁻¹, R_B in Å, or m.
    pub grid: Vec<f64>,
    pub states: Vec<StateSpec>,
    /// Bath parameters held fixed during the sweep.
    pub fixed: BathSpec,
    pub n_disorder: usize,
    pub seed: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidInput("sweep grid is empty".into()));
        }
        if self.grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput(
                "sweep grid must be strictly increasing".into(),
            ));
        }
        if self.n_disorder == 0 {
            return Err(Error::InvalidInput("n_disorder must be >= 1".into()));
        }
        self.fixed.validate()
    }
}

/// One aggregated sweep result row.
#[derive(Debug, Clone)]
pub struct SweepRecord {
    pub param: f64,
    pub state: String,
    pub eta_mean: f64,
    pub eta_spread: f64,
    pub eta_loss: f64,
    pub residual: f64,
    pub n_samples: usize,
    pub method: Method,
    pub config_hash: String,
}

/// E_R grid resolving the efficiency collapse: log-spaced through 10 cm⁻¹,
/// linear above.
pub fn default_reorg_grid() -> Vec<f64> {
    let mut g = vec![0.0];
    let mut x = 0.1;
    while x < 10.0 * (1.0 - 1e-12) {
        g.push(x);
        x *= 10f64.powf(0.25);
    }
    for i in 1..=10 {
        g.push(10.0 * i as f64);
    }
    g
}

/// R_B grid spanning the nearest-neighbor distance through 200 Å, plus the
/// exact fully-correlated point.
pub fn default_corrlen_grid() -> Vec<f64> {
    let mut g = vec![0.0, 5.0];
    let mut x = 10.0;
    while x <= 100.0 + 1e-9 {
        g.push(x);
        x += 10.0;
    }
    g.extend([125.0, 150.0, 200.0, f64::INFINITY]);
    g
}

pub fn default_m_grid(n_ring: usize) -> Vec<f64> {
    (1..=n_ring).map(|m| m as f64).collect()
}

/// Translation-averaged efficiency: mean and max−min over the n_ring
/// cyclic placements of the m-site window.
#[derive(Debug, Clone, Copy)]
pub struct TranslationStats {
    pub eta_mean: f64,
    pub eta_spread: f64,
    pub eta_loss: f64,
    pub residual: f64,
    pub n_samples: usize,
}

pub fn translation_average<F>(
    m: usize,
    sign: Sign,
    system: &ExcitonSystem,
    mut evaluator: F,
) -> Result<TranslationStats>
where
    F: FnMut(&PureState) -> Result<EfficiencyResult>,
{
    let n_ring = system.n_ring();
    let mut etas = Vec::with_capacity(n_ring);
    let mut loss_sum = 0.0;
    let mut residual: f64 = 0.0;
    for start in 0..n_ring {
        let psi = model::initial_state(m, sign, start, system)?;
        let r = evaluator(&psi)?;
        etas.push(r.eta);
        loss_sum += r.eta_loss;
        residual = residual.max(r.residual_trace.abs());
    }
    let mean = etas.iter().sum::<f64>() / n_ring as f64;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &e in &etas {
        lo = lo.min(e);
        hi = hi.max(e);
    }
    Ok(TranslationStats {
        eta_mean: mean,
        eta_spread: hi - lo,
        eta_loss: loss_sum / n_ring as f64,
        residual,
        n_samples: n_ring,
    })
}

/// How the per-bin rate matrices are assembled at one parameter point.
enum RatesKind {
    /// Full J₀ kernel.
    Correlated,
    /// Strictly local dephasing γ(ω)·I; never touches the kernel code.
    Local,
    /// Full kernel with sub-threshold correlations dropped.
    Cutoff(f64),
}

/// Diagonalized system pieces shared by every point of a sweep over bath
/// parameters (the Hamiltonian does not change).
struct SystemParts {
    basis: EigenBasis,
    lset: LindbladSet,
    h_eff: lindblad::EffectiveHamiltonian,
}

fn system_parts(system: &ExcitonSystem, disorder: &[f64], bin_tol: f64) -> Result<SystemParts> {
    let h = if disorder.is_empty() {
        system.clean_hamiltonian()
    } else {
        system.build_hamiltonian(disorder)?
    };
    let mut basis = eigen::eigendecompose(&h)?;
    basis.compute_bins(bin_tol)?;
    let lset = lindblad::lindblad_operators(&basis)?;
    let h_eff = build_effective_hamiltonian(system, &h)?;
    Ok(SystemParts { basis, lset, h_eff })
}

fn rates_for(
    parts: &SystemParts,
    system: &ExcitonSystem,
    bath: &BathSpec,
    kind: &RatesKind,
) -> Result<Vec<RateMatrix>> {
    let bins = &parts.basis.bins;
    match kind {
        RatesKind::Local => Ok(lindblad::local_rate_matrices_for_bins(
            bins,
            system.len(),
            bath,
        )),
        RatesKind::Correlated => {
            lindblad::rate_matrices_for_bins(bins, &system.positions(), bath)
        }
        RatesKind::Cutoff(y) => {
            let full = lindblad::rate_matrices_for_bins(bins, &system.positions(), bath)?;
            Ok(full.iter().map(|r| bath::cutoff_filter(r, *y)).collect())
        }
    }
}

fn point_solver(
    parts: &SystemParts,
    system: &ExcitonSystem,
    bath: &BathSpec,
    kind: &RatesKind,
) -> Result<EfficiencySolver> {
    let rates = rates_for(parts, system, bath, kind)?;
    let liouv = build_liouvillian(&parts.h_eff, &parts.lset, &rates)?;
    EfficiencySolver::new(&liouv, system)
}

fn evaluate_state(
    state: StateSpec,
    system: &ExcitonSystem,
    basis: &EigenBasis,
    solver: &EfficiencySolver,
) -> Result<TranslationStats> {
    match state {
        StateSpec::Window { m, sign } => translation_average(m, sign, system, |psi| {
            solver.efficiency(&psi.density_matrix())
        }),
        StateSpec::Eigenstate(k) => {
            if k >= basis.dim() {
                return Err(Error::InvalidInput(format!(
                    "eigenstate index {k} out of range"
                )));
            }
            let psi = PureState::from_real(&basis.modes.column(k).into_owned())?;
            let r = solver.efficiency(&psi.density_matrix())?;
            Ok(TranslationStats {
                eta_mean: r.eta,
                eta_spread: 0.0,
                eta_loss: r.eta_loss,
                residual: r.residual_trace.abs(),
                n_samples: 1,
            })
        }
    }
}

fn record(
    param: f64,
    state: impl Into<String>,
    stats: &TranslationStats,
    hash: &str,
) -> SweepRecord {
    SweepRecord {
        param,
        state: state.into(),
        eta_mean: stats.eta_mean,
        eta_spread: stats.eta_spread,
        eta_loss: stats.eta_loss,
        residual: stats.residual,
        n_samples: stats.n_samples,
        method: Method::LinearSolve,
        config_hash: hash.to_string(),
    }
}

/// η versus on-site reorganization energy at R_B = 0, assembled through the
/// strictly local rate path.
pub fn sweep_reorganization(spec: &SweepSpec, cfg: &LoadedConfig) -> Result<Vec<SweepRecord>> {
    spec.validate()?;
    let system = &cfg.system;
    let parts = system_parts(system, &[], cfg.numerics.bin_tolerance)?;
    let per_point: Vec<Result<Vec<SweepRecord>>> = spec
        .grid
        .par_iter()
        .map(|&er| {
            let bath = BathSpec {
                reorg_energy: er,
                corr_length: 0.0,
                ..spec.fixed.clone()
            };
            let solver = point_solver(&parts, system, &bath, &RatesKind::Local)?;
            spec.states
                .iter()
                .map(|&s| {
                    let stats = evaluate_state(s, system, &parts.basis, &solver)?;
                    Ok(record(er, s.to_string(), &stats, &cfg.hash))
                })
                .collect()
        })
        .collect();
    flatten(per_point)
}

/// Mean η of the symmetric window states minus the asymmetric ones at one
/// parameter point, with the larger of the two within-family spreads.
#[derive(Debug, Clone, Copy)]
pub struct SplitDiagnostic {
    pub param: f64,
    pub sym_mean: f64,
    pub asym_mean: f64,
    pub within_spread: f64,
}

#[derive(Debug, Clone)]
pub struct CorrlenOutput {
    pub records: Vec<SweepRecord>,
    pub split: Vec<SplitDiagnostic>,
}

/// η versus bath correlation length at fixed E_R, through the full J₀
/// kernel; `f64::INFINITY` in the grid exercises the exact fully-correlated
/// path.
pub fn sweep_correlation_length(spec: &SweepSpec, cfg: &LoadedConfig) -> Result<CorrlenOutput> {
    spec.validate()?;
    let system = &cfg.system;
    let parts = system_parts(system, &[], cfg.numerics.bin_tolerance)?;
    let per_point: Vec<Result<Vec<SweepRecord>>> = spec
        .grid
        .par_iter()
        .map(|&rb| {
            let bath = BathSpec {
                corr_length: rb,
                ..spec.fixed.clone()
            };
            let solver = point_solver(&parts, system, &bath, &RatesKind::Correlated)?;
            spec.states
                .iter()
                .map(|&s| {
                    let stats = evaluate_state(s, system, &parts.basis, &solver)?;
                    Ok(record(rb, s.to_string(), &stats, &cfg.hash))
                })
                .collect()
        })
        .collect();
    let records = flatten(per_point)?;
    let split = split_diagnostic(&records, &spec.states);
    Ok(CorrlenOutput { records, split })
}

fn split_diagnostic(records: &[SweepRecord], states: &[StateSpec]) -> Vec<SplitDiagnostic> {
    let family: Vec<(String, Sign)> = states
        .iter()
        .filter_map(|s| match s {
            StateSpec::Window { sign, .. } => Some((s.to_string(), *sign)),
            StateSpec::Eigenstate(_) => None,
        })
        .collect();
    let mut params: Vec<f64> = records.iter().map(|r| r.param).collect();
    params.dedup();
    let mut out = Vec::new();
    for p in params {
        let mut sym = Vec::new();
        let mut asym = Vec::new();
        for r in records.iter().filter(|r| r.param == p) {
            match family.iter().find(|(name, _)| *name == r.state) {
                Some((_, Sign::Plus)) => sym.push(r.eta_mean),
                Some((_, Sign::Minus)) => asym.push(r.eta_mean),
                None => {}
            }
        }
        if sym.is_empty() || asym.is_empty() {
            continue;
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let spread = |v: &[f64]| {
            v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - v.iter().cloned().fold(f64::INFINITY, f64::min)
        };
        out.push(SplitDiagnostic {
            param: p,
            sym_mean: mean(&sym),
            asym_mean: mean(&asym),
            within_spread: spread(&sym).max(spread(&asym)),
        });
    }
    out
}

#[derive(Debug, Clone)]
pub struct ApproxOutput {
    pub records: Vec<SweepRecord>,
    /// Effective number of consecutively correlated ring neighbors per R_B.
    pub neighbors: Vec<(f64, usize)>,
}

/// Exact kernel versus the two approximations — correlation cutoff at
/// fraction y and local dephasing at the effective reorganization energy —
/// across an R_B grid. State labels gain `|exact`, `|cutoff`, `|effective`
/// suffixes.
pub fn approx_compare(spec: &SweepSpec, cfg: &LoadedConfig) -> Result<ApproxOutput> {
    spec.validate()?;
    let system = &cfg.system;
    let y = cfg.numerics.cutoff_fraction;
    let parts = system_parts(system, &[], cfg.numerics.bin_tolerance)?;
    let positions = system.positions();
    let per_point: Vec<Result<Vec<SweepRecord>>> = spec
        .grid
        .par_iter()
        .map(|&rb| {
            let bath = BathSpec {
                corr_length: rb,
                ..spec.fixed.clone()
            };
            let effective_bath = BathSpec {
                reorg_energy: bath::effective_local_reorg_energy(
                    &positions,
                    rb,
                    spec.fixed.reorg_energy,
                ),
                corr_length: 0.0,
                ..spec.fixed.clone()
            };
            let curves = [
                ("exact", point_solver(&parts, system, &bath, &RatesKind::Correlated)?),
                ("cutoff", point_solver(&parts, system, &bath, &RatesKind::Cutoff(y))?),
                ("effective", point_solver(&parts, system, &effective_bath, &RatesKind::Local)?),
            ];
            let mut rows = Vec::new();
            for &s in &spec.states {
                for (label, solver) in &curves {
                    let stats = evaluate_state(s, system, &parts.basis, solver)?;
                    rows.push(record(rb, format!("{s}|{label}"), &stats, &cfg.hash));
                }
            }
            Ok(rows)
        })
        .collect();
    let records = flatten(per_point)?;
    let neighbors = spec
        .grid
        .iter()
        .map(|&rb| (rb, bath::neighbor_count(system, rb, y)))
        .collect();
    Ok(ApproxOutput { records, neighbors })
}

/// Plateau onset per correlation length: the smallest m beyond which η
/// stays within plateau_tol of its value at m, per sign family and
/// combined.
#[derive(Debug, Clone, Copy)]
pub struct PlateauOnset {
    pub corr_length: f64,
    pub sym_mc: usize,
    pub asym_mc: usize,
    pub m_c: usize,
}

#[derive(Debug, Clone)]
pub struct DelocOutput {
    pub records: Vec<SweepRecord>,
    pub onsets: Vec<PlateauOnset>,
}

pub fn plateau_onset(ms: &[usize], etas: &[f64], tol: f64) -> usize {
    assert_eq!(ms.len(), etas.len());
    for i in 0..ms.len() {
        if etas[i + 1..].iter().all(|&e| (e - etas[i]).abs() < tol) {
            return ms[i];
        }
    }
    *ms.last().expect("non-empty m grid")
}

/// Translation-averaged η versus delocalization length m for both sign
/// families, at the configured R_B and at R_B = 0. The grid holds the m
/// values; state labels look like `+|rb=40`.
pub fn sweep_delocalization(spec: &SweepSpec, cfg: &LoadedConfig) -> Result<DelocOutput> {
    spec.validate()?;
    let system = &cfg.system;
    let ms: Vec<usize> = spec
        .grid
        .iter()
        .map(|&x| {
            if x >= 1.0 && x.fract() == 0.0 && x <= system.n_ring() as f64 {
                Ok(x as usize)
            } else {
                Err(Error::InvalidInput(format!(
                    "delocalization grid value {x} is not a valid window length"
                )))
            }
        })
        .collect::<Result<_>>()?;
    let parts = system_parts(system, &[], cfg.numerics.bin_tolerance)?;
    let rb_values = [spec.fixed.corr_length, 0.0];
    let per_rb: Vec<Result<(Vec<SweepRecord>, PlateauOnset)>> = rb_values
        .par_iter()
        .map(|&rb| {
            let bath = BathSpec {
                corr_length: rb,
                ..spec.fixed.clone()
            };
            let solver = point_solver(&parts, system, &bath, &RatesKind::Correlated)?;
            let mut rows = Vec::new();
            let mut onset = [0usize; 2];
            for (f, &sign) in [Sign::Plus, Sign::Minus].iter().enumerate() {
                let mut etas = Vec::with_capacity(ms.len());
                for &m in &ms {
                    let stats = translation_average(m, sign, system, |psi| {
                        solver.efficiency(&psi.density_matrix())
                    })?;
                    etas.push(stats.eta_mean);
                    rows.push(record(m as f64, format!("{sign}|rb={rb}"), &stats, &cfg.hash));
                }
                onset[f] = plateau_onset(&ms, &etas, cfg.numerics.plateau_tol);
            }
            Ok((
                rows,
                PlateauOnset {
                    corr_length: rb,
                    sym_mc: onset[0],
                    asym_mc: onset[1],
                    m_c: onset[0].max(onset[1]),
                },
            ))
        })
        .collect();
    let mut records = Vec::new();
    let mut onsets = Vec::new();
    for r in per_rb {
        let (rows, onset) = r?;
        records.extend(rows);
        onsets.push(onset);
    }
    Ok(DelocOutput { records, onsets })
}

#[derive(Debug, Clone)]
pub struct EigenScanOutput {
    pub records: Vec<SweepRecord>,
    /// Spearman rank correlation of η with eigenenergy, per R_B.
    pub rank_correlation: Vec<(f64, f64)>,
}

/// η of every H_S eigenstate with vanishing trap overlap, versus its
/// energy, at the configured R_B and at R_B = 0.
pub fn eigenstate_efficiency_scan(spec: &SweepSpec, cfg: &LoadedConfig) -> Result<EigenScanOutput> {
    spec.fixed.validate()?;
    let system = &cfg.system;
    let parts = system_parts(system, &[], cfg.numerics.bin_tolerance)?;
    let qualifying = model::eigenstate_initials(&parts.basis, system, cfg.numerics.overlap_tol);
    if qualifying.is_empty() {
        return Err(Error::InvalidInput(
            "no eigenstate has vanishing trap overlap".into(),
        ));
    }
    let rb_values = [spec.fixed.corr_length, 0.0];
    let per_rb: Vec<Result<(Vec<SweepRecord>, (f64, f64))>> = rb_values
        .par_iter()
        .map(|&rb| {
            let bath = BathSpec {
                corr_length: rb,
                ..spec.fixed.clone()
            };
            let solver = point_solver(&parts, system, &bath, &RatesKind::Correlated)?;
            let mut rows = Vec::new();
            let mut energies = Vec::new();
            let mut etas = Vec::new();
            for (energy, psi) in &qualifying {
                let r = solver.efficiency(&psi.density_matrix())?;
                energies.push(*energy);
                etas.push(r.eta);
                let stats = TranslationStats {
                    eta_mean: r.eta,
                    eta_spread: 0.0,
                    eta_loss: r.eta_loss,
                    residual: r.residual_trace.abs(),
                    n_samples: 1,
                };
                rows.push(record(*energy, format!("eig|rb={rb}"), &stats, &cfg.hash));
            }
            Ok((rows, (rb, spearman(&energies, &etas))))
        })
        .collect();
    let mut records = Vec::new();
    let mut rank_correlation = Vec::new();
    for r in per_rb {
        let (rows, rc) = r?;
        records.extend(rows);
        rank_correlation.push(rc);
    }
    Ok(EigenScanOutput {
        records,
        rank_correlation,
    })
}

/// Average ranks (1-based, ties averaged).
fn ranks(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut r = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of the rank vectors).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..x.len() {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx).powi(2);
        vy += (ry[i] - my).powi(2);
    }
    cov / (vx * vy).sqrt().max(1e-300)
}

/// Correlation-length sweep repeated over an ensemble of static-disorder
/// realizations; eta_spread holds the ensemble standard deviation.
pub fn disorder_study(spec: &SweepSpec, cfg: &LoadedConfig) -> Result<Vec<SweepRecord>> {
    spec.validate()?;
    let system = &cfg.system;
    let sigma = system.disorder_sigma();
    let bin_tol = if sigma > 0.0 {
        cfg.numerics.bin_tolerance_disordered
    } else {
        cfg.numerics.bin_tolerance
    };
    // (sample, rb) points in parallel; each sample owns one disorder draw
    let tasks: Vec<(usize, f64)> = (0..spec.n_disorder)
        .flat_map(|s| spec.grid.iter().map(move |&rb| (s, rb)))
        .collect();
    let per_task: Vec<Result<Vec<(usize, f64, String, TranslationStats)>>> = tasks
        .par_iter()
        .map(|&(sample, rb)| {
            let disorder = disorder_sample(
                sigma,
                system.len(),
                spec.seed.wrapping_add(sample as u64),
            );
            let parts = system_parts(system, &disorder, bin_tol)?;
            let bath = BathSpec {
                corr_length: rb,
                ..spec.fixed.clone()
            };
            let solver = point_solver(&parts, system, &bath, &RatesKind::Correlated)?;
            spec.states
                .iter()
                .map(|&s| {
                    let stats = evaluate_state(s, system, &parts.basis, &solver)?;
                    Ok((sample, rb, s.to_string(), stats))
                })
                .collect()
        })
        .collect();
    let flat = flatten(per_task)?;

    // ensemble reduction, ordered by grid then state
    let mut records = Vec::new();
    for &rb in &spec.grid {
        for &s in &spec.states {
            let name = s.to_string();
            let vals: Vec<&TranslationStats> = flat
                .iter()
                .filter(|(_, p, n, _)| *p == rb && *n == name)
                .map(|(_, _, _, st)| st)
                .collect();
            let n = vals.len();
            let mean = vals.iter().map(|v| v.eta_mean).sum::<f64>() / n as f64;
            let var = if n > 1 {
                vals.iter().map(|v| (v.eta_mean - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            records.push(SweepRecord {
                param: rb,
                state: name,
                eta_mean: mean,
                eta_spread: var.sqrt(),
                eta_loss: vals.iter().map(|v| v.eta_loss).sum::<f64>() / n as f64,
                residual: vals.iter().map(|v| v.residual).fold(0.0, f64::max),
                n_samples: n,
                method: Method::LinearSolve,
                config_hash: cfg.hash.clone(),
            });
        }
    }
    Ok(records)
}

fn flatten<T>(chunks: Vec<Result<Vec<T>>>) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct InvariantCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// The consistency battery behind the `validate` subcommand: limit
/// identities between independently assembled code paths, the m=1 sign
/// degeneracy, and rerun determinism.
pub fn invariant_battery(cfg: &LoadedConfig) -> Result<Vec<InvariantCheck>> {
    let system = &cfg.system;
    let parts = system_parts(system, &[], cfg.numerics.bin_tolerance)?;
    let bath = BathSpec {
        reorg_energy: 100.0,
        corr_length: 0.0,
        ..cfg.bath.clone()
    };
    let states = reference_states(system.n_ring());
    let eval = |solver: &EfficiencySolver| -> Result<Vec<f64>> {
        states
            .iter()
            .map(|&s| Ok(evaluate_state(s, system, &parts.basis, solver)?.eta_mean))
            .collect()
    };
    let max_dev = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    let mut checks = Vec::new();

    // R_B = 0 through the kernel equals the strictly local assembly
    let local = eval(&point_solver(&parts, system, &bath, &RatesKind::Local)?)?;
    let kernel0 = eval(&point_solver(&parts, system, &bath, &RatesKind::Correlated)?)?;
    let dev = max_dev(&local, &kernel0);
    checks.push(InvariantCheck {
        name: "local limit (R_B=0 kernel vs local assembly)",
        passed: dev <= 1e-9,
        detail: format!("max |Δη| = {dev:.3e}"),
    });

    // R_B = ∞ equals E_R = 0 per state
    let full = BathSpec {
        corr_length: f64::INFINITY,
        ..bath.clone()
    };
    let no_coupling = BathSpec {
        reorg_energy: 0.0,
        ..bath.clone()
    };
    let eta_full = eval(&point_solver(&parts, system, &full, &RatesKind::Correlated)?)?;
    let eta_er0 = eval(&point_solver(&parts, system, &no_coupling, &RatesKind::Local)?)?;
    let dev = max_dev(&eta_full, &eta_er0);
    checks.push(InvariantCheck {
        name: "coherent limit (R_B=inf vs E_R=0)",
        passed: dev <= 1e-9,
        detail: format!("max |Δη| = {dev:.3e}"),
    });

    // m=1: the sign is a global phase
    let solver = point_solver(&parts, system, &bath, &RatesKind::Correlated)?;
    let plus = translation_average(1, Sign::Plus, system, |p| {
        solver.efficiency(&p.density_matrix())
    })?;
    let minus = translation_average(1, Sign::Minus, system, |p| {
        solver.efficiency(&p.density_matrix())
    })?;
    let dev = (plus.eta_mean - minus.eta_mean).abs();
    checks.push(InvariantCheck {
        name: "m=1 sign degeneracy",
        passed: dev <= 1e-12,
        detail: format!("|η⁺(1) − η⁻(1)| = {dev:.3e}"),
    });

    // rerun determinism, bitwise
    let again = eval(&point_solver(&parts, system, &bath, &RatesKind::Correlated)?)?;
    let bitwise = kernel0
        .iter()
        .zip(&again)
        .all(|(a, b)| a.to_bits() == b.to_bits());
    checks.push(InvariantCheck {
        name: "rerun determinism",
        passed: bitwise,
        detail: if bitwise {
            "bit-identical".into()
        } else {
            "differs between reruns".into()
        },
    });

    Ok(checks)
}
