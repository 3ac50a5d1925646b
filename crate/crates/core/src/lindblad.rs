//! Secular Lindblad operators, the spatially correlated dissipator, the
//! non-hermitian sink Hamiltonian, and the vectorized Liouvillian.
//!
//! Internally everything is expressed in the eigenbasis of H_S, where the
//! secular operators A_m(ω) are sparse sums of eigen-projector outer
//! products: A_m(ω) = Σ_{(a,b)∈bin(ω)} U_ma·U_mb · |ε_b⟩⟨ε_a|. Only the
//! per-pair coefficients are stored; site-basis matrices are materialized
//! on demand.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::bath::{BathSpec, RateMatrix};
use crate::eigen::{EigenBasis, FrequencyBin};
use crate::error::{Error, Result};
use crate::model::ExcitonSystem;
use crate::units::WAVENUMBER_TO_RAD_PER_PS;

/// The Lindblad operators of one frequency bin, in coefficient form.
#[derive(Debug, Clone)]
pub struct BinOperators {
    pub omega: f64,
    /// Ordered eigenpairs (a, b) with ε_a − ε_b ≈ omega.
    pub pairs: Vec<(usize, usize)>,
    /// M×p coefficients; column i belongs to pairs[i], row m to site m:
    /// coeff[(m, i)] = U[m, a_i] · U[m, b_i].
    pub coeff: DMatrix<f64>,
}

/// All A_m(ω), one [`BinOperators`] per frequency bin.
#[derive(Debug, Clone)]
pub struct LindbladSet {
    dim: usize,
    modes: DMatrix<f64>,
    bins: Vec<BinOperators>,
}

impl LindbladSet {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bins(&self) -> &[BinOperators] {
        &self.bins
    }

    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    /// Materialize A_m(ω) for bin `bin_idx` in the site basis.
    pub fn operator(&self, bin_idx: usize, m: usize) -> DMatrix<f64> {
        let bin = &self.bins[bin_idx];
        let dim = self.dim;
        let mut a = DMatrix::zeros(dim, dim);
        for (i, &(pa, pb)) in bin.pairs.iter().enumerate() {
            let c = bin.coeff[(m, i)];
            if c == 0.0 {
                continue;
            }
            let va = self.modes.column(pa);
            let vb = self.modes.column(pb);
            for r in 0..dim {
                for s in 0..dim {
                    a[(r, s)] += c * vb[r] * va[s];
                }
            }
        }
        a
    }
}

/// Decompose the site projectors over the binned eigenpair spectrum.
pub fn lindblad_operators(basis: &EigenBasis) -> Result<LindbladSet> {
    if basis.bins.is_empty() {
        return Err(Error::InvalidInput(
            "eigenbasis has no frequency bins; call compute_bins first".into(),
        ));
    }
    let dim = basis.dim();
    let u = &basis.modes;
    let bins = basis
        .bins
        .iter()
        .map(|bin: &FrequencyBin| {
            let p = bin.pairs.len();
            let mut coeff = DMatrix::zeros(dim, p);
            for (i, &(a, b)) in bin.pairs.iter().enumerate() {
                for m in 0..dim {
                    coeff[(m, i)] = u[(m, a)] * u[(m, b)];
                }
            }
            BinOperators {
                omega: bin.omega,
                pairs: bin.pairs.clone(),
                coeff,
            }
        })
        .collect();
    Ok(LindbladSet {
        dim,
        modes: basis.modes.clone(),
        bins,
    })
}

/// Correlated rate matrices for every bin of a basis.
pub fn rate_matrices_for_bins(
    bins: &[FrequencyBin],
    positions: &[nalgebra::Vector3<f64>],
    bath: &BathSpec,
) -> Result<Vec<RateMatrix>> {
    bins.iter()
        .map(|b| crate::bath::rate_matrix(b.omega, positions, bath))
        .collect()
}

/// Strictly local (diagonal) rate matrices for every bin.
pub fn local_rate_matrices_for_bins(
    bins: &[FrequencyBin],
    m: usize,
    bath: &BathSpec,
) -> Vec<RateMatrix> {
    bins.iter()
        .map(|b| crate::bath::local_rate_matrix(b.omega, m, bath))
        .collect()
}

/// The dissipator 𝒟(ρ) = Σ_ω Σ_mn γ_mn(ω) ℱ_mn(ω, ρ) in contracted form.
///
/// Per bin the site indices are contracted once into the pair-space gain
/// matrix g = Cᵀ γ C, and the anticommutator side into a single matrix
/// S = Σ_ω Σ_mn γ_mn A_m†A_n, so each application costs O(M³).
#[derive(Debug, Clone)]
pub struct Dissipator {
    modes: DMatrix<f64>,
    bins: Vec<BinGain>,
    /// Σ_ω S_ω in the eigenbasis (real symmetric).
    s_eigen: DMatrix<f64>,
    gamma_max: f64,
}

#[derive(Debug, Clone)]
struct BinGain {
    pairs: Vec<(usize, usize)>,
    /// p×p symmetric gain coefficients.
    g: DMatrix<f64>,
}

impl Dissipator {
    pub fn new(lset: &LindbladSet, rates: &[RateMatrix]) -> Result<Self> {
        if rates.len() != lset.bins.len() {
            return Err(Error::InvalidInput(format!(
                "{} rate matrices for {} bins",
                rates.len(),
                lset.bins.len()
            )));
        }
        let dim = lset.dim;
        let mut s_eigen = DMatrix::zeros(dim, dim);
        let mut gamma_max = 0.0f64;
        let mut bins = Vec::with_capacity(lset.bins.len());
        for (bin, rate) in lset.bins.iter().zip(rates) {
            if (rate.omega - bin.omega).abs() > 1e-9 * bin.omega.abs().max(1.0) {
                return Err(Error::InvalidInput(format!(
                    "rate matrix at omega={} misaligned with bin omega={}",
                    rate.omega, bin.omega
                )));
            }
            gamma_max = gamma_max.max(rate.on_site_rate());
            let g = bin.coeff.transpose() * &rate.gamma * &bin.coeff;
            for (i, &(ai, bi)) in bin.pairs.iter().enumerate() {
                for (j, &(aj, bj)) in bin.pairs.iter().enumerate() {
                    if bi == bj {
                        s_eigen[(ai, aj)] += g[(i, j)];
                    }
                }
            }
            bins.push(BinGain {
                pairs: bin.pairs.clone(),
                g,
            });
        }
        Ok(Self {
            modes: lset.modes.clone(),
            bins,
            s_eigen,
            gamma_max,
        })
    }

    pub fn gamma_max(&self) -> f64 {
        self.gamma_max
    }

    pub fn s_eigen(&self) -> &DMatrix<f64> {
        &self.s_eigen
    }

    /// 𝒟(ρ) for ρ given in the eigenbasis.
    pub fn apply_eigen(&self, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let dim = rho.nrows();
        let mut gain = DMatrix::<Complex64>::zeros(dim, dim);
        for bin in &self.bins {
            for (j, &(aj, bj)) in bin.pairs.iter().enumerate() {
                for (i, &(ai, bi)) in bin.pairs.iter().enumerate() {
                    let g = bin.g[(i, j)];
                    if g != 0.0 {
                        gain[(bj, bi)] += g * rho[(aj, ai)];
                    }
                }
            }
        }
        let s = self.s_eigen.map(|x| Complex64::new(x, 0.0));
        let sr = &s * rho;
        let rs = rho * &s;
        gain - (sr + rs).scale(0.5)
    }

    /// 𝒟(ρ) for ρ given in the site basis.
    pub fn apply(&self, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let u = self.modes.map(|x| Complex64::new(x, 0.0));
        let rho_eigen = u.transpose() * rho * &u;
        let out = self.apply_eigen(&rho_eigen);
        &u * out * u.transpose()
    }
}

/// Apply the correlated dissipator to a site-basis density matrix.
pub fn apply_dissipator(
    rho: &DMatrix<Complex64>,
    lset: &LindbladSet,
    rates: &[RateMatrix],
) -> Result<DMatrix<Complex64>> {
    Ok(Dissipator::new(lset, rates)?.apply(rho))
}

/// H_eff = H_S − i·diag(Γ_m + κ_m), stored in rad/ps.
#[derive(Debug, Clone)]
pub struct EffectiveHamiltonian {
    /// Complex M×M matrix in angular-frequency units (rad/ps); the
    /// hermitian part is H_S·(2πc), the anti-hermitian part −i·diag(Γ+κ).
    pub matrix: DMatrix<Complex64>,
}

impl EffectiveHamiltonian {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Fold trapping and loss sinks into the Hamiltonian.
pub fn build_effective_hamiltonian(
    system: &ExcitonSystem,
    h: &DMatrix<f64>,
) -> Result<EffectiveHamiltonian> {
    let m = system.len();
    if h.nrows() != m || h.ncols() != m {
        return Err(Error::InvalidInput("hamiltonian dimension mismatch".into()));
    }
    let mut matrix = h.map(|x| Complex64::new(x * WAVENUMBER_TO_RAD_PER_PS, 0.0));
    for (i, site) in system.sites().iter().enumerate() {
        if site.trap_rate < 0.0 || site.loss_rate < 0.0 {
            return Err(Error::InvalidInput("negative sink rate".into()));
        }
        matrix[(i, i)] -= Complex64::new(0.0, site.trap_rate + site.loss_rate);
    }
    Ok(EffectiveHamiltonian { matrix })
}

/// Dense superoperator L with vec(ρ̇) = L·vec(ρ), acting on column-major
/// vectorized density matrices expressed in the eigenbasis of H_S.
#[derive(Debug, Clone)]
pub struct Liouvillian {
    dim: usize,
    modes: DMatrix<f64>,
    /// −i(H_eff ρ − ρ H_eff†) part.
    pub coherent_sink: DMatrix<Complex64>,
    /// 𝒟(ρ) part.
    pub dissipative: DMatrix<Complex64>,
    gamma_max: f64,
}

impl Liouvillian {
    /// System dimension M (the superoperator is M²×M²).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    pub fn gamma_max(&self) -> f64 {
        self.gamma_max
    }

    /// Full superoperator (coherent+sink plus dissipative).
    pub fn full(&self) -> DMatrix<Complex64> {
        &self.coherent_sink + &self.dissipative
    }

    /// Transform a site-basis density matrix into the eigenbasis.
    pub fn to_eigen(&self, rho_site: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let u = self.modes.map(|x| Complex64::new(x, 0.0));
        u.transpose() * rho_site * u
    }

    /// Transform an eigenbasis density matrix back to the site basis.
    pub fn to_site(&self, rho_eigen: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let u = self.modes.map(|x| Complex64::new(x, 0.0));
        &u * rho_eigen * u.transpose()
    }
}

fn vec_index(r: usize, c: usize, dim: usize) -> usize {
    c * dim + r
}

/// Assemble the dense Liouvillian from its pieces.
pub fn build_liouvillian(
    h_eff: &EffectiveHamiltonian,
    lset: &LindbladSet,
    rates: &[RateMatrix],
) -> Result<Liouvillian> {
    let dim = lset.dim;
    if h_eff.dim() != dim {
        return Err(Error::InvalidInput(
            "effective hamiltonian dimension mismatch".into(),
        ));
    }
    let n2 = dim * dim;
    let u = lset.modes.map(|x| Complex64::new(x, 0.0));
    let h_eigen = u.transpose() * &h_eff.matrix * &u;

    // −i(I⊗H̃) + i(conj(H̃)⊗I) on column-major vec
    let mut coherent_sink = DMatrix::<Complex64>::zeros(n2, n2);
    let minus_i = Complex64::new(0.0, -1.0);
    let plus_i = Complex64::new(0.0, 1.0);
    for c in 0..dim {
        for r in 0..dim {
            for rp in 0..dim {
                coherent_sink[(vec_index(r, c, dim), vec_index(rp, c, dim))] +=
                    minus_i * h_eigen[(r, rp)];
            }
            for cp in 0..dim {
                coherent_sink[(vec_index(r, c, dim), vec_index(r, cp, dim))] +=
                    plus_i * h_eigen[(c, cp)].conj();
            }
        }
    }

    let dissipator = Dissipator::new(lset, rates)?;
    let mut dissipative = DMatrix::<Complex64>::zeros(n2, n2);
    for bin in &dissipator.bins {
        for (j, &(aj, bj)) in bin.pairs.iter().enumerate() {
            for (i, &(ai, bi)) in bin.pairs.iter().enumerate() {
                let g = bin.g[(i, j)];
                if g != 0.0 {
                    dissipative[(vec_index(bj, bi, dim), vec_index(aj, ai, dim))] +=
                        Complex64::new(g, 0.0);
                }
            }
        }
    }
    let s = &dissipator.s_eigen;
    for c in 0..dim {
        for r in 0..dim {
            for rp in 0..dim {
                dissipative[(vec_index(r, c, dim), vec_index(rp, c, dim))] -=
                    Complex64::new(0.5 * s[(r, rp)], 0.0);
            }
            for cp in 0..dim {
                dissipative[(vec_index(r, c, dim), vec_index(r, cp, dim))] -=
                    Complex64::new(0.5 * s[(c, cp)], 0.0);
            }
        }
    }

    Ok(Liouvillian {
        dim,
        modes: lset.modes.clone(),
        coherent_sink,
        dissipative,
        gamma_max: dissipator.gamma_max,
    })
}
