//! Site network: geometry, Hamiltonian, disorder, and initial states.

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_distr::Distribution;

use crate::eigen::EigenBasis;
use crate::error::{Error, Result};

/// Phase pattern of a delocalized window state: (±1)^j.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    /// (±1)^j with j counted from 1.
    pub fn factor(self, j: usize) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => {
                if j % 2 == 1 {
                    -1.0
                } else {
                    1.0
                }
            }
        }
    }
}

impl std::fmt::Display for Sign {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Sign::Plus => write!(f, "+"),
            Sign::Minus => write!(f, "-"),
        }
    }
}

/// One chromophore site.
#[derive(Debug, Clone)]
pub struct SiteConfig {
    /// 1-based site label.
    pub index: usize,
    /// Position in Å.
    pub position: Vector3<f64>,
    /// Mean site energy E_m in cm⁻¹.
    pub site_energy: f64,
    /// Unit transition-dipole orientation.
    pub dipole: Vector3<f64>,
    /// Trapping rate κ_m in ps⁻¹.
    pub trap_rate: f64,
    /// Loss rate Γ_m in ps⁻¹.
    pub loss_rate: f64,
}

impl SiteConfig {
    fn validate(&self) -> Result<()> {
        if !self.position.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "site {}: non-finite position",
                self.index
            )));
        }
        if (self.dipole.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "site {}: dipole norm {} is not 1",
                self.index,
                self.dipole.norm()
            )));
        }
        if self.trap_rate < 0.0 || self.loss_rate < 0.0 {
            return Err(Error::InvalidInput(format!(
                "site {}: negative trap/loss rate",
                self.index
            )));
        }
        Ok(())
    }
}

/// The M-site network: ring antenna sites first, center sites after.
#[derive(Debug, Clone)]
pub struct ExcitonSystem {
    sites: Vec<SiteConfig>,
    couplings: DMatrix<f64>,
    n_ring: usize,
    disorder_sigma: f64,
    label: String,
}

impl ExcitonSystem {
    pub fn new(
        sites: Vec<SiteConfig>,
        couplings: DMatrix<f64>,
        n_ring: usize,
        disorder_sigma: f64,
        label: impl Into<String>,
    ) -> Result<Self> {
        let m = sites.len();
        if couplings.nrows() != m || couplings.ncols() != m {
            return Err(Error::InvalidInput(format!(
                "coupling matrix is {}x{}, expected {m}x{m}",
                couplings.nrows(),
                couplings.ncols()
            )));
        }
        if n_ring > m {
            return Err(Error::InvalidInput(format!(
                "n_ring={n_ring} exceeds site count {m}"
            )));
        }
        let scale = couplings.amax().max(1.0);
        for i in 0..m {
            if couplings[(i, i)] != 0.0 {
                return Err(Error::InvalidInput(format!(
                    "coupling diagonal entry ({i},{i}) must be exactly zero"
                )));
            }
            for j in (i + 1)..m {
                if (couplings[(i, j)] - couplings[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidInput(format!(
                        "coupling matrix not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        if disorder_sigma < 0.0 {
            return Err(Error::InvalidInput("disorder_sigma must be >= 0".into()));
        }
        for s in &sites {
            s.validate()?;
        }
        Ok(Self {
            sites,
            couplings,
            n_ring,
            disorder_sigma,
            label: label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn n_ring(&self) -> usize {
        self.n_ring
    }

    pub fn sites(&self) -> &[SiteConfig] {
        &self.sites
    }

    pub fn couplings(&self) -> &DMatrix<f64> {
        &self.couplings
    }

    pub fn disorder_sigma(&self) -> f64 {
        self.disorder_sigma
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.sites.iter().map(|s| s.position).collect()
    }

    pub fn trap_rates(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.sites.iter().map(|s| s.trap_rate))
    }

    pub fn loss_rates(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.sites.iter().map(|s| s.loss_rate))
    }

    pub fn has_trap(&self) -> bool {
        self.sites.iter().any(|s| s.trap_rate > 0.0)
    }

    /// Single-excitation Hamiltonian with diagonal static disorder, cm⁻¹.
    pub fn build_hamiltonian(&self, disorder: &[f64]) -> Result<DMatrix<f64>> {
        let m = self.len();
        if disorder.len() != m {
            return Err(Error::InvalidInput(format!(
                "disorder vector length {} != {m}",
                disorder.len()
            )));
        }
        let mut h = self.couplings.clone();
        for i in 0..m {
            h[(i, i)] = self.sites[i].site_energy + disorder[i];
        }
        Ok(h)
    }

    pub fn clean_hamiltonian(&self) -> DMatrix<f64> {
        self.build_hamiltonian(&vec![0.0; self.len()])
            .expect("zero disorder always valid")
    }
}

/// Equally spaced ring sites in the z=0 plane followed by the listed center
/// sites. Ring dipoles default to the local tangent direction.
pub fn ring_geometry(
    n_ring: usize,
    radius: f64,
    center_sites: &[(Vector3<f64>, Vector3<f64>)],
) -> Result<Vec<(Vector3<f64>, Vector3<f64>)>> {
    if n_ring < 2 {
        return Err(Error::InvalidGeometry(format!(
            "ring needs at least 2 sites, got {n_ring}"
        )));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "ring radius must be positive, got {radius}"
        )));
    }
    let mut out = Vec::with_capacity(n_ring + center_sites.len());
    for j in 0..n_ring {
        let theta = 2.0 * std::f64::consts::PI * j as f64 / n_ring as f64;
        let position = Vector3::new(radius * theta.cos(), radius * theta.sin(), 0.0);
        let dipole = Vector3::new(-theta.sin(), theta.cos(), 0.0);
        out.push((position, dipole));
    }
    out.extend(center_sites.iter().cloned());
    Ok(out)
}

/// Point-dipole coupling matrix with sparse overrides (0-based index pairs).
///
/// V_mn = C·[μ̂_m·μ̂_n − 3(μ̂_m·r̂)(μ̂_n·r̂)]/d³ with C in cm⁻¹·Å³.
pub fn dipole_coupling_matrix(
    sites: &[SiteConfig],
    dipole_strength: f64,
    overrides: &[(usize, usize, f64)],
) -> Result<DMatrix<f64>> {
    let m = sites.len();
    let mut v = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let r = sites[j].position - sites[i].position;
            let d = r.norm();
            if d == 0.0 {
                return Err(Error::SingularGeometry(format!(
                    "sites {} and {} coincide",
                    sites[i].index, sites[j].index
                )));
            }
            let rhat = r / d;
            let mu_i = sites[i].dipole;
            let mu_j = sites[j].dipole;
            let orientation = mu_i.dot(&mu_j) - 3.0 * mu_i.dot(&rhat) * mu_j.dot(&rhat);
            let val = dipole_strength * orientation / d.powi(3);
            v[(i, j)] = val;
            v[(j, i)] = val;
        }
    }
    for &(i, j, val) in overrides {
        if i >= m || j >= m || i == j {
            return Err(Error::InvalidInput(format!(
                "coupling override ({i},{j}) out of range"
            )));
        }
        v[(i, j)] = val;
        v[(j, i)] = val;
    }
    Ok(v)
}

/// I.i.d. Gaussian site-energy deviations from a deterministic
/// counter-based stream: identical (seed, m, sigma) give identical output.
pub fn disorder_sample(sigma: f64, m: usize, seed: u64) -> Vec<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::StandardNormal;
    (0..m)
        .map(|_| {
            let z: f64 = normal.sample(&mut rng);
            sigma * z
        })
        .collect()
}

/// Normalized pure state in the site basis.
#[derive(Debug, Clone)]
pub struct PureState {
    amplitudes: DVector<Complex64>,
}

impl PureState {
    pub fn new(amplitudes: DVector<Complex64>) -> Result<Self> {
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "pure state norm {norm} is not 1"
            )));
        }
        Ok(Self { amplitudes })
    }

    pub fn from_real(real: &DVector<f64>) -> Result<Self> {
        Self::new(real.map(|x| Complex64::new(x, 0.0)))
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    /// ρ = |ψ⟩⟨ψ|
    pub fn density_matrix(&self) -> DMatrix<Complex64> {
        &self.amplitudes * self.amplitudes.adjoint()
    }
}

/// |Ψ_m^±⟩ = (1/√m) Σ_{j=1..m} (±1)^j |start+j-1⟩ over a cyclic ring window.
pub fn initial_state(
    m: usize,
    sign: Sign,
    start_site: usize,
    system: &ExcitonSystem,
) -> Result<PureState> {
    let n_ring = system.n_ring();
    if m == 0 || m > n_ring {
        return Err(Error::InvalidInput(format!(
            "delocalization length {m} outside 1..={n_ring}"
        )));
    }
    if start_site >= n_ring {
        return Err(Error::InvalidInput(format!(
            "start site {start_site} is not a ring site (n_ring={n_ring})"
        )));
    }
    let mut amps = DVector::<Complex64>::zeros(system.len());
    let norm = (m as f64).sqrt();
    for j in 1..=m {
        let site = (start_site + j - 1) % n_ring;
        amps[site] = Complex64::new(sign.factor(j) / norm, 0.0);
    }
    PureState::new(amps)
}

/// Eigenstates with total trap-site population at most `overlap_tol`,
/// paired with their energies, ascending.
pub fn eigenstate_initials(
    basis: &EigenBasis,
    system: &ExcitonSystem,
    overlap_tol: f64,
) -> Vec<(f64, PureState)> {
    let m = system.len();
    let trap_sites: Vec<usize> = (0..m).filter(|&i| system.sites()[i].trap_rate > 0.0).collect();
    let mut out = Vec::new();
    for k in 0..m {
        let col = basis.modes.column(k);
        let trap_pop: f64 = trap_sites.iter().map(|&i| col[i] * col[i]).sum();
        if trap_pop <= overlap_tol {
            let amps = DVector::from_iterator(m, col.iter().map(|&x| Complex64::new(x, 0.0)));
            out.push((
                basis.energies[k],
                PureState::new(amps).expect("eigenvector is normalized"),
            ));
        }
    }
    out
}
