//! Drude bath: spectral density, thermal rates, and the spatial
//! correlation kernel that couples dephasing at different sites.

use nalgebra::{DMatrix, Vector3};

use crate::bessel::bessel_j0;
use crate::error::{Error, Result};
use crate::units::{thermal_energy, WAVENUMBER_TO_RAD_PER_PS};

/// Bath environment dimensionality for the correlation kernel.
/// Only the 2D kernel J₀(d/R_B) is implemented; 3D is reserved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelDim {
    #[default]
    TwoD,
}

/// Bath parameters; fully determines all dephasing/relaxation rates.
#[derive(Debug, Clone)]
pub struct BathSpec {
    /// Reorganization energy E_R, cm⁻¹.
    pub reorg_energy: f64,
    /// Drude cutoff ω_c, cm⁻¹.
    pub cutoff: f64,
    /// Temperature, K.
    pub temperature: f64,
    /// Correlation length R_B, Å. `f64::INFINITY` selects the exact
    /// fully-correlated path; 0 the exact local path.
    pub corr_length: f64,
    pub kernel_dim: KernelDim,
}

impl BathSpec {
    pub fn validate(&self) -> Result<()> {
        if self.reorg_energy < 0.0 {
            return Err(Error::InvalidInput("reorg_energy must be >= 0".into()));
        }
        if !(self.cutoff > 0.0) {
            return Err(Error::InvalidInput("cutoff must be > 0".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidInput("temperature must be > 0".into()));
        }
        if self.corr_length < 0.0 || self.corr_length.is_nan() {
            return Err(Error::InvalidInput(
                "corr_length must be >= 0 or infinity".into(),
            ));
        }
        Ok(())
    }
}

/// Drude spectral density 𝒥(ω) = 2 E_R ω_c ω / π(ω_c² + ω²), cm⁻¹.
pub fn spectral_density(omega: f64, bath: &BathSpec) -> Result<f64> {
    if omega < 0.0 {
        return Err(Error::InvalidInput(format!(
            "spectral density argument must be >= 0, got {omega}"
        )));
    }
    Ok(2.0 * bath.reorg_energy * bath.cutoff * omega
        / (std::f64::consts::PI * (bath.cutoff * bath.cutoff + omega * omega)))
}

/// Bose-Einstein occupation N(ω) = 1/(e^{ω/k_BT} − 1); ω ≠ 0.
pub fn thermal_occupation(omega: f64, temperature: f64) -> f64 {
    1.0 / ((omega / thermal_energy(temperature)).exp() - 1.0)
}

/// Single-site rate γ(ω) = 2π 𝒥(|ω|) |N(−ω)| in ps⁻¹.
///
/// ω > 0 is a downward transition (emission, 1+N), ω < 0 upward
/// (absorption, N). ω = 0 takes the analytic Drude pure-dephasing limit
/// 4 E_R k_B T / ω_c rather than the 0·∞ numeric form.
pub fn single_site_rate(omega: f64, bath: &BathSpec) -> f64 {
    let rate_wavenumbers = if omega == 0.0 {
        4.0 * bath.reorg_energy * thermal_energy(bath.temperature) / bath.cutoff
    } else {
        let j = spectral_density(omega.abs(), bath).expect("|omega| >= 0");
        let n = thermal_occupation(omega.abs(), bath.temperature);
        let occupation = if omega > 0.0 { 1.0 + n } else { n };
        2.0 * std::f64::consts::PI * j * occupation
    };
    rate_wavenumbers * WAVENUMBER_TO_RAD_PER_PS
}

/// Spatial correlation 𝒢 = J₀(d/R_B) between sites a distance d apart.
///
/// R_B = ∞ and R_B = 0 are exact code paths (fully correlated / local).
pub fn spatial_correlation(d: f64, corr_length: f64) -> f64 {
    debug_assert!(d >= 0.0);
    if corr_length.is_infinite() {
        1.0
    } else if corr_length == 0.0 {
        if d == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        bessel_j0(d / corr_length)
    }
}

/// Per-frequency rate matrix γ_mn(ω) = J₀(d_mn/R_B)·γ(ω), ps⁻¹.
#[derive(Debug, Clone)]
pub struct RateMatrix {
    /// Transition frequency this matrix belongs to, cm⁻¹.
    pub omega: f64,
    /// Symmetric M×M rates, ps⁻¹.
    pub gamma: DMatrix<f64>,
}

impl RateMatrix {
    /// Smallest eigenvalue; the kernel is analytically PSD, so anything
    /// below −1e-10·γ(ω) indicates a geometry or kernel bug.
    pub fn min_eigenvalue(&self) -> f64 {
        nalgebra::SymmetricEigen::new(self.gamma.clone())
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    /// On-site rate γ(ω) (all diagonal entries are identical).
    pub fn on_site_rate(&self) -> f64 {
        if self.gamma.nrows() > 0 {
            self.gamma[(0, 0)]
        } else {
            0.0
        }
    }
}

/// Build the correlated rate matrix for one transition frequency.
pub fn rate_matrix(
    omega: f64,
    positions: &[Vector3<f64>],
    bath: &BathSpec,
) -> Result<RateMatrix> {
    let m = positions.len();
    let rate = single_site_rate(omega, bath);
    let mut gamma = DMatrix::zeros(m, m);
    for i in 0..m {
        gamma[(i, i)] = rate;
        for j in (i + 1)..m {
            let d = (positions[i] - positions[j]).norm();
            if d == 0.0 {
                return Err(Error::SingularGeometry(format!(
                    "sites {i} and {j} coincide"
                )));
            }
            let g = spatial_correlation(d, bath.corr_length) * rate;
            gamma[(i, j)] = g;
            gamma[(j, i)] = g;
        }
    }
    Ok(RateMatrix { omega, gamma })
}

/// Strictly local rate matrix γ(ω)·I, independent of any kernel code path.
pub fn local_rate_matrix(omega: f64, m: usize, bath: &BathSpec) -> RateMatrix {
    let rate = single_site_rate(omega, bath);
    RateMatrix {
        omega,
        gamma: DMatrix::from_diagonal_element(m, m, rate),
    }
}

/// Effective local reorganization energy Ẽ_R = E_R·(1 − ⟨J₀(d_mn/R_B)⟩)
/// averaged over all m ≠ n pairs; reduces to E_R[1 − J₀(d/R_B)] for M = 2.
pub fn effective_local_reorg_energy(
    positions: &[Vector3<f64>],
    corr_length: f64,
    reorg_energy: f64,
) -> f64 {
    let m = positions.len();
    assert!(m >= 2, "effective reorganization needs at least two sites");
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                let d = (positions[i] - positions[j]).norm();
                sum += spatial_correlation(d, corr_length);
                count += 1;
            }
        }
    }
    reorg_energy * (1.0 - sum / count as f64)
}

/// Zero out off-diagonal rates whose correlation magnitude is below `y`.
///
/// The magnitude criterion keeps y = 0 a no-op while matching the retained
/// set for the y = 0.7 working point (|J₀| never re-enters 0.7 after its
/// first zero).
pub fn cutoff_filter(rate: &RateMatrix, y: f64) -> RateMatrix {
    let mut gamma = rate.gamma.clone();
    let on_site = rate.on_site_rate();
    if on_site != 0.0 {
        let m = gamma.nrows();
        for i in 0..m {
            for j in 0..m {
                if i != j && (gamma[(i, j)] / on_site).abs() < y {
                    gamma[(i, j)] = 0.0;
                }
            }
        }
    }
    RateMatrix {
        omega: rate.omega,
        gamma,
    }
}

/// Effective number of correlated ring neighbors (including self): size of
/// the consecutive group around a ring site with J₀(d/R_B) ≥ y.
pub fn neighbor_count(system: &crate::model::ExcitonSystem, corr_length: f64, y: f64) -> usize {
    let n_ring = system.n_ring();
    assert!(n_ring >= 2, "neighbor count needs a ring");
    let positions = system.positions();
    let mut k = 0usize;
    let half = n_ring / 2;
    for step in 1..=half {
        let d = (positions[0] - positions[step % n_ring]).norm();
        if spatial_correlation(d, corr_length) >= y {
            k = step;
        } else {
            break;
        }
    }
    (2 * k + 1).min(n_ring)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ring_geometry, ExcitonSystem, SiteConfig};

    fn bath(reorg: f64, corr_length: f64) -> BathSpec {
        BathSpec {
            reorg_energy: reorg,
            cutoff: 300.0,
            temperature: 293.0,
            corr_length,
            kernel_dim: KernelDim::TwoD,
        }
    }

    #[test]
    fn drude_values() {
        let b = bath(100.0, 0.0);
        assert_eq!(spectral_density(0.0, &b).unwrap(), 0.0);
        // at ω = ω_c the Drude density is E_R/π
        let at_cutoff = spectral_density(300.0, &b).unwrap();
        assert!((at_cutoff - 100.0 / std::f64::consts::PI).abs() < 1e-12);
        assert!((at_cutoff - 31.830988618).abs() < 1e-6);
        assert!(spectral_density(-1.0, &b).is_err());
        // maximum at the cutoff
        assert!(spectral_density(299.0, &b).unwrap() < at_cutoff);
        assert!(spectral_density(301.0, &b).unwrap() < at_cutoff);
    }

    #[test]
    fn reorganization_energy_integral() {
        // ∫ J(ω)/ω dω = E_R, adaptive-free Simpson on a substituted grid
        let b = bath(100.0, 0.0);
        // substitute ω = ω_c tan(t), dω = ω_c sec² t dt, t ∈ [0, π/2)
        let n = 200_000;
        let h = (std::f64::consts::FRAC_PI_2 - 1e-9) / n as f64;
        let f = |t: f64| {
            let w = 300.0 * t.tan();
            if w == 0.0 {
                // J(ω)/ω → 2E_R/(πω_c) as ω → 0, times dω/dt = ω_c sec² t
                2.0 * 100.0 / std::f64::consts::PI
            } else {
                spectral_density(w, &b).unwrap() / w * 300.0 / (t.cos() * t.cos())
            }
        };
        let mut sum = f(0.0) + f(n as f64 * h);
        for i in 1..n {
            sum += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        let integral = sum * h / 3.0;
        assert!((integral - 100.0).abs() / 100.0 < 1e-3, "got {integral}");
    }

    #[test]
    fn occupation_values() {
        let kt = thermal_energy(293.0);
        let n = thermal_occupation(kt, 293.0);
        assert!((n - 1.0 / (std::f64::consts::E - 1.0)).abs() < 1e-12);
        assert!((n - 0.58198).abs() < 1e-5);
        assert!(thermal_occupation(100.0 * kt, 293.0) < 1e-40);
        // |N(−ω)| = 1 + N(ω)
        let neg = thermal_occupation(-kt, 293.0);
        assert!((neg.abs() - (1.0 + n)).abs() < 1e-12);
        assert!((neg + 1.58198).abs() < 1e-5);
    }

    #[test]
    fn detailed_balance_on_log_grid() {
        let b = bath(100.0, 0.0);
        let kt = thermal_energy(293.0);
        for i in 0..100 {
            let omega = 10f64.powf(-2.0 + 5.0 * i as f64 / 99.0);
            let down = single_site_rate(omega, &b);
            let up = single_site_rate(-omega, &b);
            let ratio = down / up;
            let boltzmann = (omega / kt).exp();
            assert!(
                (ratio - boltzmann).abs() / boltzmann <= 1e-10,
                "omega={omega}: {ratio} vs {boltzmann}"
            );
        }
    }

    #[test]
    fn zero_frequency_limit() {
        let b = bath(100.0, 0.0);
        // closed form in wavenumbers: 4 E_R k_B T / ω_c
        let expected_wavenumbers = 4.0 * 100.0 * thermal_energy(293.0) / 300.0;
        assert!((expected_wavenumbers - 271.52692853).abs() < 1e-6);
        let got = single_site_rate(0.0, &b);
        assert!((got - expected_wavenumbers * WAVENUMBER_TO_RAD_PER_PS).abs() < 1e-9);
        // numeric cross-check at ω = 1e-4 cm⁻¹
        let near = single_site_rate(1e-4, &b) + single_site_rate(-1e-4, &b);
        assert!((near / 2.0 - got).abs() / got < 1e-6);
    }

    #[test]
    fn zero_coupling_means_zero_rate() {
        let b = bath(0.0, 0.0);
        for omega in [-50.0, 0.0, 123.0] {
            assert_eq!(single_site_rate(omega, &b), 0.0);
        }
    }

    #[test]
    fn correlation_limits() {
        assert_eq!(spatial_correlation(0.0, 40.0), 1.0);
        assert_eq!(spatial_correlation(12.0, f64::INFINITY), 1.0);
        assert_eq!(spatial_correlation(12.0, 0.0), 0.0);
        assert_eq!(spatial_correlation(0.0, 0.0), 1.0);
        // first zero of J0 at z = 2.404826
        assert!(spatial_correlation(2.404826 * 40.0, 40.0).abs() < 1e-6);
        assert!(spatial_correlation(5.0, 40.0) <= 1.0);
    }

    fn ring_positions(n: usize, radius: f64) -> Vec<Vector3<f64>> {
        ring_geometry(n, radius, &[])
            .unwrap()
            .into_iter()
            .map(|(p, _)| p)
            .collect()
    }

    #[test]
    fn rate_matrix_limits_and_psd() {
        let positions = ring_positions(32, 50.0);
        // local limit: diagonal
        let rm = rate_matrix(100.0, &positions, &bath(100.0, 0.0)).unwrap();
        let rate = single_site_rate(100.0, &bath(100.0, 0.0));
        assert!((rm.gamma.clone() - DMatrix::from_diagonal_element(32, 32, rate)).amax() == 0.0);
        // fully-correlated limit: rank-1 all-ones
        let rm = rate_matrix(100.0, &positions, &bath(100.0, f64::INFINITY)).unwrap();
        assert!((rm.gamma[(3, 17)] - rate).abs() < 1e-12);
        assert!(rm.min_eigenvalue() >= -1e-10 * rate);
        // intermediate correlation stays PSD within tolerance
        let rm = rate_matrix(0.0, &positions, &bath(100.0, 40.0)).unwrap();
        assert!(rm.min_eigenvalue() >= -1e-10 * rm.on_site_rate());
        assert!((rm.gamma.clone() - rm.gamma.transpose()).amax() == 0.0);
    }

    #[test]
    fn effective_reorg_two_site_limits() {
        let positions = vec![Vector3::zeros(), Vector3::new(10.0, 0.0, 0.0)];
        assert!(effective_local_reorg_energy(&positions, f64::INFINITY, 100.0).abs() < 1e-12);
        assert!((effective_local_reorg_energy(&positions, 0.0, 100.0) - 100.0).abs() < 1e-12);
        // matches the closed two-site formula at finite R_B
        let eff = effective_local_reorg_energy(&positions, 25.0, 100.0);
        assert!((eff - 100.0 * (1.0 - bessel_j0(10.0 / 25.0))).abs() < 1e-12);
    }

    #[test]
    fn effective_reorg_matches_double_loop() {
        let positions = ring_positions(34, 50.0);
        let eff = effective_local_reorg_energy(&positions, 40.0, 100.0);
        // independent double-loop summation over unordered pairs
        let m = positions.len();
        let mut sum = 0.0;
        let mut cnt = 0;
        for i in 0..m {
            for j in (i + 1)..m {
                sum += bessel_j0((positions[i] - positions[j]).norm() / 40.0);
                cnt += 1;
            }
        }
        let expected = 100.0 * (1.0 - sum / cnt as f64);
        assert!((eff - expected).abs() < 1e-10);
    }

    #[test]
    fn effective_reorg_monotone_in_corr_length() {
        let positions = vec![Vector3::zeros(), Vector3::new(10.0, 0.0, 0.0)];
        // monotone non-increasing on R_B in [d/2.4, ∞)
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let rb = 10.0 / 2.4 + i as f64 * 2.0;
            let e = effective_local_reorg_energy(&positions, rb, 100.0);
            assert!(e <= prev + 1e-12);
            prev = e;
        }
    }

    #[test]
    fn cutoff_filter_behavior() {
        let positions = ring_positions(32, 50.0);
        let rm = rate_matrix(0.0, &positions, &bath(100.0, 40.0)).unwrap();
        // y = 0 leaves the matrix unchanged
        let same = cutoff_filter(&rm, 0.0);
        assert_eq!(same.gamma, rm.gamma);
        // y > 1 keeps only the diagonal
        let diag = cutoff_filter(&rm, 1.0 + 1e-12);
        for i in 0..32 {
            for j in 0..32 {
                if i != j {
                    assert_eq!(diag.gamma[(i, j)], 0.0);
                }
            }
            assert_eq!(diag.gamma[(i, i)], rm.gamma[(i, i)]);
        }
        // idempotent
        let once = cutoff_filter(&rm, 0.7);
        let twice = cutoff_filter(&once, 0.7);
        assert_eq!(once.gamma, twice.gamma);
        // retained pairs are exactly d <= z*·R_B with J0(z*) = 0.7
        let (mut lo, mut hi) = (0.0, 2.404826);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if bessel_j0(mid) > 0.7 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let z_star = 0.5 * (lo + hi);
        // true root of J0(z) = 0.7; the commonly quoted "1.1" is a rounding
        assert!((z_star - 1.1411533351511047).abs() < 1e-9, "z* = {z_star}");
        for i in 0..32 {
            for j in 0..32 {
                if i == j {
                    continue;
                }
                let d = (positions[i] - positions[j]).norm();
                if d <= z_star * 40.0 - 1e-9 {
                    assert!(once.gamma[(i, j)] != 0.0, "pair d={d} should be retained");
                } else if d >= z_star * 40.0 + 1e-9 {
                    assert!(once.gamma[(i, j)] == 0.0, "pair d={d} should be dropped");
                }
            }
        }
    }

    fn trivial_ring_system(n: usize, radius: f64) -> ExcitonSystem {
        let geom = ring_geometry(n, radius, &[]).unwrap();
        let sites: Vec<SiteConfig> = geom
            .iter()
            .enumerate()
            .map(|(i, (p, d))| SiteConfig {
                index: i + 1,
                position: *p,
                site_energy: 0.0,
                dipole: *d,
                trap_rate: 0.0,
                loss_rate: 0.0,
            })
            .collect();
        ExcitonSystem::new(sites, DMatrix::zeros(n, n), n, 0.0, "ring").unwrap()
    }

    #[test]
    fn neighbor_counts() {
        let sys = trivial_ring_system(32, 50.0);
        assert_eq!(neighbor_count(&sys, 1e-12, 0.7), 1);
        // the paper's working point: R_B ≈ 20 Å gives 5 consecutive sites
        assert_eq!(neighbor_count(&sys, 20.0, 0.7), 5);
        // R_B ≥ d_max/1.1 correlates the whole ring
        assert_eq!(neighbor_count(&sys, 100.0 / 1.09, 0.7), 32);
    }
}
