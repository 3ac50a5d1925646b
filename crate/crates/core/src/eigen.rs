//! Eigendecomposition of the single-excitation Hamiltonian and the binned
//! transition-frequency spectrum that structures the secular dissipator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// One representative transition frequency and the ordered eigenpairs
/// (from, to) whose energy difference falls in the bin.
#[derive(Debug, Clone)]
pub struct FrequencyBin {
    /// Signed representative frequency, cm⁻¹.
    pub omega: f64,
    /// (a, b) with ε_a − ε_b ≈ omega.
    pub pairs: Vec<(usize, usize)>,
}

/// Eigenpairs of H_S (ascending) plus the binned frequency spectrum.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    /// Eigenvalues, cm⁻¹, ascending.
    pub energies: DVector<f64>,
    /// Orthogonal mode matrix; column k is eigenvector k in the site basis.
    pub modes: DMatrix<f64>,
    pub bins: Vec<FrequencyBin>,
}

impl EigenBasis {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn compute_bins(&mut self, tolerance: f64) -> Result<()> {
        self.bins = frequency_bins(&self.energies, tolerance)?;
        Ok(())
    }
}

/// Eigendecompose a real symmetric Hamiltonian.
///
/// Eigenvalues ascending; each eigenvector's largest-magnitude component is
/// made positive so jump operators are reproducible across runs.
pub fn eigendecompose(h: &DMatrix<f64>) -> Result<EigenBasis> {
    let m = h.nrows();
    if h.ncols() != m {
        return Err(Error::InvalidInput("hamiltonian must be square".into()));
    }
    let scale = h.norm().max(1.0);
    for i in 0..m {
        for j in (i + 1)..m {
            if (h[(i, j)] - h[(j, i)]).abs() > 1e-9 * scale {
                return Err(Error::InvalidInput(format!(
                    "hamiltonian not hermitian at ({i},{j})"
                )));
            }
        }
    }
    let sym = 0.5 * (h + h.transpose());
    let (eigenvalues, eigenvectors) = jacobi_eigen(sym)?;

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eigenvalues[a].total_cmp(&eigenvalues[b]));

    let energies = DVector::from_iterator(m, order.iter().map(|&k| eigenvalues[k]));
    let mut modes = DMatrix::zeros(m, m);
    for (col, &k) in order.iter().enumerate() {
        let v = eigenvectors.column(k);
        let mut max_i = 0;
        for i in 1..m {
            if v[i].abs() > v[max_i].abs() {
                max_i = i;
            }
        }
        let phase = if v[max_i] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..m {
            modes[(i, col)] = phase * v[i];
        }
    }

    // reconstruction residual per pair
    let hnorm = h.norm();
    for k in 0..m {
        let v = modes.column(k);
        let residual = (h * v - energies[k] * v).norm();
        if residual > 1e-9 * hnorm.max(1.0) {
            return Err(Error::InvalidInput(format!(
                "eigenpair {k} residual {residual} exceeds tolerance"
            )));
        }
    }

    Ok(EigenBasis {
        energies,
        modes,
        bins: Vec::new(),
    })
}

/// Cyclic Jacobi diagonalization of a real symmetric matrix.
///
/// Chosen over the library QR-based solver because accumulated rotations
/// keep the eigenvectors orthogonal and the reconstruction residual at
/// machine precision, which the downstream secular decomposition relies
/// on for near-degenerate ring doublets.
fn jacobi_eigen(mut a: DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let m = a.nrows();
    let mut v = DMatrix::<f64>::identity(m, m);
    let scale = a.norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..60 {
        let mut off = 0.0;
        for i in 0..m {
            for j in (i + 1)..m {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            return Ok((a.diagonal(), v));
        }
        for p in 0..m {
            for q in (p + 1)..m {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                // classical 2x2 rotation zeroing a[(p,q)]
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..m {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..m {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..m {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    Err(Error::InvalidInput(
        "jacobi diagonalization did not converge".into(),
    ))
}

/// Cluster all M² ordered eigenpair differences into frequency bins.
///
/// Diagonal and degenerate differences (|ε_a − ε_b| ≤ tolerance) form the
/// ω = 0 bin; the remaining positive differences are greedily clustered
/// with diameter ≤ tolerance and mirrored to negative bins with reversed
/// pairs. Bins are returned in ascending omega order.
pub fn frequency_bins(energies: &DVector<f64>, tolerance: f64) -> Result<Vec<FrequencyBin>> {
    if tolerance < 0.0 {
        return Err(Error::InvalidInput("bin tolerance must be >= 0".into()));
    }
    let m = energies.len();
    let mut zero_pairs = Vec::new();
    let mut positive: Vec<(f64, (usize, usize))> = Vec::new();
    for a in 0..m {
        for b in 0..m {
            let d = energies[a] - energies[b];
            if d.abs() <= tolerance || (a == b) {
                zero_pairs.push((a, b));
            } else if d > 0.0 {
                positive.push((d, (a, b)));
            }
        }
    }
    positive.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut bins = vec![FrequencyBin {
        omega: 0.0,
        pairs: zero_pairs,
    }];
    let mut i = 0;
    while i < positive.len() {
        let first = positive[i].0;
        let mut j = i;
        while j < positive.len() && positive[j].0 - first <= tolerance {
            j += 1;
        }
        let members = &positive[i..j];
        let omega = members.iter().map(|x| x.0).sum::<f64>() / members.len() as f64;
        let pairs: Vec<(usize, usize)> = members.iter().map(|x| x.1).collect();
        let mirrored: Vec<(usize, usize)> = pairs.iter().map(|&(a, b)| (b, a)).collect();
        bins.push(FrequencyBin {
            omega: -omega,
            pairs: mirrored,
        });
        bins.push(FrequencyBin { omega, pairs });
        i = j;
    }
    bins.sort_by(|x, y| x.omega.total_cmp(&y.omega));
    Ok(bins)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_hamiltonian() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -1.0, 2.0]));
        let e = eigendecompose(&h).unwrap();
        assert_eq!(e.energies.as_slice(), &[-1.0, 2.0, 3.0]);
        // modes are a signed permutation of identity
        for k in 0..3 {
            let col = e.modes.column(k);
            let nonzero: Vec<f64> = col.iter().cloned().filter(|x| x.abs() > 1e-14).collect();
            assert_eq!(nonzero.len(), 1);
            assert!((nonzero[0] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn two_site_modes() {
        let h = DMatrix::from_row_slice(2, 2, &[0.0, 5.0, 5.0, 0.0]);
        let e = eigendecompose(&h).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!((e.energies[0] + 5.0).abs() < 1e-12);
        let lo = e.modes.column(0);
        assert!((lo[0].abs() - s).abs() < 1e-12 && (lo[1].abs() - s).abs() < 1e-12);
        assert!(lo[0] * lo[1] < 0.0);
        let hi = e.modes.column(1);
        assert!(hi[0] * hi[1] > 0.0);
    }

    #[test]
    fn random_symmetric_modes_unitary_and_reconstruct() {
        let mut h = DMatrix::zeros(8, 8);
        let mut s = 12345u64;
        for i in 0..8 {
            for j in i..8 {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let v = (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        let e = eigendecompose(&h).unwrap();
        let id = DMatrix::<f64>::identity(8, 8);
        assert!((e.modes.transpose() * &e.modes - &id).norm() < 1e-10);
        let d = DMatrix::from_diagonal(&e.energies);
        let rebuilt = &e.modes * d * e.modes.transpose();
        assert!((&rebuilt - &h).norm() <= 1e-9 * h.norm());
        // modes† H modes diagonal
        let diag = e.modes.transpose() * &h * &e.modes;
        for i in 0..8 {
            for j in 0..8 {
                if i != j {
                    assert!(diag[(i, j)].abs() < 1e-9 * h.norm());
                }
            }
        }
    }

    #[test]
    fn rejects_non_symmetric() {
        let h = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(eigendecompose(&h).is_err());
    }

    #[test]
    fn bins_for_two_levels() {
        let e = DVector::from_vec(vec![-5.0, 5.0]);
        let bins = frequency_bins(&e, 1e-9).unwrap();
        assert_eq!(bins.len(), 3);
        assert_eq!(bins[0].omega, -10.0);
        assert_eq!(bins[1].omega, 0.0);
        assert_eq!(bins[2].omega, 10.0);
        assert_eq!(bins[1].pairs.len(), 2);
        assert_eq!(bins[0].pairs, vec![(0, 1)]);
        assert_eq!(bins[2].pairs, vec![(1, 0)]);
    }

    #[test]
    fn degenerate_triple_collapses_to_zero_bin() {
        let e = DVector::from_vec(vec![2.0, 2.0, 2.0]);
        let bins = frequency_bins(&e, 1e-9).unwrap();
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].omega, 0.0);
        assert_eq!(bins[0].pairs.len(), 9);
    }

    fn assert_partition(energies: &DVector<f64>, tol: f64) {
        let m = energies.len();
        let bins = frequency_bins(energies, tol).unwrap();
        // exhaustive O(M^4)-style oracle: each ordered pair in exactly one bin
        for a in 0..m {
            for b in 0..m {
                let hits: usize = bins
                    .iter()
                    .map(|bin| bin.pairs.iter().filter(|&&p| p == (a, b)).count())
                    .sum();
                assert_eq!(hits, 1, "pair ({a},{b}) appears {hits} times");
            }
        }
        for bin in &bins {
            for &(a, b) in &bin.pairs {
                assert!(
                    ((energies[a] - energies[b]) - bin.omega).abs() <= tol.max(1e-12),
                    "member outside bin tolerance"
                );
            }
        }
        // mirror structure
        for bin in &bins {
            assert!(
                bins.iter().any(|other| (other.omega + bin.omega).abs() <= 1e-12),
                "no mirror bin for omega={}",
                bin.omega
            );
        }
    }

    #[test]
    fn symmetric_ring_spectrum_bins_partition() {
        // C32-symmetric ring: doublet degeneracies produce off-diagonal
        // pairs in the zero bin
        let n = 32;
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            let j = (i + 1) % n;
            h[(i, j)] = 100.0;
            h[(j, i)] = 100.0;
        }
        let e = eigendecompose(&h).unwrap();
        // doublets present
        let mut degenerate = 0;
        for k in 1..n {
            if (e.energies[k] - e.energies[k - 1]).abs() < 1e-6 {
                degenerate += 1;
            }
        }
        assert_eq!(degenerate, 15); // 15 doublets + 2 singlets for C32
        assert_partition(&e.energies, 1e-6);
        let bins = frequency_bins(&e.energies, 1e-6).unwrap();
        let zero = bins.iter().find(|b| b.omega == 0.0).unwrap();
        let offdiag = zero.pairs.iter().filter(|(a, b)| a != b).count();
        assert_eq!(offdiag, 30); // two per doublet
    }

    #[test]
    fn disordered_spectrum_bins_partition() {
        let mut e = Vec::new();
        let mut s = 99u64;
        for _ in 0..34 {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            e.push(((s >> 11) as f64 / (1u64 << 53) as f64) * 1000.0);
        }
        let e = DVector::from_vec(e);
        assert_partition(&e, 1e-3);
        assert_partition(&e, 0.0);
        assert_partition(&e, 50.0);
    }
}
