//! Configuration file schema (TOML, versioned) and assembly of the site
//! network and bath it describes. The raw file bytes are hashed so every
//! output manifest can prove which configuration produced it.

use nalgebra::{DMatrix, Vector3};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::bath::{BathSpec, KernelDim};
use crate::error::{Error, Result};
use crate::model::{dipole_coupling_matrix, ring_geometry, ExcitonSystem, SiteConfig};

/// The default LH1-RC core configuration shipped with the crate.
pub const DEFAULT_CONFIG: &str = include_str!("../config/lh1_rc.toml");

const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    schema: u32,
    #[serde(default)]
    label: Option<String>,
    ring: RingSection,
    #[serde(default)]
    center: Option<CenterSection>,
    couplings: CouplingsSection,
    #[serde(default)]
    disorder: Option<DisorderSection>,
    bath: BathSection,
    #[serde(default)]
    numerics: Option<NumericsSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RingSection {
    n_sites: usize,
    radius: f64,
    site_energy: f64,
    #[serde(default)]
    trap_rate: f64,
    #[serde(default)]
    loss_rate: f64,
    /// "tangential" (default) or "vertical" transition dipoles.
    #[serde(default)]
    dipole_orientation: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CenterSection {
    #[serde(default)]
    sites: Vec<CenterSite>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CenterSite {
    position: [f64; 3],
    dipole: [f64; 3],
    site_energy: f64,
    #[serde(default)]
    trap_rate: f64,
    #[serde(default)]
    loss_rate: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CouplingsSection {
    #[serde(default)]
    dipole_strength: f64,
    /// Separate prefactor for pairs with exactly one center site; the
    /// special pair couples to the ring as a dimer, not a single pigment.
    center_strength: Option<f64>,
    /// Flip the sign of every other ring site's coupling to the center,
    /// modelling alternating pigment orientations around the ring. The
    /// orientation factor to the distant center follows the dipole flip,
    /// while nearest-neighbor bonds (set explicitly above) do not.
    #[serde(default)]
    center_alternating: bool,
    /// Alternating nearest-neighbor bond values around the ring; bond
    /// (1,2) gets the first entry, (2,3) the second, cyclically.
    #[serde(default)]
    nearest_neighbor: Vec<f64>,
    /// (site, site, value) with 1-based indices; replaces generated values.
    #[serde(default)]
    overrides: Vec<(usize, usize, f64)>,
    /// Full explicit matrix (row-major); mutually exclusive with the
    /// generator fields above.
    #[serde(default)]
    matrix: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DisorderSection {
    sigma: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BathSection {
    reorg_energy: f64,
    cutoff: f64,
    temperature: f64,
    corr_length: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NumericsSection {
    bin_tolerance: Option<f64>,
    bin_tolerance_disordered: Option<f64>,
    ode_rtol: Option<f64>,
    tail_tol: Option<f64>,
    plateau_tol: Option<f64>,
    overlap_tol: Option<f64>,
    cutoff_fraction: Option<f64>,
}

/// Solver and analysis tolerances, with serviceable defaults.
#[derive(Debug, Clone)]
pub struct Numerics {
    /// Frequency-bin clustering tolerance for clean spectra, cm⁻¹.
    pub bin_tolerance: f64,
    /// Bin tolerance once static disorder has lifted the degeneracies.
    pub bin_tolerance_disordered: f64,
    pub ode_rtol: f64,
    pub tail_tol: f64,
    /// Absolute η tolerance defining the delocalization plateau onset.
    pub plateau_tol: f64,
    /// Maximum trap-site population for "vanishing overlap with the RC".
    pub overlap_tol: f64,
    /// Kernel cutoff fraction y for the correlation-truncation comparison.
    pub cutoff_fraction: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            bin_tolerance: 1e-6,
            bin_tolerance_disordered: 1e-3,
            ode_rtol: 1e-8,
            tail_tol: 1e-6,
            plateau_tol: 0.002,
            overlap_tol: 1e-4,
            cutoff_fraction: 0.7,
        }
    }
}

/// A parsed configuration: the system it describes, the bath, tolerances,
/// and the SHA-256 of the raw text for provenance.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub system: ExcitonSystem,
    pub bath: BathSpec,
    pub numerics: Numerics,
    pub hash: String,
    pub raw: String,
}

/// Hash of a configuration text, as recorded in run manifests.
pub fn config_hash(raw: &str) -> String {
    hex::encode(Sha256::digest(raw.as_bytes()))
}

pub fn load_config(path: &std::path::Path) -> Result<LoadedConfig> {
    let raw = std::fs::read_to_string(path)?;
    parse_config(&raw)
}

pub fn default_config() -> LoadedConfig {
    parse_config(DEFAULT_CONFIG).expect("embedded default configuration must parse")
}

pub fn parse_config(raw: &str) -> Result<LoadedConfig> {
    let file: ConfigFile =
        toml::from_str(raw).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
    if file.schema != SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "unsupported schema version {} (expected {SCHEMA_VERSION})",
            file.schema
        )));
    }

    let n_ring = file.ring.n_sites;
    let center: Vec<(Vector3<f64>, Vector3<f64>)> = file
        .center
        .as_ref()
        .map(|c| {
            c.sites
                .iter()
                .map(|s| (Vector3::from(s.position), Vector3::from(s.dipole)))
                .collect()
        })
        .unwrap_or_default();
    let mut geometry = ring_geometry(n_ring, file.ring.radius, &center)?;
    match file.ring.dipole_orientation.as_deref() {
        None | Some("tangential") => {}
        Some("vertical") => {
            for (_, dipole) in geometry.iter_mut().take(n_ring) {
                *dipole = Vector3::new(0.0, 0.0, 1.0);
            }
        }
        Some(other) => {
            return Err(Error::Config(format!(
                "unknown ring.dipole_orientation '{other}'"
            )))
        }
    }

    let mut sites = Vec::with_capacity(geometry.len());
    for (i, (position, dipole)) in geometry.iter().enumerate() {
        let (energy, trap, loss) = if i < n_ring {
            (
                file.ring.site_energy,
                file.ring.trap_rate,
                file.ring.loss_rate,
            )
        } else {
            let cs = &file.center.as_ref().unwrap().sites[i - n_ring];
            (cs.site_energy, cs.trap_rate, cs.loss_rate)
        };
        // per-site invariants are enforced by ExcitonSystem::new
        sites.push(SiteConfig {
            index: i + 1,
            position: *position,
            dipole: *dipole,
            site_energy: energy,
            trap_rate: trap,
            loss_rate: loss,
        });
    }

    let m = sites.len();
    let couplings = if let Some(rows) = &file.couplings.matrix {
        if !file.couplings.nearest_neighbor.is_empty()
            || !file.couplings.overrides.is_empty()
            || file.couplings.dipole_strength != 0.0
            || file.couplings.center_strength.is_some()
            || file.couplings.center_alternating
        {
            return Err(Error::Config(
                "couplings.matrix excludes the generator fields".into(),
            ));
        }
        if rows.len() != m || rows.iter().any(|r| r.len() != m) {
            return Err(Error::Config(format!(
                "couplings.matrix must be {m}x{m}"
            )));
        }
        DMatrix::from_fn(m, m, |i, j| rows[i][j])
    } else {
        let mut overrides: Vec<(usize, usize, f64)> = Vec::new();
        let nn = &file.couplings.nearest_neighbor;
        if !nn.is_empty() {
            if n_ring % nn.len() != 0 {
                return Err(Error::Config(format!(
                    "nearest_neighbor pattern of length {} does not tile a {n_ring}-site ring",
                    nn.len()
                )));
            }
            for bond in 0..n_ring {
                overrides.push((bond, (bond + 1) % n_ring, nn[bond % nn.len()]));
            }
        }
        for &(a, b, v) in &file.couplings.overrides {
            if a == 0 || b == 0 || a > m || b > m || a == b {
                return Err(Error::Config(format!(
                    "coupling override ({a},{b}) out of range for {m} sites"
                )));
            }
            overrides.push((a - 1, b - 1, v));
        }
        let mut generated =
            dipole_coupling_matrix(&sites, file.couplings.dipole_strength, &[])?;
        if let Some(cs) = file.couplings.center_strength {
            if cs < 0.0 {
                return Err(Error::Config("center_strength must be >= 0".into()));
            }
            let ring_center =
                dipole_coupling_matrix(&sites, cs, &[])?;
            for i in 0..m {
                for j in 0..m {
                    if (i < n_ring) != (j < n_ring) {
                        generated[(i, j)] = ring_center[(i, j)];
                    }
                }
            }
        }
        if file.couplings.center_alternating {
            for i in 0..n_ring {
                if i % 2 == 1 {
                    for j in n_ring..m {
                        generated[(i, j)] = -generated[(i, j)];
                        generated[(j, i)] = -generated[(j, i)];
                    }
                }
            }
        }
        for &(a, b, v) in &overrides {
            generated[(a, b)] = v;
            generated[(b, a)] = v;
        }
        generated
    };

    let sigma = file.disorder.as_ref().map(|d| d.sigma).unwrap_or(0.0);
    if sigma < 0.0 {
        return Err(Error::Config("disorder.sigma must be >= 0".into()));
    }
    let label = file.label.clone().unwrap_or_else(|| "unnamed".into());
    let system = ExcitonSystem::new(sites, couplings, n_ring, sigma, label)?;

    let bath = BathSpec {
        reorg_energy: file.bath.reorg_energy,
        cutoff: file.bath.cutoff,
        temperature: file.bath.temperature,
        corr_length: file.bath.corr_length,
        kernel_dim: KernelDim::TwoD,
    };
    bath.validate()?;

    let d = Numerics::default();
    let numerics = match &file.numerics {
        Some(n) => Numerics {
            bin_tolerance: n.bin_tolerance.unwrap_or(d.bin_tolerance),
            bin_tolerance_disordered: n
                .bin_tolerance_disordered
                .unwrap_or(d.bin_tolerance_disordered),
            ode_rtol: n.ode_rtol.unwrap_or(d.ode_rtol),
            tail_tol: n.tail_tol.unwrap_or(d.tail_tol),
            plateau_tol: n.plateau_tol.unwrap_or(d.plateau_tol),
            overlap_tol: n.overlap_tol.unwrap_or(d.overlap_tol),
            cutoff_fraction: n.cutoff_fraction.unwrap_or(d.cutoff_fraction),
        },
        None => d,
    };
    for (name, v) in [
        ("bin_tolerance", numerics.bin_tolerance),
        ("ode_rtol", numerics.ode_rtol),
        ("tail_tol", numerics.tail_tol),
        ("plateau_tol", numerics.plateau_tol),
    ] {
        if !(v >= 0.0) {
            return Err(Error::Config(format!("numerics.{name} must be >= 0")));
        }
    }

    Ok(LoadedConfig {
        system,
        bath,
        numerics,
        hash: config_hash(raw),
        raw: raw.to_string(),
    })
}
