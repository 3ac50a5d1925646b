//! Unit conventions and physical constants.
//!
//! Energies and transition frequencies are carried in wavenumbers (cm⁻¹),
//! times in picoseconds, and rates in ps⁻¹. The conversion from a
//! wavenumber to an angular frequency in rad/ps happens exactly once, at
//! the dynamics boundary, through [`WAVENUMBER_TO_RAD_PER_PS`].

/// Speed of light in cm/ps.
pub const SPEED_OF_LIGHT_CM_PER_PS: f64 = 2.99792458e-2;

/// Boltzmann constant in cm⁻¹/K.
pub const BOLTZMANN_CM_PER_K: f64 = 0.69503480;

/// ω[rad/ps] = `WAVENUMBER_TO_RAD_PER_PS` · ν̃[cm⁻¹].
pub const WAVENUMBER_TO_RAD_PER_PS: f64 =
    2.0 * std::f64::consts::PI * SPEED_OF_LIGHT_CM_PER_PS;

/// Thermal energy k_B·T in cm⁻¹.
pub fn thermal_energy(temperature: f64) -> f64 {
    BOLTZMANN_CM_PER_K * temperature
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversion_factor_value() {
        // 2π · 0.0299792458
        assert!((WAVENUMBER_TO_RAD_PER_PS - 0.18836515673088532).abs() < 1e-15);
    }

    #[test]
    fn room_temperature_energy() {
        // 293 K ≈ 203.6 cm⁻¹
        assert!((thermal_energy(293.0) - 203.6451964).abs() < 1e-6);
    }
}
