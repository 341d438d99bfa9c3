//! Analytic outlet flux of an inert impulse in a uniform bed: the transport
//! limit of the reactor equations, used as an oracle for the solver.

use std::f64::consts::PI;

use super::{FluxSeries, ReactorGeometry};
use crate::error::{Result, TapError};

const MAX_TERMS: usize = 200;

/// Dimensionless flux `F(tau) = f * eps * L^2 / (D * N)` with `tau = t D / (eps L^2)`.
///
/// Uses the eigenfunction series for moderate and large `tau` and the
/// equivalent image (short-time) series for small `tau`.
pub fn dimensionless_flux(tau: f64) -> Result<f64> {
    if tau <= 0.0 {
        return Ok(0.0);
    }
    if tau < 0.05 {
        // Image solution; terms decay like exp(-(2m+1)^2 / (4 tau)).
        let pref = 1.0 / (PI.sqrt() * tau.powf(1.5));
        let mut sum = 0.0;
        for m in 0..MAX_TERMS {
            let k = (2 * m + 1) as f64;
            let term = k * (-k * k / (4.0 * tau)).exp();
            sum += if m % 2 == 0 { term } else { -term };
            if term < 1e-300 || term.abs() < 1e-16 * sum.abs() {
                return Ok(pref * sum);
            }
        }
        return Err(TapError::numerical(format!("image series did not converge at tau = {tau}")));
    }
    let mut sum = 0.0;
    for n in 0..MAX_TERMS {
        let k = (n as f64 + 0.5) * PI;
        let term = 2.0 * k * (-k * k * tau).exp();
        sum += if n % 2 == 0 { term } else { -term };
        if term.abs() < 1e-16 * sum.abs().max(1e-300) {
            return Ok(sum);
        }
    }
    Err(TapError::numerical(format!(
        "eigenfunction series did not converge within {MAX_TERMS} terms at tau = {tau}"
    )))
}

/// Outlet flux (nmol/s) of a `pulse` nmol impulse injected at t = 0 into a
/// uniform bed of effective diffusivity `diffusivity` (m2/s), solving
/// `eps dc/dt = D d2c/dx2` with a closed inlet and a vacuum outlet.
pub fn inert_reference_curve(
    geometry: &ReactorGeometry,
    diffusivity: f64,
    pulse: f64,
    time_grid: &[f64],
) -> Result<FluxSeries> {
    geometry.validate()?;
    if !geometry.is_uniform() {
        return Err(TapError::invalid("analytic reference requires a uniform void fraction"));
    }
    if !(diffusivity > 0.0) {
        return Err(TapError::invalid("diffusivity must be positive"));
    }
    let eps = geometry.zone_void_fractions[0];
    let len = geometry.length();
    let t_scale = eps * len * len / diffusivity;
    let flux = time_grid
        .iter()
        .map(|&t| dimensionless_flux(t / t_scale).map(|f| f * pulse / t_scale))
        .collect::<Result<Vec<_>>>()?;
    Ok(FluxSeries { time: time_grid.to_vec(), gases: vec!["inert".into()], flux: vec![flux] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_forms_agree_at_switch() {
        // Evaluate both representations near the switch point directly.
        let tau: f64 = 0.05;
        let mut eig = 0.0;
        for n in 0..MAX_TERMS {
            let k = (n as f64 + 0.5) * PI;
            let t = 2.0 * k * (-k * k * tau).exp();
            eig += if n % 2 == 0 { t } else { -t };
        }
        let mut img = 0.0;
        for m in 0..20 {
            let k = (2 * m + 1) as f64;
            let t = k * (-k * k / (4.0 * tau)).exp();
            img += if m % 2 == 0 { t } else { -t };
        }
        img /= PI.sqrt() * tau.powf(1.5);
        assert!((eig - img).abs() < 1e-12 * eig.abs().max(1.0), "{eig} vs {img}");
    }

    #[test]
    fn peak_at_one_sixth() {
        // Golden-section search on the truncated series.
        let (mut lo, mut hi) = (0.05f64, 0.4f64);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let a = hi - g * (hi - lo);
            let b = lo + g * (hi - lo);
            if dimensionless_flux(a).unwrap() > dimensionless_flux(b).unwrap() {
                hi = b;
            } else {
                lo = a;
            }
        }
        assert!((0.5 * (lo + hi) - 1.0 / 6.0).abs() < 1e-3);
    }

    #[test]
    fn integral_equals_pulse() {
        let g = ReactorGeometry::default();
        let d = 0.4 * 0.002;
        let dt = 1e-4;
        let grid: Vec<f64> = (1..=60_000).map(|i| i as f64 * dt).collect();
        let s = inert_reference_curve(&g, d, 2.0, &grid).unwrap();
        let total: f64 = s.flux[0].iter().sum::<f64>() * dt;
        assert!((total - 2.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn doubling_diffusivity_halves_peak_time() {
        let g = ReactorGeometry::default();
        let grid: Vec<f64> = (1..=40_000).map(|i| i as f64 * 1e-5).collect();
        let p1 = inert_reference_curve(&g, 5e-4, 1.0, &grid).unwrap().peak(0).0;
        let p2 = inert_reference_curve(&g, 1e-3, 1.0, &grid).unwrap().peak(0).0;
        assert!((p1 / p2 - 2.0).abs() < 1e-3, "{p1} {p2}");
    }

    #[test]
    fn rejects_non_uniform_bed() {
        let mut g = ReactorGeometry::default();
        g.zone_void_fractions[1] = 0.5;
        assert!(inert_reference_curve(&g, 1e-3, 1.0, &[0.1]).is_err());
    }
}
