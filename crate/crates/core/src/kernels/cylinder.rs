//! Analytic TM scattering from a PEC circular cylinder: the
//! cylindrical-harmonic series used as the end-to-end physics oracle.

use alloc::vec::Vec;
use num_complex::Complex64;

use crate::error::Error;
use crate::kernels::bessel::{jn_array, yn_array};
use crate::Result;

/// Far-field series amplitude F(φ) = Σ_n [J_n(ka)/H_n(ka)] e^{in(φ-φ_inc)}
/// for a unit plane wave arriving with propagation angle `inc_angle`.
/// Echo width follows as σ(φ) = (4/k)·|F(φ)|².
pub fn cylinder_series_far_field(
    radius: f64,
    k: f64,
    inc_angle: f64,
    angles: &[f64],
    truncation: usize,
) -> Result<Vec<Complex64>> {
    if !(radius > 0.0 && k > 0.0) {
        return Err(Error::InvalidGeometry(alloc::string::String::from(
            "cylinder series needs positive radius and wavenumber",
        )));
    }
    let ka = k * radius;
    let needed = libm::ceil(ka) as usize + 15;
    if truncation < needed {
        return Err(Error::SeriesNotConverged { truncation });
    }
    let jn = jn_array(truncation, ka);
    let yn = yn_array(truncation, ka);
    let ratios: Vec<Complex64> = (0..=truncation)
        .map(|n| {
            let h = Complex64::new(jn[n], yn[n]);
            Complex64::new(jn[n], 0.0) / h
        })
        .collect();
    // converged when the last ratio is negligible against the largest
    let max_mag = ratios.iter().map(|r| r.norm()).fold(0.0f64, f64::max);
    let tail = ratios[truncation].norm().max(ratios[truncation - 1].norm());
    if tail > 1e-12 * max_mag {
        return Err(Error::SeriesNotConverged { truncation });
    }
    let mut out = Vec::with_capacity(angles.len());
    for &phi in angles {
        let d = phi - inc_angle;
        let mut f = ratios[0];
        for n in 1..=truncation {
            // J_{-n}/H_{-n} = J_n/H_n, so negative orders fold into a cosine
            f += ratios[n] * Complex64::new(2.0 * libm::cos(n as f64 * d), 0.0);
        }
        out.push(f);
    }
    Ok(out)
}

/// Echo width σ(φ) in meters from the series amplitude.
pub fn echo_width_series(
    radius: f64,
    k: f64,
    inc_angle: f64,
    angles: &[f64],
    truncation: usize,
) -> Result<Vec<f64>> {
    let f = cylinder_series_far_field(radius, k, inc_angle, angles, truncation)?;
    Ok(f.iter().map(|v| 4.0 / k * v.norm_sqr()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn symmetric_in_observation_angle() {
        let k = 6.0;
        let angles = vec![0.4, -0.4, 1.3, -1.3];
        let w = echo_width_series(1.0, k, 0.0, &angles, 40).unwrap();
        assert!((w[0] - w[1]).abs() < 1e-12 * w[0]);
        assert!((w[2] - w[3]).abs() < 1e-12 * w[2]);
    }

    #[test]
    fn truncation_doubling_stable() {
        let k = 31.4;
        let angles: Vec<f64> = (0..36).map(|i| i as f64 * 0.1745).collect();
        let base = echo_width_series(1.0, k, 0.0, &angles, 55).unwrap();
        let fine = echo_width_series(1.0, k, 0.0, &angles, 110).unwrap();
        for (a, b) in base.iter().zip(&fine) {
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-12), "{a} vs {b}");
        }
    }

    #[test]
    fn insufficient_truncation_rejected() {
        assert!(matches!(
            echo_width_series(1.0, 31.4, 0.0, &[0.0], 20),
            Err(Error::SeriesNotConverged { .. })
        ));
    }

    #[test]
    fn low_frequency_limit_reasonable() {
        // ka << 1: TM echo width is dominated by the n = 0 term,
        // sigma ≈ (4/k)·|J0/H0|² with a logarithmic k dependence.
        let k = 0.01;
        let w = echo_width_series(1.0, k, 0.0, &[0.0], 20).unwrap()[0];
        let j0 = crate::kernels::bessel::j0(k);
        let y0 = crate::kernels::bessel::y0(k);
        let expect = 4.0 / k * (j0 * j0 / (j0 * j0 + y0 * y0));
        assert!((w - expect).abs() < 0.05 * expect);
    }
}
