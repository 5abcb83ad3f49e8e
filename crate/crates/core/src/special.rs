//! Special functions not in std: complex Γ and log-scale normal tails.

use num_complex::Complex64;
use std::f64::consts::PI;

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// log Γ(z) for complex z (principal branch up to multiples of 2πi), Lanczos g = 7.
pub fn ln_gamma(z: Complex64) -> Complex64 {
    if z.re < 0.5 {
        // reflection: Γ(z)Γ(1−z) = π / sin(πz)
        let s = (Complex64::new(PI, 0.0) * z).sin();
        return Complex64::new(PI.ln(), 0.0) - s.ln() - ln_gamma(Complex64::new(1.0, 0.0) - z);
    }
    let z = z - 1.0;
    let mut a = Complex64::new(LANCZOS[0], 0.0);
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + a.ln()
}

pub fn gamma(z: Complex64) -> Complex64 {
    ln_gamma(z).exp()
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Upper tail Φ̄(z) = P(N > z).
pub fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// Mills ratio Φ̄(z)/φ(z) by Lentz's continued fraction; valid for z ≥ 3.
fn mills_ratio(z: f64) -> f64 {
    // R = 1/(z + 1/(z + 2/(z + 3/(z + ...))))
    let tiny = 1e-300;
    let mut f = z;
    let mut c = z;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64;
        d = z + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = z + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// log Φ̄(z), accurate far into the upper tail.
pub fn ln_normal_sf(z: f64) -> f64 {
    if z < 5.0 {
        normal_sf(z).ln()
    } else {
        mills_ratio(z).ln() - 0.5 * z * z - 0.5 * (2.0 * PI).ln()
    }
}

/// Numerically stable log(e^a + e^b).
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// log(e^a − e^b) for a ≥ b.
pub fn log_sub_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    a + (-(b - a).exp()).ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn gamma_real_values() {
        assert!((gamma(c(1.0, 0.0)).re - 1.0).abs() < 1e-13);
        assert!((gamma(c(5.0, 0.0)).re - 24.0).abs() < 1e-11);
        assert!((gamma(c(0.5, 0.0)).re - PI.sqrt()).abs() < 1e-13);
        assert!((gamma(c(-0.5, 0.0)).re + 2.0 * PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn gamma_imaginary_axis_modulus() {
        // |Γ(1+iy)|² = πy / sinh(πy)
        for &y in &[0.3, 1.0, 4.0, 20.0] {
            let m = gamma(c(1.0, y)).norm_sqr();
            let want = PI * y / (PI * y).sinh();
            assert!((m / want - 1.0).abs() < 1e-12, "y={y}");
        }
        // |Γ(½+iy)|² = π / cosh(πy)
        for &y in &[0.5, 2.5] {
            let m = gamma(c(0.5, y)).norm_sqr();
            assert!((m / (PI / (PI * y).cosh()) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_recurrence_complex() {
        let z = c(0.7, -2.3);
        let lhs = gamma(z + 1.0);
        let rhs = z * gamma(z);
        assert!((lhs - rhs).norm() / rhs.norm() < 1e-13);
    }

    #[test]
    fn normal_tail_values() {
        let v = 2.0 * normal_sf(1.0);
        assert!((v - 0.317_310_507_862_914_15).abs() < 1e-13, "{v:e}");
        for &z in &[5.0, 6.0, 8.0] {
            let direct = normal_sf(z).ln();
            assert!((ln_normal_sf(z) - direct).abs() < 1e-10, "z={z}");
        }
        // far tail against the asymptotic series
        let z: f64 = 70.0;
        let asym = -0.5 * z * z - (z * (2.0 * PI).sqrt()).ln() + (1.0 - 1.0 / (z * z) + 3.0 / z.powi(4)).ln();
        assert!((ln_normal_sf(z) - asym).abs() < 1e-9);
    }

    #[test]
    fn log_exp_helpers() {
        assert!((log_add_exp(1.0, 2.0) - (1f64.exp() + 2f64.exp()).ln()).abs() < 1e-14);
        assert!((log_sub_exp(2.0, 1.0) - (2f64.exp() - 1f64.exp()).ln()).abs() < 1e-14);
    }
}
