//! Chi-square distribution function via the regularized incomplete gamma.
//!
//! `chi2_cdf(n, x) = P(n/2, x/2)` where P is the regularized lower
//! incomplete gamma function, evaluated by series expansion for small
//! arguments and by a Lentz continued fraction otherwise. Absolute error
//! is well below 1e-12 over the degree-of-freedom range this crate uses.

use crate::error::{Error, Result};

/// Maximum iterations for the series / continued fraction.
const MAX_ITER: usize = 500;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const LN_SQRT_PI: f64 = 0.572_364_942_924_700_1;

/// Lanczos coefficients, g = 7, n = 9.
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

/// Natural log of the gamma function for x > 0.
///
/// Half-integer arguments (all chi-square shape parameters) are computed
/// by exact recurrence from ln Γ(1/2) and ln Γ(1); everything else falls
/// back to the Lanczos approximation.
pub fn ln_gamma(x: f64) -> f64 {
    let twice = 2.0 * x;
    if x > 0.0 && twice <= 512.0 && twice == twice.floor() {
        return ln_gamma_half_integer(twice as u32);
    }
    ln_gamma_lanczos(x)
}

fn ln_gamma_half_integer(twice: u32) -> f64 {
    // twice = 2x; start from Γ(1/2) = sqrt(pi) or Γ(1) = 1.
    let (mut acc, mut a) = if twice % 2 == 1 {
        (LN_SQRT_PI, 0.5)
    } else {
        (0.0, 1.0)
    };
    while 2.0 * a + 1.0 <= twice as f64 {
        acc += a.ln();
        a += 1.0;
    }
    acc
}

fn ln_gamma_lanczos(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1-x) = pi / sin(pi x)
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma_lanczos(1.0 - x);
    }
    let z = x - 1.0;
    let mut a = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (z + i as f64);
    }
    let t = z + 7.5;
    LN_SQRT_2PI + (z + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma P(a, x), a > 0, x >= 0.
pub fn reg_lower_gamma(a: f64, x: f64) -> Result<f64> {
    if a <= 0.0 {
        return Err(Error::validation("reg_lower_gamma: a must be positive"));
    }
    if x < 0.0 {
        return Err(Error::validation("reg_lower_gamma: x must be nonnegative"));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    let log_prefactor = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        Ok(series_p(a, x, log_prefactor)?)
    } else {
        Ok(1.0 - cf_q(a, x, log_prefactor)?)
    }
}

/// Series expansion: P(a, x) = prefactor * sum_{j>=0} x^j / (a (a+1) ... (a+j)).
fn series_p(a: f64, x: f64, log_prefactor: f64) -> Result<f64> {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * f64::EPSILON {
            return Ok((log_prefactor + sum.ln()).exp());
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITER,
        residual: term,
    })
}

/// Modified Lentz continued fraction for Q(a, x) = 1 - P(a, x).
fn cf_q(a: f64, x: f64, log_prefactor: f64) -> Result<f64> {
    const TINY: f64 = 1e-300;
    let b0 = x + 1.0 - a;
    let mut f = if b0.abs() < TINY { TINY } else { b0 };
    let mut c = f;
    let mut d = 0.0f64;
    for n in 1..=MAX_ITER {
        let nf = n as f64;
        let an = nf * (a - nf);
        let bn = x + 2.0 * nf + 1.0 - a;
        d = bn + an * d;
        if d.abs() < TINY {
            d = TINY;
        }
        d = 1.0 / d;
        c = bn + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < f64::EPSILON {
            return Ok((log_prefactor - f.ln()).exp());
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITER,
        residual: f,
    })
}

/// Chi-square CDF with `dof` degrees of freedom: Pr(chi2_dof <= x).
pub fn chi2_cdf(dof: usize, x: f64) -> Result<f64> {
    if dof == 0 {
        return Err(Error::validation("chi2_cdf: dof must be positive"));
    }
    if x < 0.0 {
        return Err(Error::validation("chi2_cdf: x must be nonnegative"));
    }
    reg_lower_gamma(dof as f64 / 2.0, x / 2.0)
}

/// Chi-square density with `dof` degrees of freedom.
pub fn chi2_pdf(dof: usize, x: f64) -> Result<f64> {
    if dof == 0 {
        return Err(Error::validation("chi2_pdf: dof must be positive"));
    }
    if x < 0.0 {
        return Ok(0.0);
    }
    let half = dof as f64 / 2.0;
    if x == 0.0 {
        return Ok(match dof {
            1 => f64::INFINITY,
            2 => 0.5,
            _ => 0.0,
        });
    }
    Ok(((half - 1.0) * x.ln() - x / 2.0 - half * std::f64::consts::LN_2 - ln_gamma(half)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: integrate the density directly with adaptive Simpson.
    fn cdf_by_quadrature(dof: usize, x: f64) -> f64 {
        #[allow(clippy::too_many_arguments)]
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, eps: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            let delta = left + right - whole;
            if depth == 0 || delta.abs() <= 15.0 * eps {
                return left + right + delta / 15.0;
            }
            simpson(f, a, m, fa, flm, fm, eps / 2.0, depth - 1)
                + simpson(f, m, b, fm, frm, fb, eps / 2.0, depth - 1)
        }
        let f = |t: f64| chi2_pdf(dof, t).unwrap();
        let m = 0.5 * x;
        simpson(&f, 0.0, x, f(0.0), f(m), f(x), 1e-13, 48)
    }

    #[test]
    fn two_dof_closed_form() {
        // chi2_cdf(2, x) = 1 - exp(-x/2)
        for &x in &[0.01, 0.5, 1.0, 2.0 * std::f64::consts::LN_2, 3.0, 5.0, 10.0, 40.0] {
            let got = chi2_cdf(2, x).unwrap();
            let want = 1.0 - (-x / 2.0).exp();
            assert!(
                (got - want).abs() < 1e-12,
                "x={x}: got {got}, want {want}"
            );
        }
        assert!((chi2_cdf(2, 2.0 * std::f64::consts::LN_2).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn boundaries() {
        for dof in [1, 2, 3, 8, 20] {
            assert_eq!(chi2_cdf(dof, 0.0).unwrap(), 0.0);
            assert!((chi2_cdf(dof, 1e6).unwrap() - 1.0).abs() < 1e-15);
        }
        assert!(chi2_cdf(0, 1.0).is_err());
        assert!(chi2_cdf(2, -0.5).is_err());
    }

    #[test]
    fn matches_quadrature_oracle() {
        // Direct numerical integration of the density as a second route.
        for (dof, x) in [(4usize, 3.0), (2, 1.7), (6, 5.5), (12, 0.1), (3, 2.2), (14, 9.0)] {
            let got = chi2_cdf(dof, x).unwrap();
            let want = cdf_by_quadrature(dof, x);
            assert!(
                (got - want).abs() < 1e-10,
                "dof={dof} x={x}: got {got}, oracle {want}"
            );
        }
    }

    #[test]
    fn nondecreasing_in_x() {
        for dof in [1usize, 2, 5, 12] {
            let mut prev = 0.0;
            for i in 0..300 {
                let x = i as f64 * 0.1;
                let v = chi2_cdf(dof, x).unwrap();
                assert!(v >= prev - 1e-15, "dof={dof} x={x}");
                assert!((0.0..=1.0).contains(&v));
                prev = v;
            }
        }
    }

    #[test]
    fn decreasing_in_dof() {
        // More degrees of freedom push mass to the right, so the CDF at a
        // fixed point shrinks. Conditional silence probabilities rely on
        // this to stay inside [0, 1].
        for i in 1..=60 {
            let x = 0.25 * i as f64;
            let mut prev = f64::INFINITY;
            for dof in 1..=24usize {
                let v = chi2_cdf(dof, x).unwrap();
                assert!(v < prev, "dof={dof} x={x}: {v} !< {prev}");
                prev = v;
            }
        }
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-15);
        assert!((ln_gamma(2.0)).abs() < 1e-15);
        assert!((ln_gamma(5.0) - 24.0f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        // Γ(5/2) = 3/4 sqrt(pi)
        let want = (0.75 * std::f64::consts::PI.sqrt()).ln();
        assert!((ln_gamma(2.5) - want).abs() < 1e-14);
    }

    #[test]
    fn pdf_integrates_small_interval() {
        // pdf is the derivative of the cdf
        for dof in [2usize, 4, 7] {
            let x = 2.3;
            let h = 1e-6;
            let deriv = (chi2_cdf(dof, x + h).unwrap() - chi2_cdf(dof, x - h).unwrap()) / (2.0 * h);
            assert!((deriv - chi2_pdf(dof, x).unwrap()).abs() < 1e-8);
        }
    }
}
