//! Sensitivity functions: the identity and the saturating family
//! `f_ε(s) = ∫₀^s ρ(εσ) dσ` built on a smooth cut-off ρ.

use std::sync::OnceLock;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sensitivity {
    Identity,
    Eps(f64),
}

fn g(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// C^∞ cut-off: 1 on (−∞, 1], 0 on [2, ∞), and ρ(1+t) + ρ(2−t) = 1.
pub fn rho(s: f64) -> f64 {
    if s <= 1.0 {
        1.0
    } else if s >= 2.0 {
        0.0
    } else {
        let a = g(2.0 - s);
        a / (a + g(s - 1.0))
    }
}

/// Gauss–Legendre nodes and weights on [−1, 1].
fn gauss_legendre() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        const N: usize = 20;
        let mut rule = Vec::with_capacity(N);
        for k in 0..N {
            let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (N as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for m in 2..=N {
                    let mf = m as f64;
                    let p2 = ((2.0 * mf - 1.0) * x * p1 - (mf - 1.0) * p0) / mf;
                    p0 = p1;
                    p1 = p2;
                }
                dp = N as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            rule.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
        }
        rule
    })
}

fn gl(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    h * gauss_legendre().iter().map(|&(x, w)| w * f(c + h * x)).sum::<f64>()
}

fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (l, r) = (gl(f, a, m), gl(f, m, b));
    if depth == 0 || (l + r - whole).abs() <= tol {
        l + r
    } else {
        adaptive(f, a, m, l, 0.5 * tol, depth - 1) + adaptive(f, m, b, r, 0.5 * tol, depth - 1)
    }
}

/// 1 − ρ, evaluated without cancellation near s = 1.
fn rho_defect(s: f64) -> f64 {
    if s <= 1.0 {
        0.0
    } else if s >= 2.0 {
        1.0
    } else {
        let b = g(s - 1.0);
        b / (g(2.0 - s) + b)
    }
}

/// ∫₁ᵗ (1 − ρ) for t ∈ [1, 2], absolute tolerance 1e−12. The integrand is
/// nonnegative and the rule has positive weights, so the result is too;
/// this is what keeps f_ε ≤ id exact in floating point.
fn rho_defect_integral(t: f64) -> f64 {
    if t <= 1.0 {
        return 0.0;
    }
    let t = t.min(2.0);
    adaptive(&rho_defect, 1.0, t, gl(&rho_defect, 1.0, t), 1e-12, 30)
}

impl Sensitivity {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Sensitivity::Eps(e) if !(e > 0.0 && e < 1.0) => {
                Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1), got {e}")))
            }
            _ => Ok(()),
        }
    }

    pub fn f(&self, s: f64) -> Result<f64> {
        check(s)?;
        Ok(self.value(s))
    }

    pub fn f_prime(&self, s: f64) -> Result<f64> {
        check(s)?;
        Ok(self.derivative(s))
    }

    /// Unchecked evaluation; negative arguments fall on the identity branch.
    pub fn value(&self, s: f64) -> f64 {
        match *self {
            Sensitivity::Identity => s,
            Sensitivity::Eps(e) => {
                if s * e <= 1.0 {
                    s
                } else if s * e >= 2.0 {
                    1.5 / e
                } else {
                    s - rho_defect_integral(e * s) / e
                }
            }
        }
    }

    pub fn derivative(&self, s: f64) -> f64 {
        match *self {
            Sensitivity::Identity => 1.0,
            Sensitivity::Eps(e) => rho(e * s),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Sensitivity::Identity => "identity".into(),
            Sensitivity::Eps(e) => format!("eps({e})"),
        }
    }
}

fn check(s: f64) -> Result<()> {
    if s < 0.0 || s.is_nan() {
        Err(Error::InvalidArgument(format!("sensitivity argument must be nonnegative, got {s}")))
    } else {
        Ok(())
    }
}
