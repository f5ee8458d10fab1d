//! The Stuart-Maxwell marginal homogeneity test and the chi-square tail
//! probability it needs.
//!
//! The chi-square upper tail is the regularized upper incomplete gamma
//! function Q(k/2, x/2), computed by the usual pairing of a lower-tail
//! power series (for x < a + 1) with a continued fraction evaluated by
//! modified Lentz (for x >= a + 1). Both converge to machine precision
//! for the degree-of-freedom range used here (k <= 64 is what the
//! report pipeline ever asks for).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

const MAX_ITER: usize = 500;
const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;

/// ln Gamma(x) for x > 0 (Lanczos, g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    // Lanczos is directly valid for x >= 0.5; smaller arguments would
    // need the reflection formula, which a/2 with a >= 1 never hits,
    // and half-integer dof keep a = k/2 >= 0.5 anyway.
    let z = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, c) in COEFFS.iter().enumerate() {
        acc += c / (z + i as f64 + 1.0);
    }
    let t = z + 7.5;
    0.5 * math::ln(2.0 * core::f64::consts::PI) + (z + 0.5) * math::ln(t) - t + math::ln(acc)
}

/// Regularized lower incomplete gamma P(a, x) by power series.
fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut denom = a;
    for _ in 0..MAX_ITER {
        denom += 1.0;
        term *= x / denom;
        sum += term;
        if math::abs(term) < math::abs(sum) * EPS {
            break;
        }
    }
    sum * math::exp(-x + a * math::ln(x) - ln_gamma(a))
}

/// Regularized upper incomplete gamma Q(a, x) by continued fraction
/// (modified Lentz).
fn gamma_q_cf(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if math::abs(d) < TINY {
            d = TINY;
        }
        c = b + an / c;
        if math::abs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if math::abs(delta - 1.0) < EPS {
            break;
        }
    }
    h * math::exp(-x + a * math::ln(x) - ln_gamma(a))
}

/// P(X > x) for X ~ chi-square with `dof` degrees of freedom.
pub fn chi_square_upper_tail(x: f64, dof: f64) -> Result<f64> {
    if !(dof > 0.0) || !x.is_finite() {
        return Err(Error::Config(alloc::format!(
            "chi-square tail needs dof > 0 and finite x, got x={x}, dof={dof}"
        )));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    let a = dof / 2.0;
    let half = x / 2.0;
    let q = if half < a + 1.0 {
        1.0 - gamma_p_series(a, half)
    } else {
        gamma_q_cf(a, half)
    };
    Ok(q.clamp(0.0, 1.0))
}

/// Result of a Stuart-Maxwell marginal homogeneity test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StuartMaxwell {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

impl StuartMaxwell {
    /// The paper's decision rule: reject homogeneity when p < alpha.
    pub fn rejects_at(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Stuart-Maxwell test of marginal homogeneity for two classifiers'
/// predictions on the same items.
///
/// Builds the K x K paired table, drops classes absent from both
/// classifiers, drops the last remaining class (the d vector sums to
/// zero), and evaluates `d^T V^{-1} d` with `V_ii = row_i + col_i -
/// 2 n_ii`, `V_ij = -(n_ij + n_ji)`. K = 2 reduces to McNemar's
/// `(b - c)^2 / (b + c)`.
pub fn stuart_maxwell(preds_a: &[usize], preds_b: &[usize], k: usize) -> Result<StuartMaxwell> {
    if preds_a.len() != preds_b.len() || preds_a.is_empty() {
        return Err(Error::Data(alloc::format!(
            "paired predictions need equal nonzero lengths, got {} and {}",
            preds_a.len(),
            preds_b.len()
        )));
    }
    if k < 2 {
        return Err(Error::Config("need at least 2 classes".into()));
    }
    let mut table = vec![0.0f64; k * k];
    for (&a, &b) in preds_a.iter().zip(preds_b) {
        if a >= k {
            return Err(Error::Label { label: a, classes: k });
        }
        if b >= k {
            return Err(Error::Label { label: b, classes: k });
        }
        table[a * k + b] += 1.0;
    }

    let row = |i: usize| -> f64 { table[i * k..(i + 1) * k].iter().sum() };
    let col = |j: usize| -> f64 { (0..k).map(|i| table[i * k + j]).sum() };

    // Classes never predicted by either side carry no information.
    let present: Vec<usize> = (0..k).filter(|&i| row(i) + col(i) > 0.0).collect();
    // One of the present classes is redundant (d sums to zero); drop the
    // last one by convention.
    let coords = &present[..present.len().saturating_sub(1)];
    let dof = coords.len();

    let d: Vec<f64> = coords.iter().map(|&i| row(i) - col(i)).collect();
    if dof == 0 || d.iter().all(|&v| v == 0.0) {
        return Ok(StuartMaxwell {
            statistic: 0.0,
            dof: dof.max(1),
            p_value: 1.0,
        });
    }

    let mut v = vec![0.0f64; dof * dof];
    for (a, &i) in coords.iter().enumerate() {
        for (b, &j) in coords.iter().enumerate() {
            v[a * dof + b] = if i == j {
                row(i) + col(i) - 2.0 * table[i * k + i]
            } else {
                -(table[i * k + j] + table[j * k + i])
            };
        }
    }

    let x = solve(v, d.clone(), dof).ok_or(Error::DegenerateTable)?;
    let statistic: f64 = d.iter().zip(&x).map(|(di, xi)| di * xi).sum();
    let p_value = chi_square_upper_tail(statistic, dof as f64)?;
    Ok(StuartMaxwell {
        statistic,
        dof,
        p_value,
    })
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let mut pivot = col;
        for r in col + 1..n {
            if math::abs(a[r * n + col]) > math::abs(a[pivot * n + col]) {
                pivot = r;
            }
        }
        if math::abs(a[pivot * n + col]) < 1e-12 {
            return None;
        }
        if pivot != col {
            for c in 0..n {
                a.swap(col * n + c, pivot * n + c);
            }
            b.swap(col, pivot);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r * n + c] -= f * a[col * n + c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for c in r + 1..n {
            acc -= a[r * n + c] * x[c];
        }
        x[r] = acc / a[r * n + r];
    }
    Some(x)
}
