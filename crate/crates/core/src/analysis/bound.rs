use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::par;
use crate::rng::Rng;
use crate::tensor::norm;

const CF_MAX_ITER: usize = 10_000;
const CF_EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let guard = |v: f64| if v.abs() < TINY { TINY } else { v };
    let mut c = 1.0;
    let mut d = 1.0 / guard(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / guard(1.0 + aa * d);
        c = guard(1.0 + aa / c);
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / guard(1.0 + aa * d);
        c = guard(1.0 + aa / c);
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

/// `ln(1 - e^y)` for `y <= 0`.
fn ln_one_minus_exp(y: f64) -> f64 {
    if y > -std::f64::consts::LN_2 {
        (-y.exp_m1()).ln()
    } else {
        (-y.exp()).ln_1p()
    }
}

/// `ln I_x(a, b)`, taking `x` and `1 - x` separately so callers can supply
/// an accurate complement.
fn ln_ibeta(a: f64, b: f64, x: f64, one_minus_x: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if one_minus_x <= 0.0 {
        return 0.0;
    }
    let ln_front =
        libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * x.ln() + b * one_minus_x.ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front + beta_cf(a, b, x).ln() - a.ln()
    } else {
        ln_one_minus_exp(ln_front + beta_cf(b, a, one_minus_x).ln() - b.ln())
    }
}

/// Log of the regularized incomplete beta function `I_x(a, b)`.
pub fn ln_regularized_beta(a: f64, b: f64, x: f64) -> f64 {
    ln_ibeta(a, b, x, 1.0 - x)
}

/// Log of the uniform measure of an angular cap of radius `alpha` on the
/// `k`-sphere `S^k` (embedded in `R^{k+1}`).
pub fn ln_cap_measure(k: usize, alpha: f64) -> f64 {
    let pi = std::f64::consts::PI;
    if alpha <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if alpha >= pi {
        return 0.0;
    }
    let (s, c) = alpha.sin_cos();
    let ln_half = ln_ibeta(k as f64 / 2.0, 0.5, s * s, c * c) - std::f64::consts::LN_2;
    if alpha <= pi / 2.0 {
        ln_half
    } else {
        ln_one_minus_exp(ln_half)
    }
}

/// Uniform measure of an angular cap of radius `alpha` on `S^k`.
pub fn cap_measure(k: usize, alpha: f64) -> f64 {
    ln_cap_measure(k, alpha).exp()
}

/// `½ sin^k(alpha/2)`, the Ball-style lower bound on [`cap_measure`].
pub fn ball_cap_lower_bound(k: usize, alpha: f64) -> f64 {
    0.5 * (alpha / 2.0).sin().powi(k as i32)
}

/// Monte-Carlo estimate of [`cap_measure`] and its standard error, from
/// `samples` uniform points on `S^k` drawn in independent chunks.
pub fn monte_carlo_cap_measure(k: usize, alpha: f64, samples: usize, seed: u64) -> (f64, f64) {
    const CHUNK: usize = 10_000;
    let root = Rng::new(seed);
    let cos_a = alpha.cos();
    let chunks = samples.div_ceil(CHUNK);
    let hits: usize = par::map_indexed(chunks, |c| {
        let mut rng = root.stream(c as u64);
        let n = CHUNK.min(samples - c * CHUNK);
        (0..n)
            .filter(|_| {
                let x = rng.gaussian_vec(k + 1, 1.0);
                x[0] >= cos_a * norm(&x)
            })
            .count()
    })
    .into_iter()
    .sum();
    let p = hits as f64 / samples as f64;
    (p, (p * (1.0 - p) / samples as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Number of neurons.
    pub m: usize,
    /// Fan-in of every neuron.
    pub d: usize,
    /// Training sample count.
    pub n: usize,
    pub delta: f64,
    /// Number of distinct solutions, at least 1.
    pub k: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    /// Generalisation error bound using the `sin(alpha/2)` cap bound.
    pub bound: f64,
    /// `ln((K / 2^m) sin^{Σ(d_i−2)}(alpha/2))`, the log lower bound on the
    /// prior mass of the version space.
    pub ln_prob_lower: f64,
    pub prob_lower: f64,
    /// The same bound with exact cap measures.
    pub exact_bound: f64,
    pub ln_prob_exact: f64,
    /// True when fan-ins differ, which goes beyond the equal fan-in case.
    pub extrapolated: bool,
    pub note: Option<String>,
}

fn validate(n: usize, delta: f64, k: f64, alpha: f64) -> Result<(), AnalysisError> {
    let err = |s: &str| Err(AnalysisError::BoundInputs(s.to_string()));
    if n < 2 {
        return err("n must be at least 2");
    }
    if !(delta > 0.0 && delta < 1.0) {
        return err("delta must lie in (0, 1)");
    }
    if !(k >= 1.0 && k.is_finite()) {
        return err("K must be a finite number at least 1");
    }
    if !(0.0..=std::f64::consts::PI).contains(&alpha) {
        return err("alpha must lie in [0, pi]");
    }
    Ok(())
}

/// Bound over groups of `(fan_in, count)` neurons.
fn bound_from_counts(
    counts: &BTreeMap<usize, usize>,
    n: usize,
    delta: f64,
    k: f64,
    alpha: f64,
) -> Result<BoundReport, AnalysisError> {
    validate(n, delta, k, alpha)?;
    let m: usize = counts.values().sum();
    if m == 0 {
        return Err(AnalysisError::BoundInputs("m must be at least 1".into()));
    }
    if let Some(&d) = counts.keys().next() {
        if d < 3 {
            return Err(AnalysisError::BoundInputs(format!(
                "fan-in {d} leaves no sphere to rotate on; need d >= 3"
            )));
        }
    }
    let extrapolated = counts.len() > 1;
    let confidence = (2.0 * n as f64 / delta).ln();
    let denom = (n - 1) as f64;
    if alpha == 0.0 {
        return Ok(BoundReport {
            bound: f64::INFINITY,
            ln_prob_lower: f64::NEG_INFINITY,
            prob_lower: 0.0,
            exact_bound: f64::INFINITY,
            ln_prob_exact: f64::NEG_INFINITY,
            extrapolated,
            note: Some(
                "alpha = 0: the version space has zero prior mass, so the bound is vacuous".into(),
            ),
        });
    }
    let sphere_dims: f64 = counts.iter().map(|(&d, &c)| (c * (d - 2)) as f64).sum();
    let ln_inv_sin = -(alpha / 2.0).sin().ln();
    let numerator =
        m as f64 * std::f64::consts::LN_2 + sphere_dims * ln_inv_sin + confidence - k.ln();
    let ln_prob_lower = k.ln() - m as f64 * std::f64::consts::LN_2 - sphere_dims * ln_inv_sin;
    let ln_prob_exact = k.ln()
        + counts
            .iter()
            .map(|(&d, &c)| c as f64 * ln_cap_measure(d - 2, alpha))
            .sum::<f64>();
    Ok(BoundReport {
        bound: numerator / denom,
        ln_prob_lower,
        prob_lower: ln_prob_lower.exp(),
        exact_bound: (confidence - ln_prob_exact) / denom,
        ln_prob_exact,
        extrapolated,
        note: extrapolated
            .then(|| "unequal fan-ins: m(d-2) replaced by the sum of (d_i - 2)".to_string()),
    })
}

/// `[m ln 2 + m(d−2) ln(1/sin(α/2)) + ln(2n/δ) − ln K] / (n−1)`, together
/// with the prior-mass lower bound and the exact-cap variant.
pub fn pac_bayes_bound(b: &BoundInputs) -> Result<BoundReport, AnalysisError> {
    let counts = BTreeMap::from([(b.d, b.m)]);
    bound_from_counts(&counts, b.n, b.delta, b.k, b.alpha)
}

/// [`pac_bayes_bound`] for neurons with differing fan-ins.
pub fn pac_bayes_bound_heterogeneous(
    fan_ins: &[usize],
    n: usize,
    delta: f64,
    k: f64,
    alpha: f64,
) -> Result<BoundReport, AnalysisError> {
    let mut counts = BTreeMap::new();
    for &d in fan_ins {
        *counts.entry(d).or_insert(0) += 1;
    }
    bound_from_counts(&counts, n, delta, k, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn cap_closed_forms() {
        assert!((cap_measure(1, FRAC_PI_2) - 0.5).abs() < 1e-15);
        assert!((cap_measure(1, 1.0) - 1.0 / PI).abs() < 1e-14);
        // S^2: (1 - cos a) / 2
        assert!((cap_measure(2, 2.0) - (1.0 - 2f64.cos()) / 2.0).abs() < 1e-14);
        for k in 1..=64 {
            assert_eq!(cap_measure(k, PI), 1.0);
            assert!((cap_measure(k, FRAC_PI_2) - 0.5).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn cap_matches_high_precision_values() {
        // reference values from an arbitrary-precision incomplete beta
        let cases = [
            (8, PI / 3.0, -2.6513394786069115),
            (64, 0.3, -80.97519535210934),
            (5, 2.5, -0.015282019037814237),
            (98, 0.1, -229.02579246458419),
        ];
        for (k, a, expected) in cases {
            let got = ln_cap_measure(k, a);
            assert!(
                rel(got, expected) < 1e-12,
                "k={k} a={a}: {got} vs {expected}"
            );
        }
        assert!(rel(cap_measure(8, PI / 3.0), 0.070556640625) < 1e-13);
    }

    #[test]
    fn monte_carlo_agrees() {
        for (k, a) in [(1, 1.0), (8, PI / 3.0), (3, 2.5)] {
            let (p, se) = monte_carlo_cap_measure(k, a, 100_000, 4);
            assert!(
                (p - cap_measure(k, a)).abs() <= 4.0 * se,
                "k={k} a={a}: {p} +- {se}"
            );
        }
    }

    #[test]
    fn cap_dominates_ball_and_is_monotone() {
        for k in 1..=64 {
            let mut prev = 0.0;
            for i in 1..=60 {
                let a = PI * i as f64 / 60.0;
                let c = cap_measure(k, a);
                assert!(c >= ball_cap_lower_bound(k, a), "k={k} a={a}");
                assert!(c >= prev, "k={k} a={a}");
                prev = c;
            }
        }
    }

    fn reference() -> BoundInputs {
        BoundInputs {
            m: 10,
            d: 100,
            n: 10_000,
            delta: 0.01,
            k: 1.0,
            alpha: FRAC_PI_2,
        }
    }

    #[test]
    fn reference_bound() {
        let r = pac_bayes_bound(&reference()).unwrap();
        assert!(rel(r.bound, 0.03611183598544823) < 1e-12, "{}", r.bound);
        assert!(
            rel(r.exact_bound, 0.002144227377150082) < 1e-12,
            "{}",
            r.exact_bound
        );
        assert!(!r.extrapolated && r.note.is_none());
        let direct = (2f64.powi(-10) * (PI / 4.0).sin().powi(980)).ln();
        assert!(rel(r.ln_prob_lower, direct) < 1e-12);
    }

    #[test]
    fn ln_k_shift() {
        let b = reference();
        let shifted = BoundInputs {
            k: std::f64::consts::E,
            ..b
        };
        let d = pac_bayes_bound(&b).unwrap().bound - pac_bayes_bound(&shifted).unwrap().bound;
        assert!((d - 1.0 / 9999.0).abs() < 1e-17);
    }

    #[test]
    fn exact_not_looser() {
        for m in [1, 10, 1000] {
            for d in [3, 10, 100, 784] {
                for i in 1..=12 {
                    let b = BoundInputs {
                        m,
                        d,
                        alpha: PI * i as f64 / 12.0,
                        ..reference()
                    };
                    let r = pac_bayes_bound(&b).unwrap();
                    assert!(r.exact_bound <= r.bound + 1e-15, "{b:?}");
                }
            }
        }
    }

    #[test]
    fn zero_alpha_is_infinite() {
        let r = pac_bayes_bound(&BoundInputs {
            alpha: 0.0,
            ..reference()
        })
        .unwrap();
        assert_eq!(r.bound, f64::INFINITY);
        assert!(r.note.is_some());
    }

    #[test]
    fn heterogeneous_reduces_to_homogeneous() {
        let same = pac_bayes_bound_heterogeneous(&[100; 10], 10_000, 0.01, 1.0, FRAC_PI_2).unwrap();
        assert_eq!(same.bound, pac_bayes_bound(&reference()).unwrap().bound);
        let mixed =
            pac_bayes_bound_heterogeneous(&[10, 100], 10_000, 0.01, 1.0, FRAC_PI_2).unwrap();
        assert!(mixed.extrapolated && mixed.note.is_some());
    }

    #[test]
    fn rejects_bad_inputs() {
        for b in [
            BoundInputs {
                n: 1,
                ..reference()
            },
            BoundInputs {
                delta: 1.0,
                ..reference()
            },
            BoundInputs {
                k: 0.5,
                ..reference()
            },
            BoundInputs {
                alpha: 4.0,
                ..reference()
            },
            BoundInputs {
                d: 2,
                ..reference()
            },
            BoundInputs {
                m: 0,
                ..reference()
            },
        ] {
            assert!(pac_bayes_bound(&b).is_err(), "{b:?}");
        }
    }
}
