//! Least-squares decay-law fits on energy curves.
//!
//! Every law is linear in a transformed time coordinate `x(t)`: `log E = c - rate * x(t)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::{lit, Real};
use crate::stokes1d::EnergyCurve;

pub const MIN_SAMPLES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("fit domain: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", bound = "")]
pub enum Law<T: Real> {
    Exponential,
    /// `E ~ (1+t)^{-rate}`
    Algebraic,
    /// `E ~ exp(-rate t^{1/(1+alpha)})`
    StretchedExp { alpha: T },
    /// `E ~ exp(-rate t/(log t)^alpha)`, needs `t > 1`
    LogCorrectedExp { alpha: T },
    /// best of the four above by quality (alpha defaults to 1)
    Auto,
}

impl<T: Real> Law<T> {
    pub fn tag(&self) -> &'static str {
        match self {
            Law::Exponential => "exponential",
            Law::Algebraic => "algebraic",
            Law::StretchedExp { .. } => "stretched_exp",
            Law::LogCorrectedExp { .. } => "log_corrected_exp",
            Law::Auto => "auto",
        }
    }

    fn x(&self, t: T) -> Option<T> {
        match *self {
            Law::Exponential => Some(t),
            Law::Algebraic => Some((T::one() + t).ln()),
            Law::StretchedExp { alpha } => Some(t.powf(T::one() / (T::one() + alpha))),
            Law::LogCorrectedExp { alpha } => {
                if t > T::one() {
                    Some(t / t.ln().powf(alpha))
                } else {
                    None
                }
            }
            Law::Auto => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FitRecord<T: Real> {
    pub law: Law<T>,
    /// decay rate, or algebraic exponent
    pub rate: T,
    pub intercept: T,
    /// coefficient of determination
    pub quality: T,
    pub samples: usize,
    pub window: (T, T),
}

/// Ordinary least squares `y = c + m x`; returns (m, c, R^2).
pub fn linear_fit<T: Real>(x: &[T], y: &[T]) -> (T, T, T) {
    let n = lit::<T>(x.len() as f64);
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let (mut sxx, mut sxy, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    if sxx.is_zero() {
        return (T::zero(), my, T::zero());
    }
    let m = sxy / sxx;
    let c = my - m * mx;
    let ss_res: T = x.iter().zip(y).map(|(&a, &b)| (b - c - m * a).powi(2)).sum();
    // a flat, exactly fitted line counts as a perfect fit
    let tiny = lit::<T>(64.0) * T::epsilon();
    let flat = syy <= tiny * tiny * n * (my * my + T::one());
    let r2 = if flat { T::one() } else { T::one() - ss_res / syy };
    (m, c, r2)
}

fn window_samples<T: Real>(times: &[T], values: &[T], window: (T, T)) -> Result<(Vec<T>, Vec<T>), FitError> {
    let (t0, t1) = window;
    if !(t0 <= t1) {
        return Err(FitError::Domain(format!("empty window [{t0}, {t1}]")));
    }
    let mut ts = Vec::new();
    let mut ls = Vec::new();
    for (&t, &e) in times.iter().zip(values) {
        if t < t0 || t > t1 {
            continue;
        }
        if !(e > T::zero()) || !e.is_finite() {
            return Err(FitError::Domain(format!("nonpositive value {e} at t = {t}")));
        }
        ts.push(t);
        ls.push(e.ln());
    }
    if ts.len() < MIN_SAMPLES {
        return Err(FitError::Domain(format!("{} samples in window, need {MIN_SAMPLES}", ts.len())));
    }
    Ok((ts, ls))
}

/// Slope of `log E` against `t` and its R^2.
pub fn fit_decay_rate<T: Real>(curve: &EnergyCurve<T>, window: (T, T)) -> Result<(T, T), FitError> {
    fit_rate_raw(&curve.times, &curve.values, window)
}

pub fn fit_rate_raw<T: Real>(times: &[T], values: &[T], window: (T, T)) -> Result<(T, T), FitError> {
    let (ts, ls) = window_samples(times, values, window)?;
    let (m, _, r2) = linear_fit(&ts, &ls);
    Ok((-m, r2))
}

pub fn fit_decay_law<T: Real>(curve: &EnergyCurve<T>, law: Law<T>, window: (T, T)) -> Result<FitRecord<T>, FitError> {
    fit_law_raw(&curve.times, &curve.values, law, window)
}

pub fn fit_law_raw<T: Real>(times: &[T], values: &[T], law: Law<T>, window: (T, T)) -> Result<FitRecord<T>, FitError> {
    if let Law::Auto = law {
        let one = T::one();
        let mut best: Option<FitRecord<T>> = None;
        for l in [
            Law::Exponential,
            Law::Algebraic,
            Law::StretchedExp { alpha: one },
            Law::LogCorrectedExp { alpha: one },
        ] {
            if let Ok(f) = fit_law_raw(times, values, l, window) {
                if best.as_ref().is_none_or(|b| f.quality > b.quality) {
                    best = Some(f);
                }
            }
        }
        return best.ok_or_else(|| FitError::Domain("no law could be fitted".into()));
    }
    let (ts, ls) = window_samples(times, values, window)?;
    let mut xs = Vec::with_capacity(ts.len());
    let mut ys = Vec::with_capacity(ts.len());
    for (&t, &l) in ts.iter().zip(&ls) {
        if let Some(x) = law.x(t) {
            xs.push(x);
            ys.push(l);
        }
    }
    if xs.len() < MIN_SAMPLES {
        return Err(FitError::Domain(format!("{} usable samples for {}", xs.len(), law.tag())));
    }
    let (m, c, r2) = linear_fit(&xs, &ys);
    Ok(FitRecord { law, rate: -m, intercept: c, quality: r2, samples: xs.len(), window })
}

/// Stretched exponential `exp(-C t^gamma)` with free `gamma` in `[lo, hi]`, chosen by
/// golden-section search on R^2. Returns (gamma, C, R^2).
pub fn fit_stretched_free<T: Real>(
    times: &[T],
    values: &[T],
    window: (T, T),
    (lo, hi): (T, T),
) -> Result<(T, T, T), FitError> {
    let (ts, ls) = window_samples(times, values, window)?;
    let score = |g: T| {
        let xs: Vec<T> = ts.iter().map(|&t| t.powf(g)).collect();
        let (m, _, r2) = linear_fit(&xs, &ls);
        (r2, -m)
    };
    let phi = lit::<T>(0.618_033_988_749_894_8);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (score(c).0, score(d).0);
    for _ in 0..80 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = score(c).0;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = score(d).0;
        }
        if (b - a).abs() < lit(1e-10) {
            break;
        }
    }
    let g = (a + b) / lit(2.0);
    let (r2, rate) = score(g);
    Ok((g, rate, r2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn samples(f: impl Fn(f64) -> f64, t0: f64, t1: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
        let ts: Vec<f64> = (0..n).map(|i| t0 + (t1 - t0) * i as f64 / (n - 1) as f64).collect();
        let es = ts.iter().map(|&t| f(t)).collect();
        (ts, es)
    }

    #[test]
    fn exact_exponential() {
        let (t, e) = samples(|t| (-3.0 * t).exp(), 0.0, 5.0, 50);
        let (rate, q) = fit_rate_raw(&t, &e, (0.0, 5.0)).unwrap();
        assert!((rate - 3.0).abs() < 1e-12 && (q - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_curve() {
        let (t, e) = samples(|_| 2.5, 0.0, 5.0, 20);
        let (rate, q) = fit_rate_raw(&t, &e, (0.0, 5.0)).unwrap();
        assert!(rate.abs() < 1e-14);
        assert_eq!(q, 1.0);
    }

    #[test]
    fn domain_errors() {
        let (t, mut e) = samples(|t| (-t).exp(), 0.0, 1.0, 20);
        assert!(fit_rate_raw(&t, &e, (0.0, 0.3)).is_err());
        e[3] = 0.0;
        assert!(matches!(fit_rate_raw(&t, &e, (0.0, 1.0)), Err(FitError::Domain(_))));
    }

    #[test]
    fn stretched_law() {
        let (t, e) = samples(|t| (-2.0 * t.sqrt()).exp(), 0.0, 50.0, 200);
        let f = fit_law_raw(&t, &e, Law::StretchedExp { alpha: 1.0 }, (0.0, 50.0)).unwrap();
        assert!((f.rate - 2.0).abs() < 1e-10 && (f.quality - 1.0).abs() < 1e-12);
        let (g, c, q) = fit_stretched_free(&t, &e, (1.0, 50.0), (0.05, 1.5)).unwrap();
        assert!((g - 0.5).abs() < 1e-4 && (c - 2.0).abs() < 1e-3 && q > 0.999999, "{g} {c}");
    }

    #[test]
    fn model_selection() {
        let (t, e) = samples(|t| (-0.7 * t).exp(), 0.0, 20.0, 100);
        let ex = fit_law_raw(&t, &e, Law::Exponential, (0.0, 20.0)).unwrap();
        let al = fit_law_raw(&t, &e, Law::Algebraic, (0.0, 20.0)).unwrap();
        assert!(al.quality < ex.quality);
        assert_eq!(fit_law_raw(&t, &e, Law::Auto, (0.0, 20.0)).unwrap().law, Law::Exponential);
        let (t, e) = samples(|t| (1.0 + t).powf(-4.0), 0.0, 1000.0, 300);
        let f = fit_law_raw(&t, &e, Law::Auto, (0.0, 1000.0)).unwrap();
        assert_eq!(f.law, Law::Algebraic);
        assert!((f.rate - 4.0).abs() < 1e-10);
    }

    #[test]
    fn log_corrected_skips_small_times() {
        let (t, e) = samples(|t: f64| if t > 1.0 { (-t / t.ln()).exp() } else { 1.0 }, 0.0, 100.0, 200);
        let f = fit_law_raw(&t, &e, Law::LogCorrectedExp { alpha: 1.0 }, (0.0, 100.0)).unwrap();
        assert!((f.rate - 1.0).abs() < 1e-10);
        assert!(f.samples < 200);
    }

    proptest! {
        #[test]
        fn recovers_any_rate(rate in 0.01f64..50.0, c in -5.0f64..5.0) {
            let (t, e) = samples(|t| (c - rate * t).exp(), 0.0, 1.0, 30);
            let (r, q) = fit_rate_raw(&t, &e, (0.0, 1.0)).unwrap();
            prop_assert!((r - rate).abs() < 1e-9 * rate.max(1.0));
            prop_assert!(q > 1.0 - 1e-12);
        }

        #[test]
        fn fit_is_scale_invariant(rate in 0.1f64..5.0, s in 1e-6f64..1e6) {
            let (t, e) = samples(|t| (1.0 + t).powf(-rate) * (1.0 + 0.1 * (t).sin()), 0.0, 100.0, 40);
            let es: Vec<f64> = e.iter().map(|v| v * s).collect();
            let a = fit_law_raw(&t, &e, Law::Algebraic, (0.0, 100.0)).unwrap();
            let b = fit_law_raw(&t, &es, Law::Algebraic, (0.0, 100.0)).unwrap();
            prop_assert!((a.rate - b.rate).abs() < 1e-8);
        }
    }
}
