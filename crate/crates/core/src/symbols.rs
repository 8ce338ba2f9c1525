//! Surface-operator symbols mu(xi) and the slab parameters built on them.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::{lit, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymbolError {
    #[error("tabulated symbol has no entry near the query point (outside table bounds)")]
    InterpolationUnavailable,
    #[error("tabulated symbol has an empty table")]
    EmptyTable,
    #[error("frequency is not finite")]
    NonFinite,
    #[error("invalid symbol parameter: {0}")]
    Invalid(String),
    #[error("could not read symbol table: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Fractional,
    LogCorrected,
    LoglogCorrected,
    Tabulated,
}

/// One row of a tabulated symbol: a frequency (length 1 means radial) and the value there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "")]
pub struct TableEntry<T: Real> {
    pub xi: Vec<T>,
    pub mu: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "")]
pub struct Symbol<T: Real> {
    pub family: Family,
    #[serde(default = "one")]
    pub g: T,
    #[serde(default = "one")]
    pub sigma: T,
    #[serde(default = "half")]
    pub r: T,
    #[serde(default = "one")]
    pub alpha: T,
    #[serde(default = "half")]
    pub theta: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<TableEntry<T>>>,
}

fn one<T: Real>() -> T {
    T::one()
}

fn half<T: Real>() -> T {
    lit(0.5)
}

impl<T: Real> Symbol<T> {
    pub fn fractional(g: T, sigma: T, r: T) -> Self {
        Self::base(Family::Fractional, g, sigma, r, T::one())
    }

    pub fn log_corrected(g: T, sigma: T, alpha: T) -> Self {
        Self::base(Family::LogCorrected, g, sigma, T::zero(), alpha)
    }

    pub fn loglog_corrected(g: T, sigma: T, alpha: T) -> Self {
        Self::base(Family::LoglogCorrected, g, sigma, T::zero(), alpha)
    }

    pub fn tabulated(table: Vec<TableEntry<T>>, theta: T) -> Self {
        let mut s = Self::base(Family::Tabulated, T::one(), T::zero(), T::zero(), T::one());
        s.table = Some(table);
        s.theta = theta;
        s
    }

    fn base(family: Family, g: T, sigma: T, r: T, alpha: T) -> Self {
        Symbol { family, g, sigma, r, alpha, theta: lit(0.5), table: None }
    }

    pub fn with_theta(mut self, theta: T) -> Self {
        self.theta = theta;
        self
    }

    /// Parameter sanity (domain of each field), independent of the bound check.
    pub fn check(&self) -> Result<(), SymbolError> {
        let bad = |m: &str| Err(SymbolError::Invalid(m.to_string()));
        if !(self.theta > T::zero()) {
            return bad("theta must be positive");
        }
        match self.family {
            Family::Tabulated => match &self.table {
                None => Err(SymbolError::EmptyTable),
                Some(t) if t.is_empty() => Err(SymbolError::EmptyTable),
                Some(t) => {
                    let d = t[0].xi.len();
                    if d == 0 || t.iter().any(|e| e.xi.len() != d) {
                        return bad("table frequencies must share one nonzero length");
                    }
                    Ok(())
                }
            },
            fam => {
                if !(self.g > T::zero()) {
                    return bad("g must be positive");
                }
                if !(self.sigma >= T::zero()) {
                    return bad("sigma must be nonnegative");
                }
                if fam == Family::Fractional && !(self.r >= T::zero() && self.r <= T::one()) {
                    return bad("r must lie in [0,1]");
                }
                if fam != Family::Fractional && !(self.alpha > T::zero()) {
                    return bad("alpha must be positive");
                }
                Ok(())
            }
        }
    }

    /// Radius below which the corrected families fall back to g + 2 pi sigma |xi|.
    pub fn stitch_radius(&self) -> Option<T> {
        match self.family {
            Family::LogCorrected => Some(T::E()),
            Family::LoglogCorrected => Some(T::E().exp()),
            _ => None,
        }
    }

    /// mu at a frequency vector.
    pub fn eval(&self, xi: &[T]) -> Result<T, SymbolError> {
        if xi.iter().any(|x| !x.is_finite()) {
            return Err(SymbolError::NonFinite);
        }
        if self.family == Family::Tabulated {
            return self.lookup(xi);
        }
        let m = xi.iter().map(|&x| x * x).sum::<T>().sqrt();
        Ok(self.radial(m))
    }

    /// mu at a modulus |xi| (vector tables are queried along the first axis).
    pub fn eval_mod(&self, xi_mod: T) -> Result<T, SymbolError> {
        if !xi_mod.is_finite() {
            return Err(SymbolError::NonFinite);
        }
        match self.family {
            Family::Tabulated => {
                let d = self.table.as_ref().and_then(|t| t.first()).map_or(1, |e| e.xi.len());
                let mut q = vec![T::zero(); d];
                q[0] = xi_mod;
                self.lookup(&q)
            }
            _ => Ok(self.radial(xi_mod.abs())),
        }
    }

    fn radial(&self, m: T) -> T {
        let two_pi = T::TAU();
        let linear = self.g + two_pi * self.sigma * m;
        match self.family {
            Family::Fractional => self.g + self.sigma * (two_pi * m).powf(lit::<T>(2.0) * self.r),
            Family::LogCorrected => {
                if m > T::E() {
                    self.g + two_pi * self.sigma * m / m.ln().powf(self.alpha)
                } else {
                    linear
                }
            }
            Family::LoglogCorrected => {
                if m > T::E().exp() {
                    self.g + two_pi * self.sigma * m / m.ln().ln().powf(self.alpha)
                } else {
                    linear
                }
            }
            Family::Tabulated => unreachable!(),
        }
    }

    fn lookup(&self, xi: &[T]) -> Result<T, SymbolError> {
        let table = self.table.as_ref().filter(|t| !t.is_empty()).ok_or(SymbolError::EmptyTable)?;
        let d = table[0].xi.len();
        let q: Vec<T> = if d == 1 && xi.len() != 1 {
            vec![xi.iter().map(|&x| x * x).sum::<T>().sqrt()]
        } else {
            xi.to_vec()
        };
        if q.len() != d {
            return Err(SymbolError::InterpolationUnavailable);
        }
        for (i, &c) in q.iter().enumerate() {
            let lo = table.iter().map(|e| e.xi[i]).fold(T::infinity(), T::min);
            let hi = table.iter().map(|e| e.xi[i]).fold(T::neg_infinity(), T::max);
            if c < lo || c > hi {
                return Err(SymbolError::InterpolationUnavailable);
            }
        }
        let mut best = (T::infinity(), table[0].mu);
        for e in table {
            let d2: T = e.xi.iter().zip(&q).map(|(&a, &b)| (a - b) * (a - b)).sum();
            if d2 < best.0 {
                best = (d2, e.mu);
            }
        }
        Ok(best.1)
    }

    /// Loads a table from CSV: `(|xi|, mu)` rows, or `(xi_1, .., xi_{N-1}, mu)` rows.
    /// A non-numeric first row is treated as a header.
    pub fn load_table_csv(path: &Path) -> Result<Vec<TableEntry<T>>, SymbolError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| SymbolError::Io(e.to_string()))?;
        let mut out = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| SymbolError::Io(e.to_string()))?;
            let vals: Result<Vec<f64>, _> = rec.iter().map(|s| s.parse::<f64>()).collect();
            let vals = match vals {
                Ok(v) => v,
                Err(_) if i == 0 => continue,
                Err(e) => return Err(SymbolError::Io(format!("row {}: {e}", i + 1))),
            };
            if vals.len() < 2 {
                return Err(SymbolError::Io(format!("row {}: need at least two columns", i + 1)));
            }
            let (xi, mu) = vals.split_at(vals.len() - 1);
            out.push(TableEntry { xi: xi.iter().map(|&x| lit(x)).collect(), mu: lit(mu[0]) });
        }
        if out.is_empty() {
            return Err(SymbolError::EmptyTable);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Lower,
    Upper,
    Unavailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Violation<T: Real> {
    pub xi: T,
    pub mu: Option<T>,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SymbolReport<T: Real> {
    pub samples: usize,
    pub xi_max: T,
    pub violations: Vec<Violation<T>>,
    /// mu/|xi|^3 at xi_max and at xi_max/10.
    pub cubic_ratio_tail: (T, T),
    /// Empirical mu(xi)/|xi|^3 -> 0: the ratio shrinks over the last decade.
    pub sub_cubic: bool,
    pub stitched: bool,
}

impl<T: Real> SymbolReport<T> {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Deterministic sample: 0, then a geometric grid up to `xi_max`.
pub fn sample_moduli<T: Real>(xi_max: T, samples: usize) -> Vec<T> {
    let mut out = vec![T::zero()];
    if samples <= 1 || !(xi_max > T::zero()) {
        return out;
    }
    let lo = lit::<T>(1e-3).min(xi_max);
    let n = samples - 1;
    for i in 0..n {
        let f = if n == 1 { T::one() } else { lit::<T>(i as f64 / (n - 1) as f64) };
        out.push(lo * (xi_max / lo).powf(f));
    }
    out
}

/// Checks theta <= mu <= theta^-1 (1+|xi|)^3 on a deterministic sample.
pub fn validate_symbol<T: Real>(sym: &Symbol<T>, xi_max: T, samples: usize) -> SymbolReport<T> {
    let mut pts = sample_moduli(xi_max, samples.max(1));
    if let (Family::Tabulated, Some(t)) = (sym.family, &sym.table) {
        for e in t {
            let m = e.xi.iter().map(|&x| x * x).sum::<T>().sqrt();
            if m <= xi_max {
                pts.push(m);
            }
        }
    }
    let mut violations = Vec::new();
    for &m in &pts {
        match sym.eval_mod(m) {
            Ok(mu) => {
                if !(mu >= sym.theta) {
                    violations.push(Violation { xi: m, mu: Some(mu), kind: ViolationKind::Lower });
                } else if !(mu <= (T::one() + m).powi(3) / sym.theta) {
                    violations.push(Violation { xi: m, mu: Some(mu), kind: ViolationKind::Upper });
                }
            }
            Err(_) => violations.push(Violation { xi: m, mu: None, kind: ViolationKind::Unavailable }),
        }
    }
    // Tabulated entries are also checked at their own (possibly vector) frequencies.
    if let (Family::Tabulated, Some(t)) = (sym.family, &sym.table) {
        for e in t {
            let m = e.xi.iter().map(|&x| x * x).sum::<T>().sqrt();
            if m <= xi_max && !(e.mu >= sym.theta) && !violations.iter().any(|v| v.xi == m) {
                violations.push(Violation { xi: m, mu: Some(e.mu), kind: ViolationKind::Lower });
            }
        }
    }
    let ratio = |m: T| sym.eval_mod(m).map(|mu| mu / m.powi(3)).unwrap_or(T::nan());
    let hi = ratio(xi_max);
    let lo = ratio(xi_max / lit(10.0));
    SymbolReport {
        samples: pts.len(),
        xi_max,
        violations,
        cubic_ratio_tail: (hi, lo),
        sub_cubic: hi < lit::<T>(0.9) * lo,
        stitched: sym.stitch_radius().is_some(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "")]
pub struct SlabParams<T: Real> {
    pub ell: T,
    #[serde(default = "default_dim")]
    pub dim: usize,
    pub symbol: Symbol<T>,
}

fn default_dim() -> usize {
    3
}

impl<T: Real> SlabParams<T> {
    pub fn new(ell: T, dim: usize, symbol: Symbol<T>) -> Result<Self, SymbolError> {
        let s = SlabParams { ell, dim, symbol };
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<(), SymbolError> {
        if !(self.ell > T::zero()) || !self.ell.is_finite() {
            return Err(SymbolError::Invalid("ell must be positive".into()));
        }
        if self.dim < 2 {
            return Err(SymbolError::Invalid("dim must be at least 2".into()));
        }
        self.symbol.check()
    }

    pub fn mu(&self, xi_mod: T) -> Result<T, SymbolError> {
        self.symbol.eval_mod(xi_mod)
    }
}
