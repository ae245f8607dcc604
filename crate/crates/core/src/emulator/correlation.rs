use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{PbaError, Result};

/// Stationary product correlation families over normalized inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CorrelationFamily {
    /// `exp(-κ h^p)` per dimension, `p ∈ (0, 2]`; `p = 2` is the Gaussian.
    PowerExponential { p: f64 },
    /// `(1 + √3 κh) exp(-√3 κh)`.
    Matern32,
    /// `(1 + √5 κh + 5κ²h²/3) exp(-√5 κh)`.
    Matern52,
}

impl CorrelationFamily {
    pub fn gaussian() -> Self {
        CorrelationFamily::PowerExponential { p: 2.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            CorrelationFamily::PowerExponential { p } if !(p > 0.0 && p <= 2.0) => {
                Err(PbaError::Argument(format!("power exponential exponent {p} outside (0, 2]")))
            }
            _ => Ok(()),
        }
    }

    /// One-dimensional correlation at distance `h >= 0`.
    pub fn eval(&self, h: f64, kappa: f64) -> f64 {
        let h = h.abs();
        match *self {
            CorrelationFamily::PowerExponential { p } => (-kappa * h.powf(p)).exp(),
            CorrelationFamily::Matern32 => {
                let s = 3f64.sqrt() * kappa * h;
                (1.0 + s) * (-s).exp()
            }
            CorrelationFamily::Matern52 => {
                let s = 5f64.sqrt() * kappa * h;
                (1.0 + s + s * s / 3.0) * (-s).exp()
            }
        }
    }

    pub fn label(&self) -> String {
        match *self {
            CorrelationFamily::PowerExponential { p } if p == 2.0 => "gaussian".into(),
            CorrelationFamily::PowerExponential { p } => format!("pow-exp({p})"),
            CorrelationFamily::Matern32 => "matern32".into(),
            CorrelationFamily::Matern52 => "matern52".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSpec {
    pub family: CorrelationFamily,
    /// Per-dimension roughness, all positive.
    pub kappa: Vec<f64>,
    /// Fraction of residual variance that is uncorrelated, in `[0, 1]`.
    pub nugget: f64,
}

impl CorrelationSpec {
    pub fn new(family: CorrelationFamily, kappa: Vec<f64>, nugget: f64) -> Result<Self> {
        family.validate()?;
        if let Some(k) = kappa.iter().find(|k| !(**k > 0.0 && k.is_finite())) {
            return Err(PbaError::Argument(format!("roughness {k} must be positive and finite")));
        }
        if !(0.0..=1.0).contains(&nugget) {
            return Err(PbaError::Argument(format!("nugget {nugget} outside [0, 1]")));
        }
        Ok(Self { family, kappa, nugget })
    }

    pub fn dims(&self) -> usize {
        self.kappa.len()
    }
}

/// Correlated part `R(|x - x2|)`, the product of per-dimension family values.
pub fn correlation(x: &[f64], x2: &[f64], spec: &CorrelationSpec) -> f64 {
    debug_assert_eq!(x.len(), x2.len());
    debug_assert_eq!(x.len(), spec.kappa.len());
    x.iter()
        .zip(x2)
        .zip(&spec.kappa)
        .map(|((a, b), &k)| spec.family.eval(a - b, k))
        .product()
}

/// Covariance entry divided by the scale: `ν 1{x = x2} + (1 - ν) R`.
pub fn covariance_entry(x: &[f64], x2: &[f64], spec: &CorrelationSpec) -> f64 {
    let same = x.iter().zip(x2).all(|(a, b)| a == b);
    let nug = if same { spec.nugget } else { 0.0 };
    nug + (1.0 - spec.nugget) * correlation(x, x2, spec)
}

/// `A = ν I + (1 - ν) R` over the rows of `points`. The nugget attaches to run
/// identity, so repeated runs at one input remain distinguishable when `ν > 0`.
pub fn correlation_matrix(points: &DMatrix<f64>, spec: &CorrelationSpec) -> DMatrix<f64> {
    let n = points.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| points.row(i).iter().copied().collect()).collect();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = 1.0;
        for j in 0..i {
            let v = (1.0 - spec.nugget) * correlation(&rows[i], &rows[j], spec);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// Correlation of the residual when only one coordinate differs by `half_range`.
pub fn kappa_to_half_length(kappa: f64, family: CorrelationFamily, half_range: f64) -> f64 {
    family.eval(half_range, kappa)
}

/// Inverts [`kappa_to_half_length`]: the roughness whose one-dimensional
/// correlation at `half_range` equals `rho`. Closed form for the power
/// exponential; bracketed bisection for the Matérn forms.
pub fn half_length_to_kappa(rho: f64, family: CorrelationFamily, half_range: f64) -> Result<f64> {
    family.validate()?;
    if !(half_range > 0.0) {
        return Err(PbaError::Argument(format!("half range {half_range} must be positive")));
    }
    if rho <= 0.0 {
        return Err(PbaError::Argument("half-length correlation 0 needs unbounded roughness".into()));
    }
    if rho >= 1.0 {
        return Err(PbaError::Argument(
            "half-length correlation 1 gives roughness 0; it must be below 1".into(),
        ));
    }
    match family {
        CorrelationFamily::PowerExponential { p } => Ok(-rho.ln() / half_range.powf(p)),
        _ => {
            // correlation is decreasing in κ; grow the bracket until it straddles rho
            let f = |k: f64| family.eval(half_range, k) - rho;
            let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
            while f(hi) > 0.0 {
                lo = hi;
                hi *= 2.0;
                if hi > 1e300 {
                    return Err(PbaError::Argument(format!("no roughness reaches correlation {rho}")));
                }
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * hi {
                    break;
                }
            }
            Ok(0.5 * (lo + hi))
        }
    }
}
