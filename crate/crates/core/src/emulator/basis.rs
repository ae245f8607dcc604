//! Response-surface basis functions and their selection.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PbaError, Result};

/// A monomial `Π x_i^{powers[i]}`; all-zero powers is the constant term.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Monomial {
    pub powers: Vec<u32>,
}

impl Monomial {
    pub fn constant(r: usize) -> Self {
        Self { powers: vec![0; r] }
    }

    pub fn single(r: usize, dim: usize, power: u32) -> Self {
        let mut powers = vec![0; r];
        powers[dim] = power;
        Self { powers }
    }

    pub fn is_constant(&self) -> bool {
        self.powers.iter().all(|&p| p == 0)
    }

    pub fn degree(&self) -> u32 {
        self.powers.iter().sum()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.powers
            .iter()
            .zip(x)
            .filter(|(&p, _)| p > 0)
            .map(|(&p, &v)| v.powi(p as i32))
            .product()
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_constant() {
            return write!(f, "1");
        }
        let parts: Vec<String> = self
            .powers
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0)
            .map(|(i, &p)| if p == 1 { format!("x{}", i + 1) } else { format!("x{}^{p}", i + 1) })
            .collect();
        write!(f, "{}", parts.join("*"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BasisPolicy {
    Constant,
    LinearAll,
    /// Forward selection then backward deletion, keeping at most
    /// `floor(df_fraction * n)` terms and deleting any term that explains less than
    /// `delete_threshold` of the output variance.
    Stepwise { df_fraction: f64, delete_threshold: f64 },
}

impl BasisPolicy {
    pub const DEFAULT_DELETE_THRESHOLD: f64 = 0.001;

    pub fn stepwise(df_fraction: f64) -> Self {
        BasisPolicy::Stepwise {
            df_fraction,
            delete_threshold: Self::DEFAULT_DELETE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub terms: Vec<Monomial>,
    pub policy: BasisPolicy,
}

impl BasisSpec {
    pub fn constant(r: usize) -> Self {
        Self {
            terms: vec![Monomial::constant(r)],
            policy: BasisPolicy::Constant,
        }
    }

    pub fn linear(r: usize) -> Self {
        let mut terms = vec![Monomial::constant(r)];
        terms.extend((0..r).map(|i| Monomial::single(r, i, 1)));
        Self {
            terms,
            policy: BasisPolicy::LinearAll,
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.terms.len(), self.terms.iter().map(|t| t.eval(x)))
    }

    /// `n x q` matrix of basis functions evaluated at the rows of `points`.
    pub fn matrix(&self, points: &DMatrix<f64>) -> DMatrix<f64> {
        design_matrix(&self.terms, points)
    }

    pub fn labels(&self) -> Vec<String> {
        self.terms.iter().map(|t| t.to_string()).collect()
    }
}

fn design_matrix(terms: &[Monomial], points: &DMatrix<f64>) -> DMatrix<f64> {
    let n = points.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| points.row(i).iter().copied().collect()).collect();
    DMatrix::from_fn(n, terms.len(), |i, j| terms[j].eval(&rows[i]))
}

/// Stepwise candidate pool: powers 1 to 3 of each input plus pairwise products.
pub fn candidate_terms(r: usize) -> Vec<Monomial> {
    let mut out = Vec::new();
    for power in 1..=3 {
        for i in 0..r {
            out.push(Monomial::single(r, i, power));
        }
    }
    for i in 0..r {
        for j in (i + 1)..r {
            let mut powers = vec![0; r];
            powers[i] = 1;
            powers[j] = 1;
            out.push(Monomial { powers });
        }
    }
    out
}

/// Residual sum of squares of an ordinary least-squares fit; `None` when the
/// columns are numerically dependent.
pub fn ols_rss(h: &DMatrix<f64>, y: &DVector<f64>) -> Option<f64> {
    let qr = h.clone().qr();
    let r = qr.r();
    let scale = r.diagonal().amax().max(f64::MIN_POSITIVE);
    if r.diagonal().iter().any(|d| d.abs() <= 1e-10 * scale) {
        return None;
    }
    let q = qr.q();
    let fitted = &q * (q.transpose() * y);
    Some((y - fitted).norm_squared())
}

fn total_ss(y: &DVector<f64>) -> f64 {
    let m = y.mean();
    y.iter().map(|v| (v - m).powi(2)).sum()
}

/// OLS coefficient of determination for a set of terms.
pub fn r_squared(terms: &[Monomial], points: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let tss = total_ss(y);
    if tss <= 0.0 {
        return 1.0;
    }
    match ols_rss(&design_matrix(terms, points), y) {
        Some(rss) => (1.0 - rss / tss).clamp(0.0, 1.0),
        None => 0.0,
    }
}

/// Names the terms that are linear combinations of earlier terms.
pub fn dependent_terms(basis: &BasisSpec, points: &DMatrix<f64>) -> Vec<String> {
    let mut kept: Vec<Monomial> = Vec::new();
    let mut dependent = Vec::new();
    for t in &basis.terms {
        let mut trial = kept.clone();
        trial.push(t.clone());
        let h = design_matrix(&trial, points);
        if h.nrows() < trial.len() || ols_rss(&h, &DVector::zeros(h.nrows())).is_none() {
            dependent.push(t.to_string());
        } else {
            kept = trial;
        }
    }
    dependent
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSelection {
    pub basis: BasisSpec,
    /// R² of the final OLS fit, used to pick the nugget prior scenario.
    pub r_squared: f64,
}

pub fn select_basis(points: &DMatrix<f64>, y: &DVector<f64>, policy: BasisPolicy) -> Result<BasisSelection> {
    let r = points.ncols();
    let basis = match policy {
        BasisPolicy::Constant => BasisSpec::constant(r),
        BasisPolicy::LinearAll => BasisSpec::linear(r),
        BasisPolicy::Stepwise { df_fraction, delete_threshold } => {
            let terms = stepwise(points, y, df_fraction, delete_threshold)?;
            BasisSpec { terms, policy }
        }
    };
    let r_squared = r_squared(&basis.terms, points, y);
    Ok(BasisSelection { basis, r_squared })
}

fn stepwise(points: &DMatrix<f64>, y: &DVector<f64>, df_fraction: f64, threshold: f64) -> Result<Vec<Monomial>> {
    let n = points.nrows();
    let r = points.ncols();
    if n <= 2 {
        return Err(PbaError::Policy(format!("stepwise selection needs more than 2 runs, got {n}")));
    }
    let budget = (df_fraction * n as f64).floor() as usize;
    if budget < 2 {
        return Err(PbaError::Policy(format!(
            "term budget {budget} from {df_fraction} of {n} runs leaves no room for a non-constant term"
        )));
    }
    let tss = total_ss(y);
    let mut terms = vec![Monomial::constant(r)];
    if tss <= 0.0 {
        return Ok(terms);
    }
    let rss_of = |ts: &[Monomial]| ols_rss(&design_matrix(ts, points), y);
    let mut current_rss = rss_of(&terms).unwrap_or(tss);
    let mut pool = candidate_terms(r);
    // leave at least three residual degrees of freedom during the forward sweep
    let max_forward = n.saturating_sub(3);

    while !pool.is_empty() && terms.len() < max_forward {
        let best = pool
            .iter()
            .enumerate()
            .filter_map(|(i, c)| {
                let mut trial = terms.clone();
                trial.push(c.clone());
                rss_of(&trial).map(|rss| (i, rss))
            })
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((i, rss)) = best else { break };
        if (current_rss - rss) / tss < threshold {
            break;
        }
        terms.push(pool.remove(i));
        current_rss = rss;
    }

    loop {
        if terms.len() <= 1 {
            break;
        }
        // contribution of each non-constant term: RSS increase on removal
        let weakest = (1..terms.len())
            .map(|i| {
                let mut trial = terms.clone();
                trial.remove(i);
                let rss = rss_of(&trial).unwrap_or(f64::INFINITY);
                (i, (rss - current_rss) / tss)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((i, contribution)) = weakest else { break };
        if terms.len() > budget || contribution < threshold {
            terms.remove(i);
            current_rss = rss_of(&terms).unwrap_or(tss);
        } else {
            break;
        }
    }
    Ok(terms)
}
