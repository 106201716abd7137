//! Watch-time normalization and Kolmogorov-Smirnov grid fitting of Tweedie
//! parameters.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tweedie::{CdfSeries, TweedieParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMethod {
    /// Z-score, then shift so the smallest value lands on 0.
    ZScoreShifted,
    /// Divide by the standard deviation only.
    ScaleOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub method: NormalizationMethod,
    pub upper_bound: f64,
}

/// Population standard deviation.
fn population_sd(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

pub fn normalize(raw: &[f64], spec: &NormalizationSpec) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(spec.upper_bound > 0.0) {
        return Err(Error::InvalidParams(format!(
            "upper bound must be positive, got {}",
            spec.upper_bound
        )));
    }
    if let Some(bad) = raw.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "raw values must be finite and >= 0, got {bad}"
        )));
    }
    let sd = population_sd(raw);
    if sd == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let cap = spec.upper_bound;
    Ok(match spec.method {
        NormalizationMethod::ScaleOnly => raw.iter().map(|x| (x / sd).min(cap)).collect(),
        NormalizationMethod::ZScoreShifted => {
            let mean = raw.iter().sum::<f64>() / raw.len() as f64;
            let z: Vec<f64> = raw.iter().map(|x| (x - mean) / sd).collect();
            let lowest = z.iter().copied().fold(f64::INFINITY, f64::min);
            z.into_iter().map(|v| (v - lowest).min(cap)).collect()
        }
    })
}

/// Sorted sample collapsed to distinct values with cumulative counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    values: Vec<f64>,
    /// `cum[i]` = number of observations `<= values[i]`.
    cum: Vec<usize>,
    n: usize,
}

impl Ecdf {
    pub fn new(sample: &[f64]) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::EmptySample);
        }
        if let Some(bad) = sample.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "sample values must be finite and >= 0, got {bad}"
            )));
        }
        let mut sorted = sample.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut values = Vec::new();
        let mut cum = Vec::new();
        for (i, &x) in sorted.iter().enumerate() {
            if values.last() == Some(&x) {
                *cum.last_mut().unwrap() = i + 1;
            } else {
                values.push(x);
                cum.push(i + 1);
            }
        }
        Ok(Ecdf {
            values,
            cum,
            n: sorted.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn distinct(&self) -> usize {
        self.values.len()
    }

    /// `F_n(x)`, right-continuous.
    pub fn eval(&self, x: f64) -> f64 {
        let idx = self.values.partition_point(|&v| v <= x);
        if idx == 0 {
            0.0
        } else {
            self.cum[idx - 1] as f64 / self.n as f64
        }
    }

    fn right(&self, i: usize) -> f64 {
        self.cum[i] as f64 / self.n as f64
    }

    fn left(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            self.cum[i - 1] as f64 / self.n as f64
        }
    }

    /// `sup_x |F_n(x) - F(x)|` for a continuous-except-at-zero CDF `F`.
    ///
    /// Both one-sided ECDF limits are compared at every jump. Blocks of
    /// consecutive jumps are skipped when monotonicity of `F` and `F_n`
    /// bounds every deviation inside them by the best found so far, so `F`
    /// is evaluated at only a fraction of the jumps; the result is exact.
    pub fn ks_distance<E>(&self, mut cdf: impl FnMut(f64) -> Result<f64, E>) -> Result<f64, E> {
        let k = self.values.len();
        let mut cache: Vec<f64> = vec![f64::NAN; k];
        let mut at = |i: usize, cache: &mut Vec<f64>| -> Result<f64, E> {
            if cache[i].is_nan() {
                cache[i] = cdf(self.values[i])?;
            }
            Ok(cache[i])
        };
        // F just below a jump: continuous except for the atom at zero.
        let dev = |i: usize, f: f64| -> f64 {
            let below = if self.values[i] == 0.0 { 0.0 } else { f };
            (f - self.right(i)).abs().max((below - self.left(i)).abs())
        };

        let f0 = at(0, &mut cache)?;
        let mut best = dev(0, f0);
        if k == 1 {
            return Ok(best);
        }
        let fl = at(k - 1, &mut cache)?;
        best = best.max(dev(k - 1, fl));

        let mut stack = vec![(0usize, k - 1)];
        while let Some((i, j)) = stack.pop() {
            if j - i < 2 {
                continue;
            }
            let (fi, fj) = (cache[i], cache[j]);
            // interior jumps l: F in [fi, fj], ECDF limits in [right(i), left(j)]
            let bound = (fj - self.right(i)).max(self.left(j) - fi);
            if bound <= best {
                continue;
            }
            let mid = i + (j - i) / 2;
            let fm = at(mid, &mut cache)?;
            best = best.max(dev(mid, fm));
            stack.push((mid, j));
            stack.push((i, mid));
        }
        Ok(best.clamp(0.0, 1.0))
    }
}

/// Kolmogorov-Smirnov distance between `sample` and the Tweedie CDF.
pub fn ks_statistic(sample: &[f64], params: &TweedieParams) -> Result<f64> {
    let ecdf = Ecdf::new(sample)?;
    let series = CdfSeries::new(params)?;
    ecdf.ks_distance(|x| series.eval(x))
}

/// Inclusive arithmetic range `start, start + step, ..., <= end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRange {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl GridRange {
    pub const fn new(start: f64, end: f64, step: f64) -> Self {
        GridRange { start, end, step }
    }

    pub const fn point(x: f64) -> Self {
        GridRange {
            start: x,
            end: x,
            step: 1.0,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.step > 0.0)
            || !self.start.is_finite()
            || !self.end.is_finite()
            || self.end < self.start
        {
            return Err(Error::InvalidParams(format!(
                "{name} grid needs finite start <= end and step > 0"
            )));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let n = ((self.end - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.start + i as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub mu: GridRange,
    pub p: GridRange,
    pub phi: GridRange,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            mu: GridRange::new(0.05, 0.5, 0.05),
            p: GridRange::new(1.05, 1.95, 0.05),
            phi: GridRange::new(0.5, 2.5, 0.05),
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        self.mu.validate("mu")?;
        self.p.validate("p")?;
        self.phi.validate("phi")?;
        if !(self.p.start > 1.0 && self.p.values().iter().all(|&p| p < 2.0)) {
            return Err(Error::InvalidParams("p grid must lie inside (1, 2)".into()));
        }
        if !(self.mu.start > 0.0 && self.phi.start > 0.0) {
            return Err(Error::InvalidParams(
                "mu and phi grids must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Grid points in table order: p outermost, then mu, then phi.
    pub fn points(&self) -> Vec<TweedieParams> {
        let (mus, ps, phis) = (self.mu.values(), self.p.values(), self.phi.values());
        let mut out = Vec::with_capacity(mus.len() * ps.len() * phis.len());
        for &p in &ps {
            for &mu in &mus {
                for &phi in &phis {
                    out.push(TweedieParams { mu, phi, p });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub params: TweedieParams,
    pub ks: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: TweedieParams,
    pub best_ks: f64,
    pub table: Vec<GridRow>,
}

/// Exhaustive KS search. Ties go to the smaller p, then mu, then phi.
pub fn grid_search(sample: &[f64], grid: &GridSpec) -> Result<GridResult> {
    grid.validate()?;
    let ecdf = Ecdf::new(sample)?;
    let table = grid
        .points()
        .into_par_iter()
        .map(|params| {
            let series = CdfSeries::new(&params)?;
            let ks = ecdf.ks_distance(|x| series.eval(x))?;
            Ok(GridRow { params, ks })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = table
        .iter()
        .min_by(|a, b| {
            a.ks.total_cmp(&b.ks)
                .then(a.params.p.total_cmp(&b.params.p))
                .then(a.params.mu.total_cmp(&b.params.mu))
                .then(a.params.phi.total_cmp(&b.params.phi))
        })
        .copied()
        .expect("grid has at least one point");
    Ok(GridResult {
        best: best.params,
        best_ks: best.ks,
        table,
    })
}

/// Reads one nonnegative value per line; blank lines and `#` comments are
/// skipped.
pub fn parse_sample(text: &str, path: &Path) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let v: f64 = line.parse().map_err(|e| err(format!("{e}: {line:?}")))?;
        if !v.is_finite() || v < 0.0 {
            return Err(err(format!("value must be finite and >= 0, got {v}")));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(out)
}

/// Grid table as `mu,p,phi,ks` rows followed by a commented best-fit block.
pub fn grid_csv(result: &GridResult, header_comment: &str) -> String {
    let mut out = String::new();
    if !header_comment.is_empty() {
        out.push_str(&format!("# {header_comment}\n"));
    }
    out.push_str("mu,p,phi,ks\n");
    for row in &result.table {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.params.mu, row.params.p, row.params.phi, row.ks
        ));
    }
    out.push_str(&format!(
        "# best mu={} p={} phi={} ks={}\n",
        result.best.mu, result.best.p, result.best.phi, result.best_ks
    ));
    out
}
