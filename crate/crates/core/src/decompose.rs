//! Loss decomposition on the basis `f, f^2, f^3, ...` with
//! `f(pred) = 1 - sqrt(pred)`, projection of business metrics onto those
//! coordinates, and construction of compound losses.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{tweedie_loss, LossKind};
use crate::rng;

pub const DEFAULT_WINDOW: f64 = 0.05;
pub const DEFAULT_POINTS: usize = 201;
pub const DEFAULT_ORDER: usize = 3;
/// Polynomial degree actually fitted; terms above the reported order soak
/// up the higher powers so they do not leak into the reported ones.
pub const DEFAULT_FIT_ORDER: usize = 8;

const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaylorOptions {
    pub window: f64,
    pub n_points: usize,
    pub order: usize,
    pub fit_order: usize,
}

impl Default for TaylorOptions {
    fn default() -> Self {
        TaylorOptions {
            window: DEFAULT_WINDOW,
            n_points: DEFAULT_POINTS,
            order: DEFAULT_ORDER,
            fit_order: DEFAULT_FIT_ORDER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisCoeffs {
    pub kind: Option<LossKind>,
    pub target: f64,
    /// `coeffs[k]` multiplies `f^(k+1)`.
    pub coeffs: Vec<f64>,
    /// Largest absolute fit residual over the window.
    pub residual: f64,
}

/// Loss of `kind` at `pred` as a function on the expansion axis. The
/// log-loss family is taken in its `-ln sqrt(pred)` form, positive label,
/// weight `target` for the weighted variant.
pub fn expansion_loss(kind: &LossKind, target: f64, pred: f64) -> Result<f64> {
    match *kind {
        LossKind::TweediePow { p } => tweedie_loss(pred, target, p),
        LossKind::LogLoss => Ok(-0.5 * pred.ln()),
        LossKind::WeightedLogLoss => Ok(-0.5 * target * pred.ln()),
        LossKind::MeanSquared => Ok((pred - target) * (pred - target)),
    }
}

/// Least-squares coefficients of `loss(pred(f)) - loss(pred(0))` on
/// `f, ..., f^fit_order` over `f` in `[-window, window]`, truncated to
/// `order` terms.
pub fn taylor_coeffs_fn(
    loss: impl Fn(f64) -> Result<f64>,
    opts: &TaylorOptions,
) -> Result<(Vec<f64>, f64)> {
    if !(opts.window > 0.0 && opts.window < 1.0) {
        return Err(Error::DegenerateFit(format!(
            "window must lie in (0, 1), got {}",
            opts.window
        )));
    }
    if opts.order == 0 || opts.fit_order < opts.order {
        return Err(Error::DegenerateFit("need 1 <= order <= fit_order".into()));
    }
    if opts.n_points < 20.max(opts.fit_order + 1) {
        return Err(Error::DegenerateFit(format!(
            "{} points cannot pin {} terms",
            opts.n_points, opts.fit_order
        )));
    }
    let w = opts.window;
    let base = loss(1.0)?;
    let n = opts.n_points;
    let deg = opts.fit_order;
    // fit on u = f / w so the design matrix stays well conditioned
    let mut design = DMatrix::<f64>::zeros(n, deg);
    let mut rhs = DVector::<f64>::zeros(n);
    for i in 0..n {
        let u = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
        let f = w * u;
        let pred = (1.0 - f) * (1.0 - f);
        rhs[i] = loss(pred)? - base;
        let mut pow = 1.0;
        for k in 0..deg {
            pow *= u;
            design[(i, k)] = pow;
        }
    }
    let scaled = lstsq(&design, &rhs)
        .map_err(|_| Error::DegenerateFit("singular normal equations".into()))?;
    let fitted = &design * &scaled;
    let residual = (&rhs - fitted).amax();
    let coeffs = (0..opts.order)
        .map(|k| scaled[k] / w.powi(k as i32 + 1))
        .collect();
    Ok((coeffs, residual))
}

pub fn taylor_coeffs(kind: &LossKind, target: f64, opts: &TaylorOptions) -> Result<BasisCoeffs> {
    kind.validate()?;
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "expansion target must be positive, got {target}"
        )));
    }
    let (coeffs, residual) = taylor_coeffs_fn(|pred| expansion_loss(kind, target, pred), opts)?;
    Ok(BasisCoeffs {
        kind: Some(*kind),
        target,
        coeffs,
        residual,
    })
}

/// Second-order coefficients of the Tweedie loss with power `p` and of the
/// log-loss, both at target 1.
pub fn sensitivity_compare(p: f64) -> Result<(f64, f64)> {
    let opts = TaylorOptions::default();
    let tweedie = taylor_coeffs(&LossKind::tweedie(p)?, 1.0, &opts)?;
    let logloss = taylor_coeffs(&LossKind::LogLoss, 1.0, &opts)?;
    Ok((tweedie.coeffs[1], logloss.coeffs[1]))
}

/// Least squares through the SVD. Errors when `a` lacks full column rank.
fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    if !(max_sv > 0.0) || min_sv <= RANK_TOL * max_sv || a.nrows() < a.ncols() {
        return Err(Error::RankDeficient);
    }
    svd.solve(b, 0.0).map_err(|_| Error::RankDeficient)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricObservations {
    /// One row of basis coordinates per experiment.
    pub coeff_matrix: Vec<Vec<f64>>,
    pub watch_metric: Vec<f64>,
    pub conversion_metric: Vec<f64>,
}

impl MetricObservations {
    pub fn len(&self) -> usize {
        self.coeff_matrix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeff_matrix.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.coeff_matrix.first().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::InvalidParams("no observations".into()));
        }
        if self.watch_metric.len() != self.len() || self.conversion_metric.len() != self.len() {
            return Err(Error::InvalidParams(
                "metric columns must match coefficient rows".into(),
            ));
        }
        for row in &self.coeff_matrix {
            if row.len() != d || row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParams(
                    "coefficient rows must be finite and equally long".into(),
                ));
            }
        }
        if self.len() < d {
            return Err(Error::RankDeficient);
        }
        Ok(())
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.dim(), |i, j| self.coeff_matrix[i][j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSolution {
    pub t_vector: Vec<f64>,
    pub v_vector: Vec<f64>,
    pub watch_residuals: Vec<f64>,
    pub conversion_residuals: Vec<f64>,
    /// Least-squares standard errors; zero when the system is square.
    pub t_stderr: Vec<f64>,
    pub v_stderr: Vec<f64>,
}

fn stderr(c: &DMatrix<f64>, residuals: &DVector<f64>) -> Result<Vec<f64>> {
    let (n, d) = c.shape();
    if n <= d {
        return Ok(vec![0.0; d]);
    }
    let sigma2 = residuals.norm_squared() / (n - d) as f64;
    let gram_inv = (c.transpose() * c)
        .try_inverse()
        .ok_or(Error::RankDeficient)?;
    Ok((0..d).map(|k| (sigma2 * gram_inv[(k, k)]).sqrt()).collect())
}

/// Solves `watch = C t` and `conversion = C v` in the least-squares sense.
pub fn solve_projection(obs: &MetricObservations) -> Result<ProjectionSolution> {
    obs.validate()?;
    let c = obs.matrix();
    let watch = DVector::from_column_slice(&obs.watch_metric);
    let conv = DVector::from_column_slice(&obs.conversion_metric);
    let t = lstsq(&c, &watch)?;
    let v = lstsq(&c, &conv)?;
    let rw = &watch - &c * &t;
    let rc = &conv - &c * &v;
    Ok(ProjectionSolution {
        t_stderr: stderr(&c, &rw)?,
        v_stderr: stderr(&c, &rc)?,
        t_vector: t.iter().copied().collect(),
        v_vector: v.iter().copied().collect(),
        watch_residuals: rw.iter().copied().collect(),
        conversion_residuals: rc.iter().copied().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    /// One weight per library member, scaled so the combined coefficient
    /// vector has unit norm.
    pub weights: Vec<f64>,
    pub combined: Vec<f64>,
    /// Cosine between the combined coefficients and the target direction.
    pub cosine: f64,
}

/// Mixture of library losses whose coefficient vector points as closely as
/// possible along `target`.
pub fn compose_loss(target: &[f64], library: &[Vec<f64>]) -> Result<Composition> {
    if library.is_empty() {
        return Err(Error::Degenerate("loss library is empty".into()));
    }
    let d = target.len();
    if d == 0 || library.iter().any(|c| c.len() != d) {
        return Err(Error::Degenerate(
            "library coefficients must match the target length".into(),
        ));
    }
    let t = DVector::from_column_slice(target);
    if !(t.norm() > 0.0) {
        return Err(Error::Degenerate("target direction is zero".into()));
    }
    let basis = DMatrix::from_fn(d, library.len(), |i, g| library[g][i]);
    if basis.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate(
            "every library member has zero coefficients".into(),
        ));
    }
    // Projection of t onto span(library) maximizes the cosine; the SVD gives
    // the minimum-norm weights when members are dependent.
    let svd = basis.clone().svd(true, true);
    let eps = RANK_TOL * svd.singular_values.max();
    let w = svd
        .solve(&t, eps)
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    let combined = &basis * &w;
    let norm = combined.norm();
    if norm <= 1e-12 * t.norm() {
        return Ok(Composition {
            weights: vec![0.0; library.len()],
            combined: vec![0.0; d],
            cosine: 0.0,
        });
    }
    let cosine = (combined.dot(&t) / (norm * t.norm())).clamp(-1.0, 1.0);
    Ok(Composition {
        weights: w.iter().map(|x| x / norm).collect(),
        combined: combined.iter().map(|x| x / norm).collect(),
        cosine,
    })
}

/// Synthetic observations: Gaussian coefficient rows, metrics `C t` and
/// `C v` plus Gaussian noise of standard deviation `noise_sd`.
pub fn plant_observations(
    t: &[f64],
    v: &[f64],
    n: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<MetricObservations> {
    if t.is_empty() || t.len() != v.len() {
        return Err(Error::InvalidParams(
            "planted vectors must be nonempty and equally long".into(),
        ));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::InvalidParams("noise sd must be >= 0".into()));
    }
    let mut rng = rng::stream(seed, "plant-observations", &[]);
    let mut obs = MetricObservations {
        coeff_matrix: Vec::with_capacity(n),
        watch_metric: Vec::with_capacity(n),
        conversion_metric: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let row: Vec<f64> = (0..t.len()).map(|_| rng.sample(StandardNormal)).collect();
        let dot = |w: &[f64]| row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        let nw: f64 = rng.sample(StandardNormal);
        let nc: f64 = rng.sample(StandardNormal);
        obs.watch_metric.push(dot(t) + noise_sd * nw);
        obs.conversion_metric.push(dot(v) + noise_sd * nc);
        obs.coeff_matrix.push(row);
    }
    Ok(obs)
}

/// Parses comma-separated `c1,...,cd,watch,conversion` rows. Blank lines,
/// `#` comments and a leading non-numeric header are skipped.
pub fn parse_observations(text: &str, path: &Path) -> Result<MetricObservations> {
    let mut obs = MetricObservations {
        coeff_matrix: Vec::new(),
        watch_metric: Vec::new(),
        conversion_metric: Vec::new(),
    };
    let mut width = None;
    let mut seen_data = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if !seen_data => {
                // header row
                seen_data = true;
                continue;
            }
            Err(e) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: e.to_string(),
                });
            }
        };
        seen_data = true;
        if values.len() < 3 || width.is_some_and(|w| w != values.len()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!(
                    "expected {} fields, found {}",
                    width.unwrap_or(5),
                    values.len()
                ),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("non-finite value {bad}"),
            });
        }
        width = Some(values.len());
        let d = values.len() - 2;
        obs.coeff_matrix.push(values[..d].to_vec());
        obs.watch_metric.push(values[d]);
        obs.conversion_metric.push(values[d + 1]);
    }
    if obs.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(obs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> TaylorOptions {
        TaylorOptions::default()
    }

    fn assert_coeffs(got: &[f64], want: &[f64], tol: f64) {
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < tol, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn logloss_series() {
        // -ln(1 - f) = f + f^2/2 + f^3/3 + ...
        let c = taylor_coeffs(&LossKind::LogLoss, 1.0, &opts()).unwrap();
        assert_coeffs(&c.coeffs, &[1.0, 0.5, 1.0 / 3.0], 1e-4);
        assert!(c.residual < 1e-6);
    }

    #[test]
    fn tweedie_series() {
        // 2 / (1 - f) + 2 (1 - f) - 4 = 2 f^2 + 2 f^3 + ...
        let c = taylor_coeffs(&LossKind::tweedie(1.5).unwrap(), 1.0, &opts()).unwrap();
        assert_coeffs(&c.coeffs, &[0.0, 2.0, 2.0], 1e-4);
        assert!(c.residual < 1e-6);
    }

    #[test]
    fn mse_series() {
        // ((1 - f)^2 - 1)^2 = 4 f^2 - 4 f^3 + f^4
        let c = taylor_coeffs(&LossKind::MeanSquared, 1.0, &opts()).unwrap();
        assert_coeffs(&c.coeffs, &[0.0, 4.0, -4.0], 1e-4);
    }

    #[test]
    fn weighted_scales_logloss() {
        let c = taylor_coeffs(&LossKind::WeightedLogLoss, 2.0, &opts()).unwrap();
        assert_coeffs(&c.coeffs, &[2.0, 1.0, 2.0 / 3.0], 1e-4);
    }

    #[test]
    fn sensitivity_ordering() {
        let (tw, ll) = sensitivity_compare(1.5).unwrap();
        assert!((tw - 2.0).abs() < 1e-4 && (ll - 0.5).abs() < 1e-4);
        assert!(tw > ll);
        let mut prev_ll = None;
        for k in 1..=19 {
            let p = 1.0 + 0.05 * k as f64;
            let (tw, ll) = sensitivity_compare(p).unwrap();
            assert!(tw > 0.0, "p={p}");
            if let Some(prev) = prev_ll {
                assert_eq!(ll, prev);
            }
            prev_ll = Some(ll);
        }
        assert!(sensitivity_compare(1.999).unwrap().0 > 0.0);
    }

    #[test]
    fn halving_window_is_stable() {
        for kind in LossKind::all(1.5) {
            let a = taylor_coeffs(&kind, 1.0, &opts()).unwrap();
            let b = taylor_coeffs(
                &kind,
                1.0,
                &TaylorOptions {
                    window: 0.025,
                    ..opts()
                },
            )
            .unwrap();
            for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
                assert!((x - y).abs() < 1e-3, "{kind}");
            }
        }
    }

    #[test]
    fn extraction_is_linear() {
        let tw = LossKind::tweedie(1.3).unwrap();
        let (a, b) = (0.7, -1.9);
        let mixed = taylor_coeffs_fn(
            |pred| {
                Ok(a * expansion_loss(&tw, 1.0, pred)?
                    + b * expansion_loss(&LossKind::MeanSquared, 1.0, pred)?)
            },
            &opts(),
        )
        .unwrap()
        .0;
        let ca = taylor_coeffs(&tw, 1.0, &opts()).unwrap().coeffs;
        let cb = taylor_coeffs(&LossKind::MeanSquared, 1.0, &opts())
            .unwrap()
            .coeffs;
        for k in 0..3 {
            assert!((mixed[k] - (a * ca[k] + b * cb[k])).abs() < 1e-6);
        }
    }

    #[test]
    fn bad_options() {
        let kind = LossKind::LogLoss;
        assert!(matches!(
            taylor_coeffs(
                &kind,
                1.0,
                &TaylorOptions {
                    n_points: 5,
                    ..opts()
                }
            ),
            Err(Error::DegenerateFit(_))
        ));
        assert!(taylor_coeffs(
            &kind,
            1.0,
            &TaylorOptions {
                window: 1.5,
                ..opts()
            }
        )
        .is_err());
        assert!(taylor_coeffs(&kind, 0.0, &opts()).is_err());
    }

    #[test]
    fn exact_square_solve() {
        let t = [1.0, 2.0, 3.0];
        let v = [-0.5, 0.25, 4.0];
        let rows = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let dot = |r: &Vec<f64>, w: &[f64]| r.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        let obs = MetricObservations {
            watch_metric: rows.iter().map(|r| dot(r, &t)).collect(),
            conversion_metric: rows.iter().map(|r| dot(r, &v)).collect(),
            coeff_matrix: rows,
        };
        let sol = solve_projection(&obs).unwrap();
        assert_coeffs(&sol.t_vector, &t, 1e-10);
        assert_coeffs(&sol.v_vector, &v, 1e-10);
    }

    #[test]
    fn overdetermined_consistent_solve() {
        let t = [0.3, -1.2, 2.5];
        let v = [1.0, 1.0, -1.0];
        let obs = plant_observations(&t, &v, 6, 0.0, 3).unwrap();
        let sol = solve_projection(&obs).unwrap();
        assert_coeffs(&sol.t_vector, &t, 1e-10);
        assert_coeffs(&sol.v_vector, &v, 1e-10);
        assert!(sol.watch_residuals.iter().all(|r| r.abs() < 1e-10));
    }

    #[test]
    fn noisy_recovery_within_standard_errors() {
        let t = [1.0, 2.0, 3.0];
        let v = [0.5, -0.5, 0.0];
        let obs = plant_observations(&t, &v, 50, 0.01, 11).unwrap();
        let sol = solve_projection(&obs).unwrap();
        for k in 0..3 {
            assert!((sol.t_vector[k] - t[k]).abs() < 3.0 * sol.t_stderr[k]);
            assert!((sol.v_vector[k] - v[k]).abs() < 3.0 * sol.v_stderr[k]);
        }
    }

    #[test]
    fn repeated_column_is_rank_deficient() {
        let obs = MetricObservations {
            coeff_matrix: vec![
                vec![1.0, 1.0, 0.0],
                vec![2.0, 2.0, 1.0],
                vec![3.0, 3.0, 5.0],
                vec![0.5, 0.5, 1.0],
            ],
            watch_metric: vec![1.0, 2.0, 3.0, 4.0],
            conversion_metric: vec![0.0; 4],
        };
        assert!(matches!(solve_projection(&obs), Err(Error::RankDeficient)));
    }

    #[test]
    fn compose_single_member() {
        let member = vec![0.0, 2.0, 2.0];
        let comp = compose_loss(&member, &[member.clone(), vec![1.0, 0.5, 1.0 / 3.0]]).unwrap();
        assert!((comp.cosine - 1.0).abs() < 1e-12);
        assert!(comp.weights[1].abs() < 1e-10);
        assert!(comp.weights[0] > 0.0);
    }

    #[test]
    fn compose_in_span() {
        let a = vec![1.0, 0.5, 1.0 / 3.0];
        let b = vec![0.0, 4.0, -4.0];
        let target: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
        let comp = compose_loss(&target, &[a, b]).unwrap();
        assert!((comp.cosine - 1.0).abs() < 1e-12);
        assert!((comp.weights[0] / comp.weights[1] + 4.0).abs() < 1e-9);
    }

    #[test]
    fn compose_orthogonal_target() {
        let a = [1.0, 0.5, 1.0 / 3.0];
        let b = [0.0, 2.0, 2.0];
        // Gram-Schmidt a third direction against the span of a and b
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
        let mut q1 = a.to_vec();
        let n1 = dot(&q1, &q1).sqrt();
        q1.iter_mut().for_each(|x| *x /= n1);
        let mut q2: Vec<f64> = b
            .iter()
            .zip(&q1)
            .map(|(x, q)| x - dot(&b, &q1) * q)
            .collect();
        let n2 = dot(&q2, &q2).sqrt();
        q2.iter_mut().for_each(|x| *x /= n2);
        let e = [0.3, -0.7, 1.1];
        let target: Vec<f64> = (0..3)
            .map(|i| e[i] - dot(&e, &q1) * q1[i] - dot(&e, &q2) * q2[i])
            .collect();
        let comp = compose_loss(&target, &[a.to_vec(), b.to_vec()]).unwrap();
        assert!(comp.cosine < 1.0);
        assert!(comp.cosine.abs() < 1e-9);
    }

    #[test]
    fn compose_degenerate_library() {
        assert!(compose_loss(&[1.0, 0.0, 0.0], &[vec![0.0; 3]]).is_err());
        assert!(compose_loss(&[1.0, 0.0, 0.0], &[]).is_err());
    }

    #[test]
    fn observation_parsing() {
        let path = Path::new("obs.csv");
        let obs = parse_observations(
            "c1,c2,c3,watch,conversion\n1,0,0,1,2\n# note\n0,1,0,3,4\n",
            path,
        )
        .unwrap();
        assert_eq!(obs.len(), 2);
        assert_eq!(obs.watch_metric, vec![1.0, 3.0]);
        match parse_observations("1,0,0,1,2\n0,1,x,3,4\n", path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse_observations("1,0,0,1,2\n0,1,3,4\n", path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_observations("", path),
            Err(Error::EmptySample)
        ));
    }
}
