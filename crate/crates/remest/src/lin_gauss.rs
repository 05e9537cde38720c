//! Linear-Gaussian plant simulation, local Kalman filtering, and
//! steady-state Riccati solving.
//!
//! All types are immutable values after construction; operations are pure
//! functions of their inputs plus an explicit random source.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative eigenvalue cutoff below which PSD eigenvalues count as zero.
pub const RANK_CUTOFF: f64 = 1e-10;
/// Relative singular-value cutoff for the observability rank test.
const OBSERVABILITY_CUTOFF: f64 = 1e-8;

/// Symmetrize as (P + P')/2 to suppress floating-point drift.
pub(crate) fn symmetrize(p: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (p + p.transpose())
}

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Eigenvalues of a symmetric matrix, descending.
pub(crate) fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = symmetrize(m).symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ev
}

/// Numerical rank of a symmetric PSD matrix under the relative cutoff rule.
pub fn psd_rank(m: &DMatrix<f64>) -> usize {
    let ev = sym_eigenvalues(m);
    let lambda_max = ev.first().copied().unwrap_or(0.0).max(0.0);
    if lambda_max == 0.0 {
        return 0;
    }
    ev.iter().filter(|&&l| l > RANK_CUTOFF * lambda_max).count()
}

/// Draw one zero-mean Gaussian vector with the given PSD covariance.
pub(crate) fn sample_gaussian<R: Rng + ?Sized>(
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let factor = psd_sqrt(cov)?;
    let z = DVector::from_fn(factor.ncols(), |_, _| StandardNormal.sample(rng));
    Ok(factor * z)
}

/// Factor L with L L' = M for symmetric PSD M (eigenvalue square root).
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = symmetrize(m).symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v));
    let mut scaled = eig.eigenvectors.clone();
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        if l < -RANK_CUTOFF * lambda_max.max(1e-300) {
            return Err(Error::validation(format!(
                "matrix is not positive semidefinite (eigenvalue {l:.3e})"
            )));
        }
        let s = l.max(0.0).sqrt();
        for i in 0..scaled.nrows() {
            scaled[(i, j)] *= s;
        }
    }
    Ok(scaled)
}

fn require_symmetric(m: &DMatrix<f64>, name: &str) -> Result<()> {
    let asym = max_abs(&(m - m.transpose()));
    let scale = max_abs(m).max(1.0);
    if asym > 1e-9 * scale {
        return Err(Error::validation(format!("{name} must be symmetric")));
    }
    Ok(())
}

fn require_psd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    let ev = sym_eigenvalues(m);
    let lambda_max = ev.first().copied().unwrap_or(0.0).max(0.0);
    if ev.iter().any(|&l| l < -RANK_CUTOFF * lambda_max.max(1e-300)) {
        return Err(Error::validation(format!("{name} must be positive semidefinite")));
    }
    Ok(())
}

fn require_pd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    let ev = sym_eigenvalues(m);
    if ev.last().copied().unwrap_or(0.0) <= 0.0 {
        return Err(Error::validation(format!("{name} must be positive definite")));
    }
    Ok(())
}

fn matrix_from_rows(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::validation(format!("{name} must be non-empty")));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::validation(format!("{name} rows must be non-empty and equal length")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation(format!("{name} entries must be finite")));
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// JSON wire form of [`SystemModel`]: row-major nested arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemModelRaw {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    pub x0_mean: Vec<f64>,
    #[serde(rename = "P0")]
    pub p0: Vec<Vec<f64>>,
}

/// A discrete-time linear time-invariant plant with Gaussian process and
/// measurement noise:
///
/// `x_{k+1} = A x_k + w_k`, `w ~ N(0, Q)`
/// `y_k     = C x_k + v_k`, `v ~ N(0, R)`
/// `x_0 ~ N(x0_mean, P0)`
///
/// Construction validates symmetry/definiteness of Q, R, P0 and
/// observability of (A, C); later operations rely on these invariants.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "SystemModelRaw", into = "SystemModelRaw")]
pub struct SystemModel {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    x0_mean: DVector<f64>,
    p0: DMatrix<f64>,
    // L with L L' = Q (resp. R), cached for noise sampling.
    q_factor: DMatrix<f64>,
    r_factor: DMatrix<f64>,
}

impl SystemModel {
    pub fn new(
        a: DMatrix<f64>,
        c: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        x0_mean: DVector<f64>,
        p0: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::validation("A must be square with n > 0"));
        }
        let m = c.nrows();
        if m == 0 || c.ncols() != n {
            return Err(Error::validation("C must be m x n with m > 0"));
        }
        if q.shape() != (n, n) {
            return Err(Error::validation("Q must be n x n"));
        }
        if r.shape() != (m, m) {
            return Err(Error::validation("R must be m x m"));
        }
        if x0_mean.len() != n {
            return Err(Error::validation("x0_mean must have length n"));
        }
        if p0.shape() != (n, n) {
            return Err(Error::validation("P0 must be n x n"));
        }
        for (mat, name) in [(&a, "A"), (&c, "C"), (&q, "Q"), (&r, "R"), (&p0, "P0")] {
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("{name} entries must be finite")));
            }
        }
        if x0_mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("x0_mean entries must be finite"));
        }
        require_symmetric(&q, "Q")?;
        require_symmetric(&r, "R")?;
        require_symmetric(&p0, "P0")?;
        let q = symmetrize(&q);
        let r = symmetrize(&r);
        let p0 = symmetrize(&p0);
        require_psd(&q, "Q")?;
        require_pd(&r, "R")?;
        require_psd(&p0, "P0")?;

        // Observability: rank [C; CA; ...; CA^{n-1}] = n.
        let mut obs = DMatrix::zeros(m * n, n);
        let mut block = c.clone();
        for i in 0..n {
            obs.view_mut((i * m, 0), (m, n)).copy_from(&block);
            block = &block * &a;
        }
        let sv = obs.svd(false, false).singular_values;
        let s_max = sv.iter().fold(0.0f64, |acc, &s| acc.max(s));
        let rank = sv.iter().filter(|&&s| s > OBSERVABILITY_CUTOFF * s_max).count();
        if rank != n {
            return Err(Error::validation(format!(
                "(A, C) is not observable (observability rank {rank} < {n})"
            )));
        }

        let q_factor = psd_sqrt(&q)?;
        let r_factor = psd_sqrt(&r)?;
        Ok(Self { a, c, q, r, x0_mean, p0, q_factor, r_factor })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("system model serializes")
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn x0_mean(&self) -> &DVector<f64> {
        &self.x0_mean
    }
    pub fn p0(&self) -> &DMatrix<f64> {
        &self.p0
    }
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn meas_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Numerical rank of C (the per-step degrees of freedom of the
    /// normalized innovation).
    pub fn output_rank(&self) -> usize {
        let sv = self.c.clone().svd(false, false).singular_values;
        let s_max = sv.iter().fold(0.0f64, |acc, &s| acc.max(s));
        sv.iter().filter(|&&s| s > OBSERVABILITY_CUTOFF * s_max).count()
    }

    fn sample_noise<R: Rng + ?Sized>(factor: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(factor.ncols(), |_, _| StandardNormal.sample(rng));
        factor * z
    }

    pub(crate) fn sample_process_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        Self::sample_noise(&self.q_factor, rng)
    }

    pub(crate) fn sample_measurement_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        Self::sample_noise(&self.r_factor, rng)
    }

    /// Draw an initial state x0 ~ N(x0_mean, P0).
    pub fn sample_initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let factor = psd_sqrt(&self.p0)?;
        Ok(&self.x0_mean + Self::sample_noise(&factor, rng))
    }
}

impl TryFrom<SystemModelRaw> for SystemModel {
    type Error = Error;

    fn try_from(raw: SystemModelRaw) -> Result<Self> {
        let a = matrix_from_rows(&raw.a, "A")?;
        let c = matrix_from_rows(&raw.c, "C")?;
        let q = matrix_from_rows(&raw.q, "Q")?;
        let r = matrix_from_rows(&raw.r, "R")?;
        let p0 = matrix_from_rows(&raw.p0, "P0")?;
        if raw.x0_mean.is_empty() {
            return Err(Error::validation("x0_mean must be non-empty"));
        }
        let x0 = DVector::from_row_slice(&raw.x0_mean);
        SystemModel::new(a, c, q, r, x0, p0)
    }
}

impl From<SystemModel> for SystemModelRaw {
    fn from(m: SystemModel) -> Self {
        SystemModelRaw {
            a: matrix_to_rows(&m.a),
            c: matrix_to_rows(&m.c),
            q: matrix_to_rows(&m.q),
            r: matrix_to_rows(&m.r),
            x0_mean: m.x0_mean.iter().copied().collect(),
            p0: matrix_to_rows(&m.p0),
        }
    }
}

/// Propagate the plant one step and measure the new state.
///
/// Draws are consumed in a fixed order: the n process-noise normals first,
/// then the m measurement-noise normals.
pub fn simulate_step<R: Rng + ?Sized>(
    x: &DVector<f64>,
    model: &SystemModel,
    rng: &mut R,
) -> (DVector<f64>, DVector<f64>) {
    let w = model.sample_process_noise(rng);
    let x_next = model.a() * x + w;
    let v = model.sample_measurement_noise(rng);
    let y = model.c() * &x_next + v;
    (x_next, y)
}

/// Sensor-side Kalman filter state at time `time`.
///
/// After `kalman_predict` the posterior fields mirror the prior; after
/// `kalman_update` they hold the measurement-corrected quantities.
#[derive(Debug, Clone)]
pub struct LocalFilterState {
    pub x_pred: DVector<f64>,
    pub p_pred: DMatrix<f64>,
    pub x_post: DVector<f64>,
    pub p_post: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub time: usize,
}

impl LocalFilterState {
    /// Filter state at time 0, before any measurement.
    pub fn initial(model: &SystemModel) -> Self {
        let n = model.state_dim();
        let m = model.meas_dim();
        LocalFilterState {
            x_pred: model.x0_mean().clone(),
            p_pred: model.p0().clone(),
            x_post: model.x0_mean().clone(),
            p_post: model.p0().clone(),
            gain: DMatrix::zeros(n, m),
            time: 0,
        }
    }

    /// The estimate innovation z_k = x_post - x_pred (the correction the
    /// filter applied for the measurement at `time`).
    pub fn innovation(&self) -> DVector<f64> {
        &self.x_post - &self.x_pred
    }
}

/// Time update: x_pred = A x_post, P_pred = A P_post A' + Q.
pub fn kalman_predict(state: &LocalFilterState, model: &SystemModel) -> LocalFilterState {
    let x_pred = model.a() * &state.x_post;
    let p_pred = symmetrize(&(model.a() * &state.p_post * model.a().transpose() + model.q()));
    LocalFilterState {
        x_post: x_pred.clone(),
        p_post: p_pred.clone(),
        x_pred,
        p_pred,
        gain: state.gain.clone(),
        time: state.time + 1,
    }
}

/// Measurement update with gain K = P_pred C' (C P_pred C' + R)^{-1}.
pub fn kalman_update(
    state: &LocalFilterState,
    y: &DVector<f64>,
    model: &SystemModel,
) -> Result<LocalFilterState> {
    let s = symmetrize(&(model.c() * &state.p_pred * model.c().transpose() + model.r()));
    let chol = nalgebra::Cholesky::new(s).ok_or(Error::SingularInnovation)?;
    // K = P_pred C' S^{-1} = (S^{-1} C P_pred)' since P_pred is symmetric.
    let gain = chol.solve(&(model.c() * &state.p_pred)).transpose();
    let x_post = &state.x_pred + &gain * (y - model.c() * &state.x_pred);
    let p_post = symmetrize(&(&state.p_pred - &gain * model.c() * &state.p_pred));
    Ok(LocalFilterState {
        x_pred: state.x_pred.clone(),
        p_pred: state.p_pred.clone(),
        x_post,
        p_post,
        gain,
        time: state.time,
    })
}

/// Steady-state filter quantities: the prior fixed point, the matching
/// posterior, and the steady gain.
#[derive(Debug, Clone)]
pub struct SteadyState {
    pub p_hat: DMatrix<f64>,
    pub p_bar: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub residual: f64,
    pub iterations: usize,
}

impl SteadyState {
    /// P_hat - P_bar, the steady covariance of the estimate innovation.
    pub fn innovation_cov(&self) -> DMatrix<f64> {
        symmetrize(&(&self.p_hat - &self.p_bar))
    }
}

fn riccati_map(model: &SystemModel, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = symmetrize(&(model.c() * p * model.c().transpose() + model.r()));
    let chol = nalgebra::Cholesky::new(s).ok_or(Error::SingularInnovation)?;
    let gain = chol.solve(&(model.c() * p)).transpose();
    let p_post = symmetrize(&(p - &gain * model.c() * p));
    Ok(symmetrize(&(model.a() * p_post * model.a().transpose() + model.q())))
}

/// Fixed-point iteration of the measurement-update Riccati map from P = Q.
///
/// Stops when successive iterates differ by less than `tol` in max-abs
/// norm, then verifies the defining residual is below `10 * tol`.
pub fn solve_riccati(model: &SystemModel, tol: f64, max_iter: usize) -> Result<SteadyState> {
    if tol <= 0.0 {
        return Err(Error::validation("solve_riccati: tol must be positive"));
    }
    let mut p = model.q().clone();
    let mut diff = f64::INFINITY;
    for it in 1..=max_iter {
        let next = riccati_map(model, &p)?;
        diff = max_abs(&(&next - &p));
        p = next;
        if diff < tol {
            let residual = max_abs(&(riccati_map(model, &p)? - &p));
            if residual >= 10.0 * tol {
                continue;
            }
            let s = symmetrize(&(model.c() * &p * model.c().transpose() + model.r()));
            let chol = nalgebra::Cholesky::new(s).ok_or(Error::SingularInnovation)?;
            let gain = chol.solve(&(model.c() * &p)).transpose();
            let p_bar = symmetrize(&(&p - &gain * model.c() * &p));
            return Ok(SteadyState { p_hat: p, p_bar, gain, residual, iterations: it });
        }
    }
    Err(Error::NonConvergence { iterations: max_iter, residual: diff })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::tracking_model;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn tiny_r_model(q_scale: f64, r_scale: f64) -> SystemModel {
        SystemModel::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.3]),
            DMatrix::identity(2, 2) * q_scale,
            DMatrix::identity(2, 2) * r_scale,
            DVector::from_row_slice(&[1.0, 1.0]),
            DMatrix::identity(2, 2) * 0.3,
        )
        .unwrap()
    }

    #[test]
    fn noise_free_propagation() {
        let model = tiny_r_model(0.0, 1e-12);
        let mut rng = StdRng::seed_from_u64(1);
        let x = DVector::from_row_slice(&[1.0, 1.0]);
        let (x_next, _y) = simulate_step(&x, &model, &mut rng);
        assert_eq!(x_next, DVector::from_row_slice(&[2.0, 1.0]));
    }

    #[test]
    fn increment_covariance_matches_q() {
        // A = I, Q = I: increments are iid N(0, I).
        let model = SystemModel::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let mut rng = StdRng::seed_from_u64(7);
        let steps = 100_000;
        let mut x = DVector::zeros(2);
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..steps {
            let (x_next, _) = simulate_step(&x, &model, &mut rng);
            let d = &x_next - &x;
            acc += &d * d.transpose();
            x = x_next;
        }
        let cov = acc / steps as f64;
        let n = steps as f64;
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                let sigma = if i == j { (2.0 / n).sqrt() } else { (1.0 / n).sqrt() };
                assert!(
                    (cov[(i, j)] - want).abs() < 3.0 * sigma,
                    "cov[{i}{j}] = {} vs {want}",
                    cov[(i, j)]
                );
            }
        }
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let model = tracking_model();
        let x = DVector::from_row_slice(&[1.0, 1.0]);
        let mut r1 = StdRng::seed_from_u64(99);
        let mut r2 = StdRng::seed_from_u64(99);
        let a = simulate_step(&x, &model, &mut r1);
        let b = simulate_step(&x, &model, &mut r2);
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn draw_order_is_process_noise_then_measurement_noise() {
        // The documented draw order is a reproducibility contract: n
        // standard normals for the process noise, then m for the
        // measurement noise, each in index order.
        use rand_distr::{Distribution, StandardNormal};
        let model = tracking_model();
        let x = DVector::from_row_slice(&[1.0, -2.0]);
        let seed = 4242;
        let (x_next, y) = simulate_step(&x, &model, &mut StdRng::seed_from_u64(seed));

        let mut rng = StdRng::seed_from_u64(seed);
        let zw = DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
        let zv = DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
        // Q = 5 I and R = 2 I have diagonal factors sqrt(5) I, sqrt(2) I.
        let want_x = model.a() * &x + 5.0f64.sqrt() * zw;
        let want_y = model.c() * &want_x + 2.0f64.sqrt() * zv;
        assert!(max_abs(&DMatrix::from_column_slice(2, 1, (&x_next - &want_x).as_slice())) < 1e-12);
        assert!(max_abs(&DMatrix::from_column_slice(2, 1, (&y - &want_y).as_slice())) < 1e-12);
    }

    #[test]
    fn predict_zero_state_gives_q() {
        let model = tracking_model();
        let mut st = LocalFilterState::initial(&model);
        st.x_post = DVector::zeros(2);
        st.p_post = DMatrix::zeros(2, 2);
        let pred = kalman_predict(&st, &model);
        assert_eq!(pred.x_pred, DVector::zeros(2));
        assert!(max_abs(&(&pred.p_pred - model.q())) < 1e-15);
    }

    #[test]
    fn predict_from_initial_covariance() {
        let model = tracking_model();
        let st = LocalFilterState::initial(&model);
        let pred = kalman_predict(&st, &model);
        let want = model.a() * (DMatrix::identity(2, 2) * 0.3) * model.a().transpose()
            + DMatrix::identity(2, 2) * 5.0;
        assert!(max_abs(&(&pred.p_pred - want)) < 1e-14);
    }

    #[test]
    fn prediction_covariance_converges_to_fixed_point() {
        let model = tracking_model();
        let steady = solve_riccati(&model, 1e-13, 10_000).unwrap();
        let mut st = LocalFilterState::initial(&model);
        let mut rng = StdRng::seed_from_u64(3);
        let mut x = model.x0_mean().clone();
        let mut reached = f64::INFINITY;
        for _ in 0..60 {
            let (x_next, y) = simulate_step(&x, &model, &mut rng);
            x = x_next;
            st = kalman_update(&kalman_predict(&st, &model), &y, &model).unwrap();
            reached = max_abs(&(&st.p_pred - &steady.p_hat));
        }
        assert!(reached < 1e-8, "distance to fixed point {reached}");
    }

    #[test]
    fn uninformative_measurement_keeps_prior() {
        let model = tiny_r_model(5.0, 1e12);
        let st = kalman_predict(&LocalFilterState::initial(&model), &model);
        let y = DVector::from_row_slice(&[100.0, -50.0]);
        let post = kalman_update(&st, &y, &model).unwrap();
        assert!((post.x_post - &post.x_pred).norm() < 1e-6);
    }

    #[test]
    fn near_perfect_measurement_returns_y() {
        let model = SystemModel::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2) * 5.0,
            DMatrix::identity(2, 2) * 1e-12,
            DVector::zeros(2),
            DMatrix::identity(2, 2) * 0.3,
        )
        .unwrap();
        let st = kalman_predict(&LocalFilterState::initial(&model), &model);
        let y = DVector::from_row_slice(&[2.5, -1.0]);
        let post = kalman_update(&st, &y, &model).unwrap();
        assert!((post.x_post - y).norm() < 1e-6);
    }

    #[test]
    fn update_reduces_trace_every_step() {
        let model = tracking_model();
        let mut st = LocalFilterState::initial(&model);
        let mut rng = StdRng::seed_from_u64(5);
        let mut x = model.x0_mean().clone();
        for _ in 0..30 {
            let (x_next, y) = simulate_step(&x, &model, &mut rng);
            x = x_next;
            let pred = kalman_predict(&st, &model);
            st = kalman_update(&pred, &y, &model).unwrap();
            assert!(st.p_post.trace() < pred.p_pred.trace());
        }
    }

    #[test]
    fn covariance_difference_rank_matches_output_rank() {
        // Full-rank C.
        let model = tracking_model();
        let mut st = LocalFilterState::initial(&model);
        let mut rng = StdRng::seed_from_u64(11);
        let mut x = model.x0_mean().clone();
        for _ in 0..10 {
            let (x_next, y) = simulate_step(&x, &model, &mut rng);
            x = x_next;
            st = kalman_update(&kalman_predict(&st, &model), &y, &model).unwrap();
            let diff = &st.p_pred - &st.p_post;
            let min_eig = sym_eigenvalues(&diff).last().copied().unwrap();
            let max_eig = sym_eigenvalues(&diff)[0];
            assert!(min_eig >= -RANK_CUTOFF * max_eig);
            assert_eq!(psd_rank(&diff), model.output_rank());
        }

        // Rank-one C.
        let model = SystemModel::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::identity(2, 2) * 5.0,
            DMatrix::identity(1, 1) * 2.0,
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let mut st = LocalFilterState::initial(&model);
        let mut rng = StdRng::seed_from_u64(12);
        let mut x = DVector::zeros(2);
        for _ in 0..5 {
            let (x_next, y) = simulate_step(&x, &model, &mut rng);
            x = x_next;
            st = kalman_update(&kalman_predict(&st, &model), &y, &model).unwrap();
            assert_eq!(psd_rank(&(&st.p_pred - &st.p_post)), 1);
        }
    }

    #[test]
    fn covariances_do_not_depend_on_measurements() {
        let model = tracking_model();
        let run = |seed: u64| {
            let mut st = LocalFilterState::initial(&model);
            let mut rng = StdRng::seed_from_u64(seed);
            let mut x = model.x0_mean().clone();
            let mut covs = Vec::new();
            for _ in 0..20 {
                let (x_next, y) = simulate_step(&x, &model, &mut rng);
                x = x_next;
                st = kalman_update(&kalman_predict(&st, &model), &y, &model).unwrap();
                covs.push((st.p_pred.clone(), st.p_post.clone()));
            }
            covs
        };
        let a = run(100);
        let b = run(200);
        for (pa, pb) in a.iter().zip(b.iter()) {
            assert!(max_abs(&(&pa.0 - &pb.0)) == 0.0);
            assert!(max_abs(&(&pa.1 - &pb.1)) == 0.0);
        }
    }

    #[test]
    fn scalar_riccati_with_zero_dynamics() {
        // A = 0: the fixed point is Q.
        let model = SystemModel::new(
            DMatrix::from_row_slice(1, 1, &[0.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[3.7]),
            DMatrix::from_row_slice(1, 1, &[0.5]),
            DVector::zeros(1),
            DMatrix::from_row_slice(1, 1, &[1.0]),
        )
        .unwrap();
        let steady = solve_riccati(&model, 1e-12, 1000).unwrap();
        assert!((steady.p_hat[(0, 0)] - 3.7).abs() < 1e-10);
    }

    #[test]
    fn riccati_residual_and_posterior_identity() {
        let model = tracking_model();
        let steady = solve_riccati(&model, 1e-12, 100_000).unwrap();
        // Definitional residual of the fixed-point equation.
        let resid = max_abs(&(riccati_map(&model, &steady.p_hat).unwrap() - &steady.p_hat));
        assert!(resid < 1e-8, "residual {resid}");
        // P_bar = P_hat - P_hat C'(C P_hat C' + R)^{-1} C P_hat exactly.
        let s = model.c() * &steady.p_hat * model.c().transpose() + model.r();
        let chol = nalgebra::Cholesky::new(s).unwrap();
        let k = chol.solve(&(model.c() * &steady.p_hat)).transpose();
        let want = symmetrize(&(&steady.p_hat - &k * model.c() * &steady.p_hat));
        assert!(max_abs(&(&steady.p_bar - want)) < 1e-10);
        // P_hat - P_bar is PSD.
        let min_eig = sym_eigenvalues(&steady.innovation_cov()).last().copied().unwrap();
        assert!(min_eig >= -1e-12);
    }

    #[test]
    fn riccati_trace_monotone_from_q() {
        let model = tracking_model();
        let steady = solve_riccati(&model, 1e-12, 100_000).unwrap();
        let mut p = model.q().clone();
        let mut prev_trace = p.trace();
        for _ in 0..200 {
            p = riccati_map(&model, &p).unwrap();
            let t = p.trace();
            assert!(t >= prev_trace - 1e-9, "trace decreased: {prev_trace} -> {t}");
            prev_trace = t;
        }
        assert!((prev_trace - steady.p_hat.trace()).abs() < 1e-8);
    }

    #[test]
    fn riccati_max_iter_errors() {
        let model = tracking_model();
        match solve_riccati(&model, 1e-12, 3) {
            Err(Error::NonConvergence { iterations, .. }) => assert_eq!(iterations, 3),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn filter_is_unbiased_and_consistent() {
        // Mean error within 4 sigma of zero componentwise; error covariance
        // trace within 10% of the filter's reported P.
        let model = tracking_model();
        let runs = 10_000;
        let steps = 20;
        let mut sum_err = DVector::zeros(2);
        let mut sum_sq = DMatrix::zeros(2, 2);
        let mut final_p = DMatrix::zeros(2, 2);
        for run in 0..runs {
            let mut rng = StdRng::seed_from_u64(crate::seeding::run_seed(424_242, run));
            let mut x = model.sample_initial_state(&mut rng).unwrap();
            let mut st = LocalFilterState::initial(&model);
            for _ in 0..steps {
                let (x_next, y) = simulate_step(&x, &model, &mut rng);
                x = x_next;
                st = kalman_update(&kalman_predict(&st, &model), &y, &model).unwrap();
            }
            let err = &x - &st.x_post;
            sum_err += &err;
            sum_sq += &err * err.transpose();
            final_p = st.p_post.clone();
        }
        let n = runs as f64;
        let mean = sum_err / n;
        for i in 0..2 {
            let sigma = (final_p[(i, i)] / n).sqrt();
            assert!(mean[i].abs() < 4.0 * sigma, "mean[{i}] = {} vs 4s = {}", mean[i], 4.0 * sigma);
        }
        let emp_cov = sum_sq / n;
        let rel = (emp_cov.trace() - final_p.trace()).abs() / final_p.trace();
        assert!(rel < 0.10, "trace mismatch {rel}");
    }

    #[test]
    fn json_round_trip_and_validation() {
        let model = tracking_model();
        let text = model.to_json();
        let back = SystemModel::from_json(&text).unwrap();
        assert!(max_abs(&(back.a() - model.a())) == 0.0);
        assert!(max_abs(&(back.q() - model.q())) == 0.0);

        // R not PD is rejected.
        let bad = r#"{"A":[[1.0]],"C":[[1.0]],"Q":[[1.0]],"R":[[0.0]],"x0_mean":[0.0],"P0":[[1.0]]}"#;
        assert!(SystemModel::from_json(bad).is_err());
        // Unobservable pair is rejected.
        let unobs = r#"{"A":[[1.0,0.0],[0.0,1.0]],"C":[[1.0,0.0]],"Q":[[1.0,0.0],[0.0,1.0]],"R":[[1.0]],"x0_mean":[0.0,0.0],"P0":[[1.0,0.0],[0.0,1.0]]}"#;
        assert!(SystemModel::from_json(unobs).is_err());
        // Ragged matrix is rejected.
        let ragged = r#"{"A":[[1.0,0.0],[0.0]],"C":[[1.0,0.0]],"Q":[[1.0,0.0],[0.0,1.0]],"R":[[1.0]],"x0_mean":[0.0,0.0],"P0":[[1.0,0.0],[0.0,1.0]]}"#;
        assert!(SystemModel::from_json(ragged).is_err());
    }
}
