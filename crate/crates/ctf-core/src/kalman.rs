//! Kalman filter, smoother and triplet seed fit on the helix track model.
//!
//! The state vector at a layer is `(u, v, psi, cot_theta, kappa)`:
//! on-surface coordinates `u = r*phi`, `v = z`, the transverse direction
//! angle `psi`, the longitudinal slope and the signed curvature. With this
//! parameterization the measurement matrix H simply selects the first two
//! components, while the process matrix F is the Jacobian of exact helix
//! propagation between neighbouring layers.

use nalgebra::{Matrix2, Matrix2x5, Matrix5, Vector2, Vector5};
use serde::{Deserialize, Serialize};

use crate::error::KalmanError;
use crate::geometry::{arc_step, wrap_u, DetectorGeometry, HelixParams};

pub type StateVector = Vector5<f64>;
pub type Covariance5 = Matrix5<f64>;

/// Maximum allowed condition number of a residual covariance before the
/// filter refuses to invert it.
pub const MAX_RESIDUAL_CONDITION: f64 = 1e12;

/// A 2D measurement on a layer surface: `(u, v) = (r*phi, z)` plus its
/// noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMeasurement {
    pub layer: usize,
    pub u: f64,
    pub v: f64,
    pub noise: Matrix2<f64>,
}

impl SurfaceMeasurement {
    pub fn new(layer: usize, u: f64, v: f64, noise: Matrix2<f64>) -> Self {
        Self { layer, u, v, noise }
    }

    pub fn vector(&self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }
}

/// Prediction of a track state onto the next layer.
#[derive(Debug, Clone)]
pub struct KalmanStep {
    pub layer: usize,
    pub radius: f64,
    pub predicted_state: StateVector,
    pub predicted_cov: Covariance5,
    pub predicted_meas: Vector2<f64>,
    pub residual_cov: Matrix2<f64>,
    pub meas_cov: Matrix2<f64>,
}

/// Noise model and seed-covariance configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanConfig {
    /// Process-noise strength q; Q = q^2 * diag(scale).
    pub process_noise_q: f64,
    pub process_noise_scale: [f64; 5],
    /// Measurement noise standard deviations in (u, v).
    pub sigma_u: f64,
    pub sigma_v: f64,
    /// Inflation factor applied to the triplet-fit-derived seed covariance.
    pub seed_cov_scale: f64,
    /// Explicit override of the initial seed covariance diagonal.
    pub seed_cov_diag: Option<[f64; 5]>,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            process_noise_q: 1e-4,
            process_noise_scale: [1.0; 5],
            sigma_u: 0.01,
            sigma_v: 0.01,
            seed_cov_scale: 25.0,
            seed_cov_diag: None,
        }
    }
}

impl KalmanConfig {
    pub fn meas_cov(&self) -> Matrix2<f64> {
        Matrix2::new(self.sigma_u * self.sigma_u, 0.0, 0.0, self.sigma_v * self.sigma_v)
    }

    pub fn process_noise(&self) -> Matrix5<f64> {
        let q2 = self.process_noise_q * self.process_noise_q;
        Matrix5::from_diagonal(&Vector5::from_iterator(
            self.process_noise_scale.iter().map(|s| q2 * s),
        ))
    }

    /// Initial seed covariance. The default is the measurement noise
    /// propagated through the triplet fit at lever arm `lever`.
    pub fn seed_cov(&self, lever: f64) -> Covariance5 {
        if let Some(d) = self.seed_cov_diag {
            return Matrix5::from_diagonal(&Vector5::from_iterator(d.iter().copied()));
        }
        let l = lever.max(1e-6);
        let su = self.sigma_u;
        let sv = self.sigma_v;
        let diag = [
            su * su,
            sv * sv,
            (4.0 * su / l).powi(2),
            (4.0 * sv / l).powi(2),
            (8.0 * su / (l * l)).powi(2),
        ];
        Matrix5::from_diagonal(&Vector5::from_iterator(
            diag.iter().map(|d| d * self.seed_cov_scale),
        ))
    }
}

fn measurement_matrix() -> Matrix2x5<f64> {
    let mut h = Matrix2x5::zeros();
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    h
}

/// Invert a symmetric 2x2 matrix, refusing ill-conditioned inputs.
fn inv_2x2_checked(m: &Matrix2<f64>) -> Result<Matrix2<f64>, KalmanError> {
    let tr = m[(0, 0)] + m[(1, 1)];
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
    let lmax = 0.5 * (tr + disc);
    let lmin = 0.5 * (tr - disc);
    if !(lmin > 0.0) || lmax / lmin > MAX_RESIDUAL_CONDITION || !lmax.is_finite() {
        return Err(KalmanError::SingularResidualCov);
    }
    Ok(Matrix2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det)
}

fn symmetrize(m: &mut Matrix5<f64>) {
    let t = m.transpose();
    *m = (*m + t) * 0.5;
}

/// Exact propagation of a state between two layer radii, with the analytic
/// Jacobian of the map.
pub struct Propagation {
    pub state: StateVector,
    pub jacobian: Matrix5<f64>,
    pub path_length: f64,
}

/// Propagate a state from `r_from` to `r_to` (both cylinder radii),
/// returning the new state and the 5x5 Jacobian.
pub fn propagate_between_radii(
    state: &StateVector,
    r_from: f64,
    r_to: f64,
) -> Result<Propagation, KalmanError> {
    let (u, v, psi, cot, kappa) = (state[0], state[1], state[2], state[3], state[4]);
    if !state.iter().all(|x| x.is_finite()) {
        return Err(KalmanError::NonFinite);
    }
    let phi0 = u / r_from;
    let x0 = r_from * phi0.cos();
    let y0 = r_from * phi0.sin();
    let s = crate::geometry::circle_crossing(x0, y0, psi, kappa, r_to)
        .ok_or(KalmanError::Missed(usize::MAX))?;
    let (dx, dy) = arc_step(psi, kappa, s);
    let x1 = x0 + dx;
    let y1 = y0 + dy;
    let psi1 = psi + kappa * s;

    // Implicit-function derivative of the crossing arc length:
    // g(s, theta) = x1^2 + y1^2 - r_to^2 = 0.
    let g_s = 2.0 * (x1 * psi1.cos() + y1 * psi1.sin());
    if g_s.abs() < 1e-9 * r_to {
        // Grazing incidence; the crossing is not transversal.
        return Err(KalmanError::NonFinite);
    }

    // Explicit partials of (x1, y1) w.r.t. (u, psi, kappa).
    let p_u = (-y0 / r_from, x0 / r_from);
    let p_psi = (-dy, dx);
    let p_kappa = if (kappa * s).abs() > 1e-5 {
        ((s * psi1.cos() - dx) / kappa, (s * psi1.sin() - dy) / kappa)
    } else {
        (
            -s * s / 2.0 * psi.sin() - kappa * s * s * s / 3.0 * psi.cos(),
            s * s / 2.0 * psi.cos() - kappa * s * s * s / 3.0 * psi.sin(),
        )
    };

    let ds = |p: (f64, f64)| -2.0 * (x1 * p.0 + y1 * p.1) / g_s;
    let ds_u = ds(p_u);
    let ds_psi = ds(p_psi);
    let ds_kappa = ds(p_kappa);

    let total = |p: (f64, f64), dsd: f64| (p.0 + psi1.cos() * dsd, p.1 + psi1.sin() * dsd);
    let (dx_u, dy_u) = total(p_u, ds_u);
    let (dx_psi, dy_psi) = total(p_psi, ds_psi);
    let (dx_kappa, dy_kappa) = total(p_kappa, ds_kappa);

    // u' = r_to * atan2(y1, x1).
    let du = |dxt: f64, dyt: f64| (x1 * dyt - y1 * dxt) / r_to;

    let mut f = Matrix5::identity();
    f[(0, 0)] = du(dx_u, dy_u);
    f[(0, 2)] = du(dx_psi, dy_psi);
    f[(0, 4)] = du(dx_kappa, dy_kappa);
    f[(1, 0)] = cot * ds_u;
    f[(1, 2)] = cot * ds_psi;
    f[(1, 3)] = s;
    f[(1, 4)] = cot * ds_kappa;
    f[(2, 0)] = kappa * ds_u;
    f[(2, 2)] = 1.0 + kappa * ds_psi;
    f[(2, 4)] = s + kappa * ds_kappa;

    let u1 = r_to * y1.atan2(x1);
    let out = Vector5::new(u1, v + cot * s, psi1, cot, kappa);
    if !out.iter().all(|x| x.is_finite()) || !f.iter().all(|x| x.is_finite()) {
        return Err(KalmanError::NonFinite);
    }
    Ok(Propagation {
        state: out,
        jacobian: f,
        path_length: s,
    })
}

/// Assemble a prediction step from an already-propagated state. Split out so
/// tests can inject a custom propagator (e.g. the identity).
pub fn kf_predict_step(
    predicted_state: StateVector,
    jacobian: &Matrix5<f64>,
    cov: &Covariance5,
    process_noise: &Matrix5<f64>,
    meas_cov: &Matrix2<f64>,
    layer: usize,
    radius: f64,
) -> KalmanStep {
    let mut predicted_cov = jacobian * cov * jacobian.transpose() + process_noise;
    symmetrize(&mut predicted_cov);
    let h = measurement_matrix();
    let predicted_meas = h * predicted_state;
    let residual_cov = meas_cov + h * predicted_cov * h.transpose();
    KalmanStep {
        layer,
        radius,
        predicted_state,
        predicted_cov,
        predicted_meas,
        residual_cov,
        meas_cov: *meas_cov,
    }
}

/// Predict a filtered state from `from_layer` onto the adjacent `to_layer`.
pub fn kf_predict(
    state: &StateVector,
    cov: &Covariance5,
    from_layer: usize,
    to_layer: usize,
    geometry: &DetectorGeometry,
    cfg: &KalmanConfig,
) -> Result<KalmanStep, KalmanError> {
    debug_assert_eq!(to_layer, from_layer + 1, "layers must be adjacent");
    let prop = propagate_between_radii(state, geometry.radius(from_layer), geometry.radius(to_layer))
        .map_err(|e| match e {
            KalmanError::Missed(_) => KalmanError::Missed(to_layer),
            other => other,
        })?;
    Ok(kf_predict_step(
        prop.state,
        &prop.jacobian,
        cov,
        &cfg.process_noise(),
        &cfg.meas_cov(),
        to_layer,
        geometry.radius(to_layer),
    ))
}

/// Residual of a measurement against the prediction, with the azimuthal
/// coordinate wrapped onto the cylinder period.
pub fn residual(step: &KalmanStep, m: &SurfaceMeasurement) -> Vector2<f64> {
    Vector2::new(
        wrap_u(m.u - step.predicted_meas[0], step.radius),
        m.v - step.predicted_meas[1],
    )
}

/// Predicted chi-square of attaching measurement `m` to the track.
pub fn predicted_chi2(step: &KalmanStep, m: &SurfaceMeasurement) -> Result<f64, KalmanError> {
    debug_assert_eq!(m.layer, step.layer);
    let r = residual(step, m);
    let rinv = inv_2x2_checked(&step.residual_cov)?;
    Ok((r.transpose() * rinv * r)[(0, 0)])
}

/// Kalman measurement update. Returns the filtered state, covariance and the
/// filtered chi-square value.
pub fn kf_filter(
    step: &KalmanStep,
    m: &SurfaceMeasurement,
) -> Result<(StateVector, Covariance5, f64), KalmanError> {
    let h = measurement_matrix();
    let r = residual(step, m);
    let rinv = inv_2x2_checked(&step.residual_cov)?;
    let gain = step.predicted_cov * h.transpose() * rinv;
    let filtered_state = step.predicted_state + gain * r;
    let mut filtered_cov = (Matrix5::identity() - gain * h) * step.predicted_cov;
    symmetrize(&mut filtered_cov);
    let r_filt = Vector2::new(
        wrap_u(m.u - filtered_state[0], step.radius),
        m.v - filtered_state[1],
    );
    // Filtered residual covariance V - H C_f H^T, evaluated in the
    // cancellation-free equivalent form V R^-1 V, whose inverse is
    // V^-1 R V^-1.
    let res_cov = m.noise + h * step.predicted_cov * h.transpose();
    let noise_inv = inv_2x2_checked(&m.noise)?;
    let filt_inv = noise_inv * res_cov * noise_inv;
    let chi2 = (r_filt.transpose() * filt_inv * r_filt)[(0, 0)];
    if !filtered_state.iter().all(|x| x.is_finite()) {
        return Err(KalmanError::NonFinite);
    }
    Ok((filtered_state, filtered_cov, chi2))
}

/// Total chi-square of a track: the sum of its per-layer values.
pub fn total_chi2(track_chis: &[f64]) -> f64 {
    track_chis.iter().sum()
}

/// Quality score `q_l = l - m_ghost - omega * chi2_total`.
pub fn quality_score(layer: usize, m_ghost: usize, chi2_total: f64, omega: f64) -> f64 {
    debug_assert!(m_ghost <= layer + 1);
    layer as f64 - m_ghost as f64 - omega * chi2_total
}

/// Result of the three-point seed fit.
#[derive(Debug, Clone)]
pub struct SeedFit {
    /// State vector at layer 2.
    pub state: StateVector,
    /// Initial covariance.
    pub cov: Covariance5,
    /// Equivalent perigee parameters, used for seed cuts.
    pub helix: HelixParams,
    /// Chi-square of the longitudinal line fit (the transverse circle fit is
    /// exact).
    pub chi2_fit: f64,
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut x = a % two_pi;
    if x > std::f64::consts::PI {
        x -= two_pi;
    } else if x <= -std::f64::consts::PI {
        x += two_pi;
    }
    x
}

/// Fit the unique sub-full-turn helix through three hits on layers 0, 1, 2:
/// exact circle through the transverse projections plus a least-squares line
/// in (arc length, z). Collinear transverse projections fall back to the
/// straight-line (kappa = 0) limit.
pub fn seed_fit(
    hits: &[[f64; 3]; 3],
    geometry: &DetectorGeometry,
    cfg: &KalmanConfig,
) -> Result<SeedFit, KalmanError> {
    let [a, b, c] = hits;
    let (ax, ay) = (a[0], a[1]);
    let (bx, by) = (b[0], b[1]);
    let (cx, cy) = (c[0], c[1]);
    let ab = (bx - ax, by - ay);
    let bc = (cx - bx, cy - by);
    let cross = ab.0 * bc.1 - ab.1 * bc.0;
    let scale = ab.0.hypot(ab.1) * bc.0.hypot(bc.1);
    if scale == 0.0 {
        return Err(KalmanError::NonFinite);
    }

    let (kappa, psi2, t): (f64, f64, [f64; 3]);
    let helix_transverse: (f64, f64); // (d0, phi0)
    let t_a_from_pca: f64;

    if cross.abs() <= 1e-12 * scale {
        // Straight-line limit.
        kappa = 0.0;
        let dx = cx - ax;
        let dy = cy - ay;
        let norm = dx.hypot(dy);
        let dir = (dx / norm, dy / norm);
        psi2 = dir.1.atan2(dir.0);
        let proj = |p: (f64, f64)| (p.0 - ax) * dir.0 + (p.1 - ay) * dir.1;
        t = [0.0, proj((bx, by)), proj((cx, cy))];
        let t_pca = -(ax * dir.0 + ay * dir.1);
        let px = ax + t_pca * dir.0;
        let py = ay + t_pca * dir.1;
        let d0 = dir.0 * py - dir.1 * px;
        helix_transverse = (d0, psi2);
        t_a_from_pca = -t_pca;
    } else {
        // Circumcircle through the three transverse points.
        let d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by));
        let aa = ax * ax + ay * ay;
        let bb = bx * bx + by * by;
        let cc = cx * cx + cy * cy;
        let xc = (aa * (by - cy) + bb * (cy - ay) + cc * (ay - by)) / d;
        let yc = (aa * (cx - bx) + bb * (ax - cx) + cc * (bx - ax)) / d;
        let rho = (ax - xc).hypot(ay - yc);
        let sign = cross.signum();
        kappa = sign / rho;
        let beta = |x: f64, y: f64| (y - yc).atan2(x - xc);
        let psi_of = |x: f64, y: f64| beta(x, y) + sign * std::f64::consts::FRAC_PI_2;
        let psi_a = psi_of(ax, ay);
        let psi_b = psi_of(bx, by);
        psi2 = psi_of(cx, cy);
        // Arc lengths in the sense of rotation.
        let arc = |from: f64, to: f64| {
            let two_pi = 2.0 * std::f64::consts::PI;
            let mut dpsi = (to - from) % two_pi;
            if sign > 0.0 && dpsi < 0.0 {
                dpsi += two_pi;
            } else if sign < 0.0 && dpsi > 0.0 {
                dpsi -= two_pi;
            }
            dpsi / kappa
        };
        let s01 = arc(psi_a, psi_b);
        let s12 = arc(psi_b, psi2);
        t = [0.0, s01, s01 + s12];
        // Perigee parameters from the circle.
        let dc = xc.hypot(yc);
        if dc < 1e-12 * rho {
            return Err(KalmanError::NonFinite);
        }
        let chat = (sign * xc / dc, sign * yc / dc);
        let d0 = sign * dc - 1.0 / kappa;
        let phi0 = (-chat.0).atan2(chat.1);
        helix_transverse = (d0, phi0);
        t_a_from_pca = wrap_angle(psi_a - phi0) / kappa;
    }

    // Least-squares line z(t) over the three points.
    let z = [a[2], b[2], c[2]];
    let t_bar = (t[0] + t[1] + t[2]) / 3.0;
    let z_bar = (z[0] + z[1] + z[2]) / 3.0;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..3 {
        num += (t[i] - t_bar) * (z[i] - z_bar);
        den += (t[i] - t_bar) * (t[i] - t_bar);
    }
    if den <= 0.0 {
        return Err(KalmanError::NonFinite);
    }
    let cot = num / den;
    let z_at = |ti: f64| z_bar + cot * (ti - t_bar);
    let sv2 = (cfg.sigma_v * cfg.sigma_v).max(1e-300);
    let chi2_fit: f64 = (0..3).map(|i| (z[i] - z_at(t[i])).powi(2) / sv2).sum();

    let r2 = geometry.radius(2);
    let u2 = r2 * c[1].atan2(c[0]);
    let state = Vector5::new(u2, z_at(t[2]), wrap_angle(psi2), cot, kappa);
    let (d0, phi0) = helix_transverse;
    let z0 = z_at(0.0) - cot * t_a_from_pca;
    let helix = HelixParams::new(d0, z0, phi0, cot, kappa);
    if !state.iter().all(|x| x.is_finite()) || !helix.is_finite() {
        return Err(KalmanError::NonFinite);
    }
    let lever = geometry.radius(2) - geometry.radius(0);
    Ok(SeedFit {
        state,
        cov: cfg.seed_cov(lever),
        helix,
        chi2_fit,
    })
}

/// One stored layer of a forward filter pass.
#[derive(Debug, Clone)]
pub struct ForwardStep {
    pub layer: usize,
    pub radius: f64,
    /// Propagation Jacobian from the previous stored layer (identity for the
    /// seed layer).
    pub jacobian: Matrix5<f64>,
    pub predicted_state: StateVector,
    pub predicted_cov: Covariance5,
    pub filtered_state: StateVector,
    pub filtered_cov: Covariance5,
    pub measurement: Option<SurfaceMeasurement>,
    pub chi2: f64,
}

/// Replay a forward filter pass over a fixed hit assignment, starting from a
/// seed state at layer 2. `hit_seq` lists layers 3..L with `None` for ghosts.
pub fn run_forward(
    seed_state: &StateVector,
    seed_cov: &Covariance5,
    hit_seq: &[(usize, Option<SurfaceMeasurement>)],
    geometry: &DetectorGeometry,
    cfg: &KalmanConfig,
) -> Result<Vec<ForwardStep>, KalmanError> {
    let mut steps = vec![ForwardStep {
        layer: 2,
        radius: geometry.radius(2),
        jacobian: Matrix5::identity(),
        predicted_state: *seed_state,
        predicted_cov: *seed_cov,
        filtered_state: *seed_state,
        filtered_cov: *seed_cov,
        measurement: None,
        chi2: 0.0,
    }];
    let mut state = *seed_state;
    let mut cov = *seed_cov;
    let mut prev_layer = 2;
    for (layer, meas) in hit_seq {
        let prop = propagate_between_radii(
            &state,
            geometry.radius(prev_layer),
            geometry.radius(*layer),
        )?;
        let step = kf_predict_step(
            prop.state,
            &prop.jacobian,
            &cov,
            &cfg.process_noise(),
            &cfg.meas_cov(),
            *layer,
            geometry.radius(*layer),
        );
        let (fstate, fcov, chi2) = match meas {
            Some(m) => kf_filter(&step, m)?,
            None => (step.predicted_state, step.predicted_cov, 0.0),
        };
        steps.push(ForwardStep {
            layer: *layer,
            radius: geometry.radius(*layer),
            jacobian: prop.jacobian,
            predicted_state: step.predicted_state,
            predicted_cov: step.predicted_cov,
            filtered_state: fstate,
            filtered_cov: fcov,
            measurement: meas.clone(),
            chi2,
        });
        state = fstate;
        cov = fcov;
        prev_layer = *layer;
    }
    Ok(steps)
}

/// Output of the Rauch-Tung-Striebel backward pass.
#[derive(Debug, Clone)]
pub struct SmoothedTrack {
    /// Per-layer smoothed states and covariances, inner to outer.
    pub states: Vec<(usize, StateVector, Covariance5)>,
    /// Total smoothed chi-square over layers with real measurements.
    pub chi2_total: f64,
}

/// Rauch-Tung-Striebel smoother over a stored forward pass.
pub fn rts_smooth(steps: &[ForwardStep]) -> Result<SmoothedTrack, KalmanError> {
    assert!(!steps.is_empty());
    let last = steps.len() - 1;
    let mut smoothed: Vec<(usize, StateVector, Covariance5)> = vec![Default::default(); steps.len()];
    smoothed[last] = (
        steps[last].layer,
        steps[last].filtered_state,
        steps[last].filtered_cov,
    );
    for i in (0..last).rev() {
        let next = &steps[i + 1];
        let pred_inv = next
            .predicted_cov
            .try_inverse()
            .ok_or(KalmanError::SingularResidualCov)?;
        let gain = steps[i].filtered_cov * next.jacobian.transpose() * pred_inv;
        let (_, s_next, c_next) = smoothed[i + 1];
        let mut innovation = s_next - next.predicted_state;
        // The azimuthal coordinate lives on a cylinder; wrap the update onto
        // the principal branch so tracks near phi = +/-pi are not torn apart.
        innovation[0] = wrap_u(innovation[0], next.radius);
        let state = steps[i].filtered_state + gain * innovation;
        let mut cov = steps[i].filtered_cov + gain * (c_next - next.predicted_cov) * gain.transpose();
        symmetrize(&mut cov);
        if !state.iter().all(|x| x.is_finite()) {
            return Err(KalmanError::NonFinite);
        }
        smoothed[i] = (steps[i].layer, state, cov);
    }

    let h = measurement_matrix();
    let mut chi2_total = 0.0;
    for (i, step) in steps.iter().enumerate() {
        if let Some(m) = &step.measurement {
            let (_, s, c) = &smoothed[i];
            let r = Vector2::new(wrap_u(m.u - s[0], step.radius), m.v - s[1]);
            let res_cov = m.noise - h * *c * h.transpose();
            let inv = inv_2x2_checked(&res_cov)?;
            chi2_total += (r.transpose() * inv * r)[(0, 0)];
        }
    }
    Ok(SmoothedTrack {
        states: smoothed,
        chi2_total,
    })
}
