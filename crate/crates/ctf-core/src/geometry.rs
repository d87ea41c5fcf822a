//! Helix geometry on a barrel of cylindrical detector layers.
//!
//! Trajectories are helices aligned with the beam axis (z), described by the
//! perigee five-vector (d0, z0, phi0, cot_theta, kappa). The transverse
//! projection is a circle of radius 1/|kappa|; kappa is signed by the sense
//! of rotation (positive = counter-clockwise). Path length `s` is measured
//! along the transverse arc.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Barrel detector: concentric cylinders around the z axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorGeometry {
    /// Strictly increasing, positive layer radii.
    pub layer_radii: Vec<f64>,
    /// Half-length of the cylinders along z.
    pub half_length: f64,
}

impl DetectorGeometry {
    pub fn new(layer_radii: Vec<f64>, half_length: f64) -> Result<Self, ConfigError> {
        if layer_radii.len() < 4 {
            return Err(ConfigError::Invalid(
                "need at least 4 layers (3 seeding + 1 finding)".into(),
            ));
        }
        let increasing = layer_radii.windows(2).all(|w| w[0] < w[1]);
        if !increasing || layer_radii[0] <= 0.0 {
            return Err(ConfigError::Invalid(
                "layer radii must be positive and strictly increasing".into(),
            ));
        }
        if half_length <= 0.0 {
            return Err(ConfigError::Invalid("half_length must be positive".into()));
        }
        Ok(Self {
            layer_radii,
            half_length,
        })
    }

    /// Uniformly spaced barrel used by tests and default configurations.
    pub fn uniform(layers: usize, first_radius: f64, spacing: f64, half_length: f64) -> Self {
        let radii = (0..layers)
            .map(|l| first_radius + spacing * l as f64)
            .collect();
        Self::new(radii, half_length).expect("uniform geometry is valid")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_radii.len()
    }

    pub fn radius(&self, layer: usize) -> f64 {
        self.layer_radii[layer]
    }
}

/// Perigee parameters of a helix: (d0, z0, phi0, cot_theta, kappa).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HelixParams {
    /// Transverse impact parameter (signed distance of the point of closest
    /// approach from the beam axis).
    pub d0: f64,
    /// z coordinate at the point of closest approach.
    pub z0: f64,
    /// Direction azimuth at the point of closest approach, in (-pi, pi].
    pub phi0: f64,
    /// Slope dz/ds along the transverse arc.
    pub cot_theta: f64,
    /// Signed curvature; 0 is the straight-line limit.
    pub kappa: f64,
}

impl HelixParams {
    pub fn new(d0: f64, z0: f64, phi0: f64, cot_theta: f64, kappa: f64) -> Self {
        Self {
            d0,
            z0,
            phi0,
            cot_theta,
            kappa,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d0.is_finite()
            && self.z0.is_finite()
            && self.phi0.is_finite()
            && self.cot_theta.is_finite()
            && self.kappa.is_finite()
    }

    /// Position of the point of closest approach.
    pub fn pca(&self) -> [f64; 3] {
        [
            -self.d0 * self.phi0.sin(),
            self.d0 * self.phi0.cos(),
            self.z0,
        ]
    }
}

/// sin(x)/x, stable through x = 0.
pub(crate) fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0 + x * x * x * x / 120.0
    } else {
        x.sin() / x
    }
}

/// Transverse displacement after arc length `s` from a point with direction
/// angle `psi` and curvature `kappa`. Smooth through kappa = 0.
pub(crate) fn arc_step(psi: f64, kappa: f64, s: f64) -> (f64, f64) {
    let half = 0.5 * kappa * s;
    let chord = s * sinc(half);
    let mid = psi + half;
    (chord * mid.cos(), chord * mid.sin())
}

/// Point on the helix at transverse arc length `s` from the perigee.
pub fn helix_point(h: &HelixParams, s: f64) -> [f64; 3] {
    let [x0, y0, z0] = h.pca();
    let (dx, dy) = arc_step(h.phi0, h.kappa, s);
    [x0 + dx, y0 + dy, z0 + h.cot_theta * s]
}

/// Result of intersecting a helix with a layer cylinder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerIntersection {
    /// Crossing point and the arc length at which it occurs.
    Point { point: [f64; 3], s: f64 },
    /// The helix never reaches the layer radius within one turn.
    Missed,
}

/// Smallest positive arc length at which the circle starting at (x0, y0)
/// with direction angle `psi` and curvature `kappa` reaches radius
/// `r_target`. Restricted to less than a full turn. `None` means missed.
pub(crate) fn circle_crossing(
    x0: f64,
    y0: f64,
    psi: f64,
    kappa: f64,
    r_target: f64,
) -> Option<f64> {
    let r0_sq = x0 * x0 + y0 * y0;
    let s_min = 1e-12 * (1.0 + r_target);

    let mut candidates: Vec<f64> = Vec::new();
    if kappa.abs() >= 1e-6 {
        // Circle centre; a crossing direction angle psi* satisfies
        // d_center * sin(psi* - alpha) = kappa*(r_t^2 - r0^2)/2 - cross - 1/kappa,
        // with cross = y0 cos(psi) - x0 sin(psi) and alpha the centre azimuth.
        let xc = x0 - psi.sin() / kappa;
        let yc = y0 + psi.cos() / kappa;
        let d_center = xc.hypot(yc);
        if d_center < 1e-12 / kappa.abs() {
            // Trajectory circles the origin at constant radius.
            return None;
        }
        let cross = y0 * psi.cos() - x0 * psi.sin();
        let rhs = (kappa * (r_target * r_target - r0_sq) - 2.0 * cross - 2.0 / kappa)
            / (2.0 * d_center);
        if rhs.abs() > 1.0 + 1e-12 {
            return None;
        }
        let rhs = rhs.clamp(-1.0, 1.0);
        let alpha = yc.atan2(xc);
        let beta = rhs.asin();
        let two_pi = 2.0 * std::f64::consts::PI;
        for psi_star in [alpha + beta, alpha + std::f64::consts::PI - beta] {
            // Bring the turn angle into the sense of rotation, within one turn.
            let mut dpsi = (psi_star - psi) % two_pi;
            if kappa > 0.0 {
                if dpsi <= 0.0 {
                    dpsi += two_pi;
                }
            } else if dpsi >= 0.0 {
                dpsi -= two_pi;
            }
            let s = dpsi / kappa;
            if s > s_min {
                candidates.push(s);
            }
        }
    } else {
        // Straight-line limit as the initial guess.
        let dirx = psi.cos();
        let diry = psi.sin();
        let b = x0 * dirx + y0 * diry;
        let c = r0_sq - r_target * r_target;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        for s in [-b - sq, -b + sq] {
            if s > s_min {
                candidates.push(s);
            }
        }
    }

    let s0 = candidates.iter().cloned().fold(f64::INFINITY, f64::min);
    if !s0.is_finite() {
        return None;
    }

    // Newton polish on the exact (sinc-form) radial equation.
    let mut s = s0;
    for _ in 0..8 {
        let (dx, dy) = arc_step(psi, kappa, s);
        let x = x0 + dx;
        let y = y0 + dy;
        let f = x * x + y * y - r_target * r_target;
        let psi1 = psi + kappa * s;
        let df = 2.0 * (x * psi1.cos() + y * psi1.sin());
        if df.abs() < 1e-300 {
            break;
        }
        let step = f / df;
        s -= step;
        if step.abs() < 1e-14 * (1.0 + s.abs()) {
            break;
        }
    }
    if s > s_min && s.is_finite() {
        Some(s)
    } else {
        None
    }
}

/// First intersection (smallest positive arc length) of a helix with the
/// cylinder of the given layer.
pub fn intersect_layer(
    h: &HelixParams,
    layer: usize,
    geometry: &DetectorGeometry,
) -> LayerIntersection {
    let r = geometry.radius(layer);
    let [x0, y0, _] = h.pca();
    match circle_crossing(x0, y0, h.phi0, h.kappa, r) {
        Some(s) => LayerIntersection::Point {
            point: helix_point(h, s),
            s,
        },
        None => LayerIntersection::Missed,
    }
}

/// Surface coordinates (u, v) = (r*phi, z) of a 3D point on a cylinder of
/// radius `r`.
pub fn surface_coords(point: &[f64; 3], r: f64) -> (f64, f64) {
    (r * point[1].atan2(point[0]), point[2])
}

/// Wrap an azimuthal surface-coordinate difference onto (-pi*r, pi*r].
pub fn wrap_u(du: f64, r: f64) -> f64 {
    let period = 2.0 * std::f64::consts::PI * r;
    let mut d = du % period;
    if d > period / 2.0 {
        d -= period;
    } else if d <= -period / 2.0 {
        d += period;
    }
    d
}
