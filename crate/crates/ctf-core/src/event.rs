//! Synthetic event generation with ground truth.
//!
//! Particles are sampled as helices from a configurable distribution over a
//! five-dimensional parameter cuboid, intersected with every detector layer,
//! smeared with Gaussian noise in on-surface coordinates and thinned by a
//! per-layer detection efficiency. Ground truth (particle parameters and the
//! hit-to-particle map) is recorded so reconstruction output can be matched
//! back against it.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::geometry::{intersect_layer, DetectorGeometry, HelixParams, LayerIntersection};

/// Inclusive lower / upper bounds of the particle-parameter cuboid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub d0: (f64, f64),
    pub z0: (f64, f64),
    pub phi0: (f64, f64),
    pub cot_theta: (f64, f64),
    pub kappa: (f64, f64),
}

impl ParamBounds {
    /// Bounds under which every sampled helix comfortably traverses the
    /// default six-layer geometry (outer radius 6, half length 20).
    pub fn standard() -> Self {
        Self {
            d0: (-0.1, 0.1),
            z0: (-1.0, 1.0),
            phi0: (-std::f64::consts::PI, std::f64::consts::PI),
            cot_theta: (-1.0, 1.0),
            kappa: (-0.15, 0.15),
        }
    }

    fn valid(&self) -> bool {
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        ok(self.d0) && ok(self.z0) && ok(self.phi0) && ok(self.cot_theta) && ok(self.kappa)
    }
}

/// How particle parameters are drawn from the cuboid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DistributionSpec {
    /// Independent uniform draws per coordinate (strictly positive density).
    Uniform,
    /// Uniform draws, but azimuths are spread evenly around the detector
    /// with a small jitter, producing benign well-separated events.
    SpreadPhi { jitter: f64 },
}

/// Event-generation configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n: usize,
    pub param_bounds: ParamBounds,
    pub distribution: DistributionSpec,
    /// Measurement noise standard deviations in the on-surface (u, v)
    /// coordinates.
    pub hit_sigma: [f64; 2],
    /// Per-layer detection probability.
    pub efficiency: f64,
    pub rng_seed: u64,
    /// Worst-case mode: all particles share one transverse circle (midpoint
    /// d0/phi0/kappa) and differ only longitudinally, so that every inner
    /// triplet looks like a plausible seed.
    pub adversarial: bool,
}

impl GeneratorConfig {
    pub fn standard(n: usize, rng_seed: u64) -> Self {
        Self {
            n,
            param_bounds: ParamBounds::standard(),
            distribution: DistributionSpec::Uniform,
            hit_sigma: [0.01, 0.01],
            efficiency: 1.0,
            rng_seed,
            adversarial: false,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.param_bounds.valid() {
            return Err(ConfigError::Invalid("parameter bounds malformed".into()));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "efficiency {} outside (0, 1]",
                self.efficiency
            )));
        }
        if self.hit_sigma.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(ConfigError::Invalid("hit_sigma must be finite and >= 0".into()));
        }
        if let DistributionSpec::SpreadPhi { jitter } = self.distribution {
            if !(jitter >= 0.0) {
                return Err(ConfigError::Invalid("phi jitter must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Ground truth: the sampled particles and, per layer, the particle id of
/// every surviving hit (parallel to `EventRecord::layers`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTruth {
    pub particles: Vec<HelixParams>,
    pub hit_particle: Vec<Vec<usize>>,
}

/// All hits of one detector readout, indexed per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    /// `layers[l][j]` is the 3D point of hit `j` on layer `l`.
    pub layers: Vec<Vec<[f64; 3]>>,
    pub truth: Option<EventTruth>,
}

impl EventRecord {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Largest per-layer hit count (the occupancy the algorithms see).
    pub fn max_hits(&self) -> usize {
        self.layers.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn hit(&self, layer: usize, j: usize) -> &[f64; 3] {
        &self.layers[layer][j]
    }
}

fn sample_particle(
    cfg: &GeneratorConfig,
    index: usize,
    rng: &mut ChaCha8Rng,
) -> HelixParams {
    let b = &cfg.param_bounds;
    let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
        if lo == hi {
            lo
        } else {
            rng.gen_range(lo..hi)
        }
    };
    let mid = |(lo, hi): (f64, f64)| 0.5 * (lo + hi);
    let mut d0 = draw(rng, b.d0);
    let mut phi0 = draw(rng, b.phi0);
    let mut kappa = draw(rng, b.kappa);
    let z0 = draw(rng, b.z0);
    let cot_theta = draw(rng, b.cot_theta);
    if cfg.adversarial {
        d0 = mid(b.d0);
        phi0 = mid(b.phi0);
        kappa = mid(b.kappa);
    } else if let DistributionSpec::SpreadPhi { jitter } = cfg.distribution {
        let two_pi = 2.0 * std::f64::consts::PI;
        let base = two_pi * (index as f64 + 0.5) / cfg.n.max(1) as f64 - std::f64::consts::PI;
        phi0 = base + rng.gen_range(-1.0..1.0) * jitter;
        if phi0 > std::f64::consts::PI {
            phi0 -= two_pi;
        } else if phi0 < -std::f64::consts::PI {
            phi0 += two_pi;
        }
    }
    HelixParams::new(d0, z0, phi0, cot_theta, kappa)
}

fn traverses_all_layers(
    h: &HelixParams,
    geometry: &DetectorGeometry,
) -> Option<Vec<[f64; 3]>> {
    let mut pts = Vec::with_capacity(geometry.num_layers());
    for l in 0..geometry.num_layers() {
        match intersect_layer(h, l, geometry) {
            LayerIntersection::Point { point, .. } => {
                if point[2].abs() > geometry.half_length {
                    return None;
                }
                pts.push(point);
            }
            LayerIntersection::Missed => return None,
        }
    }
    Some(pts)
}

/// Generate one event. Deterministic given `cfg.rng_seed`; ground truth is
/// recorded before the efficiency dropout is applied.
pub fn generate_event(
    cfg: &GeneratorConfig,
    geometry: &DetectorGeometry,
) -> Result<EventRecord, ConfigError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let noise_u = Normal::new(0.0, cfg.hit_sigma[0]).map_err(|e| {
        ConfigError::Invalid(format!("bad u noise: {e}"))
    })?;
    let noise_v = Normal::new(0.0, cfg.hit_sigma[1]).map_err(|e| {
        ConfigError::Invalid(format!("bad v noise: {e}"))
    })?;

    // Rejection-sample particles whose trajectory crosses every layer inside
    // the instrumented length; the conditional density stays strictly
    // positive on the accepted sub-region.
    let mut particles: Vec<HelixParams> = Vec::with_capacity(cfg.n);
    let mut truth_points: Vec<Vec<[f64; 3]>> = Vec::with_capacity(cfg.n);
    let max_attempts = 10_000usize.saturating_mul(cfg.n.max(1));
    let mut attempts = 0;
    while particles.len() < cfg.n {
        attempts += 1;
        if attempts > max_attempts {
            return Err(ConfigError::Invalid(
                "parameter bounds reject nearly all trajectories".into(),
            ));
        }
        let h = sample_particle(cfg, particles.len(), &mut rng);
        if let Some(pts) = traverses_all_layers(&h, geometry) {
            particles.push(h);
            truth_points.push(pts);
        }
    }

    let num_layers = geometry.num_layers();
    let mut layers: Vec<Vec<[f64; 3]>> = vec![Vec::new(); num_layers];
    let mut hit_particle: Vec<Vec<usize>> = vec![Vec::new(); num_layers];
    for (pid, pts) in truth_points.iter().enumerate() {
        for (l, p) in pts.iter().enumerate() {
            // Smear in surface coordinates, then drop with 1 - efficiency.
            let r = geometry.radius(l);
            let (u, v) = crate::geometry::surface_coords(p, r);
            let u = u + noise_u.sample(&mut rng);
            let v = v + noise_v.sample(&mut rng);
            let keep = cfg.efficiency >= 1.0 || rng.gen_bool(cfg.efficiency);
            if keep {
                let phi = u / r;
                layers[l].push([r * phi.cos(), r * phi.sin(), v]);
                hit_particle[l].push(pid);
            }
        }
    }

    // Shuffle hit order so algorithms cannot exploit generation order.
    for l in 0..num_layers {
        let mut order: Vec<usize> = (0..layers[l].len()).collect();
        order.shuffle(&mut rng);
        layers[l] = order.iter().map(|&i| layers[l][i]).collect();
        hit_particle[l] = order.iter().map(|&i| hit_particle[l][i]).collect();
    }

    Ok(EventRecord {
        layers,
        truth: Some(EventTruth {
            particles,
            hit_particle,
        }),
    })
}

/// Exact count of hits of one layer inside the half-open patch
/// `[phi_range.0, phi_range.1) x [z_range.0, z_range.1)`.
pub fn hits_in_patch(
    event: &EventRecord,
    layer: usize,
    phi_range: (f64, f64),
    z_range: (f64, f64),
) -> usize {
    event.layers[layer]
        .iter()
        .filter(|p| {
            let phi = p[1].atan2(p[0]);
            phi >= phi_range.0 && phi < phi_range.1 && p[2] >= z_range.0 && p[2] < z_range.1
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> DetectorGeometry {
        DetectorGeometry::uniform(6, 1.0, 1.0, 20.0)
    }

    #[test]
    fn noiseless_single_particle_hits_truth_intersections() {
        let g = geom();
        let mut cfg = GeneratorConfig::standard(1, 42);
        cfg.hit_sigma = [0.0, 0.0];
        let ev = generate_event(&cfg, &g).unwrap();
        let truth = ev.truth.as_ref().unwrap();
        assert_eq!(truth.particles.len(), 1);
        for l in 0..g.num_layers() {
            assert_eq!(ev.layers[l].len(), 1);
            match intersect_layer(&truth.particles[0], l, &g) {
                LayerIntersection::Point { point, .. } => {
                    for k in 0..3 {
                        assert!((ev.layers[l][0][k] - point[k]).abs() <= 1e-9);
                    }
                }
                LayerIntersection::Missed => panic!("truth particle must cross layer {l}"),
            }
        }
    }

    #[test]
    fn efficiency_dropout_is_binomial() {
        let g = geom();
        let mut cfg = GeneratorConfig::standard(1000, 7);
        cfg.efficiency = 0.5;
        let ev = generate_event(&cfg, &g).unwrap();
        // 4-sigma binomial window around n * eff.
        let sigma = (1000.0f64 * 0.5 * 0.5).sqrt();
        for l in 0..g.num_layers() {
            let count = ev.layers[l].len() as f64;
            assert!(
                (count - 500.0).abs() <= 4.0 * sigma,
                "layer {l} count {count}"
            );
        }
    }

    #[test]
    fn same_seed_reproduces_event() {
        let g = geom();
        let cfg = GeneratorConfig::standard(50, 123);
        let a = generate_event(&cfg, &g).unwrap();
        let b = generate_event(&cfg, &g).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn truth_map_is_consistent() {
        let g = geom();
        let mut cfg = GeneratorConfig::standard(100, 5);
        cfg.efficiency = 0.8;
        let ev = generate_event(&cfg, &g).unwrap();
        let truth = ev.truth.as_ref().unwrap();
        assert_eq!(truth.particles.len(), 100);
        for l in 0..g.num_layers() {
            assert_eq!(ev.layers[l].len(), truth.hit_particle[l].len());
            for &pid in &truth.hit_particle[l] {
                assert!(pid < 100);
            }
        }
    }

    #[test]
    fn patch_counts_trivial_cases() {
        let g = geom();
        let cfg = GeneratorConfig::standard(200, 11);
        let ev = generate_event(&cfg, &g).unwrap();
        let pi = std::f64::consts::PI;
        let full = hits_in_patch(&ev, 2, (-pi - 1e-9, pi + 1e-9), (-100.0, 100.0));
        assert_eq!(full, ev.layers[2].len());
        assert_eq!(hits_in_patch(&ev, 2, (0.3, 0.3), (-100.0, 100.0)), 0);
    }

    #[test]
    fn patch_density_scales_linearly() {
        // Fixed patch; mean count over trials must scale ~ n (log-log slope
        // within [0.85, 1.15]).
        let g = geom();
        let ns = [256usize, 512, 1024, 2048, 4096];
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (i, &n) in ns.iter().enumerate() {
            let mut total = 0.0;
            let trials = 4;
            for t in 0..trials {
                let cfg = GeneratorConfig::standard(n, 900 + (i * trials + t) as u64);
                let ev = generate_event(&cfg, &g).unwrap();
                total += hits_in_patch(&ev, 3, (0.2, 1.2), (-2.0, 2.0)) as f64;
            }
            xs.push((n as f64).ln());
            ys.push((total / trials as f64).ln());
        }
        let xm = xs.iter().sum::<f64>() / xs.len() as f64;
        let ym = ys.iter().sum::<f64>() / ys.len() as f64;
        let slope = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - xm) * (y - ym))
            .sum::<f64>()
            / xs.iter().map(|x| (x - xm) * (x - xm)).sum::<f64>();
        assert!(
            (0.85..=1.15).contains(&slope),
            "patch density slope {slope}"
        );
    }

    #[test]
    fn adversarial_mode_shares_transverse_circle() {
        let g = geom();
        let mut cfg = GeneratorConfig::standard(20, 3);
        cfg.adversarial = true;
        cfg.hit_sigma = [0.0, 0.0];
        let ev = generate_event(&cfg, &g).unwrap();
        let truth = ev.truth.as_ref().unwrap();
        let first = &truth.particles[0];
        for p in &truth.particles {
            assert_eq!(p.d0, first.d0);
            assert_eq!(p.phi0, first.phi0);
            assert_eq!(p.kappa, first.kappa);
        }
        // Hence all layer-l hits coincide transversally but differ in z.
        let l0 = &ev.layers[0];
        assert_eq!(l0.len(), 20);
        for h in l0 {
            assert!((h[0] - l0[0][0]).abs() <= 1e-9);
            assert!((h[1] - l0[0][1]).abs() <= 1e-9);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let g = geom();
        let mut cfg = GeneratorConfig::standard(1, 0);
        cfg.efficiency = 0.0;
        assert!(generate_event(&cfg, &g).is_err());
        let mut cfg = GeneratorConfig::standard(1, 0);
        cfg.param_bounds.kappa = (0.5, 0.1);
        assert!(generate_event(&cfg, &g).is_err());
        // Bounds that never reach the outer layer must fail loudly, not hang.
        let mut cfg = GeneratorConfig::standard(1, 0);
        cfg.param_bounds.kappa = (2.0, 2.1);
        assert!(generate_event(&cfg, &g).is_err());
    }
}
