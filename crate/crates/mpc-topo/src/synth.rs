//! Synthetic PDAP generation from a declarative 2D scene.
//!
//! Point reflectors contribute elliptic-paraboloid lobes in dB; a wall
//! contributes a ridge along the forward-model curve with linear power decay
//! along the wall and a paraboloid transversal falloff. Node power is the
//! maximum over contributions and the noise floor (so every node has exactly
//! one ground-truth source), plus optional Gaussian dB jitter.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::DelayAngle;
use crate::pdap::Pdap;
use crate::scatterer::{delay_angle_of_point, forward_model, WallParams};

/// Ground-truth label grid for a generated PDAP. Label 0 is noise; point
/// reflectors take 1..=n in spec order; the wall, when present, takes n+1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub labels: Vec<Vec<u32>>,
    pub sources: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointReflector {
    /// Delay-angle position of the lobe peak. Either give (tau0_ns,
    /// phi0_deg) directly, or a world position resolved against tx/rx.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau0_ns: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi0_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_m: Option<(f64, f64)>,
    pub peak_db: f64,
    pub sigma_tau_ns: f64,
    pub sigma_phi_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallSceneSpec {
    pub d_los_m: f64,
    pub d_perp_m: f64,
    pub theta_deg: f64,
    pub x_span_m: (f64, f64),
    /// Ridge power at the start of the span.
    pub peak_db: f64,
    pub decay_db_per_m: f64,
    pub ridge_sigma_tau_ns: f64,
    pub ridge_sigma_phi_deg: f64,
}

impl WallSceneSpec {
    pub fn params(&self) -> WallParams {
        WallParams {
            d_los_m: self.d_los_m,
            d_perp_m: self.d_perp_m,
            theta_deg: self.theta_deg,
            x_range_m: self.x_span_m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub delay_start_ns: f64,
    pub delay_stop_ns: f64,
    pub delay_step_ns: f64,
    pub angle_start_deg: f64,
    pub angle_stop_deg: f64,
    pub angle_step_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// World Tx/Rx positions (annotation; also the frame for reflector
    /// positions given in meters).
    pub tx_m: (f64, f64),
    pub rx_m: (f64, f64),
    #[serde(default)]
    pub point_reflectors: Vec<PointReflector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall: Option<WallSceneSpec>,
    pub noise_floor_db: f64,
    pub noise_sigma_db: f64,
    pub grid: GridSpec,
    pub seed: u64,
}

impl SceneSpec {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let scene: SceneSpec = serde_json::from_str(&text).map_err(|e| {
            Error::parse(
                &path.display().to_string(),
                format!("line {}, column {}", e.line(), e.column()),
                e.to_string(),
            )
        })?;
        scene.validate()?;
        Ok(scene)
    }

    fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.delay_step_ns <= 0.0 || g.angle_step_deg <= 0.0 {
            return Err(Error::Validation("grid steps must be positive".into()));
        }
        if g.delay_stop_ns <= g.delay_start_ns || g.angle_stop_deg <= g.angle_start_deg {
            return Err(Error::Validation("grid ranges must be non-empty".into()));
        }
        for (k, p) in self.point_reflectors.iter().enumerate() {
            if p.sigma_tau_ns <= 0.0 || p.sigma_phi_deg <= 0.0 {
                return Err(Error::Validation(format!("reflector {k}: sigmas must be positive")));
            }
            let by_delay_angle = p.tau0_ns.is_some() && p.phi0_deg.is_some();
            if by_delay_angle == p.position_m.is_some() {
                return Err(Error::Validation(format!(
                    "reflector {k}: give either tau0_ns+phi0_deg or position_m"
                )));
            }
        }
        if let Some(w) = &self.wall {
            if w.ridge_sigma_tau_ns <= 0.0 || w.ridge_sigma_phi_deg <= 0.0 {
                return Err(Error::Validation("wall ridge sigmas must be positive".into()));
            }
            if w.d_los_m <= 0.0 || w.d_perp_m <= 0.0 {
                return Err(Error::Validation("wall distances must be positive".into()));
            }
            let lo = -0.2 * w.d_los_m;
            let hi = 1.2 * w.d_los_m;
            if w.x_span_m.0 >= w.x_span_m.1 || w.x_span_m.0 < lo || w.x_span_m.1 > hi {
                return Err(Error::Validation(format!(
                    "wall x span {:?} outside the searchable range [{lo:.3}, {hi:.3}]",
                    w.x_span_m
                )));
            }
        }
        Ok(())
    }

    fn delay_axis(&self) -> Vec<f64> {
        uniform_axis(self.grid.delay_start_ns, self.grid.delay_stop_ns, self.grid.delay_step_ns)
    }

    fn angle_axis(&self) -> Vec<f64> {
        uniform_axis(self.grid.angle_start_deg, self.grid.angle_stop_deg, self.grid.angle_step_deg)
    }
}

fn uniform_axis(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step).round() as usize + 1;
    (0..n).map(|k| start + k as f64 * step).collect()
}

/// Number of stations used to rasterize the wall ridge curve.
const WALL_CURVE_STATIONS: usize = 2000;

/// Renders the scene to a PDAP plus per-node ground-truth labels.
pub fn generate_pdap(scene: &SceneSpec) -> Result<(Pdap, GroundTruth)> {
    scene.validate()?;
    let delay_axis = scene.delay_axis();
    let angle_axis = scene.angle_axis();

    // Resolve every point reflector to a delay-angle peak.
    let d_los = {
        let dx = scene.rx_m.0 - scene.tx_m.0;
        let dy = scene.rx_m.1 - scene.tx_m.1;
        (dx * dx + dy * dy).sqrt()
    };
    let mut peaks: Vec<(DelayAngle, &PointReflector)> = Vec::new();
    for p in &scene.point_reflectors {
        let at = match (p.tau0_ns, p.phi0_deg, p.position_m) {
            (Some(t), Some(a), None) => DelayAngle::new(t, a),
            (_, _, Some(pos)) => {
                if d_los <= 0.0 {
                    return Err(Error::Validation(
                        "position_m reflectors need distinct tx/rx".into(),
                    ));
                }
                // World -> Tx frame with +x along Tx->Rx.
                let ux = ((scene.rx_m.0 - scene.tx_m.0) / d_los, (scene.rx_m.1 - scene.tx_m.1) / d_los);
                let rel = (pos.0 - scene.tx_m.0, pos.1 - scene.tx_m.1);
                let local_x = rel.0 * ux.0 + rel.1 * ux.1;
                let local_y = -rel.0 * ux.1 + rel.1 * ux.0;
                delay_angle_of_point(d_los, local_x, local_y)
            }
            _ => unreachable!("validated"),
        };
        peaks.push((at, p));
    }

    // Rasterize the wall ridge once.
    let wall_curve: Option<(Vec<(DelayAngle, f64)>, &WallSceneSpec)> = scene.wall.as_ref().map(|w| {
        let params = w.params();
        let pts = (0..WALL_CURVE_STATIONS)
            .map(|k| {
                let x = w.x_span_m.0
                    + (w.x_span_m.1 - w.x_span_m.0) * k as f64 / (WALL_CURVE_STATIONS - 1) as f64;
                let base = w.peak_db - w.decay_db_per_m * (x - w.x_span_m.0);
                (forward_model(&params, x), base)
            })
            .collect();
        (pts, w)
    });

    let n_points = peaks.len() as u32;
    let wall_label = n_points + 1;

    let mut power = vec![vec![0.0f64; angle_axis.len()]; delay_axis.len()];
    let mut labels = vec![vec![0u32; angle_axis.len()]; delay_axis.len()];
    for (i, &tau) in delay_axis.iter().enumerate() {
        for (j, &phi) in angle_axis.iter().enumerate() {
            let mut best = scene.noise_floor_db;
            let mut label = 0u32;
            for (k, (at, p)) in peaks.iter().enumerate() {
                let dt = (tau - at.tau_ns) / p.sigma_tau_ns;
                let dp = (phi - at.phi_deg) / p.sigma_phi_deg;
                let v = p.peak_db - 0.5 * (dt * dt + dp * dp);
                if v > best {
                    best = v;
                    label = k as u32 + 1;
                }
            }
            if let Some((curve, w)) = &wall_curve {
                let mut v_best = f64::NEG_INFINITY;
                for (at, base) in curve {
                    let dt = (tau - at.tau_ns) / w.ridge_sigma_tau_ns;
                    // Cheap rejection: the transversal term alone already
                    // exceeds any achievable improvement.
                    if dt.abs() > 12.0 {
                        continue;
                    }
                    let dp = (phi - at.phi_deg) / w.ridge_sigma_phi_deg;
                    let v = base - 0.5 * (dt * dt + dp * dp);
                    if v > v_best {
                        v_best = v;
                    }
                }
                if v_best > best {
                    best = v_best;
                    label = wall_label;
                }
            }
            power[i][j] = best;
            labels[i][j] = label;
        }
    }

    if scene.noise_sigma_db > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
        let normal = Normal::new(0.0, scene.noise_sigma_db)
            .map_err(|e| Error::Validation(format!("noise sigma: {e}")))?;
        for row in &mut power {
            for v in row {
                *v += normal.sample(&mut rng);
            }
        }
    }

    let mut sources = vec!["noise".to_string()];
    for k in 0..n_points {
        sources.push(format!("point_{}", k + 1));
    }
    if scene.wall.is_some() {
        sources.push("wall".to_string());
    }

    let mut meta = serde_json::Map::new();
    meta.insert("generator".into(), serde_json::json!("synth"));
    meta.insert("seed".into(), serde_json::json!(scene.seed));
    let pdap = Pdap::new(delay_axis, angle_axis, power, meta)?;
    Ok((pdap, GroundTruth { labels, sources }))
}

/// The five-source demo scene used throughout the docs and tests: a strong
/// LoS lobe, a wide-spread wall ridge, and three weaker point reflectors.
/// The saddle between the two closest point lobes sits mid-window so that
/// density-based baselines see their cluster count change with the
/// threshold while the contour pipeline does not.
pub fn demo_scene(seed: u64) -> SceneSpec {
    SceneSpec {
        tx_m: (0.0, 0.0),
        rx_m: (10.3329, 0.0),
        point_reflectors: vec![
            // LoS lobe.
            PointReflector {
                tau0_ns: Some(34.5),
                phi0_deg: Some(110.0),
                position_m: None,
                peak_db: -60.0,
                sigma_tau_ns: 2.5,
                sigma_phi_deg: 5.0,
            },
            // The lamp: close enough to the LoS lobe that their saddle
            // crosses the sweep window.
            PointReflector {
                tau0_ns: Some(62.0),
                phi0_deg: Some(100.0),
                position_m: None,
                peak_db: -72.0,
                sigma_tau_ns: 2.2,
                sigma_phi_deg: 4.5,
            },
            // Back reflection from the wall.
            PointReflector {
                tau0_ns: Some(55.0),
                phi0_deg: Some(165.0),
                position_m: None,
                peak_db: -69.0,
                sigma_tau_ns: 2.5,
                sigma_phi_deg: 5.0,
            },
            // Traffic sign.
            PointReflector {
                tau0_ns: Some(80.0),
                phi0_deg: Some(135.0),
                position_m: None,
                peak_db: -74.0,
                sigma_tau_ns: 2.8,
                sigma_phi_deg: 5.5,
            },
        ],
        wall: Some(WallSceneSpec {
            d_los_m: 10.3329,
            d_perp_m: 4.3406,
            theta_deg: 9.8698,
            x_span_m: (0.5, 8.0),
            peak_db: -66.0,
            decay_db_per_m: 0.9,
            ridge_sigma_tau_ns: 1.6,
            ridge_sigma_phi_deg: 3.5,
        }),
        noise_floor_db: -95.0,
        noise_sigma_db: 0.2,
        grid: GridSpec {
            delay_start_ns: 25.0,
            delay_stop_ns: 95.0,
            delay_step_ns: 0.7,
            angle_start_deg: 85.0,
            angle_stop_deg: 190.0,
            angle_step_deg: 1.0,
        },
        seed,
    }
}

/// Deterministic small fields used by unit tests across the crate.
#[doc(hidden)]
pub mod test_support {
    use super::*;

    /// Smooth deterministic multi-bump field, no RNG.
    pub fn wavy_pdap(n_delay: usize, n_angle: usize, phase: u64) -> Pdap {
        let ph = phase as f64 * 0.7;
        let delay: Vec<f64> = (0..n_delay).map(|i| 10.0 + i as f64 * 0.5).collect();
        let angle: Vec<f64> = (0..n_angle).map(|j| 90.0 + j as f64 * 1.5).collect();
        let power = (0..n_delay)
            .map(|i| {
                (0..n_angle)
                    .map(|j| {
                        let x = i as f64;
                        let y = j as f64;
                        -100.0
                            + 12.0 * ((0.21 * x + ph).sin() * (0.17 * y - ph).cos())
                            + 6.0 * ((0.09 * (x + y) + 0.5 * ph).sin())
                    })
                    .collect()
            })
            .collect();
        Pdap::new(delay, angle, power, serde_json::Map::new()).unwrap()
    }

    /// Single paraboloid peak centered mid-grid on a flat floor.
    pub fn paraboloid_pdap(
        n_delay: usize,
        n_angle: usize,
        peak_db: f64,
        floor_db: f64,
    ) -> Pdap {
        let delay: Vec<f64> = (0..n_delay).map(|i| i as f64).collect();
        let angle: Vec<f64> = (0..n_angle).map(|j| 90.0 + j as f64).collect();
        let c = ((n_delay - 1) as f64 / 2.0, (n_angle - 1) as f64 / 2.0);
        let sigma = (n_delay as f64 / 6.0, n_angle as f64 / 6.0);
        let power = (0..n_delay)
            .map(|i| {
                (0..n_angle)
                    .map(|j| {
                        let dt = (i as f64 - c.0) / sigma.0;
                        let dp = (j as f64 - c.1) / sigma.1;
                        (peak_db - 0.5 * (dt * dt + dp * dp)).max(floor_db)
                    })
                    .collect()
            })
            .collect();
        Pdap::new(delay, angle, power, serde_json::Map::new()).unwrap()
    }

    /// Two paraboloid peaks with a controlled saddle between them.
    pub fn two_peak_pdap(peak_db: (f64, f64), floor_db: f64) -> Pdap {
        let n_delay = 61;
        let n_angle = 51;
        let delay: Vec<f64> = (0..n_delay).map(|i| i as f64).collect();
        let angle: Vec<f64> = (0..n_angle).map(|j| 90.0 + j as f64).collect();
        let centers = [(15.0, 25.0), (45.0, 25.0)];
        let sigma = 6.0;
        let power = (0..n_delay)
            .map(|i| {
                (0..n_angle)
                    .map(|j| {
                        let mut best = floor_db;
                        for (k, c) in centers.iter().enumerate() {
                            let dt = (i as f64 - c.0) / sigma;
                            let dp = (j as f64 - c.1) / sigma;
                            let peak = if k == 0 { peak_db.0 } else { peak_db.1 };
                            let v = peak - 0.5 * (dt * dt + dp * dp);
                            best = best.max(v);
                        }
                        best
                    })
                    .collect()
            })
            .collect();
        Pdap::new(delay, angle, power, serde_json::Map::new()).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_reflector_scene() -> SceneSpec {
        SceneSpec {
            tx_m: (0.0, 0.0),
            rx_m: (10.0, 0.0),
            point_reflectors: vec![PointReflector {
                tau0_ns: Some(30.0),
                phi0_deg: Some(150.0),
                position_m: None,
                peak_db: -60.0,
                sigma_tau_ns: 3.0,
                sigma_phi_deg: 6.0,
            }],
            wall: None,
            noise_floor_db: -95.0,
            noise_sigma_db: 0.0,
            grid: GridSpec {
                delay_start_ns: 10.0,
                delay_stop_ns: 50.0,
                delay_step_ns: 0.5,
                angle_start_deg: 100.0,
                angle_stop_deg: 200.0,
                angle_step_deg: 1.0,
            },
            seed: 1,
        }
    }

    #[test]
    fn single_reflector_peak_at_its_node() {
        let (p, gt) = generate_pdap(&one_reflector_scene()).unwrap();
        let mut best = (f64::NEG_INFINITY, (0usize, 0usize));
        for i in 0..p.n_delay() {
            for j in 0..p.n_angle() {
                if p.power_db[i][j] > best.0 {
                    best = (p.power_db[i][j], (i, j));
                }
            }
        }
        let (i, j) = best.1;
        assert_eq!(p.delay_ns[i], 30.0);
        assert_eq!(p.angle_deg[j], 150.0);
        assert_eq!(best.0, -60.0);
        assert_eq!(gt.labels[i][j], 1);
        assert_eq!(gt.sources, vec!["noise", "point_1"]);
    }

    #[test]
    fn noiseless_denoise_recovers_supra_floor_support() {
        let scene = one_reflector_scene();
        let (p, gt) = generate_pdap(&scene).unwrap();
        let samples = p.denoise(scene.noise_floor_db + 1e-9);
        for s in &samples {
            let (i, j) = s.grid_index;
            assert_ne!(gt.labels[i][j], 0, "sample at floor labeled noise");
        }
        let n_above = gt
            .labels
            .iter()
            .flatten()
            .filter(|&&l| l != 0)
            .count();
        assert_eq!(samples.len(), n_above);
    }

    #[test]
    fn wall_ridge_follows_forward_model() {
        let mut scene = one_reflector_scene();
        scene.point_reflectors.clear();
        scene.grid = GridSpec {
            delay_start_ns: 35.0,
            delay_stop_ns: 60.0,
            delay_step_ns: 0.25,
            angle_start_deg: 100.0,
            angle_stop_deg: 160.0,
            angle_step_deg: 0.5,
        };
        scene.wall = Some(WallSceneSpec {
            d_los_m: 10.3329,
            d_perp_m: 4.3406,
            theta_deg: 9.8698,
            x_span_m: (0.5, 8.0),
            peak_db: -66.0,
            decay_db_per_m: 0.9,
            ridge_sigma_tau_ns: 1.5,
            ridge_sigma_phi_deg: 3.0,
        });
        let (p, gt) = generate_pdap(&scene).unwrap();
        let wall = scene.wall.as_ref().unwrap();
        let params = wall.params();
        // Along the ridge, the strongest angle bin at each delay must track
        // the forward-model curve within half a grid step.
        for k in 0..40 {
            let x = 1.0 + 6.0 * k as f64 / 39.0;
            let at = forward_model(&params, x);
            let i = ((at.tau_ns - scene.grid.delay_start_ns) / scene.grid.delay_step_ns).round()
                as usize;
            let mut best = (f64::NEG_INFINITY, 0usize);
            for j in 0..p.n_angle() {
                if p.power_db[i][j] > best.0 {
                    best = (p.power_db[i][j], j);
                }
            }
            let phi = p.angle_deg[best.1];
            assert!(
                (phi - at.phi_deg).abs() <= scene.grid.angle_step_deg,
                "ridge off curve at x={x}: {phi} vs {}",
                at.phi_deg
            );
            assert_eq!(gt.labels[i][best.1], 1, "ridge node not labeled wall");
        }
        assert_eq!(gt.sources, vec!["noise", "wall"]);
    }

    #[test]
    fn position_reflector_resolves_via_geometry() {
        let mut scene = one_reflector_scene();
        let d_los = 10.0;
        // A point 4 m above the Tx-Rx midpoint.
        scene.point_reflectors = vec![PointReflector {
            tau0_ns: None,
            phi0_deg: None,
            position_m: Some((5.0, 4.0)),
            peak_db: -62.0,
            sigma_tau_ns: 2.0,
            sigma_phi_deg: 4.0,
        }];
        let expect = delay_angle_of_point(d_los, 5.0, 4.0);
        scene.grid = GridSpec {
            delay_start_ns: expect.tau_ns - 10.0,
            delay_stop_ns: expect.tau_ns + 10.0,
            delay_step_ns: 0.25,
            angle_start_deg: expect.phi_deg - 15.0,
            angle_stop_deg: expect.phi_deg + 15.0,
            angle_step_deg: 0.5,
        };
        let (p, _) = generate_pdap(&scene).unwrap();
        let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
        for i in 0..p.n_delay() {
            for j in 0..p.n_angle() {
                if p.power_db[i][j] > best.0 {
                    best = (p.power_db[i][j], i, j);
                }
            }
        }
        assert!((p.delay_ns[best.1] - expect.tau_ns).abs() <= 0.25);
        assert!((p.angle_deg[best.2] - expect.phi_deg).abs() <= 0.5);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let mut scene = one_reflector_scene();
        scene.noise_sigma_db = 0.5;
        scene.seed = 99;
        let (a, _) = generate_pdap(&scene).unwrap();
        let (b, _) = generate_pdap(&scene).unwrap();
        assert_eq!(a, b);
        scene.seed = 100;
        let (c, _) = generate_pdap(&scene).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn scene_validation_rejects_bad_specs() {
        let mut scene = one_reflector_scene();
        scene.point_reflectors[0].tau0_ns = None;
        assert!(generate_pdap(&scene).is_err());

        let mut scene = one_reflector_scene();
        scene.grid.delay_step_ns = 0.0;
        assert!(generate_pdap(&scene).is_err());

        let mut scene = one_reflector_scene();
        scene.wall = Some(WallSceneSpec {
            d_los_m: 10.0,
            d_perp_m: 4.0,
            theta_deg: 0.0,
            x_span_m: (0.0, 20.0), // beyond 1.2 * d_los
            peak_db: -66.0,
            decay_db_per_m: 1.0,
            ridge_sigma_tau_ns: 1.0,
            ridge_sigma_phi_deg: 2.0,
        });
        assert!(generate_pdap(&scene).is_err());
    }

    #[test]
    fn demo_scene_generates_five_sources() {
        let (p, gt) = generate_pdap(&demo_scene(7)).unwrap();
        assert_eq!(gt.sources.len(), 6); // noise + 4 points + wall
        let mut seen = std::collections::BTreeSet::new();
        for row in &gt.labels {
            seen.extend(row.iter().copied());
        }
        assert_eq!(seen, (0..=5).collect());
        assert!(p.n_delay() > 50 && p.n_angle() > 50);
    }
}
