//! Mechanical analysis: pose repeatability, drag-free ballistics, impact force
//! and end-effector speed metrics.

use std::collections::BTreeMap;
use std::io::Read;

use nalgebra::Vector3;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("range {range} m is unreachable at launch angle {angle} rad")]
    Unreachable { range: f64, angle: f64 },
    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// Repeatability statistics of one cluster of measured positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Repeatability {
    pub mean_position: [f64; 3],
    /// Mean distance to the mean position.
    pub mu: f64,
    /// Sample standard deviation of the distances.
    pub sigma: f64,
    /// `mu + 3 sigma`.
    pub r: f64,
}

pub fn repeatability_from_stats(mu: f64, sigma: f64) -> f64 {
    mu + 3.0 * sigma
}

/// ISO 9283 pose repeatability of `points` (any consistent length unit).
///
/// σ is the sample standard deviation of the distances `dᵢ = ‖Pᵢ − P̄‖` about
/// their mean μ, with an `N − 1` denominator.
pub fn repeatability(points: &[Vector3<f64>]) -> Result<Repeatability, AnalysisError> {
    let n = points.len();
    if n < 2 {
        return Err(AnalysisError::TooFewSamples { needed: 2, got: n });
    }
    let mean: Vector3<f64> = points.iter().sum::<Vector3<f64>>() / n as f64;
    let distances: Vec<f64> = points.iter().map(|p| (p - mean).norm()).collect();
    let mu = distances.iter().sum::<f64>() / n as f64;
    let var = distances.iter().map(|d| (d - mu).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sigma = var.sqrt();
    Ok(Repeatability {
        mean_position: mean.into(),
        mu,
        sigma,
        r: repeatability_from_stats(mu, sigma),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepeatabilityRow {
    pub target_id: String,
    pub samples: usize,
    pub stats: Repeatability,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepeatabilityReport {
    pub rows: Vec<RepeatabilityRow>,
    pub average_mu: f64,
    pub average_sigma: f64,
    pub average_r: f64,
}

impl RepeatabilityReport {
    pub fn from_groups(groups: &BTreeMap<String, Vec<Vector3<f64>>>) -> Result<Self, AnalysisError> {
        if groups.is_empty() {
            return Err(AnalysisError::InvalidInput("no targets".into()));
        }
        let rows = groups
            .iter()
            .map(|(id, pts)| {
                Ok(RepeatabilityRow {
                    target_id: id.clone(),
                    samples: pts.len(),
                    stats: repeatability(pts)?,
                })
            })
            .collect::<Result<Vec<_>, AnalysisError>>()?;
        let k = rows.len() as f64;
        let average_mu = rows.iter().map(|r| r.stats.mu).sum::<f64>() / k;
        let average_sigma = rows.iter().map(|r| r.stats.sigma).sum::<f64>() / k;
        let average_r = rows.iter().map(|r| r.stats.r).sum::<f64>() / k;
        Ok(Self {
            rows,
            average_mu,
            average_sigma,
            average_r,
        })
    }

    /// `Point,Average distance (mm),Std dev. (mm),Repeatability (mm)` plus an `Average` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("point,average_distance_mm,std_dev_mm,repeatability_mm\n");
        for row in &self.rows {
            s += &format!(
                "{},{:.3},{:.3},{:.3}\n",
                row.target_id, row.stats.mu, row.stats.sigma, row.stats.r
            );
        }
        s += &format!(
            "Average,{:.3},{:.3},{:.3}\n",
            self.average_mu, self.average_sigma, self.average_r
        );
        s
    }
}

/// Reads `target_id,x_mm,y_mm,z_mm` rows grouped by target.
pub fn read_repeatability_csv<R: Read>(
    reader: R,
    expected_per_target: Option<usize>,
) -> Result<BTreeMap<String, Vec<Vector3<f64>>>, AnalysisError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| AnalysisError::Csv {
        line: 1,
        message: e.to_string(),
    })?;
    let expected = ["target_id", "x_mm", "y_mm", "z_mm"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(AnalysisError::Csv {
            line: 1,
            message: "expected header `target_id,x_mm,y_mm,z_mm`".into(),
        });
    }
    let mut groups: BTreeMap<String, Vec<Vector3<f64>>> = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| AnalysisError::Csv {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != 4 {
            return Err(AnalysisError::Csv {
                line,
                message: format!("expected 4 fields, found {}", rec.len()),
            });
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| AnalysisError::Csv {
                    line,
                    message: format!("invalid number `{s}`"),
                })
        };
        let p = Vector3::new(parse(&rec[1])?, parse(&rec[2])?, parse(&rec[3])?);
        groups.entry(rec[0].to_string()).or_default().push(p);
    }
    if let Some(n) = expected_per_target {
        for (id, pts) in &groups {
            if pts.len() != n {
                return Err(AnalysisError::InvalidInput(format!(
                    "target `{id}` has {} rows, expected {n}",
                    pts.len()
                )));
            }
        }
    }
    Ok(groups)
}

pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BallisticResult {
    pub range: f64,
    pub flight_time: f64,
}

/// Drag-free projectile from height `h0` at speed `v` and elevation `angle`;
/// range is measured at ground level (`z = 0`).
pub fn ballistic_range(v: f64, angle: f64, h0: f64, g: f64) -> Result<BallisticResult, AnalysisError> {
    if !(h0 >= 0.0) || !(g > 0.0) || !(v >= 0.0) || !angle.is_finite() {
        return Err(AnalysisError::InvalidInput(format!(
            "require v >= 0, h0 >= 0, g > 0 (v={v}, h0={h0}, g={g})"
        )));
    }
    let vz = v * angle.sin();
    let vx = v * angle.cos();
    if h0 == 0.0 && vz <= 0.0 {
        return Ok(BallisticResult {
            range: 0.0,
            flight_time: 0.0,
        });
    }
    // h0 + vz t − g t²/2 = 0, positive root in a cancellation-free form.
    let disc = vz * vz + 2.0 * g * h0;
    let sq = disc.sqrt();
    let t = if vz >= 0.0 {
        (vz + sq) / g
    } else {
        2.0 * h0 / (sq - vz)
    };
    if !(t > 0.0) {
        return Err(AnalysisError::InvalidInput("no positive flight time".into()));
    }
    Ok(BallisticResult {
        range: vx * t,
        flight_time: t,
    })
}

/// Launch speed whose drag-free range equals `range`, by bisection on `v`.
pub fn required_launch_speed(range: f64, angle: f64, h0: f64, g: f64) -> Result<f64, AnalysisError> {
    if !(range > 0.0) {
        return Err(AnalysisError::InvalidInput("range must be > 0".into()));
    }
    if !(angle.cos() > 1e-12) {
        return Err(AnalysisError::Unreachable { range, angle });
    }
    let range_at = |v: f64| ballistic_range(v, angle, h0, g).map(|r| r.range);
    let mut hi = 1.0;
    while range_at(hi)? < range {
        hi *= 2.0;
        if hi > 1e8 {
            return Err(AnalysisError::Unreachable { range, angle });
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-12 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if range_at(mid)? < range {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Average impact force from the impulse-momentum relation `F = m Δv / Δt`.
pub fn impact_force(effective_mass: f64, delta_v: f64, duration: f64) -> Result<f64, AnalysisError> {
    if !(duration > 0.0) {
        return Err(AnalysisError::InvalidInput("impact duration must be > 0".into()));
    }
    Ok(effective_mass * delta_v / duration)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpeedMetrics {
    pub max_speed: f64,
    pub mean_speed: f64,
    /// Time of the maximum, measured from the first sample.
    pub argmax_time: f64,
}

/// Central-difference speeds over the interior samples of a uniformly sampled path.
pub fn central_speeds(positions: &[Vector3<f64>], dt: f64) -> Vec<f64> {
    positions
        .windows(3)
        .map(|w| (w[2] - w[0]).norm() / (2.0 * dt))
        .collect()
}

pub fn speed_metrics(positions: &[Vector3<f64>], dt: f64) -> Result<SpeedMetrics, AnalysisError> {
    if positions.len() < 3 {
        return Err(AnalysisError::TooFewSamples {
            needed: 3,
            got: positions.len(),
        });
    }
    if !(dt > 0.0) {
        return Err(AnalysisError::InvalidInput("dt must be > 0".into()));
    }
    let speeds = central_speeds(positions, dt);
    let (imax, max_speed) = speeds
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, s)| if s > acc.1 { (i, s) } else { acc });
    let mean_speed = speeds.iter().sum::<f64>() / speeds.len() as f64;
    Ok(SpeedMetrics {
        max_speed,
        mean_speed,
        argmax_time: (imax + 1) as f64 * dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    fn cluster(seed: u64, n: usize, std: f64) -> Vec<Vector3<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).unwrap();
        let c = Vector3::new(rng.random_range(-100.0..100.0), 20.0, 300.0);
        (0..n)
            .map(|_| c + Vector3::from_fn(|_, _| normal.sample(&mut rng)))
            .collect()
    }

    // Independent recomputation with explicit loops over coordinates.
    fn brute_force(points: &[Vector3<f64>]) -> (f64, f64, f64) {
        let n = points.len() as f64;
        let mut mean = [0.0; 3];
        for p in points {
            for k in 0..3 {
                mean[k] += p[k];
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let d: Vec<f64> = points
            .iter()
            .map(|p| ((p[0] - mean[0]).powi(2) + (p[1] - mean[1]).powi(2) + (p[2] - mean[2]).powi(2)).sqrt())
            .collect();
        let mu = d.iter().sum::<f64>() / n;
        let mut ss = 0.0;
        for di in &d {
            ss += (di - mu) * (di - mu);
        }
        let sigma = (ss / (n - 1.0)).sqrt();
        (mu, sigma, mu + 3.0 * sigma)
    }

    #[test]
    fn identical_points_give_zero() {
        let pts = vec![Vector3::new(1.0, 2.0, 3.0); 30];
        let r = repeatability(&pts).unwrap();
        assert_eq!((r.mu, r.sigma, r.r), (0.0, 0.0, 0.0));
    }

    #[test]
    fn too_few_points() {
        assert_eq!(
            repeatability(&[Vector3::zeros()]).unwrap_err(),
            AnalysisError::TooFewSamples { needed: 2, got: 1 }
        );
    }

    #[test]
    fn matches_brute_force_oracle() {
        for seed in 0..10 {
            let pts = cluster(seed, 30, 0.8);
            let r = repeatability(&pts).unwrap();
            let (mu, sigma, rr) = brute_force(&pts);
            assert!((r.mu - mu).abs() < 1e-12);
            assert!((r.sigma - sigma).abs() < 1e-12);
            assert!((r.r - rr).abs() < 1e-12);
        }
    }

    #[test]
    fn published_row_reproduces() {
        assert!((repeatability_from_stats(1.048, 0.546) - 2.687).abs() < 0.0015);
    }

    #[test]
    fn ballistics_examples() {
        let drop = ballistic_range(0.0, 0.0, 0.65, 9.81).unwrap();
        assert_eq!(drop.range, 0.0);
        assert!((drop.flight_time - (2.0f64 * 0.65 / 9.81).sqrt()).abs() < 1e-15);
        assert!((drop.flight_time - 0.3640).abs() < 5e-5);
        let textbook = ballistic_range(9.81, std::f64::consts::FRAC_PI_4, 0.0, 9.81).unwrap();
        assert!((textbook.range - 9.81).abs() < 1e-12);
        let bat = ballistic_range(6.135, 0.0, 0.65, 9.81).unwrap();
        assert!((bat.range - 6.135 * (2.0f64 * 0.65 / 9.81).sqrt()).abs() < 1e-12);
        assert!((bat.range - 2.233).abs() < 5e-4);
        let ground = ballistic_range(5.0, -0.3, 0.0, 9.81).unwrap();
        assert_eq!(ground.range, 0.0);
    }

    #[test]
    fn launch_speed_inversion() {
        let t0 = (2.0f64 * 0.65 / 9.81).sqrt();
        let v = required_launch_speed(6.135 * t0, 0.0, 0.65, 9.81).unwrap();
        assert!((v - 6.135).abs() < 1e-6);
        let v = required_launch_speed(3.484, 0.0, 0.65, 9.81).unwrap();
        assert!((v - 3.484 / t0).abs() < 1e-6);
        assert!((v - 9.57).abs() < 0.01);
        assert!(matches!(
            required_launch_speed(1.0, std::f64::consts::FRAC_PI_2, 0.0, 9.81),
            Err(AnalysisError::Unreachable { .. })
        ));
    }

    #[test]
    fn impact_examples() {
        assert_eq!(impact_force(1.39, 0.0, 0.013).unwrap(), 0.0);
        assert!((impact_force(2.0, 3.0, 0.01).unwrap() - 600.0).abs() < 1e-9);
        let dv: f64 = 575.0 * 0.013 / 1.39;
        assert!((dv - 5.378).abs() < 5e-4);
        assert!((impact_force(1.39, 5.378, 0.013).unwrap() - 575.0).abs() < 0.1);
        assert!(impact_force(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn speed_examples() {
        let still = vec![Vector3::new(1.0, 1.0, 1.0); 10];
        assert_eq!(speed_metrics(&still, 0.01).unwrap().max_speed, 0.0);
        let dir = Vector3::new(0.6, 0.0, 0.8);
        let line: Vec<_> = (0..50).map(|i| dir * (2.0 * i as f64 * 0.005)).collect();
        let m = speed_metrics(&line, 0.005).unwrap();
        assert!((m.max_speed - 2.0).abs() < 1e-9);
        assert!((m.mean_speed - 2.0).abs() < 1e-9);
        assert!(speed_metrics(&line[..2], 0.005).is_err());
    }

    #[test]
    fn csv_parsing() {
        let text = "target_id,x_mm,y_mm,z_mm\nP1,1,2,3\nP1,1,2,4\nP2,0,0,0\nP2,0,0,1\n";
        let g = read_repeatability_csv(text.as_bytes(), Some(2)).unwrap();
        assert_eq!(g.len(), 2);
        let bad = "target_id,x_mm,y_mm,z_mm\nP1,1,2,3\nP1,1,x,4\n";
        assert_eq!(
            read_repeatability_csv(bad.as_bytes(), None).unwrap_err(),
            AnalysisError::Csv { line: 3, message: "invalid number `x`".into() }
        );
        assert!(read_repeatability_csv(text.as_bytes(), Some(30)).is_err());
    }

    proptest! {
        #[test]
        fn r_is_mu_plus_three_sigma(seed in 0u64..1000, n in 2usize..50) {
            let r = repeatability(&cluster(seed, n, 1.3)).unwrap();
            prop_assert_eq!(r.r, r.mu + 3.0 * r.sigma);
            prop_assert!(r.sigma >= 0.0);
        }

        #[test]
        fn invariant_under_rigid_motion(seed in 0u64..1000, angle in -3.0f64..3.0, t in proptest::array::uniform3(-500.0f64..500.0)) {
            let pts = cluster(seed, 30, 0.9);
            let rot = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(0.3, -0.5, 0.8)), angle);
            let moved: Vec<_> = pts.iter().map(|p| rot * p + Vector3::from(t)).collect();
            let a = repeatability(&pts).unwrap();
            let b = repeatability(&moved).unwrap();
            prop_assert!((a.mu - b.mu).abs() < 1e-9);
            prop_assert!((a.sigma - b.sigma).abs() < 1e-9);
        }

        #[test]
        fn launch_speed_round_trip(v in 0.5f64..30.0, angle in -0.7f64..1.3, h0 in 0.01f64..3.0) {
            let r = ballistic_range(v, angle, h0, 9.81).unwrap();
            prop_assume!(r.range > 1e-3);
            let back = required_launch_speed(r.range, angle, h0, 9.81).unwrap();
            prop_assert!((back - v).abs() < 1e-6, "{} vs {}", back, v);
        }
    }
}
