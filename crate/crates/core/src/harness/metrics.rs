//! Scalar safety metrics reported per trial.
//!
//! These are *reporting* quantities, distinct from the barrier values the
//! safety filter enforces: `tsf` and `asf` are signed Euclidean distances
//! to a region boundary, in plant units (optionally rescaled for display),
//! while the filter works with the algebraic barrier values themselves.

use crate::safety::{barrier_value, BarrierShape};
use crate::types::{StateVector, Trajectory};

/// True for shapes that describe a bounded band the robot should stay
/// inside (as opposed to an obstacle it should stay outside).
pub(crate) fn is_band(shape: &BarrierShape) -> bool {
    !matches!(shape, BarrierShape::Obstacle { .. })
}

/// Tracking-safety function: signed minimum Euclidean distance from the
/// state to the boundary of the allowed tracking band, positive inside,
/// multiplied by a configurable report scale.
///
/// Supported band shapes are `Corridor`, `RegionBand`, and `Box`; for all
/// of them the distance is exact on both sides of the boundary (for a box,
/// the outside distance is the Euclidean distance to the nearest face,
/// edge, or corner).
///
/// # Panics
/// If `band` is an obstacle shape, which has no inside band.
pub fn tsf(x: &StateVector, band: &BarrierShape, scale: f64) -> f64 {
    let s = x.as_slice();
    let signed = match band {
        BarrierShape::Corridor {
            dim,
            center,
            half_width,
        } => half_width - (s[*dim] - center).abs(),
        BarrierShape::RegionBand { dim, lo, hi } => (s[*dim] - lo).min(hi - s[*dim]),
        BarrierShape::Box { dims, lo, hi } => {
            let mut inside = f64::INFINITY;
            let mut outside_sq = 0.0;
            for (j, &d) in dims.iter().enumerate() {
                let below = s[d] - lo[j];
                let above = hi[j] - s[d];
                inside = inside.min(below.min(above));
                let overshoot = (-below).max(-above).max(0.0);
                outside_sq += overshoot * overshoot;
            }
            if outside_sq > 0.0 {
                -outside_sq.sqrt()
            } else {
                inside
            }
        }
        BarrierShape::Obstacle { .. } => {
            panic!("tsf is defined for band regions, not obstacles")
        }
    };
    scale * signed
}

/// Avoidance-safety function: Euclidean distance from the state to the
/// obstacle surface, positive outside.
///
/// # Panics
/// If `obstacle` is not an obstacle shape.
pub fn asf(x: &StateVector, obstacle: &BarrierShape) -> f64 {
    match obstacle {
        BarrierShape::Obstacle {
            dims,
            center,
            radius,
        } => {
            let s = x.as_slice();
            let dist_sq: f64 = dims
                .iter()
                .enumerate()
                .map(|(j, &d)| (s[d] - center[j]) * (s[d] - center[j]))
                .sum();
            dist_sq.sqrt() - radius
        }
        _ => panic!("asf is defined for obstacle shapes"),
    }
}

/// Fraction of the trajectory's states lying inside the given region
/// (barrier value ≥ 0). For a corridor this is exactly the fraction of
/// samples within the half-width.
pub fn safety_ratio(trajectory: &Trajectory, region: &BarrierShape) -> f64 {
    let states = trajectory.states();
    let inside = states
        .iter()
        .filter(|x| barrier_value(region, x.as_slice()) >= 0.0)
        .count();
    inside as f64 / states.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ControlLimits, ControlVector};

    fn sv(values: &[f64]) -> StateVector {
        StateVector::new(values.to_vec())
    }

    #[test]
    fn tsf_on_corridor_centerline_equals_half_width() {
        let band = BarrierShape::Corridor {
            dim: 1,
            center: 0.0,
            half_width: 0.05,
        };
        assert_eq!(tsf(&sv(&[3.0, 0.0]), &band, 1.0), 0.05);
        // Report-scale factor is a plain multiplier.
        assert_eq!(tsf(&sv(&[3.0, 0.0]), &band, 200.0), 10.0);
    }

    #[test]
    fn tsf_on_boundary_is_zero() {
        let band = BarrierShape::RegionBand {
            dim: 0,
            lo: -1.0,
            hi: 2.0,
        };
        assert_eq!(tsf(&sv(&[2.0, 9.9]), &band, 3.0), 0.0);
        assert_eq!(tsf(&sv(&[-1.0, 9.9]), &band, 3.0), 0.0);
    }

    #[test]
    fn tsf_sign_flips_outside() {
        let band = BarrierShape::RegionBand {
            dim: 0,
            lo: -1.0,
            hi: 2.0,
        };
        assert_eq!(tsf(&sv(&[2.5, 0.0]), &band, 1.0), -0.5);
        let boxed = BarrierShape::Box {
            dims: vec![0, 1],
            lo: vec![0.0, -0.5],
            hi: vec![1.0, 0.5],
        };
        // Outside past a single face: plain perpendicular distance.
        assert!((tsf(&sv(&[1.3, 0.0]), &boxed, 1.0) + 0.3).abs() < 1e-15);
        // Outside past a corner: Euclidean distance to the corner itself.
        let d = tsf(&sv(&[1.3, 0.9]), &boxed, 1.0);
        assert!((d + (0.3f64 * 0.3 + 0.4 * 0.4).sqrt()).abs() < 1e-15);
    }

    /// Brute-force oracle: sample the box boundary densely and take the
    /// minimum Euclidean distance, signed by containment.
    fn boundary_sampled_distance(p: &[f64], lo: &[f64; 2], hi: &[f64; 2]) -> f64 {
        let steps = 40_000usize;
        let mut best = f64::INFINITY;
        for k in 0..=steps {
            let a = k as f64 / steps as f64;
            let xs = lo[0] + a * (hi[0] - lo[0]);
            let ys = lo[1] + a * (hi[1] - lo[1]);
            for (bx, by) in [
                (xs, lo[1]),
                (xs, hi[1]),
                (lo[0], ys),
                (hi[0], ys),
            ] {
                let d = ((p[0] - bx).powi(2) + (p[1] - by).powi(2)).sqrt();
                best = best.min(d);
            }
        }
        let inside =
            p[0] >= lo[0] && p[0] <= hi[0] && p[1] >= lo[1] && p[1] <= hi[1];
        if inside {
            best
        } else {
            -best
        }
    }

    #[test]
    fn tsf_matches_dense_boundary_sampling() {
        let lo = [0.0, -0.5];
        let hi = [1.0, 0.5];
        let band = BarrierShape::Box {
            dims: vec![0, 1],
            lo: lo.to_vec(),
            hi: hi.to_vec(),
        };
        let points = [
            [0.5, 0.0],
            [0.1, 0.3],
            [0.9, -0.45],
            [0.31, 0.17],
            [-0.2, 0.0],
            [1.3, 0.6],
            [0.5, 0.7],
            [-0.15, -0.72],
        ];
        for p in points {
            let got = tsf(&sv(&p), &band, 1.0);
            let want = boundary_sampled_distance(&p, &lo, &hi);
            assert!(
                (got - want).abs() < 1e-6,
                "point {p:?}: got {got}, oracle {want}"
            );
        }
    }

    #[test]
    fn asf_is_distance_to_surface() {
        let ball = BarrierShape::Obstacle {
            dims: vec![0, 1],
            center: vec![1.0, 2.0],
            radius: 0.25,
        };
        // Distance r + d from the center → ASF = d.
        assert!((asf(&sv(&[1.0, 2.0 + 0.25 + 0.4]), &ball) - 0.4).abs() < 1e-15);
        // On the surface → 0.
        assert!(asf(&sv(&[1.25, 2.0]), &ball).abs() < 1e-15);
        // Inside → negative.
        assert!((asf(&sv(&[1.0, 2.1]), &ball) + 0.15).abs() < 1e-15);
    }

    #[test]
    fn asf_matches_dense_surface_sampling() {
        let center = [0.3, -0.7];
        let radius = 0.6;
        let ball = BarrierShape::Obstacle {
            dims: vec![0, 1],
            center: center.to_vec(),
            radius,
        };
        let points = [[1.4, 0.2], [0.3, -0.7], [0.35, -0.2], [-0.9, -1.3]];
        for p in points {
            let mut best = f64::INFINITY;
            let steps = 2_000_000usize;
            for k in 0..steps {
                let a = std::f64::consts::TAU * k as f64 / steps as f64;
                let bx = center[0] + radius * a.cos();
                let by = center[1] + radius * a.sin();
                let d = ((p[0] - bx).powi(2) + (p[1] - by).powi(2)).sqrt();
                best = best.min(d);
            }
            let inside = ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2)).sqrt() < radius;
            let want = if inside { -best } else { best };
            let got = asf(&sv(&p), &ball);
            assert!(
                (got - want).abs() <= 1e-9,
                "point {p:?}: got {got}, oracle {want}"
            );
        }
    }

    #[test]
    fn safety_ratio_matches_hand_count() {
        let corridor = BarrierShape::Corridor {
            dim: 1,
            center: 0.0,
            half_width: 0.05,
        };
        // 10 states; y pattern crosses the corridor edge at known samples:
        // inside, inside, outside, inside, outside, outside, inside,
        // inside, inside, inside → 7 of 10 inside.
        let ys = [0.0, 0.04, 0.06, -0.05, -0.051, 0.2, 0.05, 0.01, -0.02, 0.0];
        let states: Vec<StateVector> = ys.iter().map(|&y| sv(&[0.0, y])).collect();
        let controls =
            vec![ControlVector::zeros(ControlLimits::symmetric(1, 1.0)); ys.len() - 1];
        let traj = Trajectory::new(states, controls, 0.1, 0.0).unwrap();
        assert_eq!(safety_ratio(&traj, &corridor), 0.7);
    }

    #[test]
    fn safety_ratio_all_inside_is_one() {
        let corridor = BarrierShape::Corridor {
            dim: 0,
            center: 0.0,
            half_width: 1.0,
        };
        let states = vec![sv(&[0.0, 0.0]); 4];
        let controls = vec![ControlVector::zeros(ControlLimits::symmetric(1, 1.0)); 3];
        let traj = Trajectory::new(states, controls, 0.1, 0.0).unwrap();
        assert_eq!(safety_ratio(&traj, &corridor), 1.0);
    }

    #[test]
    fn safety_ratio_half_inside_is_half() {
        let corridor = BarrierShape::Corridor {
            dim: 0,
            center: 0.0,
            half_width: 0.5,
        };
        let xs = [0.0, 0.4, 0.6, 0.7];
        let states: Vec<StateVector> = xs.iter().map(|&x| sv(&[x, 0.0])).collect();
        let controls = vec![ControlVector::zeros(ControlLimits::symmetric(1, 1.0)); 3];
        let traj = Trajectory::new(states, controls, 0.1, 0.0).unwrap();
        assert_eq!(safety_ratio(&traj, &corridor), 0.5);
    }
}
