//! Closed-form link-crossing probabilities.
//!
//! All probabilities are per time step `dt`; divide by `dt` (see
//! [`CrossingProbability::rate`]) for a per-second rate.

use thiserror::Error;

use crate::geometry::AreaGeometry;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("per-step displacement {displacement} m must be smaller than the region width {width} m")]
    StepTooLong { displacement: f64, width: f64 },
    #[error("theta_max must lie in (0, pi/2], got {0}")]
    ThetaOutOfRange(f64),
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("probability must lie in [0, 1], got {0}")]
    NotAProbability(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossingContext {
    SinglePersonClosed,
    NPersonClosed,
    OpenArea,
    ConditionalRegion1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingProbability {
    pub per_step: f64,
    pub context: CrossingContext,
}

impl CrossingProbability {
    /// Crossing rate per second.
    pub fn rate(&self, dt: f64) -> f64 {
        self.per_step / dt
    }
}

/// `sin(θ)/θ`, equal to 1 at the removable singularity.
pub fn sinc(theta: f64) -> f64 {
    if theta.abs() < 1e-9 {
        1.0
    } else {
        theta.sin() / theta
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), DomainError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(DomainError::NonPositive { name, value })
    }
}

fn check_theta(theta_max: f64) -> Result<(), DomainError> {
    if theta_max > 0.0 && theta_max <= std::f64::consts::FRAC_PI_2 + 1e-12 {
        Ok(())
    } else {
        Err(DomainError::ThetaOutOfRange(theta_max))
    }
}

fn check_fits(speed: f64, dt: f64, width: f64) -> Result<(), DomainError> {
    let displacement = speed * dt;
    if displacement < width {
        Ok(())
    } else {
        Err(DomainError::StepTooLong { displacement, width })
    }
}

/// Probability that a pedestrian known to be in region 1 crosses a given
/// link there during one step: `v1·dt·sinc(θmax)/B1`.
pub fn p_cross_given_region1(
    v1: f64,
    dt: f64,
    b1: f64,
    theta_max: f64,
) -> Result<CrossingProbability, DomainError> {
    positive("v1", v1)?;
    positive("dt", dt)?;
    positive("b1", b1)?;
    check_theta(theta_max)?;
    check_fits(v1, dt, b1)?;
    Ok(CrossingProbability {
        per_step: v1 * dt * sinc(theta_max) / b1,
        context: CrossingContext::ConditionalRegion1,
    })
}

/// Per-step probability that a single pedestrian in the closed area crosses
/// a link in region 1: `v1·v2·dt·sinc(θmax)/(v1·B2 + v2·B1)`.
///
/// Does not depend on where the link sits inside region 1.
pub fn p_cross_single(
    v1: f64,
    v2: f64,
    dt: f64,
    geom: &AreaGeometry,
    theta_max: f64,
) -> Result<CrossingProbability, DomainError> {
    positive("v1", v1)?;
    positive("v2", v2)?;
    positive("dt", dt)?;
    check_theta(theta_max)?;
    let (b1, b2) = (geom.region1_width, geom.region2_width);
    check_fits(v1, dt, b1)?;
    check_fits(v2, dt, b2)?;
    Ok(CrossingProbability {
        per_step: v1 * v2 * dt * sinc(theta_max) / (v1 * b2 + v2 * b1),
        context: CrossingContext::SinglePersonClosed,
    })
}

/// Probability that at least one of `n` independent pedestrians crosses.
pub fn p_cross_n_closed(p_single: f64, n: u32) -> Result<CrossingProbability, DomainError> {
    if !(0.0..=1.0).contains(&p_single) {
        return Err(DomainError::NotAProbability(p_single));
    }
    Ok(CrossingProbability {
        per_step: 1.0 - (1.0 - p_single).powi(n as i32),
        context: CrossingContext::NPersonClosed,
    })
}

/// Mean sojourn time of a forward walker: `B1/v1 + B2/v2`.
pub fn time_avg(v1: f64, v2: f64, geom: &AreaGeometry) -> f64 {
    geom.region1_width / v1 + geom.region2_width / v2
}

/// Open-area crossing probability `N_avg·v1·v2·dt/(v1·B2 + v2·B1)`.
///
/// Equivalent to `λ·dt` with `λ = N_avg/T_avg` by Little's law.
pub fn p_cross_open(
    v1: f64,
    v2: f64,
    dt: f64,
    geom: &AreaGeometry,
    n_avg: f64,
) -> Result<CrossingProbability, DomainError> {
    positive("v1", v1)?;
    positive("v2", v2)?;
    positive("dt", dt)?;
    positive("n_avg", n_avg)?;
    let (b1, b2) = (geom.region1_width, geom.region2_width);
    Ok(CrossingProbability {
        per_step: n_avg * v1 * v2 * dt / (v1 * b2 + v2 * b1),
        context: CrossingContext::OpenArea,
    })
}

/// Arrival rate implied by an open-area crossing probability (`p_c = λ·dt`).
pub fn arrival_rate_from_p_cross(p_c: f64, dt: f64) -> f64 {
    p_c / dt
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn sinc_limit_and_values() {
        assert_eq!(sinc(0.0), 1.0);
        assert_eq!(sinc(1e-12), 1.0);
        assert!(close(sinc(FRAC_PI_2), 2.0 / std::f64::consts::PI, 1e-15));
    }

    #[test]
    fn conditional_small_theta_limit() {
        let p = p_cross_given_region1(0.8, 0.05, 5.5, 1e-10).unwrap().per_step;
        assert!(close(p, 0.8 * 0.05 / 5.5, 1e-15));
    }

    #[test]
    fn conditional_reference_values() {
        // 0.05·(2/π)/5.5
        let p = p_cross_given_region1(1.0, 0.05, 5.5, FRAC_PI_2).unwrap().per_step;
        assert!(close(p, 5.787_452_476e-3, 1e-11), "{p}");
        // 0.04·(sin45°/(π/4))/5.5
        let p = p_cross_given_region1(0.8, 0.05, 5.5, FRAC_PI_4).unwrap().per_step;
        assert!(close(p, 6.547_755_027e-3, 1e-12), "{p}");
    }

    #[test]
    fn conditional_domain_guard() {
        assert!(matches!(
            p_cross_given_region1(10.0, 1.0, 5.5, FRAC_PI_4),
            Err(DomainError::StepTooLong { .. })
        ));
        assert!(p_cross_given_region1(1.0, 0.05, 5.5, 2.0).is_err());
    }

    #[test]
    fn single_person_reference_value() {
        let g = AreaGeometry::outdoor();
        let p = p_cross_single(0.8, 0.3, 0.05, &g, FRAC_PI_4).unwrap().per_step;
        // 0.012·0.9003163/(7.04 + 1.65)
        assert!(close(p, 1.243_244_625e-3, 1e-12), "{p}");
    }

    #[test]
    fn single_person_equal_speeds_collapse() {
        let g = AreaGeometry::outdoor();
        let p = p_cross_single(0.8, 0.8, 0.05, &g, FRAC_PI_4).unwrap().per_step;
        let expect = 0.8 * 0.05 * sinc(FRAC_PI_4) / (5.5 + 8.8);
        assert!(close(p, expect, 1e-15));
    }

    #[test]
    fn single_person_region_swap_symmetry() {
        let g = AreaGeometry::outdoor();
        let swapped = AreaGeometry {
            region1_width: g.region2_width,
            region2_width: g.region1_width,
            ..g
        };
        let a = p_cross_single(0.8, 0.3, 0.05, &g, FRAC_PI_4).unwrap().per_step;
        let b = p_cross_single(0.3, 0.8, 0.05, &swapped, FRAC_PI_4).unwrap().per_step;
        assert!(close(a, b, 1e-18));
    }

    #[test]
    fn n_person_values() {
        assert!(close(p_cross_n_closed(0.0123, 1).unwrap().per_step, 0.0123, 1e-15));
        assert!(close(p_cross_n_closed(0.01, 5).unwrap().per_step, 0.049_009_950_1, 1e-10));
        assert_eq!(p_cross_n_closed(0.0, 9).unwrap().per_step, 0.0);
        assert!(p_cross_n_closed(1.5, 2).is_err());
    }

    #[test]
    fn open_area_rate_identity() {
        let g = AreaGeometry::outdoor();
        let (v1, v2, dt) = (0.8, 0.3, 0.05);
        let lambda = 1.0 / 60.0;
        let n_avg = lambda * time_avg(v1, v2, &g);
        let p = p_cross_open(v1, v2, dt, &g, n_avg).unwrap();
        assert!(close(p.per_step, 8.333_333_333e-4, 1e-12));
        assert!(close(p.rate(dt), lambda, 1e-12));
        assert!(close(arrival_rate_from_p_cross(p.per_step, dt), lambda, 1e-12));
    }

    #[test]
    fn open_area_equal_speed_collapse() {
        let g = AreaGeometry::indoor();
        let p = p_cross_open(0.5, 0.5, 0.05, &g, 3.0).unwrap().per_step;
        assert!(close(p, 3.0 * 0.5 * 0.05 / 20.0, 1e-15));
    }

    #[test]
    fn closed_first_order_matches_open_at_small_theta() {
        let g = AreaGeometry::outdoor();
        for &(v1, v2) in &[(0.3, 1.6), (0.8, 0.8), (1.6, 0.3)] {
            let single = p_cross_single(v1, v2, 0.05, &g, 1e-10).unwrap().per_step;
            let open = p_cross_open(v1, v2, 0.05, &g, 7.0).unwrap().per_step;
            assert!(close(7.0 * single, open, 1e-15));
        }
    }

    #[test]
    fn sojourn_time_values() {
        let out = AreaGeometry::outdoor();
        assert!(close(time_avg(1.0, 1.0, &out), 14.3, 1e-12));
        let ind = AreaGeometry::indoor();
        assert!(close(time_avg(1.1, 0.12, &ind), 7.0 / 1.1 + 13.0 / 0.12, 1e-12));
        assert!(close(time_avg(1.1, 0.12, &ind), 114.697, 1e-3));
        assert!(close(time_avg(2.2, 0.24, &ind), time_avg(1.1, 0.12, &ind) / 2.0, 1e-12));
    }

    #[test]
    fn monotone_in_both_speeds_on_grid() {
        let g = AreaGeometry::outdoor();
        let speeds: Vec<f64> = (1..=25).map(|i| i as f64 * 0.1).collect();
        for &a in &speeds {
            for w in speeds.windows(2) {
                let lo = p_cross_single(w[0], a, 0.05, &g, FRAC_PI_4).unwrap().per_step;
                let hi = p_cross_single(w[1], a, 0.05, &g, FRAC_PI_4).unwrap().per_step;
                assert!(hi > lo);
                let lo = p_cross_single(a, w[0], 0.05, &g, FRAC_PI_4).unwrap().per_step;
                let hi = p_cross_single(a, w[1], 0.05, &g, FRAC_PI_4).unwrap().per_step;
                assert!(hi > lo);
            }
        }
    }

    proptest! {
        #[test]
        fn n_person_monotone_in_n(p in 0.0f64..1.0, n in 1u32..50) {
            let a = p_cross_n_closed(p, n).unwrap().per_step;
            let b = p_cross_n_closed(p, n + 1).unwrap().per_step;
            prop_assert!(b >= a);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn n_person_concave_in_p(p in 0.0f64..0.98, h in 0.001f64..0.01, n in 1u32..30) {
            let f = |x: f64| p_cross_n_closed(x, n).unwrap().per_step;
            let mid = f(p + h);
            prop_assert!(mid + 1e-12 >= 0.5 * (f(p) + f(p + 2.0 * h)));
        }
    }
}
