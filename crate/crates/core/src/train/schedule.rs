//! Three-phase learning-rate schedule: linear warmup, constant plateau,
//! exponential decay.

use serde::{Deserialize, Serialize};

use crate::error::ScheduleError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub start: f64,
    pub peak: f64,
    pub end: f64,
    /// Fraction of the run spent ramping from `start` to `peak`.
    pub warmup_fraction: f64,
    /// Fraction of the run after which decay begins.
    pub stable_end_fraction: f64,
}

impl ScheduleSpec {
    /// Ramp from `start`, decay to `peak / 100`, with 20% / 80% phase
    /// boundaries.
    pub fn three_phase(start: f64, peak: f64) -> Self {
        Self { start, peak, end: peak / 100.0, warmup_fraction: 0.2, stable_end_fraction: 0.8 }
    }

    pub fn constant(rate: f64) -> Self {
        Self { start: rate, peak: rate, end: rate, warmup_fraction: 0.0, stable_end_fraction: 1.0 }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        let ok = self.start >= 0.0
            && self.start <= self.peak
            && self.end >= 0.0
            && (0.0..=1.0).contains(&self.warmup_fraction)
            && self.warmup_fraction <= self.stable_end_fraction
            && self.stable_end_fraction <= 1.0;
        if !ok {
            return Err(ScheduleError::Invalid(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Learning rate at `iteration` of a `total`-iteration run.
pub fn schedule_rate(spec: &ScheduleSpec, iteration: usize, total: usize) -> Result<f64, ScheduleError> {
    if iteration > total {
        return Err(ScheduleError::OutOfRange { iteration, total });
    }
    spec.validate()?;
    if total == 0 {
        return Ok(spec.start);
    }
    let it = iteration as f64;
    let n = total as f64;
    let warm_end = spec.warmup_fraction * n;
    let stable_end = spec.stable_end_fraction * n;
    if it < warm_end {
        let t = it / warm_end;
        return Ok((1.0 - t) * spec.start + t * spec.peak);
    }
    if it <= stable_end {
        return Ok(spec.peak);
    }
    if iteration == total {
        return Ok(spec.end);
    }
    if spec.peak == 0.0 {
        return Ok(0.0);
    }
    let frac = (it - stable_end) / (n - stable_end);
    Ok(spec.peak * (spec.end / spec.peak).powf(frac))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn milestones() {
        let s = ScheduleSpec::three_phase(1e-10, 1e-5);
        let r = |i| schedule_rate(&s, i, 100_000).unwrap();
        assert_eq!(r(0), 1e-10);
        assert_eq!(r(20_000), 1e-5);
        assert_eq!(r(50_000), 1e-5);
        assert_eq!(r(80_000), 1e-5);
        assert_eq!(r(100_000), s.peak / 100.0);
        let e = ScheduleSpec::three_phase(1e-10, 1e-4);
        assert_eq!(schedule_rate(&e, 50_000, 100_000).unwrap(), 1e-4);
        assert_eq!(schedule_rate(&e, 100_000, 100_000).unwrap(), 1e-4 / 100.0);
        assert!(schedule_rate(&s, 100_001, 100_000).is_err());
    }

    #[test]
    fn continuity_at_boundaries() {
        // One iteration is a vanishing fraction of this run, so neighbouring
        // rates bound the jump at each phase boundary.
        let s = ScheduleSpec::three_phase(1e-10, 1e-4);
        let total = 100_000_000_000_000usize;
        let r = |i| schedule_rate(&s, i, total).unwrap();
        let warm = total / 5;
        let stable = total / 5 * 4;
        assert!((r(warm) - r(warm - 1)).abs() / s.peak < 1e-12);
        assert!((r(stable + 1) - r(stable)).abs() / s.peak < 1e-12);
        assert!((r(total - 1) - r(total)).abs() / s.end < 1e-12);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = ScheduleSpec::three_phase(1e-3, 1e-4);
        assert!(schedule_rate(&s, 0, 10).is_err());
        s = ScheduleSpec::three_phase(0.0, 1e-4);
        s.warmup_fraction = 0.9;
        assert!(schedule_rate(&s, 0, 10).is_err());
    }
}
