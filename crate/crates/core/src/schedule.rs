//! Interpolation schedules `x_t = alpha_t * x_0 + sigma_t * x_1` and the
//! time grids the reverse chains walk backwards through.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Interpolation family. Time is unitless and lives in `[0, 1]`; `t = 0` is
/// data, `t = 1` is pure standard-normal noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    /// `alpha_t = 1 - t`, `sigma_t = t`.
    #[default]
    LinearFlow,
    /// `alpha_t = cos(pi t / 2)`, `sigma_t = sin(pi t / 2)`.
    TrigVp,
}

impl Schedule {
    /// Returns `(alpha_t, sigma_t)`.
    pub fn eval(self, t: f64) -> Result<(f64, f64)> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("schedule time {t} not in [0, 1]")));
        }
        Ok(self.coefficients(t))
    }

    /// Unchecked evaluation. Endpoints are returned exactly so that the
    /// boundary conditions hold bit-for-bit.
    pub(crate) fn coefficients(self, t: f64) -> (f64, f64) {
        if t == 0.0 {
            return (1.0, 0.0);
        }
        if t == 1.0 {
            return (0.0, 1.0);
        }
        match self {
            Schedule::LinearFlow => (1.0 - t, t),
            Schedule::TrigVp => {
                let a = std::f64::consts::FRAC_PI_2 * t;
                (a.cos(), a.sin())
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Schedule::LinearFlow => "linear-flow",
            Schedule::TrigVp => "trig-vp",
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "linear-flow" | "linear" => Ok(Schedule::LinearFlow),
            "trig-vp" | "trig" => Ok(Schedule::TrigVp),
            other => Err(Error::InvalidParameter(format!("unknown schedule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Spacing {
    #[default]
    Uniform,
    /// `t_k = (k / K)^2`, denser near the data end.
    Quadratic,
}

impl FromStr for Spacing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "uniform" => Ok(Spacing::Uniform),
            "quadratic" => Ok(Spacing::Quadratic),
            other => Err(Error::InvalidParameter(format!("unknown spacing `{other}`"))),
        }
    }
}

impl fmt::Display for Spacing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Spacing::Uniform => "uniform",
            Spacing::Quadratic => "quadratic",
        })
    }
}

/// Strictly increasing knots `0 = t_0 < t_1 < ... < t_K = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    knots: Vec<f64>,
}

impl TimeGrid {
    pub fn new(steps: usize, spacing: Spacing) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParameter("time grid needs K >= 1 steps".into()));
        }
        let k_total = steps as f64;
        let knots = (0..=steps)
            .map(|k| {
                if k == steps {
                    return 1.0;
                }
                let u = k as f64 / k_total;
                match spacing {
                    Spacing::Uniform => u,
                    Spacing::Quadratic => u * u,
                }
            })
            .collect();
        Ok(Self { knots })
    }

    /// Builds a grid from explicit knots, validating the invariants.
    pub fn from_knots(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidParameter("time grid needs at least two knots".into()));
        }
        if knots[0] != 0.0 || *knots.last().unwrap() != 1.0 {
            return Err(Error::InvalidParameter("time grid must start at 0 and end at 1".into()));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("time grid knots must be strictly increasing".into()));
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of steps `K`.
    pub fn steps(&self) -> usize {
        self.knots.len() - 1
    }

    /// Consecutive `(s, t) = (t_k, t_{k+1})` pairs from `t = 1` down to `t = 0`.
    pub fn reverse_pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.knots.windows(2).rev().map(|w| (w[0], w[1]))
    }
}

/// Convenience wrapper over [`TimeGrid::new`].
pub fn make_grid(steps: usize, spacing: Spacing) -> Result<TimeGrid> {
    TimeGrid::new(steps, spacing)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_and_quadratic_grids() {
        let g = make_grid(4, Spacing::Uniform).unwrap();
        assert_eq!(g.knots(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = make_grid(2, Spacing::Quadratic).unwrap();
        assert_eq!(g.knots(), &[0.0, 0.25, 1.0]);
        assert_eq!(g.steps(), 2);
    }

    #[test]
    fn zero_steps_rejected() {
        assert!(matches!(
            make_grid(0, Spacing::Uniform),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn reverse_pairs_walk_backwards() {
        let g = make_grid(3, Spacing::Uniform).unwrap();
        let pairs: Vec<_> = g.reverse_pairs().collect();
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs[0].1, 1.0);
        assert_eq!(pairs[2].0, 0.0);
        assert!(pairs.iter().all(|(s, t)| s < t));
    }

    #[test]
    fn explicit_knots_validated() {
        assert!(TimeGrid::from_knots(vec![0.0, 0.5, 1.0]).is_ok());
        assert!(TimeGrid::from_knots(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TimeGrid::from_knots(vec![0.1, 1.0]).is_err());
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(Schedule::LinearFlow.eval(0.0).unwrap(), (1.0, 0.0));
        assert_eq!(Schedule::LinearFlow.eval(0.5).unwrap(), (0.5, 0.5));
        let (a, s) = Schedule::TrigVp.eval(0.5).unwrap();
        let expect = std::f64::consts::FRAC_PI_4.cos();
        assert!((a - expect).abs() < 1e-15 && (s - std::f64::consts::FRAC_PI_4.sin()).abs() < 1e-15);
        assert!((a - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(Schedule::LinearFlow.eval(1.5).is_err());
        assert!(Schedule::TrigVp.eval(-0.1).is_err());
    }

    #[test]
    fn boundary_and_monotonicity_on_dense_grid() {
        for sched in [Schedule::LinearFlow, Schedule::TrigVp] {
            assert_eq!(sched.eval(0.0).unwrap(), (1.0, 0.0));
            assert_eq!(sched.eval(1.0).unwrap(), (0.0, 1.0));
            let mut prev = sched.eval(0.0).unwrap();
            for i in 1..=10_000 {
                let cur = sched.eval(i as f64 / 10_000.0).unwrap();
                assert!(cur.0 <= prev.0 && cur.1 >= prev.1);
                if sched == Schedule::TrigVp {
                    assert!((cur.0 * cur.0 + cur.1 * cur.1 - 1.0).abs() < 1e-12);
                }
                prev = cur;
            }
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("trig-vp".parse::<Schedule>().unwrap(), Schedule::TrigVp);
        assert_eq!("quadratic".parse::<Spacing>().unwrap(), Spacing::Quadratic);
        assert!("cosine".parse::<Schedule>().is_err());
    }
}
