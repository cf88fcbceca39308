//! Network delay models.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::time::Time;

/// Closed interval `[start, end]` of virtual time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window(pub Time, pub Time);

impl Window {
    pub fn units(start: f64, end: f64) -> Window {
        Window(Time::from_units(start), Time::from_units(end))
    }

    pub fn start(&self) -> Time {
        self.0
    }

    pub fn end(&self) -> Time {
        self.1
    }

    pub fn contains(&self, t: Time) -> bool {
        self.0 <= t && t <= self.1
    }

    pub fn len(&self) -> Time {
        self.1 - self.0
    }

    pub fn is_empty(&self) -> bool {
        self.1 <= self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub window: Window,
    pub model: DelayModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayModel {
    Fixed {
        delay: Time,
    },
    /// Exponential with the given mean, in time units.
    Exponential {
        scale: f64,
    },
    /// Model chosen by send time; outside every segment the last one applies.
    Piecewise {
        segments: Vec<Segment>,
    },
}

impl DelayModel {
    pub fn fixed(units: f64) -> DelayModel {
        DelayModel::Fixed {
            delay: Time::from_units(units),
        }
    }

    pub fn exponential(scale: f64) -> DelayModel {
        DelayModel::Exponential { scale }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            DelayModel::Fixed { .. } => Ok(()),
            DelayModel::Exponential { scale } => {
                if scale.is_finite() && *scale > 0.0 {
                    Ok(())
                } else {
                    Err(format!("exponential scale must be positive, got {scale}"))
                }
            }
            DelayModel::Piecewise { segments } => {
                if segments.is_empty() {
                    return Err("piecewise delay model needs at least one segment".into());
                }
                for s in segments {
                    if matches!(s.model, DelayModel::Piecewise { .. }) {
                        return Err("piecewise segments cannot nest".into());
                    }
                    s.model.validate()?;
                }
                Ok(())
            }
        }
    }

    fn at(&self, now: Time) -> &DelayModel {
        match self {
            DelayModel::Piecewise { segments } => {
                let seg = segments
                    .iter()
                    .find(|s| s.window.contains(now))
                    .or(segments.last())
                    .expect("validated non-empty");
                seg.model.at(now)
            }
            m => m,
        }
    }
}

impl fmt::Display for DelayModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DelayModel::Fixed { delay } => write!(f, "fixed:{delay}"),
            DelayModel::Exponential { scale } => write!(f, "exp:{scale}"),
            DelayModel::Piecewise { segments } => {
                write!(f, "piecewise({} segments)", segments.len())
            }
        }
    }
}

/// `fixed:<units>` or `exp:<scale>`.
impl FromStr for DelayModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| format!("expected fixed:<d> or exp:<scale>, got {s:?}"))?;
        let v: f64 = value
            .parse()
            .map_err(|_| format!("bad number {value:?} in delay model"))?;
        let m = match kind {
            "fixed" => {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(format!("fixed delay must be non-negative, got {v}"));
                }
                DelayModel::fixed(v)
            }
            "exp" | "exponential" => DelayModel::exponential(v),
            _ => return Err(format!("unknown delay model {kind:?}")),
        };
        m.validate()?;
        Ok(m)
    }
}

/// One delay draw for a message sent at `now`. Exponential draws are rounded
/// to whole ticks. Inside a synchrony window the result never exceeds `delta`.
pub fn sample_delay<R: Rng + ?Sized>(
    model: &DelayModel,
    rng: &mut R,
    now: Time,
    in_synchrony: bool,
    delta: Time,
) -> Time {
    let d = match model.at(now) {
        DelayModel::Fixed { delay } => *delay,
        DelayModel::Exponential { scale } => {
            let exp = Exp::new(1.0 / scale).expect("validated scale");
            Time::from_units(exp.sample(rng))
        }
        DelayModel::Piecewise { .. } => unreachable!("resolved by at()"),
    };
    if in_synchrony {
        d.min(delta)
    } else {
        d
    }
}

/// Latest delivery time the synchrony windows allow for a message sent at
/// `t`: by `max(t0, t + delta)` for every window `[t0, t1]` with `t <= t1`.
pub fn synchrony_deadline(windows: &[Window], t: Time, delta: Time) -> Option<Time> {
    windows
        .iter()
        .filter(|w| t <= w.end())
        .map(|w| w.start().max(t + delta))
        .min()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parse_models() {
        assert_eq!(
            "fixed:0.5".parse::<DelayModel>().unwrap(),
            DelayModel::fixed(0.5)
        );
        assert_eq!(
            "exp:2".parse::<DelayModel>().unwrap(),
            DelayModel::exponential(2.0)
        );
        assert!("exp:-1".parse::<DelayModel>().is_err());
        assert!("uniform:1".parse::<DelayModel>().is_err());
        assert!("fixed".parse::<DelayModel>().is_err());
    }

    #[test]
    fn fixed_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = DelayModel::fixed(0.3);
        for _ in 0..10 {
            assert_eq!(
                sample_delay(&m, &mut rng, Time::ZERO, false, Time::from_units(1.0)),
                Time::from_units(0.3)
            );
        }
    }

    #[test]
    fn exponential_mean_and_clamp() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let m = DelayModel::exponential(2.0);
        let delta = Time::from_units(1.0);
        let n = 100_000;
        let total: f64 = (0..n)
            .map(|_| sample_delay(&m, &mut rng, Time::ZERO, false, delta).as_units())
            .sum();
        let mean = total / n as f64;
        assert!((mean - 2.0).abs() < 0.1, "mean {mean}");
        for _ in 0..10_000 {
            assert!(sample_delay(&m, &mut rng, Time::ZERO, true, delta) <= delta);
        }
    }

    #[test]
    fn piecewise_by_send_time() {
        let m = DelayModel::Piecewise {
            segments: vec![
                Segment {
                    window: Window::units(0.0, 10.0),
                    model: DelayModel::fixed(0.1),
                },
                Segment {
                    window: Window::units(10.0, 20.0),
                    model: DelayModel::fixed(4.0),
                },
            ],
        };
        m.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = |t: f64, rng: &mut ChaCha8Rng| {
            sample_delay(&m, rng, Time::from_units(t), false, Time::from_units(1.0)).as_units()
        };
        assert_eq!(d(5.0, &mut rng), 0.1);
        assert_eq!(d(15.0, &mut rng), 4.0);
        assert_eq!(d(50.0, &mut rng), 4.0);
    }

    #[test]
    fn deadline_rule() {
        let w = [Window::units(10.0, 20.0)];
        let d = Time::from_units(1.0);
        let at = |t: f64| synchrony_deadline(&w, Time::from_units(t), d).map(|x| x.as_units());
        assert_eq!(at(0.0), Some(10.0));
        assert_eq!(at(9.5), Some(10.5));
        assert_eq!(at(15.0), Some(16.0));
        assert_eq!(at(20.0), Some(21.0));
        assert_eq!(at(20.5), None);
    }
}
