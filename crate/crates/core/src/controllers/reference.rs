use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// State reference `z_ref(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reference {
    Constant {
        state: Vec<f64>,
    },
    /// Position target alternating between `+amplitude` and `−amplitude`
    /// every half `period`, starting high. With `smoothing_pole = p` the
    /// target is passed through `(p / (s + p))³`; the other state
    /// references are 0.
    SquareWave {
        amplitude: f64,
        period: f64,
        state_dim: usize,
        #[serde(default)]
        smoothing_pole: Option<f64>,
    },
}

/// Unit-step response of `(p / (s + p))³`.
fn triple_pole_step(p: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let pt = p * t;
    1.0 - (-pt).exp() * (1.0 + pt + 0.5 * pt * pt)
}

impl Reference {
    pub fn validate(&self, state_dim: usize) -> Result<()> {
        match self {
            Reference::Constant { state } if state.len() != state_dim => Err(Error::Dimension {
                context: "constant reference",
                expected: state_dim,
                got: state.len(),
            }),
            Reference::SquareWave {
                period,
                state_dim: d,
                smoothing_pole,
                ..
            } => {
                if *d != state_dim {
                    return Err(Error::Dimension {
                        context: "square-wave reference",
                        expected: state_dim,
                        got: *d,
                    });
                }
                if !(*period > 0.0) || smoothing_pole.is_some_and(|p| !(p > 0.0)) {
                    return Err(Error::Config(
                        "reference period and pole must be positive".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Unsmoothed position target at `t`.
    pub fn target_position(&self, t: f64) -> f64 {
        match self {
            Reference::Constant { state } => state[0],
            Reference::SquareWave {
                amplitude, period, ..
            } => {
                let phase = t.rem_euclid(*period);
                if phase < 0.5 * period {
                    *amplitude
                } else {
                    -amplitude
                }
            }
        }
    }

    pub fn at(&self, t: f64) -> Vec<f64> {
        match self {
            Reference::Constant { state } => state.clone(),
            Reference::SquareWave {
                amplitude,
                period,
                state_dim,
                smoothing_pole,
            } => {
                let mut z = vec![0.0; *state_dim];
                z[0] = match smoothing_pole {
                    None => self.target_position(t),
                    Some(p) => {
                        let half = 0.5 * period;
                        let mut r = *amplitude;
                        let jumps = (t / half).floor().max(0.0) as usize;
                        for k in 1..=jumps {
                            let sign = if k % 2 == 1 { -2.0 } else { 2.0 };
                            r += sign * amplitude * triple_pole_step(*p, t - k as f64 * half);
                        }
                        r
                    }
                };
                z
            }
        }
    }

    /// Times in `(0, duration)` at which the position target jumps.
    pub fn step_times(&self, duration: f64) -> Vec<f64> {
        match self {
            Reference::Constant { .. } => Vec::new(),
            Reference::SquareWave { period, .. } => {
                let half = 0.5 * period;
                (1..)
                    .map(|k| k as f64 * half)
                    .take_while(|t| *t < duration)
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(pole: Option<f64>) -> Reference {
        Reference::SquareWave {
            amplitude: 1.0,
            period: 8.0,
            state_dim: 3,
            smoothing_pole: pole,
        }
    }

    #[test]
    fn square_wave_levels() {
        let r = wave(None);
        assert_eq!(r.at(0.0), vec![1.0, 0.0, 0.0]);
        assert_eq!(r.at(4.5)[0], -1.0);
        assert_eq!(r.at(8.1)[0], 1.0);
        assert_eq!(r.step_times(13.0), vec![4.0, 8.0, 12.0]);
    }

    #[test]
    fn smoothed_wave_is_continuous_and_settles() {
        let r = wave(Some(4.0));
        assert!((r.at(4.0)[0] - 1.0).abs() < 1e-12);
        assert!((r.at(4.001)[0] - 1.0).abs() < 1e-6);
        assert!((r.at(7.99)[0] + 1.0).abs() < 1e-3);
    }
}
