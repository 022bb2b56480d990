use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sim::SpikeTrains;
use crate::error::{QanaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    /// Evenly spaced: `a` fires at step `t` iff `⌊a·t⌋ > ⌊a·(t−1)⌋`.
    #[default]
    Regular,
    /// Independent Bernoulli(a) per step from a seeded stream.
    Poisson { seed: u64 },
}

fn check(values: &[f32], t: usize) -> Result<()> {
    if t == 0 {
        return Err(QanaError::Config("encoding window T must be >= 1".into()));
    }
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(QanaError::Config(format!(
            "rate-encoded values must lie in [0,1], got {v}"
        )));
    }
    Ok(())
}

/// Spike count of the regular code for value `a` after `t` steps.
fn fired_by(a: f64, t: usize) -> u64 {
    (a * t as f64).floor() as u64
}

pub fn rate_encode(values: &[f32], t: usize) -> Result<SpikeTrains> {
    encode(values, t, Encoding::Regular)
}

pub fn encode(values: &[f32], t: usize, mode: Encoding) -> Result<SpikeTrains> {
    check(values, t)?;
    let mut steps = vec![Vec::new(); t];
    match mode {
        Encoding::Regular => {
            for (i, &a) in values.iter().enumerate() {
                let a = a as f64;
                if a == 0.0 {
                    continue;
                }
                for (s, step) in steps.iter_mut().enumerate() {
                    if fired_by(a, s + 1) > fired_by(a, s) {
                        step.push(i as u32);
                    }
                }
            }
        }
        Encoding::Poisson { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for step in steps.iter_mut() {
                for (i, &a) in values.iter().enumerate() {
                    if rng.gen::<f64>() < a as f64 {
                        step.push(i as u32);
                    }
                }
            }
        }
    }
    Ok(SpikeTrains {
        neurons: values.len(),
        steps,
    })
}
