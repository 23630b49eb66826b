//! Synthetic segment corpora.
//!
//! Per-user activity follows a truncated exponential profile with the most
//! active user pinned at `max_segments`. Every user draws one categorical
//! preference per attribute from a symmetric Dirichlet; segments sample each
//! label independently from those preferences. Low concentration gives
//! users sharply distinct habits.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{LabelSchema, Segment, UserCorpus};

/// Exponential rate that puts the expected corpus size of the default
/// profile (157 users, 1 to 727 segments) at 10,880 segments.
pub const DEFAULT_DECAY_RATE: f64 = 0.0156;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    pub max_segments: usize,
    pub min_segments: usize,
    pub decay_rate: f64,
    pub concentration: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 157,
            max_segments: 727,
            min_segments: 1,
            decay_rate: DEFAULT_DECAY_RATE,
            concentration: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_users == 0 {
            return bad("n_users must be positive".into());
        }
        if self.min_segments == 0 || self.min_segments > self.max_segments {
            return bad(format!(
                "need 1 <= min_segments <= max_segments, got {}..{}",
                self.min_segments, self.max_segments
            ));
        }
        if !(self.decay_rate.is_finite() && self.decay_rate > 0.0) {
            return bad(format!(
                "decay rate must be positive, got {}",
                self.decay_rate
            ));
        }
        if !(self.concentration.is_finite() && self.concentration > 0.0) {
            return bad(format!(
                "concentration must be positive, got {}",
                self.concentration
            ));
        }
        Ok(())
    }

    /// Expected segment count of one non-pinned user (continuous profile).
    pub fn expected_segments_per_user(&self) -> f64 {
        let range = (self.max_segments - self.min_segments) as f64;
        let l = self.decay_rate;
        if range == 0.0 {
            return self.min_segments as f64;
        }
        let tail = (-l * range).exp();
        self.min_segments as f64 + 1.0 / l - range * tail / (1.0 - tail)
    }

    /// Expected corpus size: the pinned top user plus `n_users - 1` draws.
    pub fn expected_total_segments(&self) -> f64 {
        self.max_segments as f64 + (self.n_users as f64 - 1.0) * self.expected_segments_per_user()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub users: Vec<String>,
    pub segments: Vec<Segment>,
    /// `preferences[user][attribute][value]`.
    pub preferences: Vec<Vec<Vec<f64>>>,
}

impl SyntheticCorpus {
    pub fn corpus(&self, schema: &LabelSchema) -> Result<UserCorpus> {
        UserCorpus::from_segments(&self.segments, schema)
    }

    pub fn segment_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.users.len()];
        let mut u = 0;
        for s in &self.segments {
            while self.users[u] != s.user_id {
                u += 1;
            }
            counts[u] += 1;
        }
        counts
    }

    /// Latent preferences as JSON, keyed by user then attribute name.
    pub fn write_preferences<W: Write>(&self, sink: W, schema: &LabelSchema) -> Result<()> {
        #[derive(Serialize)]
        struct Attr<'a> {
            attribute: &'a str,
            values: &'a [String],
            probabilities: &'a [f64],
        }
        #[derive(Serialize)]
        struct User<'a> {
            user_id: &'a str,
            preferences: Vec<Attr<'a>>,
        }
        let users: Vec<User> = self
            .users
            .iter()
            .zip(&self.preferences)
            .map(|(u, prefs)| User {
                user_id: u,
                preferences: schema
                    .attributes()
                    .iter()
                    .zip(prefs)
                    .map(|(a, p)| Attr {
                        attribute: &a.name,
                        values: &a.values,
                        probabilities: p,
                    })
                    .collect(),
            })
            .collect();
        serde_json::to_writer_pretty(sink, &users)?;
        Ok(())
    }
}

fn truncated_exponential_count(config: &SynthConfig, rng: &mut ChaCha8Rng) -> usize {
    let range = (config.max_segments - config.min_segments) as f64;
    let l = config.decay_rate;
    let u: f64 = rng.random();
    let y = -(1.0 - u * (1.0 - (-l * range).exp())).ln() / l;
    let x = (config.min_segments as f64 + y).round() as usize;
    x.clamp(config.min_segments, config.max_segments)
}

fn dirichlet(n: usize, gamma: &Gamma<f64>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|g| g / total).collect();
        }
    }
}

fn categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left acc slightly below 1; fall back to the last non-zero value.
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// Users are named `u000`, `u001`, ... in decreasing order of activity.
pub fn generate_corpus(schema: &LabelSchema, config: &SynthConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut counts: Vec<usize> = (1..config.n_users)
        .map(|_| truncated_exponential_count(config, &mut rng))
        .collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    counts.insert(0, config.max_segments);

    let width = (config.n_users - 1).to_string().len().max(3);
    let users: Vec<String> = (0..config.n_users)
        .map(|i| format!("u{i:0width$}"))
        .collect();

    let gamma =
        Gamma::new(config.concentration, 1.0).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let preferences: Vec<Vec<Vec<f64>>> = users
        .iter()
        .map(|_| {
            schema
                .attributes()
                .iter()
                .map(|a| dirichlet(a.values.len(), &gamma, &mut rng))
                .collect()
        })
        .collect();

    let mut segments = Vec::with_capacity(counts.iter().sum());
    for ((user, &count), prefs) in users.iter().zip(&counts).zip(&preferences) {
        for _ in 0..count {
            let labels = schema
                .attributes()
                .iter()
                .zip(prefs)
                .map(|(a, p)| a.values[categorical(p, &mut rng)].clone())
                .collect();
            segments.push(Segment {
                user_id: user.clone(),
                labels,
            });
        }
    }
    Ok(SyntheticCorpus {
        users,
        segments,
        preferences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape() {
        let schema = LabelSchema::tagmyday();
        let s = generate_corpus(&schema, &SynthConfig::default()).unwrap();
        assert_eq!(s.users.len(), 157);
        let counts = s.segment_counts();
        assert_eq!(counts[0], 727);
        assert!(counts.windows(2).all(|w| w[0] >= w[1]));
        assert!(counts.iter().all(|&c| (1..=727).contains(&c)));
        let total: usize = counts.iter().sum();
        assert!(
            (total as f64 - 10_880.0).abs() <= 0.15 * 10_880.0,
            "total = {total}"
        );
        for seg in &s.segments {
            schema.encode(seg).unwrap();
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let schema = LabelSchema::tagmyday();
        let cfg = SynthConfig {
            n_users: 20,
            seed: 11,
            ..SynthConfig::default()
        };
        assert_eq!(
            generate_corpus(&schema, &cfg).unwrap(),
            generate_corpus(&schema, &cfg).unwrap()
        );
        let other = SynthConfig {
            seed: 12,
            ..cfg.clone()
        };
        assert_ne!(
            generate_corpus(&schema, &cfg).unwrap(),
            generate_corpus(&schema, &other).unwrap()
        );
    }

    #[test]
    fn preferences_are_distributions() {
        let schema = LabelSchema::tagmyday();
        let cfg = SynthConfig {
            n_users: 10,
            concentration: 0.05,
            ..SynthConfig::default()
        };
        let s = generate_corpus(&schema, &cfg).unwrap();
        for user in &s.preferences {
            for (p, a) in user.iter().zip(schema.attributes()) {
                assert_eq!(p.len(), a.values.len());
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let schema = LabelSchema::tagmyday();
        for cfg in [
            SynthConfig {
                n_users: 0,
                ..SynthConfig::default()
            },
            SynthConfig {
                min_segments: 0,
                ..SynthConfig::default()
            },
            SynthConfig {
                min_segments: 800,
                ..SynthConfig::default()
            },
            SynthConfig {
                decay_rate: 0.0,
                ..SynthConfig::default()
            },
            SynthConfig {
                concentration: -1.0,
                ..SynthConfig::default()
            },
        ] {
            assert!(matches!(
                generate_corpus(&schema, &cfg),
                Err(Error::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn single_user_gets_max() {
        let schema = LabelSchema::tagmyday();
        let cfg = SynthConfig {
            n_users: 1,
            max_segments: 5,
            ..SynthConfig::default()
        };
        assert_eq!(
            generate_corpus(&schema, &cfg).unwrap().segment_counts(),
            vec![5]
        );
    }
}
