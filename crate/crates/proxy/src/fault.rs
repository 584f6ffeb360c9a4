//! Fault-injection policy and its seeded sampler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use wildmatch::WildMatch;

use crate::record::Direction;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("probability `{0}` must be within [0, 1]")]
    Probability(String),
    #[error("uniform delay needs min_ms <= max_ms")]
    DelayRange,
    #[error("fake response rule {0} needs a status or a body")]
    EmptyFake(usize),
    #[error("fake response status {0} is not a valid HTTP status")]
    Status(u16),
    #[error("invalid url_rewrite pattern: {0}")]
    Rewrite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelaySpec {
    Fixed { ms: u64 },
    Uniform { min_ms: u64, max_ms: u64 },
}

fn one() -> f64 {
    1.0
}

/// Answers a matching request (URL glob) or client message (text glob)
/// locally. HTTP replies default to status 200.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FakeResponseRule {
    #[serde(rename = "match")]
    pub pattern: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
    #[serde(default = "one")]
    pub probability: f64,
}

impl FakeResponseRule {
    pub fn matches(&self, subject: &str) -> bool {
        WildMatch::new(&self.pattern).matches(subject)
    }
}

/// Regex rewrite of upstream URLs; `to_template` may use `$1`-style groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UrlRewrite {
    pub from_pattern: String,
    pub to_template: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultPolicy {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delay: Option<DelaySpec>,
    pub drop_prob: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub close_after_ms: Option<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fake_responses: Vec<FakeResponseRule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub url_rewrite: Option<UrlRewrite>,
}

fn check_probability(p: f64) -> Result<(), PolicyError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(PolicyError::Probability(p.to_string()))
    }
}

impl FaultPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        check_probability(self.drop_prob)?;
        if let Some(DelaySpec::Uniform { min_ms, max_ms }) = self.delay {
            if min_ms > max_ms {
                return Err(PolicyError::DelayRange);
            }
        }
        for (i, rule) in self.fake_responses.iter().enumerate() {
            check_probability(rule.probability)?;
            if rule.status.is_none() && rule.body.is_none() {
                return Err(PolicyError::EmptyFake(i));
            }
            if let Some(status) = rule.status {
                if !(100..=599).contains(&status) {
                    return Err(PolicyError::Status(status));
                }
            }
        }
        if let Some(rw) = &self.url_rewrite {
            Regex::new(&rw.from_pattern).map_err(|e| PolicyError::Rewrite(e.to_string()))?;
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        *self == FaultPolicy::default()
    }

    /// Applies `url_rewrite`; `None` when there is no rule or it does not match.
    pub fn rewrite_url(&self, url: &str) -> Option<String> {
        let rw = self.url_rewrite.as_ref()?;
        let re = Regex::new(&rw.from_pattern).ok()?;
        re.is_match(url)
            .then(|| re.replace(url, rw.to_template.as_str()).into_owned())
    }
}

/// FNV-1a over the seed and a stream label, so each session direction gets
/// its own reproducible sequence.
pub fn stream_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct FaultRng {
    rng: ChaCha8Rng,
}

impl FaultRng {
    pub fn new(seed: u64, session_id: &str, direction: Direction) -> Self {
        FaultRng {
            rng: ChaCha8Rng::seed_from_u64(stream_seed(seed, &format!("{session_id}/{}", direction.as_str()))),
        }
    }

    /// Always consumes one draw, so the sequence does not depend on `p`.
    pub fn roll(&mut self, p: f64) -> bool {
        let x: f64 = self.rng.random();
        x < p
    }

    pub fn delay(&mut self, spec: Option<DelaySpec>) -> u64 {
        match spec {
            None => 0,
            Some(DelaySpec::Fixed { ms }) => ms,
            Some(DelaySpec::Uniform { min_ms, max_ms }) => self.rng.random_range(min_ms..=max_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum FaultEffectKind {
    Delay { ms: u64 },
    Drop,
    FakeResponse { rule: usize },
    Close { after_ms: u64 },
    UrlRewrite { from: String, to: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultEffect {
    pub t_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    /// Per-direction message number the effect applied to, 1-based.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<u64>,
    #[serde(flatten)]
    pub kind: FaultEffectKind,
}
