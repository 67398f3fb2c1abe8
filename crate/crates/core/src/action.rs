//! Agent actions and validated distributions over them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::world::STOP_ID;

/// Allowed deviation of a distribution's total mass from 1.
pub const SUM_TOLERANCE: f64 = 1e-6;

/// Move to a neighboring node, or stop. Orders moves by node id with `Stop` last.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Move(String),
    Stop,
}

impl Action {
    pub fn as_str(&self) -> &str {
        match self {
            Action::Move(id) => id,
            Action::Stop => STOP_ID,
        }
    }

    pub fn node(&self) -> Option<&str> {
        match self {
            Action::Move(id) => Some(id),
            Action::Stop => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(if s == STOP_ID { Action::Stop } else { Action::Move(s.to_owned()) })
    }
}

impl From<&str> for Action {
    fn from(s: &str) -> Self {
        s.parse().unwrap()
    }
}

impl Serialize for Action {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.as_str().into())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DistributionError {
    #[error("probability for {action:?} is {value}, expected a finite value >= 0")]
    InvalidProbability { action: String, value: f64 },
    #[error("action {0:?} is not a neighbor of the current node")]
    UnknownAction(String),
    #[error("probabilities sum to {0}, expected 1")]
    BadSum(f64),
}

/// Probabilities over the current node's neighbors and `Stop`, summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionDistribution {
    probs: BTreeMap<Action, f64>,
}

impl ActionDistribution {
    /// Accepts `probs` only if every action is `Stop` or one of `neighbors`,
    /// every value is finite and non-negative, and the total is within
    /// [`SUM_TOLERANCE`] of 1. Values are kept verbatim.
    pub fn validate<S: AsRef<str>>(probs: BTreeMap<Action, f64>, neighbors: &[S]) -> Result<Self, DistributionError> {
        let mut sum = 0.0;
        for (a, &p) in &probs {
            if let Action::Move(id) = a {
                if !neighbors.iter().any(|n| n.as_ref() == id) {
                    return Err(DistributionError::UnknownAction(id.clone()));
                }
            }
            if !(p.is_finite() && p >= 0.0) {
                return Err(DistributionError::InvalidProbability { action: a.to_string(), value: p });
            }
            sum += p;
        }
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(DistributionError::BadSum(sum));
        }
        Ok(ActionDistribution { probs })
    }

    /// Probability of `action`; actions outside the support have probability 0.
    pub fn prob(&self, action: &Action) -> f64 {
        self.probs.get(action).copied().unwrap_or(0.0)
    }

    pub fn stop_prob(&self) -> f64 {
        self.prob(&Action::Stop)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Action, f64)> {
        self.probs.iter().map(|(a, &p)| (a, p))
    }

    /// Neighbor moves with their probabilities.
    pub fn moves(&self) -> impl Iterator<Item = (&str, f64)> {
        self.probs.iter().filter_map(|(a, &p)| a.node().map(|n| (n, p)))
    }

    pub fn as_map(&self) -> &BTreeMap<Action, f64> {
        &self.probs
    }

    /// Highest-probability action; exact ties go to the smallest node id, with `Stop` last.
    pub fn argmax(&self) -> Action {
        let mut best: Option<(&Action, f64)> = None;
        for (a, &p) in &self.probs {
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((a, p));
            }
        }
        best.map(|(a, _)| a.clone()).unwrap_or(Action::Stop)
    }

    /// Total probability assigned to any action in `actions`.
    pub fn mass_on<'a>(&self, actions: impl IntoIterator<Item = &'a Action>) -> f64 {
        actions.into_iter().map(|a| self.prob(a)).sum()
    }
}
