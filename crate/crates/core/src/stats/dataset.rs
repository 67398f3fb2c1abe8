use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::interventions::Variant;
use crate::metrics::Probe;

/// One observation: a response measured with or without the intervention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub scene_id: String,
    pub trajectory_id: String,
    pub episode_id: String,
    /// 0 or 1.
    pub intervention: u8,
    pub response: f64,
}

/// Long-format observations grouped as scenes → trajectories → rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectDataset {
    rows: Vec<EffectRow>,
}

impl EffectDataset {
    pub fn new(rows: Vec<EffectRow>) -> Result<Self, StatsError> {
        let mut seen = HashSet::new();
        let mut owner: HashMap<&str, &str> = HashMap::new();
        for r in &rows {
            if r.intervention > 1 {
                return Err(StatsError::InvalidRow(format!(
                    "{}: intervention flag {} is not 0 or 1",
                    r.episode_id, r.intervention
                )));
            }
            if !r.response.is_finite() {
                return Err(StatsError::InvalidRow(format!("{}: non-finite response", r.episode_id)));
            }
            if !seen.insert((r.episode_id.as_str(), r.intervention)) {
                return Err(StatsError::InvalidRow(format!("duplicate ({}, {})", r.episode_id, r.intervention)));
            }
            let scene = owner.entry(&r.trajectory_id).or_insert(&r.scene_id);
            if *scene != r.scene_id {
                return Err(StatsError::InvalidRow(format!(
                    "trajectory {} appears in scenes {} and {}",
                    r.trajectory_id, scene, r.scene_id
                )));
            }
        }
        Ok(EffectDataset { rows })
    }

    pub fn rows(&self) -> &[EffectRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row indices grouped by scene, then trajectory, both in id order.
    pub fn groups(&self) -> BTreeMap<&str, BTreeMap<&str, Vec<usize>>> {
        let mut g: BTreeMap<&str, BTreeMap<&str, Vec<usize>>> = BTreeMap::new();
        for (i, r) in self.rows.iter().enumerate() {
            g.entry(&r.scene_id).or_default().entry(&r.trajectory_id).or_default().push(i);
        }
        g
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<(), StatsError> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(reader: impl Read) -> Result<Self, StatsError> {
        let rows = csv::Reader::from_reader(reader).deserialize().collect::<Result<Vec<EffectRow>, _>>()?;
        Self::new(rows)
    }

    /// Builds a dataset from paired probes. Only `no_intervention` (0) and
    /// `intervention` (1) probes are kept; paired rows share the episode id
    /// without its variant suffix.
    pub fn from_probes<F>(probes: &[Probe], mut response: F) -> Result<Self, StatsError>
    where
        F: FnMut(&Probe) -> Result<f64, StatsError>,
    {
        let mut rows = Vec::new();
        for p in probes {
            let flag = match p.result.variant {
                Variant::NoIntervention => 0,
                Variant::Intervention => 1,
                Variant::OneStepAhead => continue,
            };
            rows.push(EffectRow {
                scene_id: p.episode.scene_id.clone(),
                trajectory_id: p.episode.trajectory_id.clone(),
                episode_id: p.episode.pair_key().to_owned(),
                intervention: flag,
                response: response(p)?,
            });
        }
        Self::new(rows)
    }
}

/// Mean response over all rows.
pub fn mean_response(rows: &[&EffectRow]) -> f64 {
    rows.iter().map(|r| r.response).sum::<f64>() / rows.len() as f64
}

/// Mean response with the intervention minus mean response without it.
/// NaN when either arm is empty.
pub fn mean_difference(rows: &[&EffectRow]) -> f64 {
    let (mut s, mut n) = ([0.0; 2], [0usize; 2]);
    for r in rows {
        s[r.intervention as usize] += r.response;
        n[r.intervention as usize] += 1;
    }
    s[1] / n[1] as f64 - s[0] / n[0] as f64
}
