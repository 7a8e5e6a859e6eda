use serde::{Deserialize, Serialize};

use crate::model::Episode;
use crate::volume::BoundingBox;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    pub mu: [f64; 3],
    pub l: [f64; 3],
    pub voxel_center: [usize; 3],
    pub bbox: BoundingBox,
}

/// One episode as plain data, for plotting outside this crate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTrace {
    pub case_id: String,
    pub label: u8,
    pub prediction: f64,
    pub steps: Vec<TraceStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal_center: Option<[f64; 3]>,
}

impl TrajectoryTrace {
    pub fn from_episode(e: &Episode, signal_center: Option<[f64; 3]>) -> Self {
        let steps = e
            .decisions
            .iter()
            .zip(&e.glimpses)
            .map(|(d, g)| TraceStep { t: g.step, mu: d.mu, l: d.l, voxel_center: g.center, bbox: g.bbox })
            .collect();
        Self { case_id: e.case_id.clone(), label: e.label, prediction: e.prediction, steps, signal_center }
    }

    /// Euclidean voxel distance from the last glimpse center to the signal.
    pub fn final_distance(&self) -> Option<f64> {
        let s = self.signal_center?;
        let c = self.steps.last()?.voxel_center;
        Some((0..3).map(|k| (c[k] as f64 - s[k]).powi(2)).sum::<f64>().sqrt())
    }
}
