//! Time-stamped flow output and its CSV form.

use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::linalg;
use crate::models::NetworkModel;

/// One accepted step of a flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    pub step: usize,
    /// Training loss for training flows, `N(u)` for NCF flows.
    pub loss: f64,
    pub norm_w: f64,
    pub block_norms: Vec<f64>,
    /// Cosine of each block against its reference direction.
    pub block_cos: Vec<f64>,
    pub kink_flag: bool,
    /// Full state, present every `record_every` steps and on the last record.
    pub w: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub label: String,
    pub model_hash: String,
    pub config_hash: String,
    pub seed: u64,
    /// What the recorded state is: `w`, `w/delta` or `u`.
    pub coordinates: String,
    pub delta: Option<f64>,
    pub beta: Option<f64>,
    pub beta_source: Option<String>,
    /// Set when the flow is trivially stationary (e.g. `z = 0`).
    pub degenerate: bool,
}

/// Statistics over every accepted step, including the ones thinned out of
/// `records`. A backstep is a step that moved the monitored value against
/// the flow direction; relative sizes are `drop / max(|before|, |after|)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowStats {
    pub steps: usize,
    pub kink_steps: usize,
    /// Backsteps larger than `1e-12` relative.
    pub backsteps: usize,
    pub max_backstep: f64,
    /// Same for `value/‖w‖²` (tracked by NCF flows only).
    pub rayleigh_backsteps: usize,
    pub max_rayleigh_backstep: f64,
    pub min_norm: f64,
    pub max_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub meta: TrajectoryMeta,
    pub records: Vec<Record>,
    pub stats: FlowStats,
}

/// Short hex SHA-256 of the JSON form of `value`.
pub fn content_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("serializable value");
    let digest = Sha256::digest(&json);
    hex::encode(&digest[..8])
}

impl TrajectoryMeta {
    pub fn for_model(label: &str, model: &NetworkModel, coordinates: &str) -> Self {
        TrajectoryMeta {
            label: label.to_string(),
            model_hash: content_hash(model),
            coordinates: coordinates.to_string(),
            ..Default::default()
        }
    }
}

impl Trajectory {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first(&self) -> Option<&Record> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }

    /// Final recorded state.
    pub fn final_state(&self) -> Option<&[f64]> {
        self.records.iter().rev().find_map(|r| r.w.as_deref())
    }

    pub fn initial_state(&self) -> Option<&[f64]> {
        self.first().and_then(|r| r.w.as_deref())
    }

    /// Records that carry a full state snapshot.
    pub fn snapshots(&self) -> impl Iterator<Item = (&Record, &[f64])> {
        self.records
            .iter()
            .filter_map(|r| r.w.as_deref().map(|w| (r, w)))
    }

    pub fn end_time(&self) -> f64 {
        self.last().map_or(0.0, |r| r.t)
    }

    pub fn block_count(&self) -> usize {
        self.first().map_or(0, |r| r.block_norms.len())
    }

    pub fn csv_header(blocks: usize) -> String {
        let mut cols = vec![
            "t".to_string(),
            "step".into(),
            "loss".into(),
            "norm_w".into(),
        ];
        cols.extend((0..blocks).map(|i| format!("block_norm_{i}")));
        cols.extend((0..blocks).map(|i| format!("block_cos_{i}")));
        cols.push("kink_flag".into());
        cols.join(",")
    }

    /// Writes the trajectory as CSV with 17 significant digits and LF endings.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let blocks = self.block_count();
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        wtr.write_record(Self::csv_header(blocks).split(','))?;
        let fmt = |v: f64| format!("{v:.16e}");
        for r in &self.records {
            let mut row = vec![fmt(r.t), r.step.to_string(), fmt(r.loss), fmt(r.norm_w)];
            row.extend(r.block_norms.iter().map(|&v| fmt(v)));
            row.extend(r.block_cos.iter().map(|&v| fmt(v)));
            row.push(u8::from(r.kink_flag).to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Direction of the state at each snapshot, paired with its time.
    pub fn directions(&self) -> Vec<(f64, Vec<f64>)> {
        self.snapshots()
            .filter_map(|(r, w)| linalg::normalized(w).map(|d| (r.t, d)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: f64, step: usize) -> Record {
        Record {
            t,
            step,
            loss: 0.5,
            norm_w: 1.0 / 3.0,
            block_norms: vec![0.25, 0.1],
            block_cos: vec![1.0, -0.5],
            kink_flag: step == 1,
            w: None,
        }
    }

    #[test]
    fn csv_header_and_precision() {
        let traj = Trajectory {
            meta: TrajectoryMeta::default(),
            records: vec![rec(0.0, 0), rec(0.1, 1)],
            stats: FlowStats::default(),
        };
        let csv = traj.to_csv_string();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,step,loss,norm_w,block_norm_0,block_norm_1,block_cos_0,block_cos_1,kink_flag"
        );
        let row: Vec<&str> = lines.nth(1).unwrap().split(',').collect();
        assert_eq!(row[3], "3.3333333333333331e-1");
        assert_eq!(row.last().unwrap(), &"1");
        assert!(!csv.contains('\r'));
        // 17 significant digits round-trip every f64
        let back: f64 = row[3].parse().unwrap();
        assert_eq!(back, 1.0 / 3.0);
    }

    #[test]
    fn hashes_are_stable() {
        assert_eq!(content_hash(&[1, 2, 3]), content_hash(&[1, 2, 3]));
        assert_ne!(content_hash(&[1, 2, 3]), content_hash(&[1, 2, 4]));
        assert_eq!(content_hash(&0).len(), 16);
    }
}
