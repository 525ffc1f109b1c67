//! Single-document JSON checkpoints and CSV trajectory export.

use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::config::RunConfig;
use crate::diffcore::BODY_FEATURES;
use crate::policy::{PolicyMode, PolicyNet, PriorEncoder};
use crate::trainer::{ComponentHashes, Trainer, TrajectoryBuffer};
use crate::worldmodel::WorldModel;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(#[from] serde_json::Error),
    #[error("checkpoint format version {found}, this build reads {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint holds a {found} policy, expected {expected}")]
    ModeMismatch { expected: PolicyMode, found: PolicyMode },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub mode: PolicyMode,
    pub epoch: usize,
    pub seed: u64,
}

/// Every trainer component under its own section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub metadata: Metadata,
    pub config: RunConfig,
    pub world_model: WorldModel,
    pub codebook: Codebook,
    pub teacher: PolicyNet,
    pub student: PolicyNet,
    pub prior: Option<PriorEncoder>,
    pub buffer: TrajectoryBuffer,
    pub rng: ChaCha8Rng,
    pub frozen_hashes: Option<ComponentHashes>,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            metadata: Metadata {
                mode: t.cfg.mode,
                epoch: t.epoch,
                seed: t.cfg.seed,
            },
            config: t.cfg.clone(),
            world_model: t.world_model.clone(),
            codebook: t.codebook.clone(),
            teacher: t.teacher.clone(),
            student: t.student.clone(),
            prior: t.prior.clone(),
            buffer: t.buffer.clone(),
            rng: t.rng.clone(),
            frozen_hashes: t.frozen_hashes.clone(),
        }
    }

    pub fn into_trainer(self) -> Trainer {
        Trainer {
            cfg: self.config,
            world_model: self.world_model,
            teacher: self.teacher,
            student: self.student,
            codebook: self.codebook,
            prior: self.prior,
            buffer: self.buffer,
            epoch: self.metadata.epoch,
            rng: self.rng,
            frozen_hashes: self.frozen_hashes,
        }
    }

    pub fn to_json(&self) -> Result<String, CheckpointError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.format_version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: header.format_version,
                expected: FORMAT_VERSION,
            });
        }
        Ok(serde_json::from_str(text)?)
    }

    pub fn expect_mode(&self, mode: PolicyMode) -> Result<(), CheckpointError> {
        if self.metadata.mode != mode {
            return Err(CheckpointError::ModeMismatch {
                expected: mode,
                found: self.metadata.mode,
            });
        }
        Ok(())
    }
}

pub fn save_checkpoint(t: &Trainer, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    std::fs::write(path, Checkpoint::from_trainer(t).to_json()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::from_json(&std::fs::read_to_string(path)?)
}

/// Column names of the trajectory CSV, with units in brackets.
pub fn csv_header(n_body: usize, n_joint: usize) -> Vec<String> {
    let mut h = vec!["time[s]".to_string()];
    for b in 0..n_body {
        for c in ["x", "y", "z"] {
            h.push(format!("body{b}_p{c}[m]"));
        }
        for k in 0..6 {
            h.push(format!("body{b}_rot6d_{k}[1]"));
        }
    }
    for j in 0..n_joint {
        h.push(format!("q{j}[rad]"));
    }
    for j in 0..n_joint {
        h.push(format!("dq{j}[rad/s]"));
    }
    for j in 0..n_joint {
        h.push(format!("action{j}[rad]"));
    }
    h.push("policy".into());
    h.push("code".into());
    h
}

/// One row per step at `fps`: the state before the step, the action taken,
/// which policy acted and its codebook index (empty when none).
pub fn export_trajectory(
    traj: &crate::trainer::Trajectory,
    n_body: usize,
    fps: f64,
    out: impl Write,
) -> Result<(), CheckpointError> {
    let n_joint = traj
        .steps
        .first()
        .map_or(0, |s| (s.state.len() - n_body * BODY_FEATURES) / 2);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(n_body, n_joint))?;
    for (k, s) in traj.steps.iter().enumerate() {
        let mut row = vec![(k as f64 / fps).to_string()];
        for b in 0..n_body {
            let base = b * BODY_FEATURES;
            row.extend(s.state[base..base + 9].iter().map(|v| v.to_string()));
        }
        let q0 = n_body * BODY_FEATURES;
        row.extend(s.state[q0..q0 + 2 * n_joint].iter().map(|v| v.to_string()));
        row.extend(s.action.iter().map(|v| v.to_string()));
        row.push(s.tag.as_str().into());
        row.push(s.index.map(|i| i.to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_trajectory_file(
    traj: &crate::trainer::Trajectory,
    n_body: usize,
    fps: f64,
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    let f = std::fs::File::create(path)?;
    export_trajectory(traj, n_body, fps, std::io::BufWriter::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::replay_reference;
    use crate::motion::{synth_clip, GaitSpec};
    use crate::toysim::EnvRandomization;

    fn tiny() -> RunConfig {
        RunConfig {
            embed: 8,
            hidden: vec![8],
            wm_hidden: vec![8],
            latent_dim: 4,
            codebook_size: 4,
            ..RunConfig::default()
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let t = Trainer::new(tiny()).unwrap();
        let a = Checkpoint::from_trainer(&t).to_json().unwrap();
        let back = Checkpoint::from_json(&a).unwrap();
        assert_eq!(back.to_json().unwrap(), a);
        assert_eq!(back.into_trainer(), t);
    }

    #[test]
    fn version_and_mode_are_checked() {
        let t = Trainer::new(tiny()).unwrap();
        let mut c = Checkpoint::from_trainer(&t);
        assert!(c.expect_mode(PolicyMode::Vq).is_ok());
        assert!(matches!(
            c.expect_mode(PolicyMode::Vae),
            Err(CheckpointError::ModeMismatch { .. })
        ));
        c.format_version = 99;
        let text = c.to_json().unwrap();
        assert!(matches!(
            Checkpoint::from_json(&text),
            Err(CheckpointError::Version { found: 99, .. })
        ));
        assert!(matches!(
            Checkpoint::from_json("{\"format_version\": 1, \"metadata\": 3}"),
            Err(CheckpointError::Corrupt(_))
        ));
    }

    #[test]
    fn csv_rows_and_timestamps() {
        let clip = synth_clip(&GaitSpec::walk()).unwrap();
        let traj = replay_reference(&clip, &EnvRandomization::nominal(), &RunConfig::default());
        let n = traj.len();
        let mut buf = Vec::new();
        export_trajectory(&traj, 7, 30.0, &mut buf).unwrap();
        let mut r = csv::Reader::from_reader(buf.as_slice());
        let header = r.headers().unwrap().clone();
        assert!(header.iter().any(|h| h == "q0[rad]"));
        let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        assert_eq!(rows.len(), n);
        let qcol = header.iter().position(|h| h == "q0[rad]").unwrap();
        for (k, row) in rows.iter().enumerate() {
            let t: f64 = row[0].parse().unwrap();
            assert!((t - k as f64 / 30.0).abs() < 1e-12);
            for j in 0..6 {
                let q: f64 = row[qcol + j].parse().unwrap();
                assert!((q - traj.steps[k].state[7 * 15 + j]).abs() < 1e-9);
            }
        }
    }
}
