//! Demonstration datasets and their on-disk form.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::actions::{flatten, unflatten, ActionKind, Trajectory, STEP_DIM};
use crate::container::{self, Array, ArrayData, DATASET_MAGIC};
use crate::error::{Error, Result};
use crate::groups::Image;
use crate::se3::{Pose, Rotation3};
use crate::sim::{CameraConfig, EnvConfig, Observation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub env: EnvConfig,
    pub action_kind: ActionKind,
    pub horizon: usize,
    pub exec_steps: usize,
    pub cameras: Vec<CameraConfig>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub images: Vec<Image>,
    pub pose: Pose,
    pub aperture: f64,
    /// Expert plan from this step, in the dataset's action kind.
    pub label: Trajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub episodes: Vec<EpisodeRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeIndex {
    seed: u64,
    steps: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileMeta {
    dataset: DatasetMeta,
    episodes: Vec<EpisodeIndex>,
}

/// Gripper pose as 3×3 rotation (row-major) then translation.
pub(crate) fn pose_to_row(p: &Pose) -> [f64; 12] {
    let m = p.rot.matrix();
    let mut r = [0.0; 12];
    for i in 0..3 {
        r[i * 3..i * 3 + 3].copy_from_slice(&m[i]);
    }
    r[9..].copy_from_slice(&p.trans);
    r
}

pub(crate) fn pose_from_row(r: &[f64]) -> Result<Pose> {
    let m = [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]];
    Pose::new(Rotation3::from_matrix_exact(m)?, [r[9], r[10], r[11]])
}

impl Dataset {
    pub fn n_steps(&self) -> usize {
        self.episodes.iter().map(|e| e.steps.len()).sum()
    }

    /// Observation at step `t` of episode `e` with `m` poses of history
    /// (the first pose repeats before the episode start).
    pub fn observation(&self, e: usize, t: usize, m: usize) -> Observation {
        let ep = &self.episodes[e];
        let history = (0..m)
            .map(|k| ep.steps[(t + k + 1).saturating_sub(m)].pose)
            .collect();
        let rec = &ep.steps[t];
        Observation {
            images: rec.images.clone(),
            pose: rec.pose,
            history,
            aperture: rec.aperture,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let s = self.n_steps();
        let n = self.meta.horizon;
        let mut arrays = Vec::new();
        for (c, cam) in self.meta.cameras.iter().enumerate() {
            let r = cam.resolution;
            let mut data = Vec::with_capacity(s * r * r * 3);
            for rec in self.episodes.iter().flat_map(|e| &e.steps) {
                data.extend(rec.images[c].data.iter().map(|&v| v as f32));
            }
            arrays.push(Array::f32(&format!("images/{c}"), vec![s, r, r, 3], data));
        }
        let recs = || self.episodes.iter().flat_map(|e| &e.steps);
        arrays.push(Array::f64("poses", vec![s, 12], recs().flat_map(|r| pose_to_row(&r.pose)).collect()));
        arrays.push(Array::f64("apertures", vec![s], recs().map(|r| r.aperture).collect()));
        let mut labels = Vec::with_capacity(s * n * STEP_DIM);
        for r in recs() {
            if r.label.len() != n || r.label.kind() != self.meta.action_kind {
                return Err(Error::Format("label does not match dataset horizon/kind".into()));
            }
            labels.extend(flatten(&r.label));
        }
        arrays.push(Array::f64("labels", vec![s, n, STEP_DIM], labels));
        let meta = FileMeta {
            dataset: self.meta.clone(),
            episodes: self
                .episodes
                .iter()
                .map(|e| EpisodeIndex {
                    seed: e.seed,
                    steps: e.steps.len(),
                })
                .collect(),
        };
        container::encode(DATASET_MAGIC, json!(meta), &arrays)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Dataset> {
        let (meta, mut arrays) = container::decode(DATASET_MAGIC, bytes)?;
        let meta: FileMeta = serde_json::from_value(meta)?;
        let s: usize = meta.episodes.iter().map(|e| e.steps).sum();
        let n = meta.dataset.horizon;
        let expect = |a: &Array, shape: Vec<usize>| -> Result<()> {
            if a.shape != shape {
                return Err(Error::Format(format!("array {} has shape {:?}, expected {shape:?}", a.name, a.shape)));
            }
            Ok(())
        };
        let mut images = Vec::new();
        for (c, cam) in meta.dataset.cameras.iter().enumerate() {
            let a = container::take(&mut arrays, &format!("images/{c}"))?;
            let r = cam.resolution;
            expect(&a, vec![s, r, r, 3])?;
            images.push(a.data.to_f64());
        }
        let poses = container::take(&mut arrays, "poses")?;
        expect(&poses, vec![s, 12])?;
        let apertures = container::take(&mut arrays, "apertures")?;
        expect(&apertures, vec![s])?;
        let labels = container::take(&mut arrays, "labels")?;
        expect(&labels, vec![s, n, STEP_DIM])?;
        let f64s = |a: Array| match a.data {
            ArrayData::F64(v) => Ok(v),
            ArrayData::F32(_) => Err(Error::Format(format!("array {} must be f64", a.name))),
        };
        let (poses, apertures, labels) = (f64s(poses)?, f64s(apertures)?, f64s(labels)?);

        let mut episodes = Vec::with_capacity(meta.episodes.len());
        let mut at = 0;
        for ep in &meta.episodes {
            let mut steps = Vec::with_capacity(ep.steps);
            for i in at..at + ep.steps {
                let imgs = meta
                    .dataset
                    .cameras
                    .iter()
                    .zip(&images)
                    .map(|(cam, data)| {
                        let px = cam.resolution * cam.resolution * 3;
                        Image::new(cam.resolution, cam.resolution, 3, data[i * px..(i + 1) * px].to_vec())
                    })
                    .collect::<Result<Vec<_>>>()?;
                steps.push(StepRecord {
                    images: imgs,
                    pose: pose_from_row(&poses[i * 12..(i + 1) * 12])?,
                    aperture: apertures[i],
                    label: unflatten(meta.dataset.action_kind, &labels[i * n * STEP_DIM..(i + 1) * n * STEP_DIM])?,
                });
            }
            at += ep.steps;
            episodes.push(EpisodeRecord { seed: ep.seed, steps });
        }
        Ok(Dataset {
            meta: meta.dataset,
            episodes,
        })
    }

    /// Writes the file and returns its SHA-256 checksum.
    pub fn write(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, &bytes)?;
        Ok(container::sha256_hex(&bytes))
    }

    pub fn read(path: &Path) -> Result<Dataset> {
        Dataset::from_bytes(&std::fs::read(path)?)
    }
}
