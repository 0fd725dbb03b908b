//! Versioned JSON checkpoints and atomic file writes.
//!
//! Floating-point values are stored as JSON numbers with shortest-roundtrip
//! encoding, so a save/load cycle is bit-exact.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{ManifoldPoint, ManifoldSpec};
use crate::model::RsdsModel;
use crate::netfield::{ScalingNet, VectorFieldNet};
use crate::odeint::IntegrationConfig;
use crate::real::Real;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Which pipeline a checkpoint drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Manifold-aware model (chart-wise flows, geodesic canonical field).
    Rsds,
    /// Ambient-space baseline trained on the same data (flows in R^n).
    EuclideanFlow,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldNetJson {
    pub widths: Vec<usize>,
    /// row-major weight matrices, one per layer
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingNetJson {
    pub centers: Vec<Vec<f64>>,
    pub widths: Vec<f64>,
    pub weights: Vec<f64>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub seed: Option<u64>,
    pub demo_dt: Option<f64>,
    pub demo_duration: Option<f64>,
    /// full run configuration echoed for provenance
    pub run_config: Option<serde_json::Value>,
}

/// Everything needed to reconstruct a model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model_kind: ModelKind,
    pub manifold: ManifoldSpec,
    /// for ambient-space baselines: the manifold the data actually lives on
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_manifold: Option<ManifoldSpec>,
    pub integration: IntegrationConfig,
    pub goal: Vec<f64>,
    pub field_net: FieldNetJson,
    pub scaling_net: ScalingNetJson,
    #[serde(default)]
    pub training: TrainingMeta,
}

impl Checkpoint {
    pub fn from_model<T: Real>(
        model: &RsdsModel<T>,
        kind: ModelKind,
        training: TrainingMeta,
    ) -> Self {
        let mut widths = vec![model.field.weights[0].ncols()];
        for w in &model.field.weights {
            widths.push(w.nrows());
        }
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            model_kind: kind,
            manifold: model.spec.clone(),
            data_manifold: None,
            integration: model.cfg,
            goal: model.goal.coords.iter().map(|v| v.to_f64()).collect(),
            field_net: FieldNetJson {
                widths,
                weights: model
                    .field
                    .weights
                    .iter()
                    .map(|w| {
                        (0..w.nrows())
                            .flat_map(|r| (0..w.ncols()).map(move |c| (r, c)))
                            .map(|(r, c)| w[(r, c)].to_f64())
                            .collect()
                    })
                    .collect(),
                biases: model
                    .field
                    .biases
                    .iter()
                    .map(|b| b.iter().map(|v| v.to_f64()).collect())
                    .collect(),
            },
            scaling_net: ScalingNetJson {
                centers: model
                    .scaling
                    .centers
                    .iter()
                    .map(|c| c.coords.iter().map(|v| v.to_f64()).collect())
                    .collect(),
                widths: model.scaling.sigmas.iter().map(|s| s.to_f64()).collect(),
                weights: model.scaling.weights.iter().map(|v| v.to_f64()).collect(),
                epsilon: model.scaling.epsilon.to_f64(),
            },
            training,
        }
    }

    pub fn to_model<T: Real>(&self) -> Result<RsdsModel<T>> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported checkpoint version {}",
                self.format_version
            )));
        }
        self.manifold.validate()?;
        self.integration.validate()?;
        let n_layers = self.field_net.widths.len() - 1;
        if self.field_net.weights.len() != n_layers || self.field_net.biases.len() != n_layers {
            return Err(Error::InvalidConfig(
                "field net layer counts are inconsistent".into(),
            ));
        }
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (rows, cols) = (self.field_net.widths[l + 1], self.field_net.widths[l]);
            let raw = &self.field_net.weights[l];
            if raw.len() != rows * cols {
                return Err(Error::InvalidConfig(format!(
                    "layer {l} weight size {} != {rows}x{cols}",
                    raw.len()
                )));
            }
            weights.push(DMatrix::from_fn(rows, cols, |r, c| {
                T::of(raw[r * cols + c])
            }));
            let braw = &self.field_net.biases[l];
            if braw.len() != rows {
                return Err(Error::InvalidConfig(format!(
                    "layer {l} bias size {} != {rows}",
                    braw.len()
                )));
            }
            biases.push(DVector::from_iterator(rows, braw.iter().map(|v| T::of(*v))));
        }
        let field = VectorFieldNet {
            spec: self.manifold.clone(),
            weights,
            biases,
        };
        let centers: Vec<ManifoldPoint<T>> = self
            .scaling_net
            .centers
            .iter()
            .map(|c| {
                ManifoldPoint::new(DVector::from_iterator(c.len(), c.iter().map(|v| T::of(*v))))
            })
            .collect();
        let sigmas: Vec<T> = self.scaling_net.widths.iter().map(|v| T::of(*v)).collect();
        let sw = DVector::from_iterator(
            self.scaling_net.weights.len(),
            self.scaling_net.weights.iter().map(|v| T::of(*v)),
        );
        let mut scaling = ScalingNet::new(&self.manifold, centers, sigmas, sw);
        scaling.epsilon = T::of(self.scaling_net.epsilon);
        let goal = ManifoldPoint::new(DVector::from_iterator(
            self.goal.len(),
            self.goal.iter().map(|v| T::of(*v)),
        ));
        let model = RsdsModel {
            spec: self.manifold.clone(),
            field,
            scaling,
            goal,
            cfg: self.integration,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        atomic_write(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Write via a temp file and rename, so interrupted runs never leave a
/// half-written file behind.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp.partial");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netfield::DEFAULT_HIDDEN;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> RsdsModel<f64> {
        let spec = ManifoldSpec::pose();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let field = VectorFieldNet::random_init(&spec, DEFAULT_HIDDEN, &mut rng, 0.5);
        let goal: ManifoldPoint<f64> = spec.sample_uniform(&mut rng);
        let pts: Vec<ManifoldPoint<f64>> = (0..30).map(|_| spec.sample_uniform(&mut rng)).collect();
        let scaling = ScalingNet::init_from_points(&spec, &pts, 10, &mut rng).unwrap();
        RsdsModel {
            spec,
            field,
            scaling,
            goal,
            cfg: IntegrationConfig::default(),
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let m = model();
        let ck = Checkpoint::from_model(&m, ModelKind::Rsds, TrainingMeta::default());
        let text = serde_json::to_string(&ck).unwrap();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        let m2: RsdsModel<f64> = back.to_model().unwrap();
        for (a, b) in m.field.weights.iter().zip(&m2.field.weights) {
            assert_eq!(a, b);
        }
        for (a, b) in m.field.biases.iter().zip(&m2.field.biases) {
            assert_eq!(a, b);
        }
        assert_eq!(m.scaling.weights, m2.scaling.weights);
        assert_eq!(m.goal.coords, m2.goal.coords);
        assert_eq!(m.cfg, m2.cfg);
    }

    #[test]
    fn atomic_write_then_load() {
        let dir = std::env::temp_dir().join("rsds_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        let m = model();
        let ck = Checkpoint::from_model(&m, ModelKind::Rsds, TrainingMeta::default());
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let _: RsdsModel<f64> = loaded.to_model().unwrap();
        assert!(!path.with_extension("tmp.partial").exists());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn corrupted_version_is_rejected() {
        let m = model();
        let mut ck = Checkpoint::from_model(&m, ModelKind::Rsds, TrainingMeta::default());
        ck.format_version = 99;
        assert!(ck.to_model::<f64>().is_err());
    }
}
