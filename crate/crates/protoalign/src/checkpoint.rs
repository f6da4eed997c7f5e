//! Aligner checkpoints: one EMB1 file per parameter block plus `model.json`.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use protoalign_core::{Aligner, CsaAligner, LinearAligner, Loss, Matrix, MlpAligner, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::emb1;
use crate::output::Outputs;

pub const MODEL_FILE: &str = "model.json";

/// Serializable mirror of [`TrainConfig`] without the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub loss: String,
}

impl TrainSettings {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        TrainSettings {
            epochs: cfg.epochs,
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            loss: match cfg.loss {
                Loss::Cosine => "cosine",
                Loss::Mse => "mse",
            }
            .to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub family: String,
    pub image_dim: usize,
    pub text_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_dim: Option<usize>,
    /// Whether inputs were L2-normalized before fitting; evaluation repeats it.
    pub normalize: bool,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSettings>,
    /// Parameter block name to file name.
    pub params: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_trace: Option<String>,
}

fn row(v: &[f64]) -> Matrix {
    Matrix::from_vec(1, v.len(), v.to_vec()).expect("row shape")
}

fn blocks(aligner: &Aligner) -> Vec<(&'static str, Matrix)> {
    match aligner {
        Aligner::Mlp(m) => vec![
            ("w1", m.w1().clone()),
            ("b1", row(m.b1())),
            ("w2", m.w2().clone()),
            ("b2", row(m.b2())),
        ],
        Aligner::Linear(l) => vec![("a", l.a().clone()), ("b", row(l.b()))],
        Aligner::Csa(c) => vec![
            ("p_img", c.p_img.clone()),
            ("p_txt", c.p_txt.clone()),
            ("correlations", row(&c.correlations)),
            ("mean_img", row(&c.mean_img)),
            ("mean_txt", row(&c.mean_txt)),
        ],
    }
}

/// Adds the parameter files and `model.json` to `out`.
pub fn add_checkpoint(
    out: &mut Outputs,
    aligner: &Aligner,
    normalize: bool,
    seed: u64,
    train: Option<&TrainConfig>,
    loss_trace: Option<&str>,
) -> Result<ModelManifest> {
    let mut params = BTreeMap::new();
    for (name, m) in blocks(aligner) {
        let file = format!("{name}.emb");
        out.add(file.clone(), emb1::encode(&m)?);
        params.insert(name.to_string(), file);
    }
    let manifest = ModelManifest {
        family: aligner.family().to_string(),
        image_dim: aligner.image_dim(),
        text_dim: aligner.text_dim(),
        shared_dim: match aligner {
            Aligner::Csa(c) => Some(c.shared_dim()),
            _ => None,
        },
        normalize,
        seed,
        train: train.map(TrainSettings::from_config),
        params,
        loss_trace: loss_trace.map(str::to_string),
    };
    out.add_json(MODEL_FILE, &manifest)?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(Aligner, ModelManifest)> {
    let path = dir.join(MODEL_FILE);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let manifest: ModelManifest =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let block = |name: &str| -> Result<Matrix> {
        let file = manifest
            .params
            .get(name)
            .with_context(|| format!("{} lists no {name:?} parameter", path.display()))?;
        let p = dir.join(file);
        emb1::load_matrix(&p).with_context(|| format!("loading {}", p.display()))
    };
    let vector = |name: &str| -> Result<Vec<f64>> {
        let m = block(name)?;
        if m.rows() != 1 {
            bail!("parameter {name:?} should be a single row, found {} rows", m.rows());
        }
        Ok(m.into_vec())
    };
    let aligner = match manifest.family.as_str() {
        "mlp" => Aligner::Mlp(MlpAligner::from_parts(
            block("w1")?,
            vector("b1")?,
            block("w2")?,
            vector("b2")?,
        )?),
        "text2cpts" => Aligner::Linear(LinearAligner::from_parts(block("a")?, vector("b")?)?),
        "csa" => {
            let c = CsaAligner {
                p_img: block("p_img")?,
                p_txt: block("p_txt")?,
                correlations: vector("correlations")?,
                mean_img: vector("mean_img")?,
                mean_txt: vector("mean_txt")?,
            };
            if c.p_txt.rows() != c.p_img.rows()
                || c.mean_img.len() != c.p_img.cols()
                || c.mean_txt.len() != c.p_txt.cols()
            {
                bail!("inconsistent csa parameter shapes in {}", dir.display());
            }
            Aligner::Csa(c)
        }
        other => bail!("unknown aligner family {other:?} in {}", path.display()),
    };
    if aligner.image_dim() != manifest.image_dim || aligner.text_dim() != manifest.text_dim {
        bail!(
            "{}: parameters are {}→{} but the manifest says {}→{}",
            path.display(),
            aligner.text_dim(),
            aligner.image_dim(),
            manifest.text_dim,
            manifest.image_dim
        );
    }
    Ok((aligner, manifest))
}
