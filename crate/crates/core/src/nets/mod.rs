//! From-scratch scorers: grasp quality (GQN), post-grasp displacement (GDN)
//! and insertion quality (IQN), trained with momentum SGD.

pub mod kernels;
mod model;
mod train;

use thiserror::Error;

pub use kernels::Real;
pub use model::{
    displacement_from_output, displacement_target, pose_vector, prepare_image, Arch, Scorer, Variant, Workspace,
    DEPTH_SCALE, DISPLACEMENT_SCALE, INPUT_SIZE, POSE_SCALE, WEIGHTS_MAGIC, WEIGHTS_VERSION,
};
pub use train::{
    auc, bce_with_logits, curriculum_for, iqn_label, squared_error, train_gdn, train_gqn, train_iqn, train_on,
    Curriculum, EpochStats, Examples, GdnEstimator, Loss, StageTrace, TrainConfig, TrainReport,
};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("no training examples{0}")]
    Empty(String),
    #[error("weights file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl<T: Real> Scorer<T> {
    /// Head outputs for prepared inputs; classifier heads pass through a sigmoid.
    pub fn predict(&self, ws: &mut Workspace<T>, images: &[T], poses: &[T], batch: usize) -> Result<Vec<f64>, NetError> {
        self.forward(ws, images, poses, batch)?;
        let out = ws.output().iter().map(|v| v.to_f64().unwrap_or(f64::NAN));
        Ok(if self.variant == Variant::Gdn { out.collect() } else { out.map(sigmoid).collect() })
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
