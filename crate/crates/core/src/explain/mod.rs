//! Case-level explanations: embedding projections, nearest neighbours with
//! tooltips, and feature attributions.

mod embed;
mod neighbors;
mod shap;

pub use embed::{default_perplexity, pca, project, tsne, EmbedMethod, EmbeddingMap, TsneParams};
pub use neighbors::{knn, knn_classify, nearest, neighbor_info, vote, Metric, Neighbor, NeighborInfo};
pub use shap::{
    kernel_shap, shapley_kernel, top_k_features, FeatureAttribution, FeatureRange, ShapMode, ShapValues, MAX_EXACT_FEATURES,
};

use crate::error::Result;
use crate::numeric::TrainedModel;

/// Kernel SHAP on the probability of the class `model` predicts at `x`.
pub fn explain_prediction(model: &TrainedModel, x: &[f64], background: &[Vec<f64>], mode: ShapMode, seed: u64) -> Result<(usize, ShapValues)> {
    let class = model.predict(x)?;
    let values = kernel_shap(|z| Ok(model.predict_proba(z)?[class]), x, background, mode, seed)?;
    Ok((class, values))
}
