//! Clustering, partition metrics and communication-preservation summaries.

mod clustering;
mod communication;
mod metrics;

pub use clustering::{kmeans, KMeansResult, DEFAULT_RESTARTS};
pub use communication::{
    edge_weight_distribution, group_communication_matrix, ks_directional, EdgeWeightDistribution, GroupCommMatrix,
    KsDirectional,
};
pub use metrics::{ari, nmi, silhouette};
