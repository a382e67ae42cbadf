//! The variational autoencoder: parameters, ELBO, training and checkpoints.

mod checkpoint;
mod config;
mod forward;
mod params;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use config::{LatentConfig, TrainConfig, TRAIN_KEYS};
pub use forward::{
    decode, decoder_graph, draw_noise, elbo_graph, encode, encoder_graph, kl_standard_normal, kl_standard_normal_graph,
    nb_log_likelihood, posterior_means, sample_latent, sample_latent_with, Batch, ElboInputs, ElboTerms, ElboValues,
    EncoderOutput, GpContext, NbParams, DISPERSION_FLOOR, MEAN_FLOOR, SIGMA_FLOOR,
};
pub use params::{init_params, Linear, Params};
pub use train::{embed, fit, select_inducing, EpochLog, FitFailure, Fitted, Model, RngState, MEDIAN_SUBSAMPLE};
