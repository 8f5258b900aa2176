pub mod autoencoder;
pub mod benchmark;
pub mod config;
pub mod env;
pub mod error;
pub mod genetic;
pub mod gridworld;
pub mod policy;
pub mod properties;
pub mod search;

pub use autoencoder::{AutoencoderConfig, MlpAutoencoder};
pub use config::RunConfig;
pub use env::{EnvAction, Environment, FeatureSpace, PolicyOracle, RngStream};
pub use error::{Error, Result};
pub use genetic::{run_genetic, GaConfig};
pub use gridworld::{GridConfig, GridState, GridWorld};
pub use policy::{PolicyTrainConfig, QTable, TabularPolicy};
pub use properties::{ActionSequence, LossWeights, PropertyVector};
pub use search::{search, Counterfactual, Engine, Method, NodeLoss, SearchConfig};
