//! Transitive hashing across modalities and domains: two MLP towers map
//! features of each modality to `b`-bit codes, trained on supervised
//! auxiliary pairs while MMD aligns the code distributions of the auxiliary
//! and target domains.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the common `f64` instantiation.

pub mod datagen;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod network;
pub mod numerics;
pub mod objective;
pub mod retrieval;
pub mod rng;
pub mod scalar;
pub mod training;
pub mod types;

pub use error::{Error, Result};
pub use evaluation::{mean_average_precision, EvalReport};
pub use network::{init_tower, Tower};
pub use numerics::Matrix;
pub use objective::{BatchActivations, LossReport, ObjectiveParams};
pub use retrieval::{binarize, hamming_distance, rank_database, CodeTable, HammingIndex};
pub use scalar::Real;
pub use training::{grid_search_lr, sample_batch, train, Batch, TrainLog, Trained};
pub use types::{Ablation, Domain, FeatureDataset, GammaMode, Modality, RelationSet, TrainConfig, TrainingSets};

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Tower64 = Tower<f64>;
pub type Tower32 = Tower<f32>;
pub type Dataset64 = FeatureDataset<f64>;
pub type Dataset32 = FeatureDataset<f32>;
pub type SynthData64 = datagen::SynthData<f64>;
pub type TrainingSets64 = TrainingSets<f64>;
