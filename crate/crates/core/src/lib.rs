pub mod base_model;
pub mod data;
pub mod embeddings;
pub mod engine;
pub mod metrics;
pub mod nn;
pub mod numerics;
pub mod unexp_factor;
pub mod unexpectedness;
