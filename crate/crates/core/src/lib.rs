pub mod commands;
pub mod corpus;
pub mod encoder;
pub mod engine;
pub mod heads;
pub mod metrics;
pub mod model;
pub mod propagation;
pub mod spans;
pub mod tensor;
