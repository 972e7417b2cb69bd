pub mod attribute;
pub mod cli;
pub mod config;
pub mod datastore;
pub mod embedder;
pub mod evaluation;
pub mod fusion;
pub mod pipeline;
pub mod reasoning;
pub mod retrieval;
pub mod service;
