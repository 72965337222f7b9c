pub mod gateway;
pub mod retrieval;
pub mod pipelines;
pub mod evaluation;
pub mod cli;
