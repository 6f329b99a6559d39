pub mod agent;
pub mod consensus;
pub mod experiment;
pub mod netsim;
pub mod orchestrator;
pub mod scoring;
pub mod stream;
