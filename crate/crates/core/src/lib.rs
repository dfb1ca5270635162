//! Scene-graph grounded planning under instruction and environment
//! ambiguity: a symbolic tabletop simulator, a scene-graph query engine, the
//! iterative query-and-reason loop with pluggable policies, and an
//! evaluation harness for success and correct-question rates.

pub mod agent;
pub mod chat;
pub mod eval;
pub mod harness;
pub mod instruction;
pub mod scenario;
pub mod scene_graph;
pub mod world;
