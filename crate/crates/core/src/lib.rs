//! Memory engine for embodied exploration and question answering.

pub mod cognitive_controller;
pub mod episodic_memory;
pub mod geometry;
pub mod harness;
pub mod model_gateway;
pub mod par;
pub mod physical_space;
pub mod semantic_memory;
pub mod semantic_space;
pub mod simulator;
pub mod topk;
