//! Capacity analysis for Vision Transformers: exact parameter accounting,
//! the determination ratio `Q = M·K/P` and its error laws, a linear Monte
//! Carlo oracle for those laws, and a small deterministic ViT training and
//! grid-sweep harness built on a reverse-mode tape.

pub mod autodiff;
pub mod capacity;
pub mod cli;
pub mod data;
pub mod linear_oracle;
pub mod seed;
pub mod sweep;
pub mod table;
pub mod trainer;
pub mod vit;
