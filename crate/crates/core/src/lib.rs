//! Constraint qualifications, necessary-condition certificates and direct
//! transcription for optimal control of implicit systems.

pub mod error;
pub mod expr;
pub mod linalg;
pub mod lp;
pub mod polyhedra;
pub mod exec;
pub mod cq;
pub mod problem;
pub mod certificate;
pub mod transcribe;
