//! Compositional finite abstractions of interconnected discrete-time switched
//! systems: grid abstractions with dwell-time counters, alternating simulation
//! certificates, small-gain composition and safety synthesis.

pub mod abstraction;
pub mod kfn;
pub mod linalg;
pub mod model;
pub mod certification;
pub mod composition;
pub mod synthesis;
pub mod traffic;
