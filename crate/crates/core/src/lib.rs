pub mod doa;
pub mod equilibrium;
pub mod geometry;
pub mod integrator;
pub mod model;
pub mod quadrature;
pub mod transient;

/// Version stamped on every JSON document this crate emits.
pub const SCHEMA_VERSION: u32 = 1;
