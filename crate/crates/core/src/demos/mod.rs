pub mod browser;
pub mod nbody;
