//! Experiment configs, replicate runner, bundled reproductions, verification
//! suites and external-vector analysis behind the `lincon` binary.

pub mod config;
pub mod external;
pub mod reproduce;
pub mod runner;
pub mod verify;
