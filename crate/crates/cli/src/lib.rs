//! Command-line front end for networked observer-based control design.

pub mod commands;
pub mod files;
