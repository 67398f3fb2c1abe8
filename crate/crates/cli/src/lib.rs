//! Pipeline behind the `skillprobe` binary: episode generation, cached agent
//! runs, and metric and statistics reports.

pub mod analysis;
pub mod config;
pub mod factory;
pub mod gen;
pub mod layout;
pub mod report;
pub mod run;
pub mod serve;
pub mod store;

pub use config::{Overrides, Resolved, RunConfig};
pub use layout::Layout;
