//! Helpers shared by the integration tests and the acceptance report.
#![allow(dead_code)]

pub mod grad;
pub mod oracle;
pub mod invariants;
pub mod pipeline;
