//! Checks shared by the test targets and the acceptance report.
#![allow(dead_code)]

pub mod grad;
pub mod props;
pub mod oracle;
pub mod experiments;
pub mod variance;
