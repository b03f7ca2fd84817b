pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod estimands;
pub mod gformula;
pub mod series;
pub mod ssm;
pub mod stats;
pub mod synthgen;
