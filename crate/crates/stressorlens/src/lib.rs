//! Pipeline orchestration, snapshot persistence and the HTTP service for
//! stressor topic analysis.

pub mod api;
pub mod config;
pub mod pipeline;
pub mod snapshot;
