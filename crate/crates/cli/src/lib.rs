//! Command-line front end: problem files, the five commands and their
//! CSV/record output.

pub mod app;
pub mod commands;
pub mod fmt;
pub mod problem_file;

pub use app::run;
