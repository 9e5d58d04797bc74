//! Command-line front end: problem files, scenario runs, mode comparison and
//! CSV/JSON/SVG artifacts.

pub mod cli;
pub mod problem_file;
pub mod scenario;
pub mod svg;

pub use cli::{execute, Cli};
pub use problem_file::ProblemFile;
pub use scenario::{Scenario, ScenarioConfig};
