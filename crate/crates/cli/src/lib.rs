//! Command-line front end and review service for `critclust`.

pub mod backend;
pub mod cli;
pub mod plot;
pub mod service;

pub use backend::BackendSpec;
pub use cli::{main_with, Cli};
pub use service::{router, AppState};
