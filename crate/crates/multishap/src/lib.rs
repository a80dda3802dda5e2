//! IO companion to `multishap-core`: the scorer wire protocol and its
//! subprocess/HTTP transports, built-in synthetic scorers, matrix and
//! manifest files, PNG heatmaps, dataset reports and the `multishap` CLI.

pub mod cli;
pub mod client;
pub mod config;
pub mod error;
pub mod image_io;
pub mod manifest;
pub mod matrix_io;
pub mod protocol;
pub mod report;
pub mod synthetic;

pub use client::{connect, ClientOptions, Endpoint, EndpointSpec, HttpEndpoint, ProtocolClient, SubprocessEndpoint};
pub use error::{Error, Result};
pub use matrix_io::MatrixDocument;
pub use protocol::{Meta, Reply, ScoreRequest, Task};
pub use synthetic::{GameSpec, SyntheticScorer, SyntheticService};
