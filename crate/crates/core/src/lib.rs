//! Mobility graphs from geo-tagged event streams.
//!
//! The pipeline reads geo-tagged events, infers each user's home from
//! night-time activity with DBSCAN, partitions homes into data-driven
//! neighborhoods, picks among many radius settings by variation of
//! information, and builds a directed graph whose edge `x -> y` counts the
//! persons living in `x` seen in `y`. The graph is then analyzed for
//! components, weighted degrees, Louvain communities and betweenness.

pub mod centrality;
pub mod cluster;
pub mod community;
pub mod error;
pub mod geo;
pub mod graph;
pub mod ingest;
pub mod oracle;
pub mod par;
pub mod pipeline;
pub mod select;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
