pub mod binio;
pub mod classify;
pub mod config;
pub mod corpus;
pub mod embed;
pub mod features;
pub mod fixtures;
pub mod ingest;
pub mod normalize;
pub mod pipeline;
pub mod rag;
pub mod remote;
pub mod router;
pub mod synth;
pub mod timing;
pub mod vecindex;
