//! Context-aware user profiling for persuasiveness prediction.
//!
//! The crate retrieves records from a user's history, condenses them into a
//! profile with a language model, and predicts whether a comment would change
//! the user's view. It also scores how useful each record is for that
//! prediction and turns those scores into preference datasets for training
//! the profiler and the query generator.

pub mod corpus;
pub mod evalkit;
pub mod gateway;
pub mod generation;
pub mod pipeline;
pub mod preference;
pub mod retrieval;
pub mod seed;
pub mod synth;
pub mod text;
pub mod utility;
