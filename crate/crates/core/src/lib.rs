//! Measuring where in a word disambiguating information sits.
//!
//! The crate covers the whole pipeline: building lexicons from wordlists or
//! raw text ([`lexicon`]), a small reverse-mode kernel ([`numerics`]),
//! count-based and neural character models ([`models`]), per-segment
//! surprisal under five measures ([`surprisal`]), the statistical battery
//! ([`analysis`]) and synthetic-language experiments ([`synthlab`]).

pub mod analysis;
pub mod error;
pub mod lexicon;
pub mod models;
pub mod numerics;
pub mod surprisal;
pub mod synthlab;

pub use error::{Error, Result};
