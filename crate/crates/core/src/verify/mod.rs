//! Property suite: oracle equivalences, gradient checks and normalization.

pub mod benchmark;
pub mod decoding;
pub mod instances;
pub mod suite;
