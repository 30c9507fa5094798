//! Text normalization for speech synthesis front ends.

pub mod codec;
pub mod corpus;
pub mod neural;
pub mod synth;
pub mod vocab;
pub mod tagger;
pub mod train;
pub mod two_stage;
pub mod verbalizer;
pub mod single_pass;
pub mod pipeline;
