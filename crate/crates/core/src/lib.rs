//! Poem-to-image sequence engine.
//!
//! A poem is split into segments where its entities or emotion shift, each
//! segment's image description is refined by an LLM loop that stops once the
//! alignment score plateaus, the descriptions are rendered by an image
//! backend that couples images through consistent self-attention, and the
//! results are scored with caption, poem, emotion and consistency metrics.

pub mod attention;
pub mod corpus;
pub mod embedding;
pub mod evaluation;
pub mod generation;
pub mod pipeline;
pub mod provider;
pub mod refinement;
pub mod segmentation;
pub mod util;
