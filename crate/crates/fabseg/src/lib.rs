//! Farmland parcel delineation pipeline.
//!
//! A coarse prompter network proposes per-pixel foreground scores; those
//! scores become mask and point prompts for a promptable segmentation block
//! (frozen image encoder, prompt encoder, and twin mask decoders for parcel
//! regions and parcel boundaries); postprocessing fuses the two decoded masks
//! and splits them into labelled parcels.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod imageio;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod postprocess;
pub mod prompt;
pub mod prompter;
pub mod raster;
pub mod sam;
pub mod seeding;
pub mod trainer;
pub mod verification;

pub use error::{Error, Result};
