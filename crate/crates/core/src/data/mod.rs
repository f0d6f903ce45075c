//! Synthetic video generation, pseudo tracks, clip sampling, and file I/O.

pub mod font;
pub mod io;
pub mod synth;

pub use io::{read_annotations, write_annotations, AnnotatedFrames, AnnotatedInstance};
pub use synth::{
    generate_clip, pseudo_tracks_from_image, sample_training_clip, Instance, SynthConfig,
    VideoClipSample,
};
