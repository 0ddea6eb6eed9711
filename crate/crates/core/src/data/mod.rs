//! Dataset manifests, frame preprocessing, clip windowing and synthetic crowds.

mod image_io;
mod manifest;
mod synth;
mod windows;

pub use image_io::{load_frame, save_gray, Frame};
pub use manifest::{load_manifest, DatasetManifest};
pub use synth::{synth_sequence, SynthConfig, SynthSequence};
pub use windows::{make_windows, prepare, window_specs, ClipSample, PreparedFrames, WindowMode, WindowSpec};
