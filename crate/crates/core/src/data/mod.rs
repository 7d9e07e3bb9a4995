//! Frames, masks, optical flow and the dataset layout.

pub mod flow;
pub mod mask;
pub mod sequence;
pub mod synth;

pub use flow::{colorize_flow, read_flo, write_flo, FlowField, FlowNormalization};
pub use mask::BinaryMask;
pub use sequence::{list_sequences, load_mask_dir, load_sequence, save_masks, save_sequence, SequenceRecord};
pub use synth::{synth_sequence, GuideNoise, ObjectSpec, ShapeKind, SynthSpec, SYNTH_GUIDE};
