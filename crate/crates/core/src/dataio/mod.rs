//! Frame codecs, dataset files, augmentation, the synthetic corpus and the
//! model bundle format.

pub mod bundle;
pub mod dataset;
pub mod pnm;
pub mod synth;
pub mod transform;

pub use bundle::{load_bundle, save_bundle, ModelBundle};
pub use dataset::{
    fit_frame, format_labels, load_dir, load_labeled, mask_path, read_frame, read_labels,
    read_mask, write_frame, FrameRecord, Mask, LABELS_FILE,
};
pub use pnm::{decode_pgm, decode_ppm, encode_pgm, encode_ppm};
pub use synth::{
    synth_corpus, synth_frame, Split, SynthSpec, TextureParams, OCSVM_DIR, TEST_DIR, TRAIN_DIR,
};
pub use transform::{augment_brightness, resize_bilinear};
