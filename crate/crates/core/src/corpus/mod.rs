//! Synthetic gesture corpus: generation, modality views, preprocessing,
//! augmentation and on-disk storage.

mod generate;
mod gesture;
mod store;
mod transform;

pub use generate::{
    derive_modalities, generate_split, generate_video, video_seed, view, GeneratorConfig, Modality, Split,
    VideoSample, COLOR_GAINS, FLOW_GAIN,
};
pub use gesture::{default_gestures, render_frame, Blob, GestureSpec, Pose, Scene, Trajectory};
pub use store::{
    corpus_exists, load_manifest, load_split, parse_manifest, write_corpus, Manifest, VideoEntry, ANNOTATION_FILE,
    MANIFEST_FILE, VIDEO_EXTENSION,
};
pub use transform::{
    augment, augment_random, center_crop, crop, prepare_eval, subsample_indices, subsample_nearest,
    temporal_source, warp_time, AugmentParams, AugmentationConfig,
};
