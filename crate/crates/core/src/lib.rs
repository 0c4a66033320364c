pub mod adp;
pub mod channel;
pub mod container;
pub mod dynamics;
pub mod environment;
pub mod error;
pub mod fingerprint;
pub mod geometry;
pub mod harness;
pub mod localize;
pub mod nn;
pub mod pipeline;
pub mod predictor;
pub mod rng;
pub mod scene;

pub use adp::{adp_from_csi, similarity, Adp, DftPair};
pub use channel::{
    array_response, quantize_delay, synthesize_csi, trace_paths, ArrayConfig, CsiMatrix,
    OfdmConfig, Path, Trace,
};
pub use environment::{Environment, Reflector};
pub use error::{Error, Result};
pub use geometry::{Segment, Vec2};
pub use fingerprint::{build_db, load_db, save_db, FingerprintDb, FingerprintEntry, GridSpec};
pub use scene::Scene;
pub use dynamics::{
    build_training_set, distort_paths, generate_sequence, random_walk, DistortionKind,
    DistortionScenario, FrameSequence, Walk, WalkMode,
};
