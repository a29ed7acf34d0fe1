//! Human pose parsing with visual symbols.
//!
//! Body parts are organized in a three-level tree (whole-body halves, limbs
//! and head, joints). Each part owns a set of *visual symbols*: appearance
//! subcategories discovered by clustering part offsets geometrically and then
//! splitting every geometric cluster with a latent SVM. Pairs of symbols on
//! an edge carry their own deformation model, and pairs never seen together
//! in training are forbidden outright. Inference is exact max-sum dynamic
//! programming on the tree using linear-time distance transforms.
//!
//! Module map:
//! - [`skeleton`], [`model`], [`model_io`]: part tree, parameters, parse
//!   results and the `PSYM` model container
//! - [`features`]: HOG-style cell features and dense filter responses
//! - [`symbols`]: k-means, latent SVM categorization, cross-validated pruning
//! - [`context`]: symbol-pair deformation tables
//! - [`inference`]: distance transforms, message passing, parse/detect
//! - [`learning`]: joint parameter learning with hard-negative mining
//! - [`evaluation`]: PCP scoring
//! - [`data`]: annotations, datasets, synthetic stick figures
//! - [`pipeline`]: the staged training pipeline and parse output records

pub mod context;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod grid;
pub mod image;
pub mod inference;
pub mod io;
pub mod learning;
pub mod model;
pub mod model_io;
pub mod pipeline;
pub mod skeleton;
pub mod symbols;

pub use context::{
    build_compatibility, compatibility_score, deformation_feature, Compatibility, ContextTable,
    EdgeTable, PairParams,
};
pub use data::{
    load_dataset, read_manifest, write_manifest, Dataset, JointRemap, LoadOptions, ManifestRecord,
    SynthConfig,
};
pub use error::{PoseError, Result};
pub use evaluation::{evaluate, pcp_correct, PcpReport, PredictedPose, Segment};
pub use features::{
    correlate_filter, crop_patch_feature, extract_features, FeatureMap, FEATURE_DIM,
};
pub use grid::Grid;
pub use image::ImageBuffer;
pub use inference::{
    detect_all, distance_transform_1d, distance_transform_2d, distance_transform_2d_into, parse,
    pass_messages,
};
pub use learning::{
    feature_vector, train, ParamLayout, PositiveExample, TrainConfig, TrainOutcome,
};
pub use model::{
    score_configuration, score_decomposition, ModelParams, ParseResult, PartParse, Symbol, SymbolId,
};
pub use model_io::Model;
pub use pipeline::{parse_image, train_pipeline, ParseRecord, PipelineConfig, TrainedPipeline};
pub use skeleton::{
    derive_part_instances, Annotation, BoxSize, JointAnnotation, Level, PartDef, SkeletonTree,
};
pub use symbols::{learn_part_symbols, LearnedSymbol, SymbolLearningConfig, SymbolSet};
