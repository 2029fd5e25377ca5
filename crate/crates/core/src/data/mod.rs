//! Survey and raster ingestion, patch processing, geocode-safe splits and the
//! synthetic dataset generator.

mod dataset;
mod manifest;
mod normalize;
mod raster;
mod split;
pub mod survey;
pub mod synth;

pub use dataset::{Augment, Dataset, Example};
pub use manifest::{Manifest, ManifestEntry};
pub use normalize::NormalizationStats;
pub use raster::{center_crop, load_raster, random_crop, random_hflip, save_raster, RasterPatch, Source};
pub use split::{make_splits, split_validation, SplitMode, SplitSpec, BASE, FINETUNE, HELD_OUT_TEST};
pub use survey::{
    default_outcomes, load_survey, outcome_index, read_survey, save_survey, write_survey, SurveyRecord,
    OUTCOMES,
};
pub use synth::{synth_generate, write_dataset, CountryBox, OsmCounts, SynthDataset, SynthSpec};
