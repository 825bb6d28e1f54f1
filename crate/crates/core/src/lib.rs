//! Identification of mixtures of binary product distributions from their
//! multilinear moments.

pub mod bootstrap;
pub mod error;
pub mod json;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod power;
pub mod recover;
pub mod stability;
pub mod subsets;

pub use error::{CMatrixKind, Error, Result, Stage};
pub use model::{
    model_distance, random_model, ComponentAlignment, MixtureModel, SeparatedRows, SeparationReport, Subset,
};
pub use moments::{draw_samples, empirical_moment, Dataset, MomentOracle, OracleMode, Perturbation};
pub use subsets::{
    build_c, family_sum, fos_column_select, search_triples, select_families, FamilySelection, MomentMatrixC,
    RowLayout, SearchMode, Strategy, SubsetFamily,
};
pub use recover::{identify, identify_with_selection, Diagnostics, Failure, IdentifyOptions, RecoveredModel};
