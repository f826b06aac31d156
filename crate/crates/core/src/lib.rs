pub mod coarse_grain;
pub mod flow;
pub mod impact;
pub mod ingest;
pub mod linalg;
pub mod optim;
pub mod preprocess;
pub mod scalar;
pub mod stability;
pub mod stats;
pub mod pca_modes;
pub mod synth;
pub mod var_model;
pub mod pipeline;

pub use scalar::Scalar;

/// Default precision used by the pipeline and command line.
pub type Real = f64;
pub type Record = coarse_grain::PriceChangeRecord<Real>;
pub type Basis = pca_modes::ModeBasis<Real>;
pub type Model = var_model::VarModel<Real>;
pub type Sidecar = preprocess::PreprocessSidecar<Real>;
pub type Scaling = impact::ImpactScaling<Real>;
