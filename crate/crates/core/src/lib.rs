//! Sparse deformation-sensor placement and contact-force localization.
//!
//! The crate covers the whole offline pipeline: simulate deformation data on
//! a thin plate ([`plate`]), standardize and partition it ([`dataset`]), drop
//! infeasible sensor sites ([`filter`]), learn force locators ([`svr`],
//! [`locator`]), model deformation with a Gaussian process ([`gp`]), choose
//! sparse sensor sets ([`placement`]) and evaluate them ([`eval`]).

pub mod dataset;
pub mod error;
pub mod eval;
pub mod filter;
pub mod gp;
pub mod locator;
pub mod placement;
pub mod plate;
pub mod study;
pub mod svr;

pub use dataset::{DeformationDataset, FoldPlan, SplitPlan, StandardizationStats};
pub use error::{Error, Result};
pub use locator::{ForceLocator, LocatorParams, SvrGrid};
pub use placement::{Method, SelectionGoal, SelectionResult};
pub use plate::{ForceTrial, PlateSpec, Point2, SamplingGrid, Signal};
pub use study::{StudyConfig, TrialSet};
pub use svr::{SvrHyperParams, SvrModel};
