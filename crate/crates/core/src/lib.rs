//! Continual prune-and-select.
//!
//! A single network learns a sequence of classification tasks. Each task is
//! trained on the parameters no earlier task owns, pruned with importance
//! scores into a sparse subnetwork, and frozen. Subnetworks may overlap, but
//! a frozen scalar is never written again, so earlier tasks cannot be
//! forgotten. At test time the subnetwork for an unlabeled batch is chosen
//! from the batch itself.

pub mod analysis;
pub mod arch;
pub mod bitset;
pub mod checkpoint;
pub mod config;
pub mod controller;
pub mod data;
pub mod error;
pub mod graph;
pub mod head;
pub mod metrics;
pub mod ops;
pub mod optim;
pub mod params;
pub mod relief;
pub mod rng;
pub mod runner;
pub mod select;
pub mod tensor;
pub mod train;

pub use bitset::BitSet;
pub use error::{Error, Result};
pub use graph::{ComputeGraph, Layer, NormStats};
pub use params::{MaskedParamTensor, ParamStore, TaskId, TaskMaskSet};
pub use tensor::{DenseTensor, TensorShape};
