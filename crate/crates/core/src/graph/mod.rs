//! Sparse graph storage, normalization, aggregation and synthetic generators.

mod csr;
mod sbm;

pub use csr::{build_csr, permute, sym_normalize, CsrGraph, NormalizedAdjacency};
pub use sbm::{sbm_dataset, sbm_generate, SbmGraph, SbmMode, SbmSpec};
