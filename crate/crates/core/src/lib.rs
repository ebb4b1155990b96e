//! Fully private grouped matrix multiplication over prime fields.
//!
//! A master retrieves a set of products `A_i B_j` from two matrix libraries
//! held by `N` workers. The queries are built from cross-subspace alignment
//! codes so that any `T` colluding workers learn nothing about which
//! products (nor how many) were requested, and the answers of any `R`
//! workers suffice to recover every product.
//!
//! Modules follow the protocol phases:
//!
//! - [`field`], [`blockmatrix`]: GF(q) arithmetic and dense block matrices.
//! - [`instance`]: parameters, the desired set, re-indexing and grouping.
//! - [`encoder`]: master-side queries.
//! - [`worker`]: the worker computation.
//! - [`decoder`]: rational interpolation and reassembly.
//! - [`privacy`]: exhaustive verification of query privacy at tiny field sizes.
//! - [`simulator`]: end-to-end runs with stragglers and realized metrics.
//! - [`costmodel`]: closed-form costs and the NCC/NDC trade-off search.

pub mod blockmatrix;
pub mod config;
pub mod costmodel;
pub mod decoder;
pub mod encoder;
pub mod field;
pub mod instance;
pub mod privacy;
pub mod simulator;
pub mod worker;
