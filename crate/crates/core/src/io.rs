//! File ingestion: Matrix Market parsing/serialization and a sparse-
//! collection fetch client with an on-disk cache.

pub mod fetch;
pub mod market;

pub use fetch::{cache_dir, fetch_matrix, FetchError, MatrixSource};
pub use market::{read_matrix_market, write_matrix_market, MarketError};
