//! Problem bundle documents, schemas, output files and CSV extraction.

pub mod bundle;
pub mod documents;
pub mod output;
pub mod schema;
