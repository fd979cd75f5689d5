//! Toolkit around the `tm-core` metamodel: the `.tm` textual format,
//! JSON export, the bundled example models, and the command line.

pub mod cli;
pub mod corpus;
pub mod dsl;
pub mod json;
