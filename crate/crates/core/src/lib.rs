pub mod augment;
pub mod corpus;
pub mod eval;
pub mod netgen;
pub mod synthetic;
pub mod t2s;
pub mod volgrid;
