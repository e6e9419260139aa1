pub mod ablate;
pub mod eval;
pub mod export;
pub mod gen;
pub mod group;
pub mod infer;
pub mod probe;
pub mod selfcheck;
pub mod train;
