// Negated comparisons reject NaN; index loops follow the matrix formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod densekit;
pub mod galerkin;
pub mod harness;
pub mod krylov;
pub mod modelproblem;
pub mod spectral;
pub mod subspaces;
pub mod sylvsep;
