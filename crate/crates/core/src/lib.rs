//! Sparse approximate inverse preconditioners and a splitting-based solver
//! for matrices with a few dense columns.
//!
//! The pieces, bottom up:
//!
//! * [`sparse`], [`mm`], [`matching`]: CSC storage, Matrix Market I/O and
//!   the zero-free-diagonal row permutation;
//! * [`lstsq`]: the incremental QR least-squares kernel shared by
//!   [`spai`] and [`psai`];
//! * [`splitting`]: `A = A~ + U V^T` plus class checkers and generators;
//! * [`krylov`]: right-preconditioned BiCGStab;
//! * [`driver`]: the split-and-recover solve and the standard baseline.

pub mod driver;
pub mod error;
pub mod krylov;
pub mod lstsq;
pub mod matching;
pub mod mm;
pub mod psai;
pub mod spai;
pub mod sparse;
pub mod splitting;

pub use driver::{solve_irregular, solve_standard, CPolicy, DriverConfig, Method, Permute, SolveReport};
pub use error::{Result, SaiError};
pub use krylov::{bicgstab, bicgstab_csc, BicgstabOptions, SolveFlag, SolveOutcome};
pub use psai::{bpsai, psai, PsaiConfig, TolPolicy};
pub use spai::{spai, SpaiConfig};
pub use sparse::{column_stats, ColumnStats, CscMatrix, SparseVector};
pub use splitting::{split, MatrixKind, SparsifyStrategy, SplitOptions, SplitSystem};
