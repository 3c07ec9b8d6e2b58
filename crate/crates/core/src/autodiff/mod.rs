//! Dense tensor algebra with reverse-mode differentiation over a recorded
//! operation tape.

mod gradcheck;
mod kernels;
mod params;
mod tape;

pub use gradcheck::{gradcheck, relative_error};
pub use params::{ParamEntry, ParamGroup, ParamId, ParamSet};
pub use tape::{BackwardRule, BnMode, BnStats, Tape, Var};
