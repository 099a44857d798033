//! Signal level, curation and splitting.

pub mod curate;
pub mod dnmed;
pub mod split;

pub use curate::{curate, ClassSurvival, Curation};
pub use dnmed::{dn_med, DnMedAxis, DnMedConfig, DnMedReport};
pub use split::{split, SplitAssignment};
