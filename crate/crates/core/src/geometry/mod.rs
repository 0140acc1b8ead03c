//! Rasterized domains inside the hold-all box, perturbation families, and
//! set-convergence metrics.

mod domain;
mod edt;
mod family;
mod metrics;
mod shape;

pub use domain::GridDomain;
pub use edt::{distance_transform, squared_edt_1d};
pub use family::{family_generate, Family, FamilyKind, FamilySpec};
pub use metrics::{ekeland_distance, hc_distance, kuratowski_check, ConditionVerdict, KuratowskiReport};
pub use shape::{rasterize, Shape};
