//! Representation similarity (linear CKA) and ablation tables.

mod cka;
mod grid;
mod report;

pub use cka::{linear_cka, Cka};
pub use grid::{cka_grid, format_g17, ActivationDump, CkaGrid};
pub use report::{ablation_report, load_records, AblationReport, ArmRow, ArmTable, AAD_ARMS, RSD_ARMS};
