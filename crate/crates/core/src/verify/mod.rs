//! Ground truth: the enumeration oracle, the closed-form catalog and the
//! statistical test kit.

pub mod closed_form;
pub mod enumerate;
pub mod report;
pub mod stats;

pub use closed_form::{closed_form, ClosedForm};
pub use enumerate::exact_prob_enum;
pub use report::{CsvRow, ReportRow, SimulationReport, CSV_COLUMNS};
pub use stats::{
    agreement_test, chi_square_bell, chi_square_counts, two_proportion_test, estimate_bias, estimate_with, wilson_interval,
    AgreementReport, BellReport, RunStats, SIGMA,
};
