//! Numerical checks of the convergence bounds.

mod constants;
mod ensemble;
mod gradient;
mod lemmas;
mod report;
mod sequence;

pub use constants::{
    estimate_assumption_constants, stability_offset, stability_offset_proof_form, state_lipschitz,
    AssumptionConstants, BoundConstants, Region,
};
pub use ensemble::{ensemble_stats, metric_matrix, EnsembleStats, Metric};
pub use gradient::{gradient_of_p, p_value};
pub use lemmas::{
    compute_error_term, derive_bound_constants, verify_lemma1, verify_lemma2, verify_lemma3, verify_lemma4,
    verify_theorem1, DerivedConstants, ErrorTermSample, ALLOWANCE_SIGMAS, REGION_INFLATION,
};
pub use report::{CheckStatus, StepMargin, VerificationReport};
pub use sequence::{check_sequence_lemma, fuzz_sequence_lemma, sequence_constants};
