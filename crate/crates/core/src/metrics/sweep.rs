//! Metrics as a function of the number of requested tests.

use std::collections::BTreeMap;

use super::{aggregate, MaeMode, MetricsError, MetricsReport};
use crate::benchmark::RankedEntry;
use crate::sandbox::Sandbox;
use crate::verifier::{evaluate_verifier, EvaluationOutput, Verifier, VerifierError};

pub struct SweepPoint {
    pub report: Result<MetricsReport, MetricsError>,
    pub output: EvaluationOutput,
}

/// Evaluates `verifier` once per count. A count whose metrics cannot be
/// computed keeps its error instead of aborting the sweep.
pub fn scaling_sweep(
    benchmark: &[RankedEntry],
    verifier: &Verifier<'_>,
    sandbox: &Sandbox,
    counts: &[usize],
    mae_mode: MaeMode,
) -> Result<BTreeMap<usize, SweepPoint>, VerifierError> {
    let mut out = BTreeMap::new();
    for &count in counts {
        let output = evaluate_verifier(benchmark, &verifier.with_count(count), sandbox)?;
        let report = aggregate(&output.estimates, mae_mode).map(|(r, _)| r);
        out.insert(count, SweepPoint { report, output });
    }
    Ok(out)
}
