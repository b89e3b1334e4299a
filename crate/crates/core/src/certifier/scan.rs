use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::npa::LevelSpec;
use crate::photonic_sim::{exact_behavior, OpticalModel};
use crate::scalar::Scalar;
use crate::sdp::SolverOptions;

use super::tradeoff::min_entropy_rate;
use super::{guessing_probability, CertifierError, ConstraintMode, DiMode, GuessingProgramSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct ScanOptions<T> {
    pub mode: DiMode,
    pub constraint_mode: ConstraintMode,
    pub level: LevelSpec,
    pub solver: SolverOptions<T>,
    pub perturbation: T,
}

impl<T: Scalar> Default for ScanOptions<T> {
    fn default() -> Self {
        Self {
            mode: DiMode::SemiDi,
            constraint_mode: ConstraintMode::FullDistribution,
            level: LevelSpec::default(),
            solver: SolverOptions::default(),
            perturbation: T::lit(1e-8),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanRow<T> {
    pub eta_c: T,
    pub pg_upper: T,
    pub p_gen: T,
    pub rate_per_heralded_event: T,
    pub solver_status: String,
    pub gap: T,
}

fn scan_point<T: Scalar>(base: &OpticalModel<T>, eta_c: T, opts: &ScanOptions<T>) -> Result<ScanRow<T>, CertifierError> {
    if !(eta_c > T::zero() && eta_c <= T::one()) {
        return Err(CertifierError::Invalid(format!("eta_c = {eta_c} outside (0, 1]")));
    }
    let model = base.clone().with_eta_c(eta_c);
    let b = exact_behavior(&model).map_err(|e| CertifierError::Invalid(e.to_string()))?;
    let mut spec = GuessingProgramSpec::from_behavior(&b, opts.constraint_mode, opts.mode)?;
    spec.level = opts.level.clone();
    spec.perturbation = opts.perturbation;
    let bound = guessing_probability(&spec, &opts.solver)?;
    let per_round = min_entropy_rate(bound.pg_upper, bound.p_gen)?;
    // semi-DI programs already condition on heralding
    let rate = match opts.mode {
        DiMode::SemiDi => per_round,
        DiMode::FullyDi => per_round / b.heralding_rate(),
    };
    Ok(ScanRow {
        eta_c,
        pg_upper: bound.pg_upper,
        p_gen: bound.p_gen,
        rate_per_heralded_event: rate,
        solver_status: bound.status.to_string(),
        gap: bound.gap,
    })
}

/// Certified rate per heralded event for each `eta_c`. Points are solved in
/// parallel; rows come back in input order. A failing point yields a row
/// with zero rate, NaN bound and the error in `solver_status`.
pub fn rate_scan<T: Scalar>(base: &OpticalModel<T>, etas: &[T], opts: &ScanOptions<T>) -> Vec<ScanRow<T>> {
    etas.par_iter()
        .map(|&eta_c| {
            scan_point(base, eta_c, opts).unwrap_or_else(|e| ScanRow {
                eta_c,
                pg_upper: T::nan(),
                p_gen: T::nan(),
                rate_per_heralded_event: T::zero(),
                solver_status: format!("error: {e}"),
                gap: T::nan(),
            })
        })
        .collect()
}

/// CSV with the full column set, or `(x, y)` = `(eta_c, rate)` pairs only.
pub fn write_scan_csv<T: Scalar + Serialize, W: Write>(rows: &[ScanRow<T>], w: W, plot_only: bool) -> Result<(), CertifierError> {
    let mut out = csv::Writer::from_writer(w);
    if plot_only {
        out.write_record(["x", "y"])?;
        for r in rows {
            out.write_record([r.eta_c.to_string(), r.rate_per_heralded_event.to_string()])?;
        }
    } else {
        for r in rows {
            out.serialize(r)?;
        }
    }
    out.flush()?;
    Ok(())
}
