use std::collections::BTreeSet;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is ~0 are judged on absolute error.
    pub floor: f64,
    /// Parameters that sit behind a declared gradient stop. Their analytic
    /// gradient must be exactly zero; a nonzero numeric derivative there is
    /// reported as intentional rather than as an error.
    pub declared_stops: BTreeSet<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, floor: 1e-4, declared_stops: BTreeSet::new() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub coordinates: usize,
    pub max_rel_error: f64,
    /// Coordinate achieving `max_rel_error`.
    pub worst: Option<Mismatch>,
    /// Stopped coordinates where the numeric derivative is nonzero.
    pub intentional_stops: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of a scalar function of `store` against
/// central finite differences, coordinate by coordinate.
pub fn grad_check<F>(store: &ParamStore, f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, s)?;
        let v = g.value(out);
        if !v.is_scalar() {
            return Err(Error::shape("grad_check", format!("function must be scalar, got {:?}", v.shape())));
        }
        Ok(v.item())
    };

    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let grads = g.backward(out)?;

    let mut report = GradCheckReport::default();
    let mut probe = store.clone();
    for (name, _) in store.iter() {
        let Some(analytic) = grads.get(name) else { continue };
        let stopped = opts.declared_stops.contains(name);
        for i in 0..analytic.numel() {
            let orig = store.value(name)?.data()[i];
            probe.value_mut(name)?.data_mut()[i] = orig + opts.step;
            let plus = eval(&probe)?;
            probe.value_mut(name)?.data_mut()[i] = orig - opts.step;
            let minus = eval(&probe)?;
            probe.value_mut(name)?.data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic.data()[i];
            report.coordinates += 1;
            let record = Mismatch { param: name.to_string(), index: i, analytic: a, numeric };
            if stopped && a == 0.0 {
                if numeric != 0.0 {
                    report.intentional_stops.push(record);
                }
                continue;
            }
            let err = relative_error(a, numeric, opts.floor);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some(record);
            }
        }
    }
    Ok(report)
}
