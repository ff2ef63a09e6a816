//! Norm- and distance-based metrics.

use super::{aggregate_values, Aggregation, MetricValue};
use crate::error::{Error, Result};
use crate::esd::{singular_values, Esd};
use crate::tailfit::TailFit;
use crate::tensor_io::WeightMatrix;

pub fn layer_log_norm(fro_sq: f64) -> MetricValue {
    if fro_sq > 0.0 {
        MetricValue::from(fro_sq.ln())
    } else {
        MetricValue::undefined("zero matrix")
    }
}

pub fn layer_log_spectral_norm(esd: &Esd) -> MetricValue {
    if esd.lambda_max > 0.0 {
        MetricValue::from(esd.lambda_max.ln())
    } else {
        MetricValue::undefined("zero matrix")
    }
}

pub fn layer_stable_rank(esd: &Esd) -> MetricValue {
    if esd.lambda_max > 0.0 {
        MetricValue::from(esd.trace() / esd.lambda_max)
    } else {
        MetricValue::undefined("zero matrix")
    }
}

pub fn layer_mp_softrank(esd: &Esd, fit: &TailFit) -> MetricValue {
    match fit.bulk_edge {
        Some(edge) if esd.lambda_max > 0.0 => MetricValue::from(edge / esd.lambda_max),
        Some(_) => MetricValue::undefined("zero matrix"),
        None => MetricValue::undefined("MP fit has no bulk edge"),
    }
}

fn difference(w: &WeightMatrix, init: &WeightMatrix) -> Result<nalgebra::DMatrix<f64>> {
    if w.data().shape() != init.data().shape() {
        return Err(Error::DimensionMismatch(format!(
            "{}: shape {:?} vs initial {:?}",
            w.name(),
            w.data().shape(),
            init.data().shape()
        )));
    }
    Ok(w.data() - init.data())
}

/// `‖W - W_init‖_F²` for one layer.
pub fn layer_fro_dist(w: &WeightMatrix, init: &WeightMatrix) -> Result<f64> {
    Ok(difference(w, init)?.norm_squared())
}

/// `‖W - W_init‖₂²` for one layer.
pub fn layer_dist_spec(w: &WeightMatrix, init: &WeightMatrix) -> Result<f64> {
    let d = difference(w, init)?;
    let top = singular_values(&d, w.name())?.first().copied().unwrap_or(0.0);
    Ok(top * top)
}

fn paired<'a>(matrices: &'a [WeightMatrix], init: &'a [WeightMatrix]) -> Result<Vec<(&'a WeightMatrix, &'a WeightMatrix)>> {
    crate::tensor_io::match_by_name(matrices, init)
}

/// `Σ ‖Wᵢ‖_F²`.
pub fn param_norm(matrices: &[WeightMatrix]) -> f64 {
    matrices.iter().map(|m| m.frobenius_sq()).sum()
}

/// `Σ ‖Wᵢ - Wᵢ_init‖_F²`, matching layers by name.
pub fn fro_dist(matrices: &[WeightMatrix], init: &[WeightMatrix]) -> Result<f64> {
    paired(matrices, init)?.into_iter().map(|(w, i)| layer_fro_dist(w, i)).sum()
}

/// `Σ ‖Wᵢ - Wᵢ_init‖₂²`, matching layers by name.
pub fn dist_spec_init(matrices: &[WeightMatrix], init: &[WeightMatrix]) -> Result<f64> {
    paired(matrices, init)?.into_iter().map(|(w, i)| layer_dist_spec(w, i)).sum()
}

/// `(1/d) Σ log ‖Wᵢ‖_F²`; undefined when any matrix is zero. Reports
/// instead drop zero layers from the mean and count them.
pub fn log_norm(matrices: &[WeightMatrix]) -> MetricValue {
    let v: Vec<MetricValue> = matrices.iter().map(|m| layer_log_norm(m.frobenius_sq())).collect();
    if let Some(bad) = v.iter().find(|x| !x.is_defined()) {
        return bad.clone();
    }
    aggregate_values(Aggregation::Mean, &v).0
}

/// `(1/d) Σ log λᵢ,max`.
pub fn log_spectral_norm(esds: &[Esd]) -> MetricValue {
    let v: Vec<MetricValue> = esds.iter().map(layer_log_spectral_norm).collect();
    aggregate_values(Aggregation::Mean, &v).0
}

/// `(1/d) Σ ‖Wᵢ‖_F² / ‖Wᵢ‖₂²`.
pub fn stable_rank(esds: &[Esd]) -> MetricValue {
    let v: Vec<MetricValue> = esds.iter().map(layer_stable_rank).collect();
    aggregate_values(Aggregation::Mean, &v).0
}

/// `(1/d) Σ λ⁺ᵢ / λᵢ,max` with `λ⁺` the fitted MP bulk edge.
pub fn mp_softrank(esds: &[Esd], mp_fits: &[TailFit]) -> MetricValue {
    let v: Vec<MetricValue> = esds.iter().zip(mp_fits).map(|(e, f)| layer_mp_softrank(e, f)).collect();
    aggregate_values(Aggregation::Mean, &v).0
}
