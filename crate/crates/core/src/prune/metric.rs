use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{axis_l2_norms, Axis, Tensor2D};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MetricKind {
    Magnitude,
    Wanda,
    OptSpa,
}

impl MetricKind {
    pub fn needs_activations(self) -> bool {
        !matches!(self, MetricKind::Magnitude)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Magnitude => "magnitude",
            MetricKind::Wanda => "wanda",
            MetricKind::OptSpa => "optspa",
        }
    }

    /// Scores `w` with this metric. `xnorm` is ignored by magnitude.
    pub fn score(self, w: &Tensor2D, xnorm: Option<&[f32]>) -> Result<Tensor2D> {
        match self {
            MetricKind::Magnitude => Ok(metric_magnitude(w)),
            MetricKind::Wanda | MetricKind::OptSpa => {
                let xnorm = xnorm.ok_or_else(|| {
                    Error::invalid(format!("metric {} needs calibration statistics", self.as_str()))
                })?;
                if self == MetricKind::Wanda {
                    metric_wanda(w, xnorm)
                } else {
                    metric_optspa(w, xnorm)
                }
            }
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "magnitude" => Ok(MetricKind::Magnitude),
            "wanda" => Ok(MetricKind::Wanda),
            "optspa" => Ok(MetricKind::OptSpa),
            other => Err(Error::invalid(format!("unknown metric `{other}`"))),
        }
    }
}

/// `|W_ij|`
pub fn metric_magnitude(w: &Tensor2D) -> Tensor2D {
    w.map(f32::abs)
}

fn check_xnorm(w: &Tensor2D, xnorm: &[f32]) -> Result<()> {
    if xnorm.len() != w.cols() {
        return Err(Error::invalid(format!(
            "activation norms have length {}, matrix has {} input columns",
            xnorm.len(),
            w.cols()
        )));
    }
    Ok(())
}

/// `|W_ij| * ||X_j||`
pub fn metric_wanda(w: &Tensor2D, xnorm: &[f32]) -> Result<Tensor2D> {
    check_xnorm(w, xnorm)?;
    Ok(Tensor2D::from_fn(w.rows(), w.cols(), |i, j| {
        (w.get(i, j).abs() as f64 * xnorm[j] as f64) as f32
    }))
}

/// `ln(1 + |W_ij| / ||W_i,:|| + |W_ij| / ||W_:,j||) * sqrt(||X_j||)`
///
/// A ratio whose row or column norm is zero counts as 0; its numerator is
/// zero anyway. Scores are invariant to scaling `W` and scale by `sqrt(c)`
/// when `X` norms scale by `c`.
pub fn metric_optspa(w: &Tensor2D, xnorm: &[f32]) -> Result<Tensor2D> {
    check_xnorm(w, xnorm)?;
    if w.is_empty() {
        return Ok(w.clone());
    }
    let row_norms = axis_l2_norms(w, Axis::Row)?;
    let col_norms = axis_l2_norms(w, Axis::Col)?;
    let x_sqrt: Vec<f64> = xnorm.iter().map(|&x| (x as f64).sqrt()).collect();
    let ratio = |a: f64, norm: f64| if norm == 0.0 { 0.0 } else { a / norm };
    Ok(Tensor2D::from_fn(w.rows(), w.cols(), |i, j| {
        let a = w.get(i, j).abs() as f64;
        let s = (ratio(a, row_norms[i]) + ratio(a, col_norms[j])).ln_1p() * x_sqrt[j];
        s as f32
    }))
}
