use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::prune::BUDGET_EPS;

/// Offsets around the overall ratio, in 2.5% steps up to ±5%.
pub const SPARSITY_OFFSETS: [f64; 5] = [-0.05, -0.025, 0.0, 0.025, 0.05];
pub const SPARSITY_STEP: f64 = 0.025;
pub const BANDWIDTH_CHOICES: [f64; 2] = [6.0, 8.0];

#[derive(Clone, Debug, PartialEq)]
pub enum SpaceKind {
    /// Element-weighted mean ratio must reach `overall`.
    Sparsity { overall: f64 },
    /// Equal numbers of 8-bit and 6-bit layers (one extra 6-bit layer when odd).
    Bandwidth,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dim {
    pub name: String,
    pub choices: Vec<f64>,
    /// Element count behind this dimension; weights the sparsity budget.
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    pub kind: SpaceKind,
    pub dims: Vec<Dim>,
}

fn round_ratio(r: f64) -> f64 {
    (r * 1e6).round() / 1e6
}

/// Layer dimension name used in ledgers and reports.
pub fn layer_dim_name(layer: usize) -> String {
    format!("L{layer}")
}

impl SearchSpace {
    pub fn new(kind: SpaceKind, dims: Vec<Dim>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::invalid("search space has no dimensions"));
        }
        if let Some(d) = dims.iter().find(|d| d.choices.is_empty()) {
            return Err(Error::invalid(format!("dimension {} has no choices", d.name)));
        }
        Ok(Self { kind, dims })
    }

    /// One dimension per layer with ratios `overall + k * 2.5%`, `k in -2..=2`,
    /// clipped to `[0, 1]`.
    pub fn sparsity(config: &ModelConfig, overall: f64) -> Result<Self> {
        Self::sparsity_with_offsets(config, overall, &SPARSITY_OFFSETS)
    }

    pub fn sparsity_with_offsets(config: &ModelConfig, overall: f64, offsets: &[f64]) -> Result<Self> {
        if !(0.0..=1.0).contains(&overall) {
            return Err(Error::invalid(format!("overall sparsity {overall} outside [0, 1]")));
        }
        let mut choices: Vec<f64> = offsets
            .iter()
            .map(|o| round_ratio((overall + o).clamp(0.0, 1.0)))
            .collect();
        choices.sort_by(f64::total_cmp);
        choices.dedup();
        let weight = config.layer_numel() as f64;
        let dims = (0..config.n_layers)
            .map(|l| Dim {
                name: layer_dim_name(l),
                choices: choices.clone(),
                weight,
            })
            .collect();
        Self::new(SpaceKind::Sparsity { overall }, dims)
    }

    /// One `{6, 8}` dimension per layer.
    pub fn bandwidth(n_layers: usize) -> Result<Self> {
        let dims = (0..n_layers)
            .map(|l| Dim {
                name: layer_dim_name(l),
                choices: BANDWIDTH_CHOICES.to_vec(),
                weight: 1.0,
            })
            .collect();
        Self::new(SpaceKind::Bandwidth, dims)
    }

    pub fn values(&self, assignment: &[usize]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(assignment)
            .map(|(d, &i)| d.choices[i])
            .collect()
    }

    /// Choice indices for `values`, or `None` if a value is off the grid.
    pub fn indices_of(&self, values: &[f64]) -> Option<Vec<usize>> {
        if values.len() != self.dims.len() {
            return None;
        }
        self.dims
            .iter()
            .zip(values)
            .map(|(d, v)| d.choices.iter().position(|c| (c - v).abs() < 1e-9))
            .collect()
    }

    pub fn is_valid_assignment(&self, assignment: &[usize]) -> bool {
        assignment.len() == self.dims.len()
            && self.dims.iter().zip(assignment).all(|(d, &i)| i < d.choices.len())
    }

    /// Total number of assignments (saturating).
    pub fn cardinality(&self) -> u128 {
        self.dims
            .iter()
            .fold(1u128, |acc, d| acc.saturating_mul(d.choices.len() as u128))
    }
}

pub fn check_feasible(space: &SearchSpace, assignment: &[usize]) -> bool {
    if !space.is_valid_assignment(assignment) {
        return false;
    }
    let values = space.values(assignment);
    match space.kind {
        SpaceKind::Sparsity { overall } => {
            let total: f64 = space.dims.iter().map(|d| d.weight).sum();
            let mean = space.dims.iter().zip(&values).map(|(d, v)| d.weight * v).sum::<f64>() / total;
            mean >= overall - BUDGET_EPS
        }
        SpaceKind::Bandwidth => bandwidth_feasible(&values),
    }
}

fn bandwidth_feasible(bits: &[f64]) -> bool {
    let eights = bits.iter().filter(|&&b| b == 8.0).count();
    let sixes = bits.iter().filter(|&&b| b == 6.0).count();
    eights + sixes == bits.len() && sixes == eights + bits.len() % 2
}
