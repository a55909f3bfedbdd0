//! Source models for the correlated triple `(X0, X1, X2)` and their exact
//! dyadic quantizations.
//!
//! Three models are supported:
//!
//! - `finite`: an explicit joint table over alphabets `(n0, n1, n2)`.
//! - `atom_uniform`: `X0`, `X2` constant and `X1` a `(p, 1-p)` mixture of a
//!   point mass at `a` and `Uniform[0, 1)`.
//! - `shift_coupled`: `X0 ~ Uniform[0, 1)`, `X1 = X0 +- 0.5` with equal
//!   probabilities, `X2` constant.
//!
//! Continuous axes are cut into left-closed dyadic cells of width `2^-n` and
//! cell probabilities are evaluated in closed form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hpl::HplPoint;
use crate::measure::{FiniteMeasure, GroundSpace, MeasureError, MASS_TOL};

/// Highest supported dyadic level.
pub const MAX_LEVEL: u32 = 20;
/// `shift_coupled` has `2^(2n+1)` joint cells, so it stops earlier.
pub const MAX_SHIFT_LEVEL: u32 = 12;

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("malformed source spec: {0}")]
    Parse(String),
    #[error("source spec does not match the schema: {0}")]
    Schema(String),
    #[error("invalid field `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("level {level} is not supported: {reason}")]
    UnsupportedLevel { level: u32, reason: String },
    #[error("cannot coarsen from level {from} to finer level {to}")]
    CoarsenUp { from: u32, to: u32 },
    #[error("{0} is only defined for continuous models")]
    FiniteModel(&'static str),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

pub type Result<T> = std::result::Result<T, SourceError>;

/// A validated joint probability table over `n0 x n1 x n2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteTriple {
    joint: FiniteMeasure,
}

impl FiniteTriple {
    pub fn new(shape: [usize; 3], table: Vec<f64>) -> Result<Self> {
        let space = GroundSpace::product(&shape).map_err(|e| SourceError::Invalid {
            field: "shape",
            message: e.to_string(),
        })?;
        if table.len() != space.cell_count() {
            return Err(SourceError::Invalid {
                field: "table",
                message: format!(
                    "expected {} entries for shape {shape:?}, found {}",
                    space.cell_count(),
                    table.len()
                ),
            });
        }
        let joint = FiniteMeasure::new(&space, table).map_err(|e| SourceError::Invalid {
            field: "table",
            message: e.to_string(),
        })?;
        if !joint.is_probability() {
            return Err(SourceError::Invalid {
                field: "table",
                message: format!("entries sum to {}, not 1", joint.total_mass()),
            });
        }
        Ok(FiniteTriple { joint })
    }

    /// Wraps an existing probability measure on a 3-factor product space.
    pub fn from_measure(joint: FiniteMeasure) -> Result<Self> {
        let shape: [usize; 3] = joint
            .space()
            .shape()
            .and_then(|s| s.try_into().ok())
            .ok_or(MeasureError::NotProduct { needed: 3 })?;
        Self::new(shape, joint.weights().to_vec())
    }

    pub fn shape(&self) -> [usize; 3] {
        let f = self.joint.space().factors();
        [f[0], f[1], f[2]]
    }

    pub fn joint(&self) -> &FiniteMeasure {
        &self.joint
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroundModel {
    Finite(FiniteTriple),
    AtomUniform { p: f64, a: f64 },
    ShiftCoupled,
}

impl GroundModel {
    pub fn atom_uniform(p: f64, a: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(SourceError::Invalid {
                field: "p",
                message: format!("{p} is not in (0, 1)"),
            });
        }
        if !(0.0..1.0).contains(&a) {
            return Err(SourceError::Invalid {
                field: "a",
                message: format!("{a} is not in [0, 1)"),
            });
        }
        Ok(GroundModel::AtomUniform { p, a })
    }

    pub fn name(&self) -> &'static str {
        match self {
            GroundModel::Finite(_) => "finite",
            GroundModel::AtomUniform { .. } => "atom_uniform",
            GroundModel::ShiftCoupled => "shift_coupled",
        }
    }

    pub fn is_continuous(&self) -> bool {
        !matches!(self, GroundModel::Finite(_))
    }

    pub fn check_level(&self, level: u32) -> Result<()> {
        match self {
            GroundModel::Finite(_) => Ok(()),
            GroundModel::AtomUniform { .. } if level > MAX_LEVEL => Err(SourceError::UnsupportedLevel {
                level,
                reason: format!("atom_uniform supports levels up to {MAX_LEVEL}"),
            }),
            GroundModel::ShiftCoupled if level == 0 => Err(SourceError::UnsupportedLevel {
                level,
                reason: "shift_coupled needs level >= 1 so the 0.5 shift lands on cell boundaries".into(),
            }),
            GroundModel::ShiftCoupled if level > MAX_SHIFT_LEVEL => Err(SourceError::UnsupportedLevel {
                level,
                reason: format!("shift_coupled supports levels up to {MAX_SHIFT_LEVEL}"),
            }),
            _ => Ok(()),
        }
    }
}

#[derive(Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
enum SourceSpec {
    Finite { shape: Vec<usize>, table: Vec<f64> },
    AtomUniform { p: f64, a: Option<f64> },
    ShiftCoupled {},
}

/// Default atom location: away from every dyadic boundary.
pub const DEFAULT_ATOM: f64 = 1.0 / 3.0;

/// Parses and validates a JSON source spec.
pub fn parse_source_spec(text: &str) -> Result<GroundModel> {
    let spec: SourceSpec = serde_json::from_str(text).map_err(|e| {
        if e.is_data() {
            SourceError::Schema(e.to_string())
        } else {
            SourceError::Parse(e.to_string())
        }
    })?;
    match spec {
        SourceSpec::Finite { shape, table } => {
            let shape: [usize; 3] = shape.as_slice().try_into().map_err(|_| SourceError::Invalid {
                field: "shape",
                message: format!("expected three alphabet sizes, found {}", shape.len()),
            })?;
            Ok(GroundModel::Finite(FiniteTriple::new(shape, table)?))
        }
        SourceSpec::AtomUniform { p, a } => GroundModel::atom_uniform(p, a.unwrap_or(DEFAULT_ATOM)),
        SourceSpec::ShiftCoupled {} => Ok(GroundModel::ShiftCoupled),
    }
}

/// Serializes a model back into the source-spec schema.
pub fn source_spec_json(model: &GroundModel) -> serde_json::Value {
    match model {
        GroundModel::Finite(t) => serde_json::json!({
            "variant": "finite",
            "shape": t.shape(),
            "table": t.joint().weights(),
        }),
        GroundModel::AtomUniform { p, a } => serde_json::json!({"variant": "atom_uniform", "p": p, "a": a}),
        GroundModel::ShiftCoupled => serde_json::json!({"variant": "shift_coupled"}),
    }
}

/// Cell geometry of one axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AxisGrid {
    /// A finite alphabet, quantized by itself.
    Discrete { size: usize },
    /// `[lo, hi)` cut into cells of width `2^-level`.
    Dyadic { lo: f64, hi: f64, level: u32 },
}

impl AxisGrid {
    pub fn cell_count(&self) -> usize {
        match *self {
            AxisGrid::Discrete { size } => size,
            AxisGrid::Dyadic { lo, hi, level } => ((hi - lo) as usize) << level,
        }
    }

    /// `[left, right)` of cell `k` on a dyadic axis.
    pub fn interval(&self, k: usize) -> Option<(f64, f64)> {
        match *self {
            AxisGrid::Discrete { .. } => None,
            AxisGrid::Dyadic { lo, level, .. } => {
                let w = dyadic_width(level);
                Some((lo + k as f64 * w, lo + (k + 1) as f64 * w))
            }
        }
    }

    fn at_level(&self, m: u32) -> AxisGrid {
        match *self {
            AxisGrid::Discrete { size } => AxisGrid::Discrete { size },
            AxisGrid::Dyadic { lo, hi, .. } => AxisGrid::Dyadic { lo, hi, level: m },
        }
    }

    /// Fine-cell index at level `self.level` to the containing cell at level `m`.
    fn coarse_index(&self, k: usize, m: u32) -> usize {
        match *self {
            AxisGrid::Discrete { .. } => k,
            AxisGrid::Dyadic { level, .. } => k >> (level - m),
        }
    }
}

fn dyadic_width(level: u32) -> f64 {
    (-(level as f64)).exp2()
}

/// A model quantized at a dyadic level.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTriple {
    model: GroundModel,
    level: u32,
    joint: FiniteMeasure,
    axes: [AxisGrid; 3],
}

impl QuantizedTriple {
    pub fn model(&self) -> &GroundModel {
        &self.model
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Joint law of the cell indices on `X0 x X1 x X2`.
    pub fn joint(&self) -> &FiniteMeasure {
        &self.joint
    }

    pub fn axes(&self) -> &[AxisGrid; 3] {
        &self.axes
    }

    /// For each cell at this level, the index of its containing cell at the
    /// coarser level `m`.
    pub fn coarsening_labels(&self, m: u32) -> Result<Vec<usize>> {
        if m > self.level {
            return Err(SourceError::CoarsenUp {
                from: self.level,
                to: m,
            });
        }
        self.model.check_level(m)?;
        let space = self.joint.space();
        let coarse_shape: Vec<usize> = self.axes.iter().map(|a| a.at_level(m).cell_count()).collect();
        let coarse = GroundSpace::product(&coarse_shape)?;
        Ok((0..space.cell_count())
            .map(|cell| {
                let c = space.coords(cell);
                let cc: Vec<usize> = c
                    .iter()
                    .zip(&self.axes)
                    .map(|(&k, axis)| axis.coarse_index(k, m))
                    .collect();
                coarse.index(&cc)
            })
            .collect())
    }

    /// Limit value of the third spectrum term on a cell, as the cell shrinks.
    ///
    /// For `atom_uniform` the cell holding the atom is assigned the atom's
    /// value `[1:p]` and every other cell `[1:0]`; for `shift_coupled` every
    /// cell has `[2:1]`. Not defined for finite models.
    pub fn limit_spectrum_at(&self, cell: usize) -> Option<HplPoint> {
        match self.model {
            GroundModel::Finite(_) => None,
            GroundModel::AtomUniform { p, a } => {
                let x1 = self.joint.space().coords(cell)[1];
                if x1 == atom_cell(a, self.level) {
                    HplPoint::new(1.0, p).ok()
                } else {
                    Some(HplPoint::INFINITY)
                }
            }
            GroundModel::ShiftCoupled => HplPoint::new(2.0, 1.0).ok(),
        }
    }
}

/// Index of the level-`n` cell of `[0, 1)` containing `a`.
pub fn atom_cell(a: f64, level: u32) -> usize {
    (a * (level as f64).exp2()).floor() as usize
}

/// Quantizes `model` at dyadic level `n` with exact cell probabilities.
pub fn quantize_model(model: &GroundModel, n: u32) -> Result<QuantizedTriple> {
    model.check_level(n)?;
    let (axes, weights) = match model {
        GroundModel::Finite(t) => {
            let [n0, n1, n2] = t.shape();
            return Ok(QuantizedTriple {
                model: model.clone(),
                level: n,
                joint: t.joint().clone(),
                axes: [
                    AxisGrid::Discrete { size: n0 },
                    AxisGrid::Discrete { size: n1 },
                    AxisGrid::Discrete { size: n2 },
                ],
            });
        }
        GroundModel::AtomUniform { p, a } => {
            let cells = 1usize << n;
            let uniform = (1.0 - p) * dyadic_width(n);
            let mut w = vec![uniform; cells];
            w[atom_cell(*a, n)] = p + uniform;
            let axes = [
                AxisGrid::Discrete { size: 1 },
                AxisGrid::Dyadic {
                    lo: 0.0,
                    hi: 1.0,
                    level: n,
                },
                AxisGrid::Discrete { size: 1 },
            ];
            (axes, w)
        }
        GroundModel::ShiftCoupled => {
            let cells0 = 1usize << n;
            let cells1 = cells0 << 1;
            // X0 in cell k of [0,1): X0 - 0.5 falls in cell k of [-0.5, 1.5)
            // and X0 + 0.5 in cell k + 2^n, each with half the cell mass.
            let half = dyadic_width(n + 1);
            let mut w = vec![0.0; cells0 * cells1];
            for k in 0..cells0 {
                w[k * cells1 + k] = half;
                w[k * cells1 + k + cells0] = half;
            }
            let axes = [
                AxisGrid::Dyadic {
                    lo: 0.0,
                    hi: 1.0,
                    level: n,
                },
                AxisGrid::Dyadic {
                    lo: -0.5,
                    hi: 1.5,
                    level: n,
                },
                AxisGrid::Discrete { size: 1 },
            ];
            (axes, w)
        }
    };
    let shape: Vec<usize> = axes.iter().map(AxisGrid::cell_count).collect();
    let joint = FiniteMeasure::new(&GroundSpace::product(&shape)?, weights)?;
    Ok(QuantizedTriple {
        model: model.clone(),
        level: n,
        joint,
        axes,
    })
}

/// Re-quantizes at the coarser level `m` by summing fine cells.
///
/// Dyadic axes are halved one level at a time, so each coarse cell is a
/// balanced pairwise sum of its fine cells.
pub fn coarsen(q: &QuantizedTriple, m: u32) -> Result<QuantizedTriple> {
    if m > q.level {
        return Err(SourceError::CoarsenUp { from: q.level, to: m });
    }
    q.model.check_level(m)?;
    let mut shape = q.joint.space().factors();
    let mut weights = q.joint.weights().to_vec();
    for (axis, grid) in q.axes.iter().enumerate() {
        if let AxisGrid::Dyadic { level, .. } = grid {
            for _ in m..*level {
                weights = halve_axis(&weights, &shape, axis);
                shape[axis] /= 2;
            }
        }
    }
    let joint = FiniteMeasure::new(&GroundSpace::product(&shape)?, weights)?;
    Ok(QuantizedTriple {
        model: q.model.clone(),
        level: m,
        joint,
        axes: [q.axes[0].at_level(m), q.axes[1].at_level(m), q.axes[2].at_level(m)],
    })
}

fn halve_axis(weights: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let n = shape[axis];
    let mut out = vec![0.0; weights.len() / 2];
    for o in 0..outer {
        for k in 0..n / 2 {
            for i in 0..inner {
                let a = weights[(o * n + 2 * k) * inner + i];
                let b = weights[(o * n + 2 * k + 1) * inner + i];
                out[(o * (n / 2) + k) * inner + i] = a + b;
            }
        }
    }
    out
}

/// A discrete law on the half projective line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumLaw {
    pub atoms: Vec<(HplPoint, f64)>,
}

impl SpectrumLaw {
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|(_, m)| m).sum()
    }
}

/// The exact law of the third spectrum term for a continuous model.
pub fn true_spectrum(model: &GroundModel) -> Result<SpectrumLaw> {
    match model {
        GroundModel::Finite(_) => Err(SourceError::FiniteModel("true_spectrum")),
        GroundModel::AtomUniform { p, .. } => Ok(SpectrumLaw {
            atoms: vec![
                (HplPoint::new(1.0, *p).map_err(MeasureError::from)?, *p),
                (HplPoint::INFINITY, 1.0 - p),
            ],
        }),
        GroundModel::ShiftCoupled => Ok(SpectrumLaw {
            atoms: vec![(HplPoint::new(2.0, 1.0).map_err(MeasureError::from)?, 1.0)],
        }),
    }
}

/// Checks a quantization's total mass.
pub fn is_probability(q: &QuantizedTriple) -> bool {
    (q.joint.total_mass() - 1.0).abs() <= MASS_TOL
}
