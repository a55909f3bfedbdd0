//! Finite measurable spaces.
//!
//! A ground space is a finite set of cells `0..n`, optionally carrying a
//! product structure (row-major indexing over `shape`). Sub sigma-algebras
//! are partitions of the cells into atoms; measures, kernels and measurable
//! functions are plain per-cell arrays validated at construction.
//!
//! Conventions on null sets are fixed so that results are reproducible:
//! conditional expectations are `0` on null atoms and disintegration rows are
//! uniform over marginal-null points.

use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::hpl::{HplError, HplPoint};

/// Absolute tolerance for mass comparisons.
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("a ground space needs at least one cell")]
    EmptySpace,
    #[error("invalid product shape {0:?}: every factor must be positive")]
    InvalidShape(Vec<usize>),
    #[error("space mismatch in {op}: {left} vs {right}")]
    SpaceMismatch {
        op: &'static str,
        left: String,
        right: String,
    },
    #[error("expected {expected} entries, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("weight at cell {cell} is negative ({value})")]
    NegativeWeight { cell: usize, value: f64 },
    #[error("value at cell {cell} is not finite ({value})")]
    NonFinite { cell: usize, value: f64 },
    #[error("space is not a product space with at least {needed} factors")]
    NotProduct { needed: usize },
    #[error("axis {axis} out of range for a {factors}-factor space")]
    AxisOutOfRange { axis: usize, factors: usize },
    #[error("expected a probability measure, total mass is {mass}")]
    NotProbability { mass: f64 },
    #[error("absolute continuity fails at cell {cell}: dominating weight is zero, dominated weight is {value}")]
    AbsoluteContinuity { cell: usize, value: f64 },
    #[error("ratio is not admissible at cell {cell}")]
    Inadmissible { cell: usize },
    #[error("map sends cell {cell} to {value}, outside a target of {target} cells")]
    MapOutOfRange { cell: usize, value: usize, target: usize },
    #[error(transparent)]
    Hpl(#[from] HplError),
}

pub type Result<T> = std::result::Result<T, MeasureError>;

fn mismatch(op: &'static str, a: &GroundSpace, b: &GroundSpace) -> MeasureError {
    MeasureError::SpaceMismatch {
        op,
        left: a.to_string(),
        right: b.to_string(),
    }
}

fn ensure_same(op: &'static str, a: &GroundSpace, b: &GroundSpace) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(mismatch(op, a, b))
    }
}

/// A finite ground set, possibly a product `X1 x X2 x ...` indexed row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroundSpace {
    cell_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shape: Option<Vec<usize>>,
}

impl GroundSpace {
    pub fn new(cell_count: usize) -> Result<Self> {
        if cell_count == 0 {
            return Err(MeasureError::EmptySpace);
        }
        Ok(GroundSpace {
            cell_count,
            shape: None,
        })
    }

    /// A product space. A single factor yields a plain space.
    pub fn product(shape: &[usize]) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(MeasureError::InvalidShape(shape.to_vec()));
        }
        let cell_count = shape
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .ok_or_else(|| MeasureError::InvalidShape(shape.to_vec()))?;
        Ok(GroundSpace {
            cell_count,
            shape: (shape.len() > 1).then(|| shape.to_vec()),
        })
    }

    #[inline]
    pub fn cell_count(&self) -> usize {
        self.cell_count
    }

    pub fn shape(&self) -> Option<&[usize]> {
        self.shape.as_deref()
    }

    /// Factor sizes; a plain space is its own single factor.
    pub fn factors(&self) -> Vec<usize> {
        self.shape.clone().unwrap_or_else(|| vec![self.cell_count])
    }

    pub fn is_product(&self) -> bool {
        self.shape.is_some()
    }

    /// `self x other`, with factor lists concatenated.
    pub fn product_with(&self, other: &GroundSpace) -> GroundSpace {
        let mut shape = self.factors();
        shape.extend(other.factors());
        GroundSpace {
            cell_count: self.cell_count * other.cell_count,
            shape: Some(shape),
        }
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        let factors = self.factors();
        debug_assert_eq!(coords.len(), factors.len());
        coords.iter().zip(&factors).fold(0, |acc, (&c, &n)| acc * n + c)
    }

    pub fn coords(&self, cell: usize) -> Vec<usize> {
        let factors = self.factors();
        let mut out = vec![0; factors.len()];
        let mut rest = cell;
        for (slot, &n) in out.iter_mut().zip(&factors).rev() {
            *slot = rest % n;
            rest /= n;
        }
        out
    }
}

impl std::fmt::Display for GroundSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.shape {
            Some(s) => write!(f, "space{s:?}"),
            None => write!(f, "space[{}]", self.cell_count),
        }
    }
}

/// A finite sub sigma-algebra, stored as the atom label of each cell.
///
/// Labels are normalized to first-occurrence order, so two partitions with
/// the same atoms compare equal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    space: GroundSpace,
    atom_of: Vec<usize>,
    atom_count: usize,
}

impl Partition {
    /// Builds a partition from arbitrary labels; cells sharing a label share an atom.
    pub fn from_labels<L: Copy + Eq + std::hash::Hash>(space: &GroundSpace, labels: &[L]) -> Result<Self> {
        if labels.len() != space.cell_count() {
            return Err(MeasureError::LengthMismatch {
                expected: space.cell_count(),
                found: labels.len(),
            });
        }
        let mut seen: HashMap<L, usize> = HashMap::new();
        let atom_of = labels
            .iter()
            .map(|l| {
                let next = seen.len();
                *seen.entry(*l).or_insert(next)
            })
            .collect();
        Ok(Partition {
            space: space.clone(),
            atom_of,
            atom_count: seen.len(),
        })
    }

    /// Every cell its own atom.
    pub fn finest(space: &GroundSpace) -> Self {
        Partition {
            space: space.clone(),
            atom_of: (0..space.cell_count()).collect(),
            atom_count: space.cell_count(),
        }
    }

    /// A single atom.
    pub fn trivial(space: &GroundSpace) -> Self {
        Partition {
            space: space.clone(),
            atom_of: vec![0; space.cell_count()],
            atom_count: 1,
        }
    }

    pub fn space(&self) -> &GroundSpace {
        &self.space
    }

    #[inline]
    pub fn atom_of(&self, cell: usize) -> usize {
        self.atom_of[cell]
    }

    pub fn labels(&self) -> &[usize] {
        &self.atom_of
    }

    pub fn atom_count(&self) -> usize {
        self.atom_count
    }

    /// The space whose cells are this partition's atoms.
    pub fn atom_space(&self) -> GroundSpace {
        GroundSpace {
            cell_count: self.atom_count,
            shape: None,
        }
    }

    /// Member cells of each atom, in increasing cell order.
    pub fn atoms(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.atom_count];
        for (cell, &a) in self.atom_of.iter().enumerate() {
            out[a].push(cell);
        }
        out
    }

    /// True when every atom of `self` lies inside one atom of `coarser`.
    pub fn refines(&self, coarser: &Partition) -> bool {
        if self.space != coarser.space {
            return false;
        }
        let mut image = vec![usize::MAX; self.atom_count];
        self.atom_of
            .iter()
            .zip(&coarser.atom_of)
            .all(|(&fine, &coarse)| match image[fine] {
                usize::MAX => {
                    image[fine] = coarse;
                    true
                }
                seen => seen == coarse,
            })
    }
}

/// A finite nonnegative measure on a ground space.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMeasure {
    space: GroundSpace,
    weight: Vec<f64>,
}

fn validate_weights(weights: &[f64]) -> Result<()> {
    for (cell, &w) in weights.iter().enumerate() {
        if !w.is_finite() {
            return Err(MeasureError::NonFinite { cell, value: w });
        }
        if w < 0.0 {
            return Err(MeasureError::NegativeWeight { cell, value: w });
        }
    }
    Ok(())
}

impl FiniteMeasure {
    pub fn new(space: &GroundSpace, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != space.cell_count() {
            return Err(MeasureError::LengthMismatch {
                expected: space.cell_count(),
                found: weights.len(),
            });
        }
        validate_weights(&weights)?;
        Ok(FiniteMeasure {
            space: space.clone(),
            weight: weights,
        })
    }

    /// Measure on a plain space of `weights.len()` cells.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let space = GroundSpace::new(weights.len())?;
        Self::new(&space, weights)
    }

    pub fn zero(space: &GroundSpace) -> Self {
        FiniteMeasure {
            space: space.clone(),
            weight: vec![0.0; space.cell_count()],
        }
    }

    pub fn uniform(space: &GroundSpace) -> Self {
        let w = 1.0 / space.cell_count() as f64;
        FiniteMeasure {
            space: space.clone(),
            weight: vec![w; space.cell_count()],
        }
    }

    /// Unit mass at `cell`.
    pub fn dirac(space: &GroundSpace, cell: usize) -> Self {
        let mut m = Self::zero(space);
        m.weight[cell] = 1.0;
        m
    }

    pub fn space(&self) -> &GroundSpace {
        &self.space
    }

    pub fn weights(&self) -> &[f64] {
        &self.weight
    }

    #[inline]
    pub fn weight(&self, cell: usize) -> f64 {
        self.weight[cell]
    }

    pub fn total_mass(&self) -> f64 {
        self.weight.iter().sum()
    }

    pub fn is_probability(&self) -> bool {
        (self.total_mass() - 1.0).abs() <= MASS_TOL
    }

    pub fn ensure_probability(&self) -> Result<()> {
        if self.is_probability() {
            Ok(())
        } else {
            Err(MeasureError::NotProbability {
                mass: self.total_mass(),
            })
        }
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.weight.iter().enumerate().filter(|(_, &w)| w > 0.0).map(|(c, _)| c)
    }

    /// `mu(C)` for a set of cells.
    pub fn mass_of(&self, cells: impl IntoIterator<Item = usize>) -> f64 {
        cells.into_iter().map(|c| self.weight[c]).sum()
    }

    /// Cellwise sum `self + other`.
    pub fn plus(&self, other: &FiniteMeasure) -> Result<FiniteMeasure> {
        ensure_same("plus", &self.space, &other.space)?;
        Ok(FiniteMeasure {
            space: self.space.clone(),
            weight: self.weight.iter().zip(&other.weight).map(|(a, b)| a + b).collect(),
        })
    }

    /// The integral `mu(f)`.
    pub fn integrate(&self, f: &MeasurableFunction) -> Result<f64> {
        ensure_same("integrate", &self.space, &f.space)?;
        Ok(self.weight.iter().zip(&f.value).map(|(w, v)| w * v).sum())
    }

    /// `self << dominating` cellwise; reports the first offending cell.
    pub fn ensure_dominated_by(&self, dominating: &FiniteMeasure) -> Result<()> {
        ensure_same("absolute continuity", &self.space, &dominating.space)?;
        for (cell, (&w, &d)) in self.weight.iter().zip(&dominating.weight).enumerate() {
            if d == 0.0 && w > 0.0 {
                return Err(MeasureError::AbsoluteContinuity { cell, value: w });
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MeasureRepr {
    Plain(Vec<f64>),
    Shaped { shape: Vec<usize>, weights: Vec<f64> },
}

/// Plain spaces serialize to a JSON array; product spaces to
/// `{"shape": [...], "weights": [...]}`.
impl Serialize for FiniteMeasure {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self.space.shape() {
            None => self.weight.serialize(serializer),
            Some(shape) => MeasureRepr::Shaped {
                shape: shape.to_vec(),
                weights: self.weight.clone(),
            }
            .serialize(serializer),
        }
    }
}

impl<'de> Deserialize<'de> for FiniteMeasure {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let (space, weights) = match MeasureRepr::deserialize(deserializer)? {
            MeasureRepr::Plain(w) => (GroundSpace::new(w.len()).map_err(D::Error::custom)?, w),
            MeasureRepr::Shaped { shape, weights } => {
                (GroundSpace::product(&shape).map_err(D::Error::custom)?, weights)
            }
        };
        FiniteMeasure::new(&space, weights).map_err(D::Error::custom)
    }
}

/// A kernel from `source` to `target`: one finite measure per source cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    source: GroundSpace,
    target: GroundSpace,
    rows: Vec<FiniteMeasure>,
}

impl Kernel {
    pub fn new(source: &GroundSpace, target: &GroundSpace, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != source.cell_count() {
            return Err(MeasureError::LengthMismatch {
                expected: source.cell_count(),
                found: rows.len(),
            });
        }
        let rows = rows
            .into_iter()
            .map(|r| FiniteMeasure::new(target, r))
            .collect::<Result<_>>()?;
        Ok(Kernel {
            source: source.clone(),
            target: target.clone(),
            rows,
        })
    }

    pub fn from_rows(source: &GroundSpace, rows: Vec<FiniteMeasure>) -> Result<Self> {
        if rows.len() != source.cell_count() {
            return Err(MeasureError::LengthMismatch {
                expected: source.cell_count(),
                found: rows.len(),
            });
        }
        let target = match rows.first() {
            Some(r) => r.space().clone(),
            None => return Err(MeasureError::EmptySpace),
        };
        for r in &rows {
            ensure_same("kernel rows", &target, r.space())?;
        }
        Ok(Kernel {
            source: source.clone(),
            target,
            rows,
        })
    }

    /// Every row equal to `row`.
    pub fn constant(source: &GroundSpace, row: &FiniteMeasure) -> Self {
        Kernel {
            source: source.clone(),
            target: row.space().clone(),
            rows: vec![row.clone(); source.cell_count()],
        }
    }

    /// `x -> delta_{map(x)}`.
    pub fn deterministic(source: &GroundSpace, target: &GroundSpace, map: &[usize]) -> Result<Self> {
        if map.len() != source.cell_count() {
            return Err(MeasureError::LengthMismatch {
                expected: source.cell_count(),
                found: map.len(),
            });
        }
        let rows = map
            .iter()
            .enumerate()
            .map(|(cell, &y)| {
                if y >= target.cell_count() {
                    Err(MeasureError::MapOutOfRange {
                        cell,
                        value: y,
                        target: target.cell_count(),
                    })
                } else {
                    Ok(FiniteMeasure::dirac(target, y))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Kernel {
            source: source.clone(),
            target: target.clone(),
            rows,
        })
    }

    pub fn source(&self) -> &GroundSpace {
        &self.source
    }

    pub fn target(&self) -> &GroundSpace {
        &self.target
    }

    /// The measure `mu_x`.
    pub fn row(&self, x: usize) -> &FiniteMeasure {
        &self.rows[x]
    }

    pub fn rows(&self) -> &[FiniteMeasure] {
        &self.rows
    }

    pub fn is_probability(&self) -> bool {
        self.rows.iter().all(FiniteMeasure::is_probability)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum KernelRepr {
    Plain(Vec<Vec<f64>>),
    Shaped {
        source_shape: Vec<usize>,
        target_shape: Vec<usize>,
        rows: Vec<Vec<f64>>,
    },
}

/// Plain kernels serialize to an array of row arrays; kernels touching a
/// product space to `{"source_shape", "target_shape", "rows"}`.
impl Serialize for Kernel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = self.rows.iter().map(|r| r.weights().to_vec()).collect();
        if self.source.is_product() || self.target.is_product() {
            KernelRepr::Shaped {
                source_shape: self.source.factors(),
                target_shape: self.target.factors(),
                rows,
            }
            .serialize(serializer)
        } else {
            rows.serialize(serializer)
        }
    }
}

impl<'de> Deserialize<'de> for Kernel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        match KernelRepr::deserialize(deserializer)? {
            KernelRepr::Plain(rows) => {
                let source = GroundSpace::new(rows.len()).map_err(D::Error::custom)?;
                let width = rows.first().map_or(0, Vec::len);
                let target = GroundSpace::new(width).map_err(D::Error::custom)?;
                Kernel::new(&source, &target, rows).map_err(D::Error::custom)
            }
            KernelRepr::Shaped {
                source_shape,
                target_shape,
                rows,
            } => {
                let source = GroundSpace::product(&source_shape).map_err(D::Error::custom)?;
                let target = GroundSpace::product(&target_shape).map_err(D::Error::custom)?;
                Kernel::new(&source, &target, rows).map_err(D::Error::custom)
            }
        }
    }
}

/// A real-valued function on the cells.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurableFunction {
    space: GroundSpace,
    value: Vec<f64>,
}

impl MeasurableFunction {
    pub fn new(space: &GroundSpace, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.cell_count() {
            return Err(MeasureError::LengthMismatch {
                expected: space.cell_count(),
                found: values.len(),
            });
        }
        if let Some((cell, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(MeasureError::NonFinite { cell, value });
        }
        Ok(MeasurableFunction {
            space: space.clone(),
            value: values,
        })
    }

    pub fn constant(space: &GroundSpace, c: f64) -> Result<Self> {
        Self::new(space, vec![c; space.cell_count()])
    }

    pub fn space(&self) -> &GroundSpace {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.value
    }

    #[inline]
    pub fn value(&self, cell: usize) -> f64 {
        self.value[cell]
    }
}

/// A half-projective-line valued function, defined on `support` only.
#[derive(Debug, Clone, PartialEq)]
pub struct HplField {
    space: GroundSpace,
    points: Vec<Option<HplPoint>>,
}

impl HplField {
    pub fn new(space: &GroundSpace, points: Vec<Option<HplPoint>>) -> Result<Self> {
        if points.len() != space.cell_count() {
            return Err(MeasureError::LengthMismatch {
                expected: space.cell_count(),
                found: points.len(),
            });
        }
        Ok(HplField {
            space: space.clone(),
            points,
        })
    }

    pub fn space(&self) -> &GroundSpace {
        &self.space
    }

    #[inline]
    pub fn get(&self, cell: usize) -> Option<HplPoint> {
        self.points[cell]
    }

    pub fn points(&self) -> &[Option<HplPoint>] {
        &self.points
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_some())
            .map(|(c, _)| c)
    }
}

/// `sup_C |mu(C) - nu(C)|`, attained by `C = {mu > nu}` or its complement.
pub fn stat_distance(mu: &FiniteMeasure, nu: &FiniteMeasure) -> Result<f64> {
    ensure_same("stat_distance", &mu.space, &nu.space)?;
    let (mut pos, mut neg) = (0.0, 0.0);
    for (a, b) in mu.weight.iter().zip(&nu.weight) {
        let d = a - b;
        if d > 0.0 {
            pos += d;
        } else {
            neg -= d;
        }
    }
    Ok(f64::max(pos, neg))
}

/// Atom-wise average of `f` under `mu`; zero on `mu`-null atoms.
pub fn cond_expect(f: &MeasurableFunction, mu: &FiniteMeasure, partition: &Partition) -> Result<MeasurableFunction> {
    ensure_same("cond_expect", &f.space, &mu.space)?;
    ensure_same("cond_expect", &mu.space, &partition.space)?;
    let atom_values = atom_averages(&f.value, mu, partition);
    Ok(MeasurableFunction {
        space: f.space.clone(),
        value: partition.atom_of.iter().map(|&a| atom_values[a]).collect(),
    })
}

// Weighting by mu(x)/mu(A) rather than dividing the weighted sum keeps
// singleton atoms bit-exact.
fn atom_averages(values: &[f64], mu: &FiniteMeasure, partition: &Partition) -> Vec<f64> {
    let masses = restrict_weights(mu, partition);
    let mut avg = vec![0.0; partition.atom_count];
    for (cell, &a) in partition.atom_of.iter().enumerate() {
        let w = mu.weight[cell];
        if w > 0.0 {
            avg[a] += values[cell] * (w / masses[a]);
        }
    }
    avg
}

fn restrict_weights(mu: &FiniteMeasure, partition: &Partition) -> Vec<f64> {
    let mut masses = vec![0.0; partition.atom_count];
    for (cell, &a) in partition.atom_of.iter().enumerate() {
        masses[a] += mu.weight[cell];
    }
    masses
}

/// `mu` restricted to the partition, as a measure over its atoms.
pub fn restrict(mu: &FiniteMeasure, partition: &Partition) -> Result<FiniteMeasure> {
    ensure_same("restrict", &mu.space, &partition.space)?;
    Ok(FiniteMeasure {
        space: partition.atom_space(),
        weight: restrict_weights(mu, partition),
    })
}

/// `[d mu : d nu]`, defined on the support of `mu + nu`.
pub fn likelihood_ratio(mu: &FiniteMeasure, nu: &FiniteMeasure) -> Result<HplField> {
    ensure_same("likelihood_ratio", &mu.space, &nu.space)?;
    let points = mu
        .weight
        .iter()
        .zip(&nu.weight)
        .map(|(&a, &b)| {
            if a + b > 0.0 {
                HplPoint::new(a, b).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<std::result::Result<_, _>>()?;
    Ok(HplField {
        space: mu.space.clone(),
        points,
    })
}

/// `[E(f|F) : E(g|F)]` per atom; undefined on `mu`-null atoms.
pub fn cond_ratio(
    f: &MeasurableFunction,
    g: &MeasurableFunction,
    mu: &FiniteMeasure,
    partition: &Partition,
) -> Result<HplField> {
    ensure_same("cond_ratio", &f.space, &g.space)?;
    ensure_same("cond_ratio", &f.space, &mu.space)?;
    ensure_same("cond_ratio", &mu.space, &partition.space)?;
    for cell in mu.support() {
        let (a, b) = (f.value[cell], g.value[cell]);
        if a < 0.0 || b < 0.0 || a + b <= 0.0 {
            return Err(MeasureError::Inadmissible { cell });
        }
    }
    let masses = restrict_weights(mu, partition);
    let ef = atom_averages(&f.value, mu, partition);
    let eg = atom_averages(&g.value, mu, partition);
    let points = (0..partition.atom_count)
        .map(|a| {
            if masses[a] > 0.0 {
                HplPoint::new(ef[a], eg[a])
                    .map(Some)
                    .map_err(|_| MeasureError::Inadmissible { cell: a })
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    Ok(HplField {
        space: partition.atom_space(),
        points,
    })
}

/// The joint measure `lambda x| mu` on `source x target`.
pub fn kernel_product(lambda: &FiniteMeasure, kernel: &Kernel) -> Result<FiniteMeasure> {
    ensure_same("kernel_product", &lambda.space, &kernel.source)?;
    let space = kernel.source.product_with(&kernel.target);
    let weight = lambda
        .weight
        .iter()
        .zip(&kernel.rows)
        .flat_map(|(&l, row)| row.weight.iter().map(move |&m| l * m))
        .collect();
    Ok(FiniteMeasure { space, weight })
}

/// Splits a joint measure on `X x Y` (X the first factor) into its X marginal
/// and the conditional kernel `X -> Y`.
pub fn disintegrate(joint: &FiniteMeasure) -> Result<(FiniteMeasure, Kernel)> {
    disintegrate_at(joint, 1)
}

/// As [`disintegrate`], with X made of the first `split` factors.
pub fn disintegrate_at(joint: &FiniteMeasure, split: usize) -> Result<(FiniteMeasure, Kernel)> {
    let factors = match joint.space.shape() {
        Some(s) if split >= 1 && split < s.len() => s.to_vec(),
        _ => return Err(MeasureError::NotProduct { needed: split + 1 }),
    };
    joint.ensure_probability()?;
    let source = GroundSpace::product(&factors[..split])?;
    let target = GroundSpace::product(&factors[split..])?;
    let width = target.cell_count();
    let mut marginal = Vec::with_capacity(source.cell_count());
    let mut rows = Vec::with_capacity(source.cell_count());
    for block in joint.weight.chunks(width) {
        let m: f64 = block.iter().sum();
        marginal.push(m);
        let row = if m > 0.0 {
            block.iter().map(|w| w / m).collect()
        } else {
            vec![1.0 / width as f64; width]
        };
        rows.push(FiniteMeasure {
            space: target.clone(),
            weight: row,
        });
    }
    Ok((
        FiniteMeasure {
            space: source.clone(),
            weight: marginal,
        },
        Kernel { source, target, rows },
    ))
}

/// `d mu / d nu` on the support of `nu`, zero elsewhere.
pub fn rn_derivative(mu: &FiniteMeasure, nu: &FiniteMeasure) -> Result<MeasurableFunction> {
    mu.ensure_dominated_by(nu)?;
    Ok(MeasurableFunction {
        space: mu.space.clone(),
        value: mu
            .weight
            .iter()
            .zip(&nu.weight)
            .map(|(&a, &b)| if b > 0.0 { a / b } else { 0.0 })
            .collect(),
    })
}

/// The coarsest common refinement of two partitions.
pub fn join_partitions(f: &Partition, g: &Partition) -> Result<Partition> {
    ensure_same("join_partitions", &f.space, &g.space)?;
    let pairs: Vec<(usize, usize)> = f.atom_of.iter().copied().zip(g.atom_of.iter().copied()).collect();
    Partition::from_labels(&f.space, &pairs)
}

/// The rectangle partition `C x D` on `space`, which must be `X x Y`.
pub fn product_partition(c: &Partition, d: &Partition, space: &GroundSpace) -> Result<Partition> {
    let expected = c.space.product_with(&d.space);
    ensure_same("product_partition", &expected, space)?;
    let width = d.space.cell_count();
    let labels: Vec<usize> = (0..space.cell_count())
        .map(|cell| c.atom_of[cell / width] * d.atom_count + d.atom_of[cell % width])
        .collect();
    Partition::from_labels(space, &labels)
}

/// Image measure of `mu` under a cell map into `target`.
pub fn push_forward(mu: &FiniteMeasure, map: &[usize], target: &GroundSpace) -> Result<FiniteMeasure> {
    if map.len() != mu.space.cell_count() {
        return Err(MeasureError::LengthMismatch {
            expected: mu.space.cell_count(),
            found: map.len(),
        });
    }
    let mut weight = vec![0.0; target.cell_count()];
    for (cell, (&y, &w)) in map.iter().zip(&mu.weight).enumerate() {
        if y >= target.cell_count() {
            return Err(MeasureError::MapOutOfRange {
                cell,
                value: y,
                target: target.cell_count(),
            });
        }
        weight[y] += w;
    }
    Ok(FiniteMeasure {
        space: target.clone(),
        weight,
    })
}

/// Marginal of a product-space measure on the listed axes (in that order).
pub fn marginal(joint: &FiniteMeasure, axes: &[usize]) -> Result<FiniteMeasure> {
    let factors = joint.space.factors();
    if let Some(&axis) = axes.iter().find(|&&a| a >= factors.len()) {
        return Err(MeasureError::AxisOutOfRange {
            axis,
            factors: factors.len(),
        });
    }
    let shape: Vec<usize> = axes.iter().map(|&a| factors[a]).collect();
    let target = GroundSpace::product(&shape)?;
    let map: Vec<usize> = (0..joint.space.cell_count())
        .map(|cell| {
            let c = joint.space.coords(cell);
            let sub: Vec<usize> = axes.iter().map(|&a| c[a]).collect();
            target.index(&sub)
        })
        .collect();
    push_forward(joint, &map, &target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn space(n: usize) -> GroundSpace {
        GroundSpace::new(n).unwrap()
    }

    fn measure(w: &[f64]) -> FiniteMeasure {
        FiniteMeasure::from_weights(w.to_vec()).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn ground_space_indexing() {
        let s = GroundSpace::product(&[2, 3, 4]).unwrap();
        assert_eq!(s.cell_count(), 24);
        for cell in 0..24 {
            assert_eq!(s.index(&s.coords(cell)), cell);
        }
        assert_eq!(s.coords(23), vec![1, 2, 3]);
        assert_eq!(GroundSpace::product(&[5]).unwrap(), space(5));
        assert!(GroundSpace::product(&[2, 0]).is_err());
        assert!(GroundSpace::new(0).is_err());
    }

    #[test]
    fn measure_validation() {
        assert!(matches!(
            FiniteMeasure::from_weights(vec![0.5, -0.1]),
            Err(MeasureError::NegativeWeight { cell: 1, .. })
        ));
        assert!(matches!(
            FiniteMeasure::from_weights(vec![f64::NAN]),
            Err(MeasureError::NonFinite { cell: 0, .. })
        ));
        assert!(FiniteMeasure::new(&space(3), vec![1.0]).is_err());
        assert!(measure(&[0.25, 0.75]).is_probability());
        assert!(!measure(&[0.25, 0.7]).is_probability());
    }

    #[test]
    fn partition_labels_are_canonical() {
        let s = space(4);
        let a = Partition::from_labels(&s, &[7, 7, 3, 3]).unwrap();
        let b = Partition::from_labels(&s, &[0, 0, 1, 1]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.atom_count(), 2);
        assert_eq!(a.atoms(), vec![vec![0, 1], vec![2, 3]]);
        assert!(Partition::finest(&s).refines(&a));
        assert!(a.refines(&Partition::trivial(&s)));
        assert!(!a.refines(&Partition::from_labels(&s, &[0, 1, 0, 1]).unwrap()));
    }

    #[test]
    fn stat_distance_examples() {
        let m = measure(&[0.3, 0.7]);
        assert_eq!(stat_distance(&m, &m).unwrap(), 0.0);
        assert_eq!(
            stat_distance(&measure(&[1.0, 0.0]), &measure(&[0.0, 1.0])).unwrap(),
            1.0
        );
        assert!(close(
            stat_distance(&measure(&[0.5, 0.5]), &measure(&[0.75, 0.25])).unwrap(),
            0.25
        ));
        // Unequal masses: sup over sets is the larger one-sided excess.
        assert!(close(
            stat_distance(&measure(&[0.5, 0.5]), &measure(&[0.1, 0.2])).unwrap(),
            0.7
        ));
        assert!(matches!(
            stat_distance(&measure(&[1.0]), &measure(&[0.5, 0.5])),
            Err(MeasureError::SpaceMismatch { .. })
        ));
    }

    #[test]
    fn stat_distance_matches_subset_supremum() {
        let mu = measure(&[0.1, 0.4, 0.0, 0.3, 0.2]);
        let nu = measure(&[0.3, 0.1, 0.2, 0.3, 0.05]);
        let mut best: f64 = 0.0;
        for set in 0u32..(1 << 5) {
            let cells = (0..5).filter(|c| set >> c & 1 == 1);
            let d: f64 = cells.map(|c| mu.weight(c) - nu.weight(c)).sum();
            best = best.max(d.abs());
        }
        assert!(close(stat_distance(&mu, &nu).unwrap(), best));
    }

    #[test]
    fn cond_expect_examples() {
        let s = space(4);
        let f = MeasurableFunction::new(&s, vec![0.0, 2.0, 4.0, 6.0]).unwrap();
        let mu = FiniteMeasure::uniform(&s);
        let halves = Partition::from_labels(&s, &[0, 0, 1, 1]).unwrap();
        assert_eq!(cond_expect(&f, &mu, &halves).unwrap().values(), &[1.0, 1.0, 5.0, 5.0]);
        assert_eq!(cond_expect(&f, &mu, &Partition::finest(&s)).unwrap(), f);
        let total = cond_expect(&f, &mu, &Partition::trivial(&s)).unwrap();
        assert!(total.values().iter().all(|&v| close(v, 3.0)));

        let partial = measure(&[0.5, 0.5, 0.0, 0.0]);
        let e = cond_expect(&f, &partial, &halves).unwrap();
        assert_eq!(e.values(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn restrict_examples() {
        let s = space(4);
        let mu = FiniteMeasure::uniform(&s);
        assert_eq!(restrict(&mu, &Partition::finest(&s)).unwrap().weights(), mu.weights());
        assert_eq!(restrict(&mu, &Partition::trivial(&s)).unwrap().weights(), &[1.0]);
        let halves = Partition::from_labels(&s, &[0, 0, 1, 1]).unwrap();
        assert_eq!(restrict(&mu, &halves).unwrap().weights(), &[0.5, 0.5]);
    }

    #[test]
    fn likelihood_ratio_examples() {
        let mu = measure(&[0.2, 0.3, 0.5, 0.0]);
        let lr = likelihood_ratio(&mu, &mu).unwrap();
        assert_eq!(lr.get(0), Some(HplPoint::ONE));
        assert_eq!(lr.get(3), None);
        let lr = likelihood_ratio(&measure(&[0.4, 0.2]), &measure(&[0.0, 0.6])).unwrap();
        assert_eq!(lr.get(0), Some(HplPoint::INFINITY));
        assert!(close(lr.get(1).unwrap().kappa(), 0.25));
        let empty = likelihood_ratio(&measure(&[0.0]), &measure(&[0.0])).unwrap();
        assert_eq!(empty.support().count(), 0);
    }

    #[test]
    fn cond_ratio_examples() {
        let s = space(2);
        let mu = FiniteMeasure::uniform(&s);
        let f = MeasurableFunction::new(&s, vec![1.0, 3.0]).unwrap();
        let g = MeasurableFunction::new(&s, vec![1.0, 1.0]).unwrap();
        let r = cond_ratio(&f, &g, &mu, &Partition::trivial(&s)).unwrap();
        assert!(close(r.get(0).unwrap().kappa(), 2.0 / 3.0));
        let same = cond_ratio(&f, &f, &mu, &Partition::trivial(&s)).unwrap();
        assert_eq!(same.get(0), Some(HplPoint::ONE));
        let pointwise = cond_ratio(&f, &g, &mu, &Partition::finest(&s)).unwrap();
        assert_eq!(pointwise.get(1), Some(HplPoint::new(3.0, 1.0).unwrap()));

        let zero = MeasurableFunction::new(&s, vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            cond_ratio(&zero, &zero, &mu, &Partition::finest(&s)),
            Err(MeasureError::Inadmissible { cell: 0 })
        ));
        // inadmissible only on a null cell is fine
        let null_first = measure(&[0.0, 1.0]);
        let r = cond_ratio(&zero, &zero, &null_first, &Partition::finest(&s)).unwrap();
        assert_eq!(r.get(0), None);
        assert_eq!(r.get(1), Some(HplPoint::ONE));
    }

    #[test]
    fn kernel_product_examples() {
        let x = space(2);
        let y = space(2);
        let lambda = measure(&[0.5, 0.5]);
        let k = Kernel::new(&x, &y, vec![vec![0.2, 0.8], vec![1.0, 0.0]]).unwrap();
        let joint = kernel_product(&lambda, &k).unwrap();
        assert_eq!(joint.space().shape(), Some(&[2, 2][..]));
        assert_eq!(joint.weights(), &[0.1, 0.4, 0.5, 0.0]);

        let det = Kernel::deterministic(&x, &space(3), &[2, 0]).unwrap();
        let graph = kernel_product(&measure(&[0.25, 0.75]), &det).unwrap();
        assert_eq!(graph.weights(), &[0.0, 0.0, 0.25, 0.75, 0.0, 0.0]);

        let nu = measure(&[0.3, 0.7]);
        let prod = kernel_product(&lambda, &Kernel::constant(&x, &nu)).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert_eq!(prod.weight(a * 2 + b), lambda.weight(a) * nu.weight(b));
            }
        }
    }

    #[test]
    fn disintegrate_examples() {
        let s = GroundSpace::product(&[2, 2]).unwrap();
        let joint = FiniteMeasure::new(&s, vec![0.1, 0.4, 0.5, 0.0]).unwrap();
        let (m, k) = disintegrate(&joint).unwrap();
        assert_eq!(m.weights(), &[0.5, 0.5]);
        assert!(close(k.row(0).weight(0), 0.2) && close(k.row(0).weight(1), 0.8));
        assert_eq!(k.row(1).weights(), &[1.0, 0.0]);

        let null_row = FiniteMeasure::new(&s, vec![0.0, 0.0, 0.3, 0.7]).unwrap();
        let (_, k) = disintegrate(&null_row).unwrap();
        assert_eq!(k.row(0).weights(), &[0.5, 0.5]);

        assert!(matches!(
            disintegrate(&measure(&[0.5, 0.5])),
            Err(MeasureError::NotProduct { .. })
        ));
    }

    #[test]
    fn disintegrate_product_and_graph() {
        let x = space(3);
        let lambda = measure(&[0.2, 0.3, 0.5]);
        let nu = measure(&[0.25, 0.25, 0.5]);
        let (m, k) = disintegrate(&kernel_product(&lambda, &Kernel::constant(&x, &nu)).unwrap()).unwrap();
        assert!(m.weights().iter().zip(lambda.weights()).all(|(a, b)| close(*a, *b)));
        for row in k.rows() {
            assert!(row.weights().iter().zip(nu.weights()).all(|(a, b)| close(*a, *b)));
        }
        let det = Kernel::deterministic(&x, &space(2), &[1, 0, 1]).unwrap();
        let (_, k) = disintegrate(&kernel_product(&lambda, &det).unwrap()).unwrap();
        assert_eq!(k.row(0).weights(), &[0.0, 1.0]);
        assert_eq!(k.row(1).weights(), &[1.0, 0.0]);
    }

    #[test]
    fn rn_derivative_examples() {
        let nu = measure(&[0.5, 0.5]);
        assert_eq!(rn_derivative(&nu, &nu).unwrap().values(), &[1.0, 1.0]);
        assert_eq!(rn_derivative(&measure(&[0.0, 0.0]), &nu).unwrap().values(), &[0.0, 0.0]);
        assert_eq!(
            rn_derivative(&measure(&[0.25, 0.75]), &nu).unwrap().values(),
            &[0.5, 1.5]
        );
        assert!(matches!(
            rn_derivative(&measure(&[0.5, 0.5]), &measure(&[1.0, 0.0])),
            Err(MeasureError::AbsoluteContinuity { cell: 1, .. })
        ));
    }

    #[test]
    fn join_examples() {
        let s = space(4);
        let f = Partition::from_labels(&s, &[0, 0, 1, 1]).unwrap();
        let g = Partition::from_labels(&s, &[0, 1, 0, 1]).unwrap();
        assert_eq!(join_partitions(&f, &f).unwrap(), f);
        assert_eq!(join_partitions(&f, &Partition::trivial(&s)).unwrap(), f);
        assert_eq!(join_partitions(&f, &g).unwrap(), Partition::finest(&s));
    }

    #[test]
    fn product_partition_examples() {
        let x = space(4);
        let xy = x.product_with(&x);
        assert_eq!(
            product_partition(&Partition::finest(&x), &Partition::finest(&x), &xy).unwrap(),
            Partition::finest(&xy)
        );
        assert_eq!(
            product_partition(&Partition::trivial(&x), &Partition::trivial(&x), &xy).unwrap(),
            Partition::trivial(&xy)
        );
        let halves = Partition::from_labels(&x, &[0, 0, 1, 1]).unwrap();
        let rect = product_partition(&halves, &halves, &xy).unwrap();
        assert_eq!(rect.atom_count(), 4);
        for cell in 0..16 {
            let (a, b) = (cell / 4, cell % 4);
            assert_eq!(rect.atom_of(cell), rect.atom_of((a / 2 * 2) * 4 + b / 2 * 2));
        }
        assert!(product_partition(&halves, &halves, &space(16)).is_err());
    }

    #[test]
    fn push_forward_examples() {
        let mu = FiniteMeasure::uniform(&space(4));
        assert_eq!(push_forward(&mu, &[0, 1, 2, 3], &space(4)).unwrap(), mu);
        assert_eq!(push_forward(&mu, &[0, 0, 0, 0], &space(1)).unwrap().weights(), &[1.0]);
        assert_eq!(
            push_forward(&mu, &[0, 1, 0, 1], &space(2)).unwrap().weights(),
            &[0.5, 0.5]
        );
        assert!(matches!(
            push_forward(&mu, &[0, 1, 2, 3], &space(2)),
            Err(MeasureError::MapOutOfRange { cell: 2, .. })
        ));
    }

    #[test]
    fn marginal_of_triple() {
        let s = GroundSpace::product(&[2, 2, 2]).unwrap();
        let joint = FiniteMeasure::new(&s, (1..=8).map(|i| i as f64 / 36.0).collect()).unwrap();
        let m02 = marginal(&joint, &[0, 2]).unwrap();
        // (x0, x2) = (0, 0) collects cells (0,0,0) and (0,1,0)
        assert!(close(m02.weight(0), (1.0 + 3.0) / 36.0));
        assert!(marginal(&joint, &[3]).is_err());
    }

    #[test]
    fn serde_layouts() {
        let plain = measure(&[0.25, 0.75]);
        assert_eq!(serde_json::to_string(&plain).unwrap(), "[0.25,0.75]");
        let s = GroundSpace::product(&[1, 2]).unwrap();
        let shaped = FiniteMeasure::new(&s, vec![0.25, 0.75]).unwrap();
        let text = serde_json::to_string(&shaped).unwrap();
        assert_eq!(text, r#"{"shape":[1,2],"weights":[0.25,0.75]}"#);
        assert_eq!(serde_json::from_str::<FiniteMeasure>(&text).unwrap(), shaped);
        assert!(serde_json::from_str::<FiniteMeasure>("[0.5,-1.0]").is_err());

        let k = Kernel::new(&space(2), &space(2), vec![vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        let text = serde_json::to_string(&k).unwrap();
        assert_eq!(text, "[[1.0,0.0],[0.5,0.5]]");
        assert_eq!(serde_json::from_str::<Kernel>(&text).unwrap(), k);
    }

    // Random instance generators for the property tests below.

    fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(prop_oneof![1 => Just(0.0), 4 => 0.01..1.0f64], n)
    }

    fn probability(n: usize) -> impl Strategy<Value = Vec<f64>> {
        weights(n).prop_map(|mut w| {
            if w.iter().all(|&x| x == 0.0) {
                w[0] = 1.0;
            }
            let t: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= t);
            w
        })
    }

    fn labels(n: usize, k: usize) -> impl Strategy<Value = Vec<usize>> {
        proptest::collection::vec(0..k, n)
    }

    proptest! {
        #[test]
        fn kernel_ratio_equals_measure_ratio(
            lambda in probability(3),
            mu_rows in proptest::collection::vec(probability(4), 3),
            nu_rows in proptest::collection::vec(probability(4), 3),
        ) {
            let x = space(3);
            let y = space(4);
            // force mu_x << nu_x by mixing nu into mu's support
            let nu_rows: Vec<Vec<f64>> = nu_rows
                .iter()
                .zip(&mu_rows)
                .map(|(n, m)| n.iter().zip(m).map(|(a, b)| (a + b) / 2.0).collect())
                .collect();
            let mu = Kernel::new(&x, &y, mu_rows).unwrap();
            let nu = Kernel::new(&x, &y, nu_rows).unwrap();
            let lambda = FiniteMeasure::new(&x, lambda).unwrap();
            let lm = kernel_product(&lambda, &mu).unwrap();
            let ln = kernel_product(&lambda, &nu).unwrap();
            let joint_rn = rn_derivative(&lm, &ln).unwrap();
            for a in lambda.support() {
                let row_rn = rn_derivative(mu.row(a), nu.row(a)).unwrap();
                for b in 0..4 {
                    if nu.row(a).weight(b) > 0.0 {
                        prop_assert!((joint_rn.value(a * 4 + b) - row_rn.value(b)).abs() < 1e-12);
                    }
                }
            }
        }

        #[test]
        fn kernel_product_distance_is_average(
            lambda in probability(3),
            mu_rows in proptest::collection::vec(probability(3), 3),
            nu_rows in proptest::collection::vec(probability(3), 3),
        ) {
            let x = space(3);
            let lambda = FiniteMeasure::new(&x, lambda).unwrap();
            let mu = Kernel::new(&x, &x, mu_rows).unwrap();
            let nu = Kernel::new(&x, &x, nu_rows).unwrap();
            let lhs = stat_distance(&kernel_product(&lambda, &mu).unwrap(), &kernel_product(&lambda, &nu).unwrap()).unwrap();
            let rhs: f64 = (0..3).map(|a| lambda.weight(a) * stat_distance(mu.row(a), nu.row(a)).unwrap()).sum();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn tower_and_contraction(
            mu in probability(8),
            f in proptest::collection::vec(-5.0..5.0f64, 8),
            fine in labels(8, 4),
            merge in labels(4, 2),
        ) {
            let s = space(8);
            let mu = FiniteMeasure::new(&s, mu).unwrap();
            let f = MeasurableFunction::new(&s, f).unwrap();
            let g = Partition::from_labels(&s, &fine).unwrap();
            let coarse: Vec<usize> = g.labels().iter().map(|&a| merge[a % 4]).collect();
            let coarse = Partition::from_labels(&s, &coarse).unwrap();
            prop_assert!(g.refines(&coarse));
            let two_step = cond_expect(&cond_expect(&f, &mu, &g).unwrap(), &mu, &coarse).unwrap();
            let one_step = cond_expect(&f, &mu, &coarse).unwrap();
            for c in mu.support() {
                prop_assert!((two_step.value(c) - one_step.value(c)).abs() < 1e-12);
            }
            let l1 = |h: &MeasurableFunction| -> f64 {
                (0..8).map(|c| mu.weight(c) * h.value(c).abs()).sum()
            };
            prop_assert!(l1(&one_step) <= l1(&f) + 1e-12);
            // averaging identity on every positive atom
            for atom in coarse.atoms() {
                let m = mu.mass_of(atom.iter().copied());
                if m > 0.0 {
                    let a: f64 = atom.iter().map(|&c| one_step.value(c) * mu.weight(c)).sum();
                    let b: f64 = atom.iter().map(|&c| f.value(c) * mu.weight(c)).sum();
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn likelihood_ratio_reflection(mu in weights(6), nu in weights(6)) {
            let mu = FiniteMeasure::from_weights(mu).unwrap();
            let nu = FiniteMeasure::from_weights(nu).unwrap();
            let a = likelihood_ratio(&mu, &nu).unwrap();
            let b = likelihood_ratio(&nu, &mu).unwrap();
            for c in 0..6 {
                match (a.get(c), b.get(c)) {
                    (Some(p), Some(q)) => prop_assert!((p.kappa() + q.kappa() - 1.0).abs() < 1e-12),
                    (None, None) => {}
                    _ => prop_assert!(false, "supports differ"),
                }
            }
        }

        #[test]
        fn cond_ratio_admissible_on_positive_atoms(
            mu in weights(6),
            f in proptest::collection::vec(0.0..3.0f64, 6),
            g in proptest::collection::vec(0.0..3.0f64, 6),
            part in labels(6, 3),
        ) {
            let s = space(6);
            let f: Vec<f64> = f.iter().zip(&g).map(|(a, b)| if a + b == 0.0 { 1.0 } else { *a }).collect();
            let mu = FiniteMeasure::new(&s, mu).unwrap();
            let p = Partition::from_labels(&s, &part).unwrap();
            let r = cond_ratio(
                &MeasurableFunction::new(&s, f).unwrap(),
                &MeasurableFunction::new(&s, g).unwrap(),
                &mu,
                &p,
            ).unwrap();
            let masses = restrict(&mu, &p).unwrap();
            for a in 0..p.atom_count() {
                prop_assert_eq!(r.get(a).is_some(), masses.weight(a) > 0.0);
            }
        }

        #[test]
        fn restrict_and_push_forward_preserve_mass(mu in weights(7), part in labels(7, 3)) {
            let s = space(7);
            let mu = FiniteMeasure::new(&s, mu).unwrap();
            let p = Partition::from_labels(&s, &part).unwrap();
            prop_assert!((restrict(&mu, &p).unwrap().total_mass() - mu.total_mass()).abs() < 1e-12);
            let pushed = push_forward(&mu, p.labels(), &p.atom_space()).unwrap();
            prop_assert_eq!(pushed, restrict(&mu, &p).unwrap());
        }

        #[test]
        fn join_refines_both(a in labels(9, 3), b in labels(9, 4)) {
            let s = space(9);
            let f = Partition::from_labels(&s, &a).unwrap();
            let g = Partition::from_labels(&s, &b).unwrap();
            let j = join_partitions(&f, &g).unwrap();
            prop_assert!(j.refines(&f) && j.refines(&g));
            prop_assert_eq!(join_partitions(&g, &f).unwrap().atom_count(), j.atom_count());
        }
    }
}
