//! One-shot bounds for separate random number generation with side
//! information.
//!
//! For a joint law of `(X0, X1, X2)` on a finite product alphabet and a pair
//! of extractors `phi_i: X_i -> Y_i`, the figure of merit is
//!
//! ```text
//! d(X|phi) = D(P_{X0 phi1(X1) phi2(X2)}, P_{X0} x U_{Y1} x U_{Y2})
//! ```
//!
//! with `D` the statistical distance. The spectrum terms
//! `T1 = [1 : P(x1|x0)]`, `T2 = [1 : P(x2|x0)]` and `T3 = [1 : P(x1,x2|x0)]`
//! sandwich the best achievable value:
//!
//! ```text
//! P{T not in A_r} - 3r  <=  min_phi d(X|phi)  <=  P{T not in A_r'} + (sqrt(3)/2) r'^(-1/2)
//! ```
//!
//! for `0 < r < 1 < r'`, where `A_r` is the product of the open intervals
//! `([r|Y1| : 1], [1:0])`, `([r|Y2| : 1], [1:0])` and `([r|Y1||Y2| : 1], [1:0])`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hpl::{HplPoint, KAPPA_TOL};
use crate::measure::{disintegrate, stat_distance, FiniteMeasure, GroundSpace, HplField, MeasureError};
use crate::quantize::{ConvergenceReport, Quantity, QuantizeError, ReportRow};
use crate::sources::{quantize_model, GroundModel, SourceError};

/// Default limit on the number of extractor pairs `best_extractor` enumerates.
pub const DEFAULT_CAP: u64 = 1 << 20;

/// Tolerance of the sandwich check.
pub const SANDWICH_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RngError {
    #[error("r = {r} is not valid here: {reason}")]
    InvalidR { r: f64, reason: &'static str },
    #[error("output alphabets must be nonempty, got |Y1| = {y1}, |Y2| = {y2}")]
    InvalidSizes { y1: usize, y2: usize },
    #[error("joint law must live on a three-factor product space X0 x X1 x X2")]
    NotTriple,
    #[error("extractor does not match the alphabets: {0}")]
    RangeMismatch(String),
    #[error("exhaustive search needs {needed} extractor pairs, above the cap of {cap}")]
    CapExceeded { needed: String, cap: u64 },
    #[error("trials must be at least 1")]
    NoTrials,
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Quantize(#[from] QuantizeError),
}

pub type Result<T> = std::result::Result<T, RngError>;

/// Sizes of the two output alphabets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OutputSizes {
    pub y1: usize,
    pub y2: usize,
}

impl OutputSizes {
    pub fn new(y1: usize, y2: usize) -> Result<Self> {
        if y1 == 0 || y2 == 0 {
            return Err(RngError::InvalidSizes { y1, y2 });
        }
        Ok(OutputSizes { y1, y2 })
    }
}

/// The parameter `r` of the region `A_r` together with the output sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionParams {
    pub r: f64,
    pub sizes: OutputSizes,
}

impl RegionParams {
    pub fn new(r: f64, sizes: OutputSizes) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(RngError::InvalidR {
                r,
                reason: "r must be positive and finite",
            });
        }
        Ok(RegionParams { r, sizes })
    }

    /// Lower endpoints `[r|Y1| : 1]`, `[r|Y2| : 1]`, `[r|Y1||Y2| : 1]`.
    pub fn thresholds(&self) -> [HplPoint; 3] {
        let OutputSizes { y1, y2 } = self.sizes;
        [y1 as f64, y2 as f64, (y1 * y2) as f64].map(|t| HplPoint::new(self.r * t, 1.0).expect("positive finite ratio"))
    }
}

/// The three spectrum fields, defined on the support of the joint law.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumTriple {
    pub t1: HplField,
    pub t2: HplField,
    pub t3: HplField,
}

impl SpectrumTriple {
    pub fn at(&self, cell: usize) -> Option<[HplPoint; 3]> {
        Some([self.t1.get(cell)?, self.t2.get(cell)?, self.t3.get(cell)?])
    }
}

fn triple_shape(joint: &FiniteMeasure) -> Result<[usize; 3]> {
    joint
        .space()
        .shape()
        .and_then(|s| s.try_into().ok())
        .ok_or(RngError::NotTriple)
}

/// `T1`, `T2`, `T3` on every joint-positive cell, from the conditional law
/// of `(X1, X2)` given `X0`.
pub fn spectrum_terms(joint: &FiniteMeasure) -> Result<SpectrumTriple> {
    let [_, n1, n2] = triple_shape(joint)?;
    let (marginal, kernel) = disintegrate(joint)?;
    let space = joint.space();
    let mut t1 = vec![None; space.cell_count()];
    let mut t2 = vec![None; space.cell_count()];
    let mut t3 = vec![None; space.cell_count()];
    for x0 in marginal.support() {
        let row = kernel.row(x0).weights();
        let p1: Vec<f64> = (0..n1).map(|a| row[a * n2..(a + 1) * n2].iter().sum()).collect();
        let p2: Vec<f64> = (0..n2).map(|b| (0..n1).map(|a| row[a * n2 + b]).sum()).collect();
        for x1 in 0..n1 {
            for x2 in 0..n2 {
                let cell = space.index(&[x0, x1, x2]);
                if joint.weight(cell) > 0.0 {
                    t1[cell] = Some(HplPoint::new(1.0, p1[x1]).map_err(MeasureError::from)?);
                    t2[cell] = Some(HplPoint::new(1.0, p2[x2]).map_err(MeasureError::from)?);
                    t3[cell] = Some(HplPoint::new(1.0, row[x1 * n2 + x2]).map_err(MeasureError::from)?);
                }
            }
        }
    }
    Ok(SpectrumTriple {
        t1: HplField::new(space, t1)?,
        t2: HplField::new(space, t2)?,
        t3: HplField::new(space, t3)?,
    })
}

/// Membership of `(T1, T2, T3)` in `A_r`, strict on both ends.
pub fn in_region(t: [HplPoint; 3], params: &RegionParams) -> bool {
    t.iter()
        .zip(params.thresholds())
        .all(|(&ti, lo)| lo < ti && ti < HplPoint::INFINITY)
}

/// True when some coordinate sits on its threshold up to `KAPPA_TOL`, so the
/// strict comparison in `in_region` is decided by rounding.
pub fn on_boundary(t: [HplPoint; 3], params: &RegionParams) -> bool {
    t.iter()
        .zip(params.thresholds())
        .any(|(&ti, lo)| ti.dist(lo) <= KAPPA_TOL)
}

/// Outside-region mass and the mass of cells flagged by [`on_boundary`].
pub fn region_masses(joint: &FiniteMeasure, params: &RegionParams) -> Result<(f64, f64)> {
    let spectrum = spectrum_terms(joint)?;
    let (mut outside, mut boundary) = (0.0, 0.0);
    for cell in joint.support() {
        let t = spectrum.at(cell).expect("spectrum is defined on the support");
        if !in_region(t, params) {
            outside += joint.weight(cell);
        }
        if on_boundary(t, params) {
            boundary += joint.weight(cell);
        }
    }
    Ok((outside, boundary))
}

/// `P{T not in A_r}`
pub fn outside_prob(joint: &FiniteMeasure, params: &RegionParams) -> Result<f64> {
    Ok(region_masses(joint, params)?.0)
}

/// `(sqrt(3)/2) r^(-1/2)`, written as `sqrt(3 / (4r))` so that `r = 3` gives 0.5 exactly.
pub fn direct_slack(r: f64) -> f64 {
    (0.75 / r).sqrt()
}

/// Achievability: some extractor pair reaches `outside_prob + (sqrt(3)/2) r^(-1/2)`. Needs `r > 1`.
pub fn direct_bound(joint: &FiniteMeasure, params: &RegionParams) -> Result<f64> {
    if params.r <= 1.0 {
        return Err(RngError::InvalidR {
            r: params.r,
            reason: "the direct bound needs r > 1",
        });
    }
    Ok(outside_prob(joint, params)? + direct_slack(params.r))
}

/// Converse: every extractor pair is at least `outside_prob - 3r`. Needs `0 < r < 1`.
/// The value is not clamped at zero.
pub fn converse_bound(joint: &FiniteMeasure, params: &RegionParams) -> Result<f64> {
    if !(params.r > 0.0 && params.r < 1.0) {
        return Err(RngError::InvalidR {
            r: params.r,
            reason: "the converse bound needs 0 < r < 1",
        });
    }
    Ok(outside_prob(joint, params)? - 3.0 * params.r)
}

/// A pair of extractors `phi1: X1 -> Y1`, `phi2: X2 -> Y2`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExtractorPair {
    pub phi1: Vec<usize>,
    pub phi2: Vec<usize>,
}

impl ExtractorPair {
    pub fn new(phi1: Vec<usize>, phi2: Vec<usize>) -> Self {
        ExtractorPair { phi1, phi2 }
    }

    /// `;`-separated images, e.g. `0;1;0;1`.
    pub fn encode(map: &[usize]) -> String {
        map.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
    }
}

/// Joint law flattened for repeated extractor evaluation.
struct Instance {
    n0: usize,
    n1: usize,
    n2: usize,
    cells: Vec<(usize, usize, usize, f64)>,
    marginal: Vec<f64>,
}

impl Instance {
    fn new(joint: &FiniteMeasure) -> Result<Self> {
        let [n0, n1, n2] = triple_shape(joint)?;
        let mut marginal = vec![0.0; n0];
        let cells = joint
            .support()
            .map(|cell| {
                let c = joint.space().coords(cell);
                marginal[c[0]] += joint.weight(cell);
                (c[0], c[1], c[2], joint.weight(cell))
            })
            .collect();
        Ok(Instance {
            n0,
            n1,
            n2,
            cells,
            marginal,
        })
    }

    fn check(&self, phi: &ExtractorPair, sizes: OutputSizes) -> Result<()> {
        if phi.phi1.len() != self.n1 || phi.phi2.len() != self.n2 {
            return Err(RngError::RangeMismatch(format!(
                "maps cover {} and {} symbols, alphabets have {} and {}",
                phi.phi1.len(),
                phi.phi2.len(),
                self.n1,
                self.n2
            )));
        }
        if let Some(v) = phi.phi1.iter().find(|&&v| v >= sizes.y1) {
            return Err(RngError::RangeMismatch(format!(
                "phi1 value {v} outside |Y1| = {}",
                sizes.y1
            )));
        }
        if let Some(v) = phi.phi2.iter().find(|&&v| v >= sizes.y2) {
            return Err(RngError::RangeMismatch(format!(
                "phi2 value {v} outside |Y2| = {}",
                sizes.y2
            )));
        }
        Ok(())
    }

    fn distance(&self, phi1: &[usize], phi2: &[usize], sizes: OutputSizes, buf: &mut Vec<f64>) -> f64 {
        let OutputSizes { y1, y2 } = sizes;
        let width = y1 * y2;
        let u = 1.0 / width as f64;
        buf.clear();
        buf.extend(self.marginal.iter().flat_map(|&m| std::iter::repeat_n(-m * u, width)));
        for &(x0, x1, x2, w) in &self.cells {
            buf[x0 * width + phi1[x1] * y2 + phi2[x2]] += w;
        }
        let (mut pos, mut neg) = (0.0, 0.0);
        for &d in buf.iter() {
            if d > 0.0 {
                pos += d;
            } else {
                neg -= d;
            }
        }
        f64::max(pos, neg)
    }
}

/// `d(X|phi)`: statistical distance between the extractor outputs (with
/// `X0` kept) and `P_{X0}` times the uniform law on `Y1 x Y2`.
pub fn eval_extractor(joint: &FiniteMeasure, phi: &ExtractorPair, sizes: OutputSizes) -> Result<f64> {
    let inst = Instance::new(joint)?;
    inst.check(phi, sizes)?;
    // Reference route through the generic measure operations.
    let out_space = GroundSpace::product(&[inst.n0, sizes.y1, sizes.y2])?;
    let map: Vec<usize> = (0..joint.space().cell_count())
        .map(|cell| {
            let c = joint.space().coords(cell);
            out_space.index(&[c[0], phi.phi1[c[1]], phi.phi2[c[2]]])
        })
        .collect();
    let pushed = crate::measure::push_forward(joint, &map, &out_space)?;
    let u = 1.0 / (sizes.y1 * sizes.y2) as f64;
    let target = FiniteMeasure::new(
        &out_space,
        (0..out_space.cell_count())
            .map(|cell| inst.marginal[cell / (sizes.y1 * sizes.y2)] * u)
            .collect(),
    )?;
    Ok(stat_distance(&pushed, &target)?)
}

fn decode(mut code: u64, radix: usize, len: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = (code % radix as u64) as usize;
        code /= radix as u64;
    }
    out
}

fn search_space(n1: usize, n2: usize, sizes: OutputSizes) -> Option<(u64, u64)> {
    let a = (sizes.y1 as u64).checked_pow(n1.try_into().ok()?)?;
    let b = (sizes.y2 as u64).checked_pow(n2.try_into().ok()?)?;
    a.checked_mul(b)?;
    Some((a, b))
}

fn better(a: (f64, u64), b: (f64, u64)) -> (f64, u64) {
    if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
        b
    } else {
        a
    }
}

/// Exhaustive minimum of `d(X|phi)` over all extractor pairs.
///
/// Pairs are ranked by value, then lexicographically by `(phi1, phi2)`, so
/// the result does not depend on how the work is scheduled.
pub fn best_extractor(joint: &FiniteMeasure, sizes: OutputSizes, cap: u64) -> Result<(ExtractorPair, f64)> {
    let inst = Instance::new(joint)?;
    let (count1, count2) = search_space(inst.n1, inst.n2, sizes)
        .filter(|(a, b)| a * b <= cap)
        .ok_or_else(|| RngError::CapExceeded {
            needed: format!("{}^{} * {}^{}", sizes.y1, inst.n1, sizes.y2, inst.n2),
            cap,
        })?;
    let total = count1 * count2;
    let (value, code) = (0..total)
        .into_par_iter()
        .fold(
            || ((f64::INFINITY, u64::MAX), Vec::new()),
            |(best, mut buf), code| {
                let phi1 = decode(code / count2, sizes.y1, inst.n1);
                let phi2 = decode(code % count2, sizes.y2, inst.n2);
                let d = inst.distance(&phi1, &phi2, sizes, &mut buf);
                (better(best, (d, code)), buf)
            },
        )
        .map(|(best, _)| best)
        .reduce(|| (f64::INFINITY, u64::MAX), better);
    let phi = ExtractorPair::new(
        decode(code / count2, sizes.y1, inst.n1),
        decode(code % count2, sizes.y2, inst.n2),
    );
    Ok((phi, value))
}

/// Best of `trials` uniformly random extractor pairs drawn from a ChaCha8
/// stream seeded with `seed`. Ties go to the earliest draw.
pub fn random_binning_search(
    joint: &FiniteMeasure,
    sizes: OutputSizes,
    trials: u64,
    seed: u64,
) -> Result<(ExtractorPair, f64)> {
    if trials == 0 {
        return Err(RngError::NoTrials);
    }
    let inst = Instance::new(joint)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates: Vec<ExtractorPair> = (0..trials)
        .map(|_| {
            ExtractorPair::new(
                (0..inst.n1).map(|_| rng.random_range(0..sizes.y1)).collect(),
                (0..inst.n2).map(|_| rng.random_range(0..sizes.y2)).collect(),
            )
        })
        .collect();
    let (value, idx) = candidates
        .par_iter()
        .enumerate()
        .map_init(Vec::new, |buf, (i, phi)| {
            (inst.distance(&phi.phi1, &phi.phi2, sizes, buf), i as u64)
        })
        .reduce(|| (f64::INFINITY, u64::MAX), better);
    Ok((candidates[idx as usize].clone(), value))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Direct,
    Converse,
}

impl BoundKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundKind::Direct => "direct",
            BoundKind::Converse => "converse",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub r: f64,
    pub outside_prob: f64,
    pub kind: BoundKind,
    pub bound: f64,
    /// Mass of cells whose spectrum sits on a threshold (see [`on_boundary`]).
    pub boundary_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundSweep {
    pub rows: Vec<SweepRow>,
    /// Smallest direct bound over the grid, with its `r`.
    pub best_direct: Option<(f64, f64)>,
    /// Largest converse bound over the grid, with its `r`.
    pub best_converse: Option<(f64, f64)>,
}

/// Evaluates the direct bound at every `r > 1` and the converse bound at
/// every `r < 1` of the grid.
pub fn bound_sweep(joint: &FiniteMeasure, sizes: OutputSizes, r_grid: &[f64]) -> Result<BoundSweep> {
    if let Some(&r) = r_grid.iter().find(|&&r| r == 1.0) {
        return Err(RngError::InvalidR {
            r,
            reason: "neither bound covers r = 1",
        });
    }
    let params = r_grid
        .iter()
        .map(|&r| RegionParams::new(r, sizes))
        .collect::<Result<Vec<_>>>()?;
    let rows = params
        .par_iter()
        .map(|p| {
            let (outside, boundary) = region_masses(joint, p)?;
            let (kind, bound) = if p.r > 1.0 {
                (BoundKind::Direct, outside + direct_slack(p.r))
            } else {
                (BoundKind::Converse, outside - 3.0 * p.r)
            };
            Ok(SweepRow {
                r: p.r,
                outside_prob: outside,
                kind,
                bound,
                boundary_mass: boundary,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pick = |kind: BoundKind, prefer: fn(f64, f64) -> bool| {
        rows.iter()
            .filter(|row| row.kind == kind)
            .fold(None, |acc: Option<(f64, f64)>, row| match acc {
                Some((_, b)) if !prefer(row.bound, b) => acc,
                _ => Some((row.r, row.bound)),
            })
    };
    let best_direct = pick(BoundKind::Direct, |a, b| a < b);
    let best_converse = pick(BoundKind::Converse, |a, b| a > b);
    Ok(BoundSweep {
        rows,
        best_direct,
        best_converse,
    })
}

/// Per level, the joint mass of cells where the quantized `T3` is at least
/// `eps` away from its limit value.
pub fn spectrum_convergence(model: &GroundModel, levels: &[u32], eps: f64) -> Result<ConvergenceReport> {
    if !model.is_continuous() {
        return Err(SourceError::FiniteModel("spectrum_convergence").into());
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(QuantizeError::InvalidEps(eps).into());
    }
    let errors = levels
        .par_iter()
        .map(|&n| {
            let q = quantize_model(model, n)?;
            let spectrum = spectrum_terms(q.joint())?;
            let mut mass = 0.0;
            for cell in q.joint().support() {
                let t3 = spectrum.t3.get(cell).expect("defined on the support");
                let limit = q.limit_spectrum_at(cell).expect("continuous model");
                if t3.dist(limit) >= eps {
                    mass += q.joint().weight(cell);
                }
            }
            Ok(mass)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ConvergenceReport {
        quantity: Quantity::SpectrumExceedance,
        eps: Some(eps),
        rows: levels
            .iter()
            .zip(errors)
            .map(|(&level, error)| ReportRow { level, error })
            .collect(),
    })
}
