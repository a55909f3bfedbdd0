//! Approximation errors along chains of nested partitions.
//!
//! Each chain function evaluates, per level, an exact error between an object
//! and its quantized version: L1 distance of conditional expectations,
//! in-measure exceedance, expected statistical distance of averaged kernel
//! rows, and in-measure exceedance of likelihood ratios on the half projective
//! line. The finest level of a chain is the ground space itself, where every
//! error is exactly zero.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::hpl::HplPoint;
use crate::measure::{
    cond_expect, restrict, stat_distance, FiniteMeasure, GroundSpace, Kernel, MeasurableFunction, MeasureError,
    Partition,
};
use crate::sources::{coarsen, quantize_model, GroundModel, QuantizedTriple, SourceError};

/// Default exceedance threshold.
pub const DEFAULT_EPS: f64 = 0.01;

#[derive(Debug, Error)]
pub enum QuantizeError {
    #[error("invalid refinement chain: {0}")]
    InvalidChain(String),
    #[error("eps must be positive and finite, got {0}")]
    InvalidEps(f64),
    #[error("{0} must be a probability")]
    NotProbability(&'static str),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Source(#[from] SourceError),
}

pub type Result<T> = std::result::Result<T, QuantizeError>;

/// Nested partitions of a fixed ground space, coarse to fine.
#[derive(Debug, Clone)]
pub struct RefinementChain {
    ground: GroundSpace,
    levels: Vec<u32>,
    partitions: Vec<Partition>,
}

impl RefinementChain {
    pub fn new(ground: &GroundSpace, levels: Vec<u32>, partitions: Vec<Partition>) -> Result<Self> {
        if levels.is_empty() || levels.len() != partitions.len() {
            return Err(QuantizeError::InvalidChain(format!(
                "{} levels for {} partitions",
                levels.len(),
                partitions.len()
            )));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(QuantizeError::InvalidChain(format!(
                "levels {levels:?} are not strictly increasing"
            )));
        }
        if let Some(p) = partitions.iter().find(|p| p.space() != ground) {
            return Err(QuantizeError::InvalidChain(format!(
                "partition on {} instead of {ground}",
                p.space()
            )));
        }
        if let Some(i) = (1..partitions.len()).find(|&i| !partitions[i].refines(&partitions[i - 1])) {
            return Err(QuantizeError::InvalidChain(format!(
                "level {} does not refine level {}",
                levels[i],
                levels[i - 1]
            )));
        }
        if partitions.last().map(Partition::atom_count) != Some(ground.cell_count()) {
            return Err(QuantizeError::InvalidChain(
                "finest level is not the ground space".into(),
            ));
        }
        Ok(RefinementChain {
            ground: ground.clone(),
            levels,
            partitions,
        })
    }

    /// Dyadic blocks on `2^N` cells, `N` the last level: at level `n` the
    /// atom of cell `x` is `x >> (N - n)`.
    pub fn dyadic(levels: &[u32]) -> Result<Self> {
        let top = *levels
            .last()
            .ok_or_else(|| QuantizeError::InvalidChain("no levels".into()))?;
        if top > 24 {
            return Err(QuantizeError::InvalidChain(format!("level {top} is too fine")));
        }
        let ground = GroundSpace::new(1 << top)?;
        let partitions = levels
            .iter()
            .map(|&n| {
                let labels: Vec<usize> = (0..ground.cell_count()).map(|x| x >> top.saturating_sub(n)).collect();
                Partition::from_labels(&ground, &labels)
            })
            .collect::<std::result::Result<_, _>>()?;
        Self::new(&ground, levels.to_vec(), partitions)
    }

    pub fn ground(&self) -> &GroundSpace {
        &self.ground
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }

    fn map_levels<F>(&self, quantity: Quantity, eps: Option<f64>, per_level: F) -> Result<ConvergenceReport>
    where
        F: Fn(&Partition) -> Result<f64> + Sync + Send,
    {
        let errors: Vec<f64> = self.partitions.par_iter().map(per_level).collect::<Result<_>>()?;
        Ok(ConvergenceReport {
            quantity,
            eps,
            rows: self
                .levels
                .iter()
                .zip(errors)
                // an empty f64 sum is -0.0; report it as 0
                .map(|(&level, error)| ReportRow {
                    level,
                    error: error + 0.0,
                })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    L1Error,
    L2Error,
    InMeasureExceedance,
    KernelDistance,
    HplExceedance,
    SpectrumExceedance,
}

impl Quantity {
    pub fn as_str(self) -> &'static str {
        match self {
            Quantity::L1Error => "l1_error",
            Quantity::L2Error => "l2_error",
            Quantity::InMeasureExceedance => "in_measure_exceedance",
            Quantity::KernelDistance => "kernel_distance",
            Quantity::HplExceedance => "hpl_exceedance",
            Quantity::SpectrumExceedance => "spectrum_exceedance",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReportRow {
    pub level: u32,
    pub error: f64,
}

/// Per-level error values of one chain experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub quantity: Quantity,
    pub eps: Option<f64>,
    pub rows: Vec<ReportRow>,
}

impl ConvergenceReport {
    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.error).collect()
    }

    pub fn last_error(&self) -> Option<f64> {
        self.rows.last().map(|r| r.error)
    }

    /// `level,error,eps` with a header row; `eps` is empty when not applicable.
    pub fn to_csv(&self) -> String {
        let eps = self.eps.map(|e| e.to_string()).unwrap_or_default();
        let mut out = String::from("level,error,eps\n");
        for row in &self.rows {
            out.push_str(&format!("{},{},{}\n", row.level, row.error, eps));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report is always serializable")
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(QuantizeError::InvalidEps(eps))
    }
}

fn ensure_ground(chain: &RefinementChain, space: &GroundSpace) -> Result<()> {
    if chain.ground() == space {
        Ok(())
    } else {
        Err(MeasureError::SpaceMismatch {
            op: "refinement chain",
            left: chain.ground().to_string(),
            right: space.to_string(),
        }
        .into())
    }
}

/// `mu |E(f|F_n) - f|` per level.
pub fn l1_error_chain(
    f: &MeasurableFunction,
    mu: &FiniteMeasure,
    chain: &RefinementChain,
) -> Result<ConvergenceReport> {
    ensure_ground(chain, mu.space())?;
    chain.map_levels(Quantity::L1Error, None, |p| {
        let e = cond_expect(f, mu, p)?;
        Ok(weighted_sum(mu, |c| (e.value(c) - f.value(c)).abs()))
    })
}

/// `mu (E(f|F_n) - f)^2` per level; nonincreasing along a refinement chain.
pub fn l2_error_chain(
    f: &MeasurableFunction,
    mu: &FiniteMeasure,
    chain: &RefinementChain,
) -> Result<ConvergenceReport> {
    ensure_ground(chain, mu.space())?;
    chain.map_levels(Quantity::L2Error, None, |p| {
        let e = cond_expect(f, mu, p)?;
        Ok(weighted_sum(mu, |c| (e.value(c) - f.value(c)).powi(2)))
    })
}

fn weighted_sum(mu: &FiniteMeasure, g: impl Fn(usize) -> f64) -> f64 {
    mu.support().map(|c| mu.weight(c) * g(c)).sum()
}

/// `nu {|E_mu(f|F_n) - f| >= eps}` per level, for `nu << mu`.
pub fn in_measure_error_chain(
    f: &MeasurableFunction,
    mu: &FiniteMeasure,
    nu: &FiniteMeasure,
    eps: f64,
    chain: &RefinementChain,
) -> Result<ConvergenceReport> {
    check_eps(eps)?;
    ensure_ground(chain, mu.space())?;
    nu.ensure_dominated_by(mu)?;
    chain.map_levels(Quantity::InMeasureExceedance, Some(eps), |p| {
        let e = cond_expect(f, mu, p)?;
        Ok(nu
            .support()
            .filter(|&c| (e.value(c) - f.value(c)).abs() >= eps)
            .map(|c| nu.weight(c))
            .sum())
    })
}

/// `sum_x lambda(x) d(avg_row(atom(x)), mu_x)` per level, where `avg_row` is
/// the `lambda`-weighted mean of the kernel rows over the atom.
pub fn kernel_error_chain(
    lambda: &FiniteMeasure,
    kernel: &Kernel,
    chain: &RefinementChain,
) -> Result<ConvergenceReport> {
    ensure_ground(chain, lambda.space())?;
    if !lambda.is_probability() {
        return Err(QuantizeError::NotProbability("lambda"));
    }
    if !kernel.is_probability() {
        return Err(QuantizeError::NotProbability("kernel"));
    }
    if kernel.source() != lambda.space() {
        return Err(MeasureError::SpaceMismatch {
            op: "kernel_error_chain",
            left: kernel.source().to_string(),
            right: lambda.space().to_string(),
        }
        .into());
    }
    let width = kernel.target().cell_count();
    chain.map_levels(Quantity::KernelDistance, None, |p| {
        let masses = restrict(lambda, p)?;
        let mut avg = vec![vec![0.0; width]; p.atom_count()];
        for x in lambda.support() {
            let a = p.atom_of(x);
            let share = lambda.weight(x) / masses.weight(a);
            for (slot, &m) in avg[a].iter_mut().zip(kernel.row(x).weights()) {
                *slot += share * m;
            }
        }
        let avg = avg
            .into_iter()
            .map(|row| FiniteMeasure::new(kernel.target(), row))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        lambda
            .support()
            .map(|x| Ok(lambda.weight(x) * stat_distance(&avg[p.atom_of(x)], kernel.row(x))?))
            .sum()
    })
}

/// `xi {d_H([mu|F_n : nu|F_n], [mu : nu]) >= eps}` per level, for `xi << mu + nu`.
pub fn hpl_error_chain(
    mu: &FiniteMeasure,
    nu: &FiniteMeasure,
    xi: &FiniteMeasure,
    eps: f64,
    chain: &RefinementChain,
) -> Result<ConvergenceReport> {
    check_eps(eps)?;
    ensure_ground(chain, mu.space())?;
    xi.ensure_dominated_by(&mu.plus(nu)?)?;
    chain.map_levels(Quantity::HplExceedance, Some(eps), |p| {
        let mu_a = restrict(mu, p)?;
        let nu_a = restrict(nu, p)?;
        let mut mass = 0.0;
        for x in xi.support() {
            let a = p.atom_of(x);
            let coarse = HplPoint::new(mu_a.weight(a), nu_a.weight(a)).map_err(MeasureError::from)?;
            let fine = HplPoint::new(mu.weight(x), nu.weight(x)).map_err(MeasureError::from)?;
            if coarse.dist(fine) >= eps {
                mass += xi.weight(x);
            }
        }
        Ok(mass)
    })
}

/// Quantizes `model` at the finest of `levels` and groups its cells into the
/// dyadic partitions of every listed level. Also returns the quantized triple
/// at each level, obtained by coarsening.
pub fn dyadic_chain(model: &GroundModel, levels: &[u32]) -> Result<(RefinementChain, Vec<QuantizedTriple>)> {
    let &top = levels
        .last()
        .ok_or_else(|| QuantizeError::InvalidChain("no levels".into()))?;
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(QuantizeError::InvalidChain(format!(
            "levels {levels:?} are not strictly increasing"
        )));
    }
    let fine = quantize_model(model, top)?;
    let ground = fine.joint().space().clone();
    let partitions = levels
        .iter()
        .map(|&n| Ok(Partition::from_labels(&ground, &fine.coarsening_labels(n)?)?))
        .collect::<Result<Vec<_>>>()?;
    let triples = levels
        .par_iter()
        .map(|&n| Ok(coarsen(&fine, n)?))
        .collect::<Result<Vec<_>>>()?;
    Ok((RefinementChain::new(&ground, levels.to_vec(), partitions)?, triples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::marginal;
    use crate::sources::atom_cell;

    fn space(n: usize) -> GroundSpace {
        GroundSpace::new(n).unwrap()
    }

    fn ramp() -> MeasurableFunction {
        MeasurableFunction::new(&space(8), (0..8).map(|i| i as f64 / 7.0).collect()).unwrap()
    }

    /// Mean absolute deviation from per-block means, computed directly.
    fn block_mad(values: &[f64], block: usize) -> f64 {
        values
            .chunks(block)
            .map(|b| {
                let mean = b.iter().sum::<f64>() / b.len() as f64;
                b.iter().map(|v| (v - mean).abs()).sum::<f64>()
            })
            .sum::<f64>()
            / values.len() as f64
    }

    #[test]
    fn dyadic_chain_structure() {
        let chain = RefinementChain::dyadic(&[0, 1, 3]).unwrap();
        assert_eq!(chain.ground().cell_count(), 8);
        assert_eq!(chain.partitions()[0].atom_count(), 1);
        assert_eq!(chain.partitions()[1].atoms(), vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]]);
        assert!(RefinementChain::dyadic(&[]).is_err());
        assert!(RefinementChain::dyadic(&[2, 1]).is_err());
        let s = space(4);
        let bad = RefinementChain::new(&s, vec![0, 1], vec![Partition::finest(&s), Partition::trivial(&s)]);
        assert!(matches!(bad, Err(QuantizeError::InvalidChain(_))));
    }

    #[test]
    fn l1_ramp_example() {
        // Oracle: (1.5 + 0.5 + 0.5 + 1.5) / 4 / 7 per half.
        let expected = block_mad(&(0..8).map(|i| i as f64 / 7.0).collect::<Vec<_>>(), 4);
        assert!((expected - 1.0 / 7.0).abs() < 1e-15);
        let chain = RefinementChain::dyadic(&[1, 3]).unwrap();
        let mu = FiniteMeasure::uniform(&space(8));
        let report = l1_error_chain(&ramp(), &mu, &chain).unwrap();
        assert!((report.rows[0].error - expected).abs() < 1e-12);
        assert_eq!(report.rows[1].error, 0.0);
    }

    #[test]
    fn constant_function_has_no_error() {
        let chain = RefinementChain::dyadic(&[0, 1, 2, 3]).unwrap();
        let mu = FiniteMeasure::uniform(&space(8));
        let f = MeasurableFunction::constant(&space(8), 2.5).unwrap();
        assert!(l1_error_chain(&f, &mu, &chain)
            .unwrap()
            .errors()
            .iter()
            .all(|&e| e == 0.0));
        let r = in_measure_error_chain(&f, &mu, &mu, 0.01, &chain).unwrap();
        assert!(r.errors().iter().all(|&e| e == 0.0));
    }

    #[test]
    fn in_measure_ramp_example() {
        let chain = RefinementChain::dyadic(&[1, 3]).unwrap();
        let mu = FiniteMeasure::uniform(&space(8));
        // deviations 1.5/7 on the block ends exceed 0.2; 0.5/7 inside do not
        let r = in_measure_error_chain(&ramp(), &mu, &mu, 0.2, &chain).unwrap();
        assert_eq!(r.errors(), vec![0.5, 0.0]);
        assert_eq!(r.eps, Some(0.2));

        let partial = FiniteMeasure::new(&space(8), vec![0.0; 8]).unwrap();
        assert!(in_measure_error_chain(&ramp(), &partial, &mu, 0.2, &chain).is_err());
        assert!(matches!(
            in_measure_error_chain(&ramp(), &mu, &mu, 0.0, &chain),
            Err(QuantizeError::InvalidEps(_))
        ));
    }

    #[test]
    fn kernel_chain_examples() {
        let chain = RefinementChain::dyadic(&[0, 1]).unwrap();
        let lambda = FiniteMeasure::uniform(&space(2));
        let k = Kernel::new(&space(2), &space(2), vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(
            kernel_error_chain(&lambda, &k, &chain).unwrap().errors(),
            vec![0.5, 0.0]
        );

        let row = FiniteMeasure::from_weights(vec![0.3, 0.7]).unwrap();
        let constant = Kernel::constant(&space(2), &row);
        let r = kernel_error_chain(&lambda, &constant, &chain).unwrap();
        assert!(r.errors().iter().all(|&e| e.abs() < 1e-15));
    }

    #[test]
    fn hpl_chain_example() {
        let s = space(4);
        let chain = RefinementChain::dyadic(&[1, 2]).unwrap();
        let mu = FiniteMeasure::new(&s, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let nu = FiniteMeasure::uniform(&s);
        // left atom [1:0.5] (kappa 2/3) against cells kappa 4/5 and 0; right atom 0 vs 0
        let oracle: f64 = [(2.0 / 3.0 - 0.8f64).abs(), 2.0 / 3.0, 0.0, 0.0]
            .iter()
            .map(|&d| if d >= 0.1 { 0.25 } else { 0.0 })
            .sum();
        assert_eq!(oracle, 0.5);
        let r = hpl_error_chain(&mu, &nu, &nu, 0.1, &chain).unwrap();
        assert_eq!(r.errors(), vec![oracle, 0.0]);

        let same = hpl_error_chain(&nu, &nu, &nu, 0.01, &chain).unwrap();
        assert_eq!(same.errors(), vec![0.0, 0.0]);

        let xi_bad = FiniteMeasure::new(&s, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(hpl_error_chain(&mu, &FiniteMeasure::zero(&s), &xi_bad, 0.1, &chain).is_err());
    }

    #[test]
    fn dyadic_chain_on_atom_uniform() {
        let model = GroundModel::atom_uniform(0.5, 1.0 / 3.0).unwrap();
        let (chain, triples) = dyadic_chain(&model, &[1, 2, 3]).unwrap();
        assert_eq!(chain.ground().cell_count(), 8);
        assert_eq!(chain.partitions().len(), 3);
        for k in 0..2 {
            let atom = chain.partitions()[0].atom_of(4 * k);
            for cell in 4 * k..4 * k + 4 {
                assert_eq!(chain.partitions()[0].atom_of(cell), atom);
            }
        }
        for (p, q) in chain.partitions().iter().zip(&triples) {
            let fine = triples.last().unwrap().joint();
            assert_eq!(restrict(fine, p).unwrap().weights(), q.joint().weights());
        }
        let (single, _) = dyadic_chain(&model, &[4]).unwrap();
        assert_eq!(single.partitions().len(), 1);
        assert!(dyadic_chain(&GroundModel::ShiftCoupled, &[0, 2]).is_err());
    }

    #[test]
    fn atom_cell_ratio_gap_shrinks() {
        let p = 0.5;
        let model = GroundModel::atom_uniform(p, 1.0 / 3.0).unwrap();
        let target = HplPoint::new(1.0, p).unwrap();
        let mut prev = f64::INFINITY;
        for n in 0..=16 {
            let q = quantize_model(&model, n).unwrap();
            let x1 = marginal(q.joint(), &[1]).unwrap();
            let gap = HplPoint::new(1.0, x1.weight(atom_cell(1.0 / 3.0, n)))
                .unwrap()
                .dist(target);
            assert!(gap < prev);
            prev = gap;
        }
    }

    #[test]
    fn report_serialization() {
        let r = ConvergenceReport {
            quantity: Quantity::HplExceedance,
            eps: Some(0.01),
            rows: vec![ReportRow { level: 1, error: 0.5 }, ReportRow { level: 2, error: 0.0 }],
        };
        assert_eq!(r.to_csv(), "level,error,eps\n1,0.5,0.01\n2,0,0.01\n");
        let j = r.to_json();
        assert_eq!(j["quantity"], "hpl_exceedance");
        assert_eq!(j["rows"][0]["level"], 1);
        let no_eps = ConvergenceReport { eps: None, ..r };
        assert!(no_eps.to_csv().ends_with("2,0,\n"));
    }
}
