//! Seeded self-check suites run by `infospec check`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::hpl::{HplPoint, KAPPA_TOL};
use crate::measure::{
    cond_expect, join_partitions, kernel_product, rn_derivative, stat_distance, FiniteMeasure, GroundSpace, Kernel,
    MeasurableFunction, Partition,
};
use crate::rng::{best_extractor, converse_bound, direct_bound, OutputSizes, RegionParams, DEFAULT_CAP, SANDWICH_TOL};

/// Absolute tolerance of the identity and law checks.
pub const IDENTITY_TOL: f64 = 1e-12;

pub const KERNEL_CASES: usize = 100;
pub const HPL_CASES: usize = 10_000;
pub const COND_EXPECT_CASES: usize = 200;
pub const SANDWICH_CASES: usize = 200;

/// Deliberate corruptions used to exercise the failure path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Fault {
    StatDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    KernelDensity,
    KernelDistance,
    HplAxioms,
    CondExpect,
    Sandwich,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::KernelDensity,
        Suite::KernelDistance,
        Suite::HplAxioms,
        Suite::CondExpect,
        Suite::Sandwich,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::KernelDensity => "kernel_density",
            Suite::KernelDistance => "kernel_distance",
            Suite::HplAxioms => "hpl_axioms",
            Suite::CondExpect => "cond_expect",
            Suite::Sandwich => "sandwich",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub suite: Suite,
    pub cases: usize,
    pub failures: usize,
    /// Index, message and instance dump of the first failing case.
    pub first_failure: Option<(usize, String, serde_json::Value)>,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Runs every suite; each suite draws from its own stream derived from `seed`.
pub fn run_all(seed: u64, fault: Option<Fault>) -> Vec<SuiteResult> {
    Suite::ALL.iter().map(|&s| run_suite(s, seed, fault)).collect()
}

pub fn run_suite(suite: Suite, seed: u64, fault: Option<Fault>) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(suite as u64);
    let (cases, outcomes): (usize, Vec<Option<(String, serde_json::Value)>>) = match suite {
        Suite::KernelDensity => (
            KERNEL_CASES,
            (0..KERNEL_CASES).map(|_| density_case(&mut rng)).collect(),
        ),
        Suite::KernelDistance => (
            KERNEL_CASES,
            (0..KERNEL_CASES).map(|_| distance_case(&mut rng, fault)).collect(),
        ),
        Suite::HplAxioms => (HPL_CASES, (0..HPL_CASES).map(|_| hpl_case(&mut rng)).collect()),
        Suite::CondExpect => (
            COND_EXPECT_CASES,
            (0..COND_EXPECT_CASES).map(|_| cond_expect_case(&mut rng)).collect(),
        ),
        Suite::Sandwich => (
            SANDWICH_CASES,
            (0..SANDWICH_CASES).map(|_| sandwich_case(&mut rng)).collect(),
        ),
    };
    let failures = outcomes.iter().filter(|o| o.is_some()).count();
    let first_failure = outcomes
        .into_iter()
        .enumerate()
        .find_map(|(i, o)| o.map(|(msg, dump)| (i, msg, dump)));
    SuiteResult {
        suite,
        cases,
        failures,
        first_failure,
    }
}

/// A probability vector of length `n`; roughly a quarter of the entries are
/// zero when `sparse` is set.
pub fn random_probability(rng: &mut impl Rng, n: usize, sparse: bool) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|_| {
            if sparse && rng.random_bool(0.25) {
                0.0
            } else {
                rng.random_range(0.01..1.0)
            }
        })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[rng.random_range(0..n)] = 1.0;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

/// Base law `lambda` and kernels `mu`, `nu` with every row `mu_x << nu_x`.
pub struct KernelTriple {
    pub lambda: FiniteMeasure,
    pub mu: Kernel,
    pub nu: Kernel,
}

impl KernelTriple {
    pub fn random(rng: &mut impl Rng) -> Self {
        let nx = rng.random_range(1..=4);
        let ny = rng.random_range(1..=4);
        let x = GroundSpace::new(nx).expect("nonempty");
        let y = GroundSpace::new(ny).expect("nonempty");
        let lambda = FiniteMeasure::new(&x, random_probability(rng, nx, true)).expect("valid weights");
        let nu_rows: Vec<Vec<f64>> = (0..nx).map(|_| random_probability(rng, ny, true)).collect();
        let mu_rows: Vec<Vec<f64>> = nu_rows
            .iter()
            .map(|nu_row| {
                let mut row: Vec<f64> = random_probability(rng, ny, true)
                    .into_iter()
                    .zip(nu_row)
                    .map(|(m, &n)| if n > 0.0 { m } else { 0.0 })
                    .collect();
                let total: f64 = row.iter().sum();
                if total == 0.0 {
                    row.clone_from(nu_row);
                } else {
                    row.iter_mut().for_each(|m| *m /= total);
                }
                row
            })
            .collect();
        KernelTriple {
            mu: Kernel::new(&x, &y, mu_rows).expect("valid rows"),
            nu: Kernel::new(&x, &y, nu_rows).expect("valid rows"),
            lambda,
        }
    }

    pub fn dump(&self) -> serde_json::Value {
        json!({ "lambda": self.lambda, "mu": self.mu, "nu": self.nu })
    }

    /// Largest cellwise gap between `d(lambda x| mu)/d(lambda x| nu)` and the
    /// rowwise ratio `mu_x(y) / nu_x(y)`, over cells where `lambda x| nu > 0`.
    pub fn density_deviation(&self) -> f64 {
        let joint_mu = kernel_product(&self.lambda, &self.mu).expect("matching spaces");
        let joint_nu = kernel_product(&self.lambda, &self.nu).expect("matching spaces");
        let density = rn_derivative(&joint_mu, &joint_nu).expect("rowwise domination");
        let ny = self.mu.target().cell_count();
        joint_nu
            .support()
            .map(|cell| {
                let (x, y) = (cell / ny, cell % ny);
                let rowwise = self.mu.row(x).weight(y) / self.nu.row(x).weight(y);
                (density.value(cell) - rowwise).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `stat_distance(lambda x| mu, lambda x| nu)` and `sum_x lambda(x) stat_distance(mu_x, nu_x)`.
    pub fn distance_sides(&self) -> (f64, f64) {
        let joint_mu = kernel_product(&self.lambda, &self.mu).expect("matching spaces");
        let joint_nu = kernel_product(&self.lambda, &self.nu).expect("matching spaces");
        let lhs = stat_distance(&joint_mu, &joint_nu).expect("matching spaces");
        let rhs = self
            .lambda
            .support()
            .map(|x| self.lambda.weight(x) * stat_distance(self.mu.row(x), self.nu.row(x)).expect("matching spaces"))
            .sum();
        (lhs, rhs)
    }
}

fn density_case(rng: &mut ChaCha8Rng) -> Option<(String, serde_json::Value)> {
    let t = KernelTriple::random(rng);
    let dev = t.density_deviation();
    (dev >= IDENTITY_TOL).then(|| (format!("density deviates from the rowwise ratio by {dev}"), t.dump()))
}

fn distance_case(rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Option<(String, serde_json::Value)> {
    let t = KernelTriple::random(rng);
    let (mut lhs, rhs) = t.distance_sides();
    if fault == Some(Fault::StatDistance) {
        lhs += 1e-6;
    }
    ((lhs - rhs).abs() >= IDENTITY_TOL).then(|| (format!("joint distance {lhs} != averaged distance {rhs}"), t.dump()))
}

fn component(rng: &mut impl Rng) -> f64 {
    if rng.random_bool(0.1) {
        0.0
    } else {
        10f64.powf(rng.random_range(-6.0..6.0))
    }
}

fn random_point(rng: &mut impl Rng) -> HplPoint {
    loop {
        let (r, s) = (component(rng), component(rng));
        if let Ok(p) = HplPoint::new(r, s) {
            return p;
        }
    }
}

/// Violations of the metric, order, scale and logarithm laws on one random
/// triple of points.
pub fn hpl_violations(rng: &mut impl Rng) -> Vec<&'static str> {
    let (p, q, w) = (random_point(rng), random_point(rng), random_point(rng));
    let mut bad = Vec::new();
    if p.dist(q) < 0.0 || p.dist(q) != q.dist(p) || p.dist(p) != 0.0 {
        bad.push("metric symmetry/identity");
    }
    if p.dist(w) > p.dist(q) + q.dist(w) + KAPPA_TOL {
        bad.push("triangle inequality");
    }
    if p.dist(q) == 0.0 && p != q {
        bad.push("separation");
    }
    if !(p.leq(q) || q.leq(p)) {
        bad.push("totality");
    }
    if p.leq(q) != (p.kappa() <= q.kappa()) {
        bad.push("kappa compatibility");
    }
    let (r, s) = p.coords();
    let t = 10f64.powf(rng.random_range(-3.0..3.0));
    if HplPoint::new(t * r, t * s).map_or(true, |scaled| scaled.dist(p) > KAPPA_TOL) {
        bad.push("scale invariance");
    }
    if p.kappa() + KAPPA_TOL < q.kappa() && p.ln() >= q.ln() {
        bad.push("log monotonicity");
    }
    bad
}

fn hpl_case(rng: &mut ChaCha8Rng) -> Option<(String, serde_json::Value)> {
    let mut replay = rng.clone();
    let bad = hpl_violations(rng);
    (!bad.is_empty()).then(|| {
        let points: Vec<f64> = (0..3).map(|_| random_point(&mut replay).kappa()).collect();
        (format!("violated: {}", bad.join(", ")), json!({ "kappa": points }))
    })
}

fn random_partition(rng: &mut impl Rng, space: &GroundSpace) -> Partition {
    let k = rng.random_range(1..=space.cell_count());
    let labels: Vec<usize> = (0..space.cell_count()).map(|_| rng.random_range(0..k)).collect();
    Partition::from_labels(space, &labels).expect("labels cover the space")
}

fn cond_expect_case(rng: &mut ChaCha8Rng) -> Option<(String, serde_json::Value)> {
    let n = rng.random_range(1..=16);
    let space = GroundSpace::new(n).expect("nonempty");
    let mu = FiniteMeasure::new(&space, random_probability(rng, n, true)).expect("valid weights");
    let f = MeasurableFunction::new(&space, (0..n).map(|_| rng.random_range(-5.0..5.0)).collect()).expect("finite");
    let coarse = random_partition(rng, &space);
    let fine = join_partitions(&coarse, &random_partition(rng, &space)).expect("same space");
    let dump = || {
        json!({
            "mu": mu,
            "f": f.values(),
            "coarse": coarse.labels(),
            "fine": fine.labels(),
        })
    };
    let e_coarse = cond_expect(&f, &mu, &coarse).expect("same space");
    let e_fine = cond_expect(&f, &mu, &fine).expect("same space");
    let tower = cond_expect(&e_fine, &mu, &coarse).expect("same space");
    let integral = |g: &MeasurableFunction| -> f64 { mu.support().map(|c| mu.weight(c) * g.value(c)).sum() };
    let abs_integral = |g: &MeasurableFunction| -> f64 { mu.support().map(|c| mu.weight(c) * g.value(c).abs()).sum() };
    let scale = 1.0 + integral(&f).abs().max(abs_integral(&f));
    if mu
        .support()
        .any(|c| (tower.value(c) - e_coarse.value(c)).abs() > IDENTITY_TOL * scale)
    {
        return Some(("tower law fails".into(), dump()));
    }
    if (integral(&e_coarse) - integral(&f)).abs() > IDENTITY_TOL * scale {
        return Some(("averaging law fails".into(), dump()));
    }
    if abs_integral(&e_fine) > abs_integral(&f) + IDENTITY_TOL * scale {
        return Some(("L1 contraction fails".into(), dump()));
    }
    None
}

/// A joint law on `X0 x X1 x X2` with `|X0| <= 2` and `|X1|, |X2| <= 4`.
pub fn random_triple(rng: &mut impl Rng) -> FiniteMeasure {
    let shape = [
        rng.random_range(1..=2),
        rng.random_range(1..=4),
        rng.random_range(1..=4),
    ];
    let space = GroundSpace::product(&shape).expect("nonempty");
    FiniteMeasure::new(&space, random_probability(rng, space.cell_count(), true)).expect("valid weights")
}

pub const SANDWICH_DIRECT_R: [f64; 3] = [1.5, 2.0, 4.0];
pub const SANDWICH_CONVERSE_R: [f64; 3] = [0.05, 0.1, 0.3];

/// Smallest slack of the two-sided bound on one instance with binary outputs.
pub fn sandwich_slack(joint: &FiniteMeasure) -> f64 {
    let sizes = OutputSizes::new(2, 2).expect("nonzero sizes");
    let (_, best) = best_extractor(joint, sizes, DEFAULT_CAP).expect("within the cap");
    let params = |r| RegionParams::new(r, sizes).expect("valid r");
    let direct = SANDWICH_DIRECT_R
        .iter()
        .map(|&r| direct_bound(joint, &params(r)).expect("r > 1") - best);
    let converse = SANDWICH_CONVERSE_R
        .iter()
        .map(|&r| best - converse_bound(joint, &params(r)).expect("0 < r < 1"));
    direct.chain(converse).fold(f64::INFINITY, f64::min)
}

fn sandwich_case(rng: &mut ChaCha8Rng) -> Option<(String, serde_json::Value)> {
    let joint = random_triple(rng);
    let slack = sandwich_slack(&joint);
    (slack < -SANDWICH_TOL).then(|| (format!("bound violated with slack {slack}"), json!({ "joint": joint })))
}
