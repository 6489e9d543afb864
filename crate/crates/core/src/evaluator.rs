//! Evaluation protocols: pooled relative error, in-distribution tables over the
//! number of demos, key-value resolution sweeps, out-of-distribution parameter
//! grids and the new-ODE study with its two baselines.

use crate::dataset::{
    generate_family, generate_pair, realize, Dataset, FamilyData, Kind, OperatorSpec, ParamBounds, ProblemFamily,
};
use crate::error::{IconError, Result};
use crate::model::IconModel;
use crate::prompt::{pad_and_batch, KvCount, DEMO_CAPACITY};
use crate::scalar::Scalar;
use crate::stochastic::SeedTree;
use crate::trainer::{assemble_case, CountSpec};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const DEFAULT_OPERATORS: usize = 100;
pub const DEFAULT_CASES_PER_OPERATOR: usize = 5;
/// Largest key-value count seen in training.
pub const DEFAULT_KV: usize = 50;
const EVAL_BATCH: usize = 32;

/// Mean absolute error pooled over every value of every case, and that error
/// divided by the pooled mean of `|truth|`.
pub fn relative_error(cases: &[(Vec<f64>, Vec<f64>)]) -> Result<(f64, f64)> {
    if cases.is_empty() {
        return Err(IconError::InvalidInput("no cases".into()));
    }
    let (mut abs, mut mag, mut n) = (0.0, 0.0, 0usize);
    for (i, (pred, truth)) in cases.iter().enumerate() {
        if pred.len() != truth.len() {
            return Err(IconError::Dimension(format!("case {i}: {} predictions, {} truths", pred.len(), truth.len())));
        }
        for (p, t) in pred.iter().zip(truth) {
            abs += (p - t).abs();
            mag += t.abs();
        }
        n += truth.len();
    }
    if n == 0 {
        return Err(IconError::InvalidInput("cases hold no values".into()));
    }
    if mag == 0.0 {
        return Err(IconError::DivisionByZero("ground truth is identically zero".into()));
    }
    let abs = abs / n as f64;
    Ok((abs, abs / (mag / n as f64)))
}

/// One in-context case: which stored pairs become demos and question.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub family: u8,
    /// Family the demos are drawn from; differs from `family` only for the
    /// wrong-demos baseline.
    pub demo_family: u8,
    pub operator: usize,
    pub demos: Vec<usize>,
    pub question: usize,
    pub counts: CountSpec,
    pub rng_path: Vec<(String, u64)>,
}

impl EvalCase {
    pub fn validate(&self, operators: usize, pairs: usize) -> Result<()> {
        let bad = |m: String| Err(IconError::InvalidInput(m));
        if self.demos.is_empty() || self.demos.len() > DEMO_CAPACITY {
            return bad(format!("{} demos outside 1..={DEMO_CAPACITY}", self.demos.len()));
        }
        if self.operator >= operators {
            return bad(format!("operator {} out of range ({operators})", self.operator));
        }
        if self.question >= pairs || self.demos.iter().any(|&d| d >= pairs) {
            return bad(format!("pair index out of range ({pairs} pairs)"));
        }
        let distinct: BTreeSet<usize> = self.demos.iter().copied().collect();
        if distinct.len() != self.demos.len() || distinct.contains(&self.question) {
            return bad(format!("question {} repeats a demo in {:?}", self.question, self.demos));
        }
        Ok(())
    }

    fn seed_tree(&self, root: u64) -> SeedTree {
        self.rng_path.iter().fold(SeedTree::new(root), |t, (l, i)| t.derive(l, *i))
    }
}

/// Every pair of an operator is used at most once across the given cases,
/// either as a demo or as a question.
pub fn check_disjoint(cases: &[EvalCase]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for c in cases {
        for &p in c.demos.iter().chain(std::iter::once(&c.question)) {
            let demo_side = c.demos.contains(&p);
            let fam = if demo_side { c.demo_family } else { c.family };
            if !seen.insert((fam, c.operator, p)) {
                return Err(IconError::InvalidInput(format!(
                    "pair {p} of family {fam} operator {} is used twice",
                    c.operator
                )));
            }
        }
    }
    Ok(())
}

/// Partition shuffled pairs of one operator into disjoint cases of `j` demos
/// plus a question. Returns fewer cases when pairs run short.
#[allow(clippy::too_many_arguments)]
fn plan_operator(
    family: u8,
    demo_family: u8,
    operator: usize,
    pairs: usize,
    j: usize,
    cases: usize,
    counts: CountSpec,
    node: &SeedTree,
) -> Vec<EvalCase> {
    let k = cases.min(pairs / (j + 1));
    if k == 0 {
        return Vec::new();
    }
    let picks = sample(&mut node.rng(), pairs, k * (j + 1)).into_vec();
    picks
        .chunks_exact(j + 1)
        .enumerate()
        .map(|(i, c)| EvalCase {
            family,
            demo_family,
            operator,
            demos: c[..j].to_vec(),
            question: c[j],
            counts,
            rng_path: node.derive("case", i as u64).path().to_vec(),
        })
        .collect()
}

/// Aggregate statistics of one report row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub abs_err: f64,
    pub rel_err: f64,
    /// Mean and standard error of the per-case relative errors.
    pub case_rel_mean: f64,
    pub case_rel_sem: f64,
    pub cases: usize,
}

pub fn error_stats(outcomes: &[(Vec<f64>, Vec<f64>)]) -> Result<ErrorStats> {
    let (abs_err, rel_err) = relative_error(outcomes)?;
    let per_case: Vec<f64> =
        outcomes.iter().filter_map(|c| relative_error(std::slice::from_ref(c)).ok().map(|r| r.1)).collect();
    let n = per_case.len() as f64;
    let (mean, sem) = if per_case.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let mean = per_case.iter().sum::<f64>() / n;
        let var =
            if per_case.len() > 1 { per_case.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        (mean, (var / n).sqrt())
    };
    Ok(ErrorStats { abs_err, rel_err, case_rel_mean: mean, case_rel_sem: sem, cases: outcomes.len() })
}

/// Model predictions and ground truth (valid queries only) for each case.
/// `root` is the seed the cases' rng paths hang from.
pub fn predict_cases<'a, T: Scalar>(
    model: &IconModel<T>,
    cases: &[EvalCase],
    root: u64,
    data_for: impl Fn(u8) -> Result<&'a FamilyData> + Sync,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let mut out = Vec::with_capacity(cases.len());
    for chunk in cases.chunks(EVAL_BATCH) {
        let parts: Vec<_> = chunk
            .par_iter()
            .map(|c| {
                let q = data_for(c.family)?;
                let d = data_for(c.demo_family)?;
                c.validate(q.num_operators().min(d.num_operators()), q.pairs_per_operator.min(d.pairs_per_operator))?;
                let mut rng = c.seed_tree(root).rng();
                assemble_case::<T, _>(d, c.operator, &c.demos, q, c.operator, c.question, c.counts, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let (ps, (qs, ls)): (Vec<_>, (Vec<_>, Vec<_>)) = parts.into_iter().map(|(p, q, l)| (p, (q, l))).unzip();
        let batch = pad_and_batch(&ps, &qs, &ls)?;
        let pred = model.forward(&batch)?;
        for b in 0..batch.size {
            let w = batch.query_cols;
            let mask = &batch.query_mask[b * w..(b + 1) * w];
            let labels = batch.labels_of(b);
            let (mut p, mut t) = (Vec::new(), Vec::new());
            for i in (0..w).filter(|&i| mask[i]) {
                p.push(pred[b * w + i].f64());
                t.push(labels[i].f64());
            }
            out.push((p, t));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Ind,
    Demos,
    Resolution,
    Ood,
    NewOde,
}

impl Protocol {
    pub fn tag(self) -> &'static str {
        match self {
            Protocol::Ind => "ind",
            Protocol::Demos => "demos",
            Protocol::Resolution => "resolution",
            Protocol::Ood => "ood",
            Protocol::NewOde => "newode",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NewOdeMode {
    CorrectDemos,
    WrongOperator,
    WrongDemos,
}

impl std::str::FromStr for NewOdeMode {
    type Err = IconError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "correct_demos" => Ok(Self::CorrectDemos),
            "wrong_operator" => Ok(Self::WrongOperator),
            "wrong_demos" => Ok(Self::WrongDemos),
            _ => Err(IconError::InvalidInput(format!("unknown mode '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub family: u8,
    pub demos: usize,
    pub cell: Option<[usize; 2]>,
    /// `[lo0, hi0, lo1, hi1]` of an OOD cell.
    pub cell_bounds: Option<[f64; 4]>,
    pub resolution: Option<usize>,
    pub b: Option<f64>,
    pub mode: Option<NewOdeMode>,
    #[serde(flatten)]
    pub stats: ErrorStats,
    /// Fewer cases than requested because pairs or operators ran short.
    pub reduced: bool,
}

impl EvalRow {
    fn new(family: u8, demos: usize, stats: ErrorStats, reduced: bool) -> Self {
        Self { family, demos, cell: None, cell_bounds: None, resolution: None, b: None, mode: None, stats, reduced }
    }
}

/// Per-family trend of error against the number of demos.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoTrend {
    pub family: u8,
    /// Pooled relative error strictly follows a non-increasing sequence.
    pub non_increasing: bool,
    /// Every increase of the mean per-case error between consecutive demo
    /// counts is below the standard error of the difference.
    pub within_one_se: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub rows: Vec<EvalRow>,
    pub trends: Vec<DemoTrend>,
    /// Wall-clock seconds; kept out of the written files so they stay reproducible.
    #[serde(skip)]
    pub runtime_s: f64,
}

fn demo_trends(rows: &[EvalRow]) -> Vec<DemoTrend> {
    let fams: BTreeSet<u8> = rows.iter().map(|r| r.family).collect();
    fams.into_iter()
        .map(|f| {
            let mut rs: Vec<&EvalRow> = rows.iter().filter(|r| r.family == f).collect();
            rs.sort_by_key(|r| r.demos);
            let mut non_increasing = true;
            let mut within_one_se = true;
            for w in rs.windows(2) {
                let (a, b) = (&w[0].stats, &w[1].stats);
                non_increasing &= b.rel_err <= a.rel_err;
                let se = (a.case_rel_sem.powi(2) + b.case_rel_sem.powi(2)).sqrt();
                within_one_se &= b.case_rel_mean - a.case_rel_mean <= se;
            }
            DemoTrend { family: f, non_increasing, within_one_se }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndConfig {
    pub families: Vec<u8>,
    pub demos: Vec<usize>,
    pub operators: usize,
    pub cases_per_operator: usize,
    pub kv: usize,
    pub seed: u64,
}

impl Default for IndConfig {
    fn default() -> Self {
        Self {
            families: (1..=19).collect(),
            demos: (1..=5).collect(),
            operators: DEFAULT_OPERATORS,
            cases_per_operator: DEFAULT_CASES_PER_OPERATOR,
            kv: DEFAULT_KV,
            seed: 0,
        }
    }
}

fn fixed_counts(kv: usize) -> CountSpec {
    CountSpec { demo: KvCount::Fixed(kv), question: KvCount::Fixed(kv), query: None }
}

fn check_demos(demos: &[usize]) -> Result<()> {
    if demos.is_empty() || demos.iter().any(|&j| j == 0 || j > DEMO_CAPACITY) {
        return Err(IconError::InvalidInput(format!("demo counts {demos:?} must lie in 1..={DEMO_CAPACITY}")));
    }
    Ok(())
}

/// Cases of the in-distribution protocol for one family and demo count.
/// The bool reports whether fewer than requested could be formed.
pub fn plan_in_distribution(data: &FamilyData, j: usize, cfg: &IndConfig) -> (Vec<EvalCase>, bool) {
    let id = data.family.id();
    let ops = cfg.operators.min(data.num_operators());
    let root = SeedTree::new(cfg.seed).derive("ind", id as u64).derive("demos", j as u64);
    let cases: Vec<EvalCase> = (0..ops)
        .flat_map(|op| {
            let node = root.derive("operator", op as u64);
            plan_operator(id, id, op, data.pairs_per_operator, j, cfg.cases_per_operator, fixed_counts(cfg.kv), &node)
        })
        .collect();
    let reduced = cases.len() < cfg.operators * cfg.cases_per_operator;
    (cases, reduced)
}

/// Relative error per (family, number of demos) on a held-out dataset.
pub fn eval_in_distribution<T: Scalar>(model: &IconModel<T>, dataset: &Dataset, cfg: &IndConfig) -> Result<EvalReport> {
    check_demos(&cfg.demos)?;
    if cfg.operators == 0 || cfg.cases_per_operator == 0 || cfg.kv == 0 {
        return Err(IconError::InvalidInput("operators, cases per operator and kv must be positive".into()));
    }
    let clock = Instant::now();
    let mut rows = Vec::new();
    for &f in &cfg.families {
        let data = dataset.family(ProblemFamily::new(f)?)?;
        for &j in &cfg.demos {
            let (cases, reduced) = plan_in_distribution(data, j, cfg);
            check_disjoint(&cases)?;
            if cases.is_empty() {
                return Err(IconError::InvalidInput(format!("family {f} has too few pairs for {j} demos")));
            }
            let outcomes = predict_cases(model, &cases, cfg.seed, |_| Ok(data))?;
            rows.push(EvalRow::new(f, j, error_stats(&outcomes)?, reduced));
        }
    }
    let trends = demo_trends(&rows);
    Ok(EvalReport { protocol: Protocol::Ind, rows, trends, runtime_s: clock.elapsed().as_secs_f64() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolutionConfig {
    pub family: u8,
    pub counts: Vec<usize>,
    pub demos: Vec<usize>,
    pub operators: usize,
    pub cases_per_operator: usize,
    pub seed: u64,
}

impl Default for ResolutionConfig {
    fn default() -> Self {
        Self {
            family: 17,
            counts: vec![10, 20, 50, 100, 200, 500],
            demos: (1..=5).collect(),
            operators: DEFAULT_OPERATORS,
            cases_per_operator: DEFAULT_CASES_PER_OPERATOR,
            seed: 0,
        }
    }
}

/// Error as demo and question functions are resampled to each key-value
/// count; the question is queried on its full stored grid.
pub fn eval_resolution<T: Scalar>(
    model: &IconModel<T>,
    dataset: &Dataset,
    cfg: &ResolutionConfig,
) -> Result<EvalReport> {
    let family = ProblemFamily::new(cfg.family)?;
    if !matches!(family.kind(), Kind::MfcG | Kind::MfcRho0) {
        return Err(IconError::InvalidInput(format!(
            "resolution sweep needs a mean-field control family, got {family}"
        )));
    }
    check_demos(&cfg.demos)?;
    let schema = family.schema();
    let cap = schema.condition.iter().chain(std::iter::once(&schema.qoi)).map(|t| t.len).min().unwrap_or(0);
    if let Some(&bad) = cfg.counts.iter().find(|&&n| n == 0 || n > cap) {
        return Err(IconError::InvalidInput(format!("count {bad} outside 1..={cap} for {family}")));
    }
    let data = dataset.family(family)?;
    let clock = Instant::now();
    let mut rows = Vec::new();
    for &n in &cfg.counts {
        for &j in &cfg.demos {
            let ind = IndConfig {
                families: vec![cfg.family],
                demos: vec![j],
                operators: cfg.operators,
                cases_per_operator: cfg.cases_per_operator,
                kv: n,
                seed: cfg.seed,
            };
            let (cases, reduced) = plan_in_distribution(data, j, &ind);
            check_disjoint(&cases)?;
            if cases.is_empty() {
                return Err(IconError::InvalidInput(format!("{family} has too few pairs for {j} demos")));
            }
            let outcomes = predict_cases(model, &cases, cfg.seed, |_| Ok(data))?;
            let mut row = EvalRow::new(cfg.family, j, error_stats(&outcomes)?, reduced);
            row.resolution = Some(n);
            rows.push(row);
        }
    }
    Ok(EvalReport {
        protocol: Protocol::Resolution,
        rows,
        trends: Vec::new(),
        runtime_s: clock.elapsed().as_secs_f64(),
    })
}

/// Parameters spanned by the OOD grid of a family and the default region.
pub fn ood_axes(family: ProblemFamily) -> Result<([&'static str; 2], [f64; 4])> {
    match family.kind() {
        // a2 scales c (trained on [0.5, 1.5]); a1 scales u (trained on [-1, 1]).
        Kind::Ode3 => Ok((["a2", "a1"], [0.1, 3.0, -3.0, 3.0])),
        Kind::LinearRd => Ok((["a", "c"], [0.1, 3.0, -6.0, 6.0])),
        _ => Err(IconError::InvalidInput(format!("no out-of-distribution sweep for {family}"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodConfig {
    pub family: u8,
    /// `[lo0, hi0, lo1, hi1]`; `None` uses the family default.
    pub region: Option<[f64; 4]>,
    pub grid: [usize; 2],
    pub operators_per_cell: usize,
    pub cases_per_operator: usize,
    pub demos: usize,
    pub kv: usize,
    pub seed: u64,
}

impl Default for OodConfig {
    fn default() -> Self {
        Self {
            family: 5,
            region: None,
            grid: [10, 10],
            operators_per_cell: DEFAULT_OPERATORS,
            cases_per_operator: DEFAULT_CASES_PER_OPERATOR,
            demos: DEMO_CAPACITY,
            kv: DEFAULT_KV,
            seed: 0,
        }
    }
}

fn derived_seed(tree: &SeedTree) -> u64 {
    let b = tree.seed_bytes();
    u64::from_le_bytes(b[..8].try_into().expect("eight bytes"))
}

/// Fresh operators drawn uniformly in each grid cell, `demos` demos per case.
pub fn eval_ood<T: Scalar>(model: &IconModel<T>, cfg: &OodConfig) -> Result<EvalReport> {
    let family = ProblemFamily::new(cfg.family)?;
    let (axes, default_region) = ood_axes(family)?;
    let region = cfg.region.unwrap_or(default_region);
    check_demos(&[cfg.demos])?;
    if region[0] >= region[1] || region[2] >= region[3] || region.iter().any(|v| !v.is_finite()) {
        return Err(IconError::InvalidInput(format!("bad region {region:?}")));
    }
    if cfg.grid[0] == 0 || cfg.grid[1] == 0 || cfg.operators_per_cell == 0 || cfg.cases_per_operator == 0 {
        return Err(IconError::InvalidInput("grid, operators and cases must be positive".into()));
    }
    let clock = Instant::now();
    let pairs = cfg.cases_per_operator * (cfg.demos + 1);
    let mut rows = Vec::new();
    for i in 0..cfg.grid[0] {
        for k in 0..cfg.grid[1] {
            let lerp = |lo: f64, hi: f64, n: usize, s: usize| lo + (hi - lo) * s as f64 / n as f64;
            let bounds = [
                lerp(region[0], region[1], cfg.grid[0], i),
                lerp(region[0], region[1], cfg.grid[0], i + 1),
                lerp(region[2], region[3], cfg.grid[1], k),
                lerp(region[2], region[3], cfg.grid[1], k + 1),
            ];
            let mut pb = ParamBounds::new();
            pb.insert(axes[0].into(), (bounds[0], bounds[1]));
            pb.insert(axes[1].into(), (bounds[2], bounds[3]));
            let cell =
                SeedTree::new(cfg.seed).derive("ood", cfg.family as u64).derive("cell", (i * cfg.grid[1] + k) as u64);
            let wrap = |e: IconError| IconError::InvalidInput(format!("cell ({i}, {k}): {e}"));
            let data =
                generate_family(family, cfg.operators_per_cell, pairs, derived_seed(&cell), &pb).map_err(wrap)?;
            let ind = IndConfig {
                families: vec![cfg.family],
                demos: vec![cfg.demos],
                operators: cfg.operators_per_cell,
                cases_per_operator: cfg.cases_per_operator,
                kv: cfg.kv,
                seed: derived_seed(&cell.derive("cases", 0)),
            };
            let (cases, reduced) = plan_in_distribution(&data, cfg.demos, &ind);
            check_disjoint(&cases)?;
            let outcomes = predict_cases(model, &cases, ind.seed, |_| Ok(&data))?;
            let mut row = EvalRow::new(cfg.family, cfg.demos, error_stats(&outcomes)?, reduced);
            row.cell = Some([i, k]);
            row.cell_bounds = Some(bounds);
            rows.push(row);
        }
    }
    Ok(EvalReport { protocol: Protocol::Ood, rows, trends: Vec::new(), runtime_s: clock.elapsed().as_secs_f64() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewOdeConfig {
    pub b_values: Vec<f64>,
    pub mode: NewOdeMode,
    pub operators: usize,
    pub cases_per_operator: usize,
    pub demos: usize,
    pub kv: usize,
    pub seed: u64,
}

impl Default for NewOdeConfig {
    fn default() -> Self {
        Self {
            b_values: (-3..=3).map(|i| i as f64 / 10.0).collect(),
            mode: NewOdeMode::CorrectDemos,
            operators: DEFAULT_OPERATORS,
            cases_per_operator: DEFAULT_CASES_PER_OPERATOR,
            demos: DEMO_CAPACITY,
            kv: DEFAULT_KV,
            seed: 0,
        }
    }
}

const NEW_ODE: u8 = 20;
const ODE2_FORWARD: u8 = 3;

/// ODE 2 operators sharing `(a1, a2)` with each new-ODE operator, with their own pairs.
fn ode2_twins(new_ode: &FamilyData, tree: &SeedTree) -> Result<FamilyData> {
    let family = ProblemFamily::new(ODE2_FORWARD)?;
    let n = new_ode.pairs_per_operator;
    let per_op: Vec<Result<(OperatorSpec, Vec<_>)>> = new_ode
        .operators
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut spec = s.clone();
            spec.family = family;
            spec.scalars.remove("b");
            let node = tree.derive("operator", i as u64);
            let recs = (0..n)
                .map(|j| generate_pair(&spec, i, j, &mut node.derive("pair", j as u64).rng()))
                .collect::<Result<_>>()?;
            Ok((spec, recs))
        })
        .collect();
    let mut operators = Vec::new();
    let mut records = Vec::new();
    for r in per_op {
        let (s, recs) = r?;
        operators.push(s);
        records.extend(recs);
    }
    Ok(FamilyData { family, seed: new_ode.seed, pairs_per_operator: n, operators, records })
}

/// The new ODE `u' = a1 u c + b u + a2` at fixed values of `b`.
pub fn eval_new_equation<T: Scalar>(model: &IconModel<T>, cfg: &NewOdeConfig) -> Result<EvalReport> {
    check_demos(&[cfg.demos])?;
    if cfg.b_values.is_empty() || cfg.operators == 0 || cfg.cases_per_operator == 0 {
        return Err(IconError::InvalidInput("need b values, operators and cases".into()));
    }
    let family = ProblemFamily::new(NEW_ODE)?;
    let clock = Instant::now();
    let pairs = cfg.cases_per_operator * (cfg.demos + 1);
    let mut rows = Vec::new();
    for (bi, &b) in cfg.b_values.iter().enumerate() {
        if !b.is_finite() {
            return Err(IconError::InvalidInput(format!("b = {b}")));
        }
        let node = SeedTree::new(cfg.seed).derive("newode", bi as u64);
        let mut pb = ParamBounds::new();
        pb.insert("b".into(), (b, b));
        let data = generate_family(family, cfg.operators, pairs, derived_seed(&node), &pb)?;
        let ind = IndConfig {
            families: vec![NEW_ODE],
            demos: vec![cfg.demos],
            operators: cfg.operators,
            cases_per_operator: cfg.cases_per_operator,
            kv: cfg.kv,
            seed: derived_seed(&node.derive("cases", 0)),
        };
        let (mut cases, reduced) = plan_in_distribution(&data, cfg.demos, &ind);
        check_disjoint(&cases)?;
        let outcomes = match cfg.mode {
            NewOdeMode::CorrectDemos => predict_cases(model, &cases, ind.seed, |_| Ok(&data))?,
            NewOdeMode::WrongDemos => {
                let twins = ode2_twins(&data, &node.derive("ode2", 0))?;
                for c in &mut cases {
                    c.demo_family = ODE2_FORWARD;
                }
                predict_cases(model, &cases, ind.seed, |f| Ok(if f == NEW_ODE { &data } else { &twins }))?
            }
            NewOdeMode::WrongOperator => cases
                .par_iter()
                .map(|c| {
                    let spec = &data.operators[c.operator];
                    let mut ode2 = spec.clone();
                    ode2.family = ProblemFamily::new(ODE2_FORWARD)?;
                    ode2.scalars.remove("b");
                    let source = &data.record(c.operator, c.question)?.source;
                    let pred = realize(&ode2, source)?.qoi.values;
                    let truth = realize(spec, source)?.qoi.values;
                    Ok((pred, truth))
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let mut row = EvalRow::new(NEW_ODE, cfg.demos, error_stats(&outcomes)?, reduced);
        row.b = Some(b);
        row.mode = Some(cfg.mode);
        rows.push(row);
    }
    Ok(EvalReport { protocol: Protocol::NewOde, rows, trends: Vec::new(), runtime_s: clock.elapsed().as_secs_f64() })
}

fn opt<V: std::fmt::Display>(v: Option<V>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "protocol,family,demos,cell_i,cell_k,lo0,hi0,lo1,hi1,resolution,b,mode,abs_err,rel_err,case_rel_mean,case_rel_sem,cases,reduced\n",
        );
        for r in &self.rows {
            let cell = r.cell.map(|c| (c[0].to_string(), c[1].to_string())).unwrap_or_default();
            let bounds: Vec<String> = match r.cell_bounds {
                Some(b) => b.iter().map(|v| format!("{v:e}")).collect(),
                None => vec![String::new(); 4],
            };
            let mode = r
                .mode
                .map(|m| serde_json::to_value(m).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default());
            let st = &r.stats;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{:e},{:e},{:e},{:e},{},{}",
                self.protocol.tag(),
                r.family,
                r.demos,
                cell.0,
                cell.1,
                bounds.join(","),
                opt(r.resolution),
                opt(r.b.map(|b| format!("{b:e}"))),
                opt(mode),
                st.abs_err,
                st.rel_err,
                st.case_rel_mean,
                st.case_rel_sem,
                st.cases,
                r.reduced
            );
        }
        s
    }

    /// The series behind each figure: error against demos per family, against
    /// count per demo number, per cell, or against `b`.
    pub fn plot_data(&self) -> serde_json::Value {
        use serde_json::json;
        let rel = |r: &EvalRow| r.stats.rel_err;
        match self.protocol {
            Protocol::Ind | Protocol::Demos => {
                let fams: BTreeSet<u8> = self.rows.iter().map(|r| r.family).collect();
                let series: Vec<_> = fams
                    .iter()
                    .map(|&f| {
                        let pts: Vec<_> =
                            self.rows.iter().filter(|r| r.family == f).map(|r| json!([r.demos, rel(r)])).collect();
                        json!({"family": f, "x": "demos", "y": "rel_err", "points": pts})
                    })
                    .collect();
                json!({"protocol": self.protocol, "series": series})
            }
            Protocol::Resolution => {
                let js: BTreeSet<usize> = self.rows.iter().map(|r| r.demos).collect();
                let series: Vec<_> = js
                    .iter()
                    .map(|&j| {
                        let pts: Vec<_> =
                            self.rows.iter().filter(|r| r.demos == j).map(|r| json!([r.resolution, rel(r)])).collect();
                        json!({"demos": j, "x": "count", "y": "rel_err", "points": pts})
                    })
                    .collect();
                json!({"protocol": self.protocol, "series": series})
            }
            Protocol::Ood => {
                let cells: Vec<_> = self
                    .rows
                    .iter()
                    .map(|r| json!({"cell": r.cell, "bounds": r.cell_bounds, "rel_err": rel(r)}))
                    .collect();
                json!({"protocol": self.protocol, "cells": cells})
            }
            Protocol::NewOde => {
                let pts: Vec<_> = self.rows.iter().map(|r| json!([r.b, rel(r)])).collect();
                json!({"protocol": self.protocol, "mode": self.rows.first().and_then(|r| r.mode), "x": "b", "y": "rel_err", "points": pts})
            }
        }
    }
}

/// First 12 hex digits of the SHA-256 of the config's JSON form.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&bytes))[..12].to_string())
}

/// Write `<protocol>_<hash>.csv` and `.json` (and `_plot.json` on request).
pub fn write_report<C: Serialize>(
    report: &EvalReport,
    config: &C,
    dir: &Path,
    plot_data: bool,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let stem = format!("{}_{}", report.protocol.tag(), config_hash(config)?);
    let csv = dir.join(format!("{stem}.csv"));
    std::fs::write(&csv, report.to_csv())?;
    let json = dir.join(format!("{stem}.json"));
    let body = serde_json::json!({"config": config, "report": report});
    std::fs::write(&json, serde_json::to_string_pretty(&body)? + "\n")?;
    let mut out = vec![csv, json];
    if plot_data {
        let p = dir.join(format!("{stem}_plot.json"));
        std::fs::write(&p, serde_json::to_string_pretty(&report.plot_data())? + "\n")?;
        out.push(p);
    }
    Ok(out)
}
