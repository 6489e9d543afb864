use super::family::{Kind, ProblemFamily, MFC_EARLY_ROWS, OSC_SPLIT};
use super::{CondQoIRecord, KeyValueFunction, OperatorSpec};
use crate::error::{IconError, Result};
use crate::mfc::{solve_mfc, MfcProblem, MFC_NT, MFC_NX};
use crate::solvers::{
    nonlinear_rd_construct, oscillator, solve_linear_rd, solve_ode_forward, solve_poisson, BvpParams, Grid1D,
    OdeParams, OscParams,
};
use crate::stochastic::{
    draw_with_factor, gp_factor, normalize_density, sample_uniform, softplus, zero_mean, GpSpec, Quadrature, SeedTree,
};
use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::sync::OnceLock;

/// Explicit sampling intervals overriding the default parameter ranges.
/// A degenerate interval `(v, v)` pins the parameter.
pub type ParamBounds = BTreeMap<String, (f64, f64)>;

/// Condition and QoI of one pair at full 64-bit precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Realized {
    pub condition: Vec<KeyValueFunction<f64>>,
    pub qoi: KeyValueFunction<f64>,
}

impl Realized {
    fn into_f32(self) -> (Vec<KeyValueFunction<f32>>, KeyValueFunction<f32>) {
        (self.condition.iter().map(|f| f.cast()).collect(), self.qoi.cast())
    }
}

/// Operators and their pairs for one family, held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilyData {
    pub family: ProblemFamily,
    pub seed: u64,
    pub pairs_per_operator: usize,
    pub operators: Vec<OperatorSpec>,
    /// Row-major by operator then pair.
    pub records: Vec<CondQoIRecord>,
}

impl FamilyData {
    pub fn num_operators(&self) -> usize {
        self.operators.len()
    }

    pub fn record(&self, operator: usize, pair: usize) -> Result<&CondQoIRecord> {
        if operator >= self.operators.len() || pair >= self.pairs_per_operator {
            return Err(IconError::InvalidInput(format!(
                "record ({operator}, {pair}) out of range for {} operators x {} pairs",
                self.operators.len(),
                self.pairs_per_operator
            )));
        }
        Ok(&self.records[operator * self.pairs_per_operator + pair])
    }

    pub fn operator_records(&self, operator: usize) -> &[CondQoIRecord] {
        let n = self.pairs_per_operator;
        &self.records[operator * n..(operator + 1) * n]
    }
}

enum GpGrid {
    Ode,
    Line,
    LineWide,
    Periodic,
}

fn factor(which: GpGrid) -> &'static DMatrix<f64> {
    static ODE: OnceLock<DMatrix<f64>> = OnceLock::new();
    static LINE: OnceLock<DMatrix<f64>> = OnceLock::new();
    static LINE_WIDE: OnceLock<DMatrix<f64>> = OnceLock::new();
    static PERIODIC: OnceLock<DMatrix<f64>> = OnceLock::new();
    let build = |n: usize, spec: GpSpec, periodic: bool| {
        let xs: Vec<f64> = if periodic {
            (0..n).map(|i| i as f64 / n as f64).collect()
        } else {
            Grid1D::unit(n).expect("static grid").points()
        };
        gp_factor(&xs, &spec).expect("static kernels factorise")
    };
    match which {
        GpGrid::Ode => ODE.get_or_init(|| build(super::ODE_POINTS, GpSpec::rbf(1.0, 0.5), false)),
        GpGrid::Line => LINE.get_or_init(|| build(super::LINE_POINTS, GpSpec::rbf(1.0, 0.5), false)),
        GpGrid::LineWide => LINE_WIDE.get_or_init(|| build(super::LINE_POINTS, GpSpec::rbf(2.0, 0.5), false)),
        GpGrid::Periodic => PERIODIC.get_or_init(|| build(MFC_NX, GpSpec::periodic(1.0, 1.0), true)),
    }
}

fn mfc_dx() -> f64 {
    1.0 / MFC_NX as f64
}

fn sample_terminal_cost<R: Rng + ?Sized>(rng: &mut R) -> Vec<f64> {
    zero_mean(&draw_with_factor(factor(GpGrid::Periodic), rng), mfc_dx(), Quadrature::Periodic)
}

fn sample_initial_density<R: Rng + ?Sized>(rng: &mut R) -> Result<Vec<f64>> {
    let raw = softplus(&draw_with_factor(factor(GpGrid::Periodic), rng));
    normalize_density(&raw, mfc_dx(), Quadrature::Periodic)
}

pub fn sample_operator<R: Rng + ?Sized>(family: ProblemFamily, rng: &mut R) -> Result<OperatorSpec> {
    sample_operator_with(family, &ParamBounds::new(), rng)
}

/// Sample an operator, drawing any parameter listed in `bounds` from the
/// given interval instead of the family default.
pub fn sample_operator_with<R: Rng + ?Sized>(
    family: ProblemFamily,
    bounds: &ParamBounds,
    rng: &mut R,
) -> Result<OperatorSpec> {
    let ranges = family.param_ranges();
    for name in bounds.keys() {
        if !ranges.iter().any(|(n, _, _)| n == name) {
            return Err(IconError::InvalidInput(format!("family {family} has no parameter '{name}'")));
        }
    }
    let mut scalars = BTreeMap::new();
    for (name, lo, hi) in ranges {
        let (lo, hi) = bounds.get(name).copied().unwrap_or((lo, hi));
        scalars.insert(name.to_owned(), sample_uniform(lo, hi, rng)?);
    }
    let mut arrays = BTreeMap::new();
    match family.kind() {
        Kind::MfcG => {
            arrays.insert("g".to_owned(), sample_terminal_cost(rng));
        }
        Kind::MfcRho0 => {
            arrays.insert("rho0".to_owned(), sample_initial_density(rng)?);
        }
        _ => {}
    }
    Ok(OperatorSpec { family, scalars, arrays })
}

/// Draw the 64-bit solver inputs of one pair under `spec`.
pub fn sample_source<R: Rng + ?Sized>(spec: &OperatorSpec, rng: &mut R) -> Result<Vec<f64>> {
    Ok(match spec.family.kind() {
        Kind::Ode1 | Kind::Ode2 | Kind::Ode3 | Kind::NewOde => {
            let u0 = sample_uniform(-1.0, 1.0, rng)?;
            let mut s = vec![u0];
            s.extend(draw_with_factor(factor(GpGrid::Ode), rng));
            s
        }
        Kind::Oscillator => vec![
            sample_uniform(0.5, 1.5, rng)?,
            sample_uniform(0.1, 0.2, rng)?,
            sample_uniform(0.0, std::f64::consts::TAU, rng)?,
        ],
        Kind::Poisson => draw_with_factor(factor(GpGrid::LineWide), rng),
        Kind::LinearRd => softplus(&draw_with_factor(factor(GpGrid::Line), rng)),
        Kind::NonlinearRd => draw_with_factor(factor(GpGrid::Line), rng),
        Kind::MfcG => sample_initial_density(rng)?,
        Kind::MfcRho0 => sample_terminal_cost(rng),
    })
}

fn ode_params(spec: &OperatorSpec) -> Result<OdeParams> {
    let a1 = spec.scalar("a1")?;
    let a2 = spec.scalar("a2")?;
    Ok(match spec.family.kind() {
        Kind::Ode1 => OdeParams::ode1(a1, a2),
        Kind::Ode2 => OdeParams::ode2(a1, a2),
        Kind::Ode3 => OdeParams::ode3(a1, a2, spec.scalar("a3")?),
        _ => OdeParams::new_ode(a1, a2, spec.scalar("b")?),
    })
}

fn check_len(source: &[f64], n: usize, family: ProblemFamily) -> Result<()> {
    if source.len() != n {
        return Err(IconError::Schema(format!("family {family} expects a source of length {n}, got {}", source.len())));
    }
    Ok(())
}

fn time_series(term: u32, ts: &[f64], v: Vec<f64>) -> KeyValueFunction<f64> {
    KeyValueFunction::new(term, ts.to_vec(), vec![0.0; ts.len()], v)
}

fn space_series(term: u32, xs: &[f64], v: Vec<f64>) -> KeyValueFunction<f64> {
    KeyValueFunction::new(term, vec![0.0; xs.len()], xs.to_vec(), v)
}

/// Density rows `from..to` of the MFC grid as one function.
fn density_rows(rho: &[f64], from: usize, to: usize) -> KeyValueFunction<f64> {
    let nt = (MFC_NT - 1) as f64;
    let mut f = KeyValueFunction::new(0, Vec::new(), Vec::new(), Vec::new());
    for j in from..to {
        for i in 0..MFC_NX {
            f.t.push(j as f64 / nt);
            f.x.push(i as f64 / MFC_NX as f64);
            f.values.push(rho[j * MFC_NX + i]);
        }
    }
    f
}

/// Deterministically rebuild the condition and QoI from the solver inputs.
pub fn realize(spec: &OperatorSpec, source: &[f64]) -> Result<Realized> {
    let family = spec.family;
    let inverse = family.is_inverse();
    let (condition, qoi) = match family.kind() {
        Kind::Ode1 | Kind::Ode2 | Kind::Ode3 | Kind::NewOde => {
            check_len(source, super::ODE_POINTS + 1, family)?;
            let grid = Grid1D::unit(super::ODE_POINTS)?;
            let ts = grid.points();
            let (u0, c) = (source[0], &source[1..]);
            let u = solve_ode_forward(&ode_params(spec)?, u0, c, &grid)?;
            if inverse {
                (vec![time_series(0, &ts, u)], time_series(0, &ts, c.to_vec()))
            } else {
                let init = KeyValueFunction::new(1, vec![0.0], vec![0.0], vec![u0]);
                (vec![time_series(0, &ts, c.to_vec()), init], time_series(0, &ts, u))
            }
        }
        Kind::Oscillator => {
            check_len(source, 3, family)?;
            let ts = Grid1D::unit(super::LINE_POINTS)?.points();
            let p = OscParams { amplitude: source[0], period: source[1], phase: source[2], damping: spec.scalar("k")? };
            let u = oscillator(&p, &ts);
            let early = time_series(0, &ts[..OSC_SPLIT], u[..OSC_SPLIT].to_vec());
            let late = time_series(0, &ts[OSC_SPLIT..], u[OSC_SPLIT..].to_vec());
            if inverse {
                (vec![late], early)
            } else {
                (vec![early], late)
            }
        }
        Kind::Poisson | Kind::LinearRd | Kind::NonlinearRd => {
            check_len(source, super::LINE_POINTS, family)?;
            let grid = Grid1D::unit(super::LINE_POINTS)?;
            let xs = grid.points();
            let (u0, u1) = (spec.scalar("u0")?, spec.scalar("u1")?);
            let (input, u) = match family.kind() {
                Kind::Poisson => (source.to_vec(), solve_poisson(source, &grid, u0, u1)?),
                Kind::LinearRd => {
                    let p = BvpParams::linear_rd(u0, u1, spec.scalar("a")?, spec.scalar("c")?);
                    (source.to_vec(), solve_linear_rd(source, &p, &grid)?)
                }
                _ => {
                    let p = BvpParams::nonlinear_rd(u0, u1, spec.scalar("a")?, spec.scalar("k")?);
                    let (u, c) = nonlinear_rd_construct(source, &p, &grid)?;
                    (c, u)
                }
            };
            let (input, u) = (space_series(0, &xs, input), space_series(0, &xs, u));
            if inverse {
                (vec![u], input)
            } else {
                (vec![input], u)
            }
        }
        Kind::MfcG | Kind::MfcRho0 => {
            check_len(source, MFC_NX, family)?;
            let (g, rho0) = if family.kind() == Kind::MfcG {
                (spec.array("g")?.to_vec(), source.to_vec())
            } else {
                (source.to_vec(), spec.array("rho0")?.to_vec())
            };
            let sol = solve_mfc(&MfcProblem::new(g.clone(), rho0.clone()))?;
            let xs: Vec<f64> = (0..MFC_NX).map(|i| i as f64 / MFC_NX as f64).collect();
            let terminal = KeyValueFunction::new(0, vec![1.0; MFC_NX], xs.clone(), sol.rho_at(MFC_NT - 1).to_vec());
            let late = density_rows(&sol.rho, MFC_EARLY_ROWS, MFC_NT);
            match family.id() {
                15 => (vec![space_series(0, &xs, rho0)], terminal),
                16 => (vec![space_series(0, &xs, rho0)], late),
                17 => (vec![density_rows(&sol.rho, 0, MFC_EARLY_ROWS)], late),
                18 => (vec![space_series(0, &xs, g)], terminal),
                _ => (vec![space_series(0, &xs, g)], late),
            }
        }
    };
    Ok(Realized { condition, qoi })
}

/// Sample and solve one pair, tagging failures with its indices.
pub fn generate_pair<R: Rng + ?Sized>(
    spec: &OperatorSpec,
    operator_index: usize,
    pair_index: usize,
    rng: &mut R,
) -> Result<CondQoIRecord> {
    let wrap = |e: IconError| IconError::Generation {
        family: spec.family.id(),
        operator: operator_index,
        pair: pair_index,
        source: Box::new(e),
    };
    let source = sample_source(spec, rng).map_err(wrap)?;
    let (condition, qoi) = realize(spec, &source).map_err(wrap)?.into_f32();
    Ok(CondQoIRecord { operator_index: operator_index as u32, pair_index: pair_index as u32, condition, qoi, source })
}

/// True when re-running the solver on the stored inputs reproduces the
/// stored arrays bit for bit.
pub fn verify_record(spec: &OperatorSpec, record: &CondQoIRecord) -> Result<bool> {
    let (condition, qoi) = realize(spec, &record.source)?.into_f32();
    let same = |a: &KeyValueFunction<f32>, b: &KeyValueFunction<f32>| {
        a.term == b.term
            && a.len() == b.len()
            && a.t.iter().zip(&b.t).all(|(x, y)| x.to_bits() == y.to_bits())
            && a.x.iter().zip(&b.x).all(|(x, y)| x.to_bits() == y.to_bits())
            && a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits())
    };
    Ok(condition.len() == record.condition.len()
        && condition.iter().zip(&record.condition).all(|(a, b)| same(a, b))
        && same(&qoi, &record.qoi))
}

/// Generate `m` operators with `n` pairs each. Every operator and pair draws
/// from its own seed path, so the result does not depend on thread count.
pub fn generate_family(
    family: ProblemFamily,
    m: usize,
    n: usize,
    seed: u64,
    bounds: &ParamBounds,
) -> Result<FamilyData> {
    if m == 0 || n == 0 {
        return Err(IconError::InvalidInput(format!("need M, N >= 1, got M = {m}, N = {n}")));
    }
    let root = SeedTree::new(seed).derive("family", family.id() as u64);
    let per_op: Vec<Result<(OperatorSpec, Vec<CondQoIRecord>)>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let node = root.derive("operator", i as u64);
            let spec = sample_operator_with(family, bounds, &mut node.rng())?;
            let records = (0..n)
                .map(|j| generate_pair(&spec, i, j, &mut node.derive("pair", j as u64).rng()))
                .collect::<Result<Vec<_>>>()?;
            Ok((spec, records))
        })
        .collect();
    let mut operators = Vec::with_capacity(m);
    let mut records = Vec::with_capacity(m * n);
    for r in per_op {
        let (spec, recs) = r?;
        operators.push(spec);
        records.extend(recs);
    }
    Ok(FamilyData { family, seed, pairs_per_operator: n, operators, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic::IconRng;
    use rand::SeedableRng;

    #[test]
    fn operator_ranges() {
        let mut rng = IconRng::seed_from_u64(3);
        for _ in 0..200 {
            let s = sample_operator(ProblemFamily::new(7).unwrap(), &mut rng).unwrap();
            let k = s.scalar("k").unwrap();
            assert!((0.0..=2.0).contains(&k));
            let s = sample_operator(ProblemFamily::new(11).unwrap(), &mut rng).unwrap();
            assert!((0.5..=1.5).contains(&s.scalar("a").unwrap()));
            assert!((-2.0..=2.0).contains(&s.scalar("c").unwrap()));
            for b in ["u0", "u1"] {
                assert!((-1.0..=1.0).contains(&s.scalar(b).unwrap()));
            }
        }
    }

    #[test]
    fn terminal_cost_has_zero_mean() {
        let mut rng = IconRng::seed_from_u64(4);
        for _ in 0..20 {
            let s = sample_operator(ProblemFamily::new(15).unwrap(), &mut rng).unwrap();
            let g = s.array("g").unwrap();
            let mean = Quadrature::Periodic.integrate(g, mfc_dx());
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn bounds_override_and_reject_unknown() {
        let mut rng = IconRng::seed_from_u64(5);
        let fam = ProblemFamily::new(20).unwrap();
        let bounds = ParamBounds::from([("b".to_owned(), (0.2, 0.2))]);
        assert_eq!(sample_operator_with(fam, &bounds, &mut rng).unwrap().scalar("b").unwrap(), 0.2);
        let bad = ParamBounds::from([("zz".to_owned(), (0.0, 1.0))]);
        assert!(sample_operator_with(fam, &bad, &mut rng).is_err());
    }

    #[test]
    fn pair_shapes_follow_schema() {
        let mut rng = IconRng::seed_from_u64(6);
        for fam in ProblemFamily::all() {
            let spec = sample_operator(fam, &mut rng).unwrap();
            let rec = generate_pair(&spec, 0, 0, &mut rng).unwrap();
            let schema = fam.schema();
            assert_eq!(rec.condition.len(), schema.condition.len(), "{fam}");
            for (i, (f, s)) in rec.condition.iter().zip(&schema.condition).enumerate() {
                assert_eq!(f.term as usize, i);
                assert_eq!(f.len(), s.len, "{fam} {}", s.name);
            }
            assert_eq!(rec.qoi.len(), schema.qoi.len, "{fam}");
            assert!(verify_record(&spec, &rec).unwrap(), "{fam}");
        }
    }

    #[test]
    fn oscillator_split_is_at_half() {
        let mut rng = IconRng::seed_from_u64(8);
        let spec = sample_operator(ProblemFamily::new(7).unwrap(), &mut rng).unwrap();
        let rec = generate_pair(&spec, 0, 0, &mut rng).unwrap();
        assert!(rec.condition[0].t.iter().all(|&t| t < 0.5));
        assert!(rec.qoi.t.iter().all(|&t| t >= 0.5));
    }
}
