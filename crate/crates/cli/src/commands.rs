use crate::config::{self, DatagenConfig, EvalRunConfig, Precision, TrainRunConfig};
use crate::{Common, Failure};
use anyhow::{anyhow, Context};
use icon_core::dataset::{self, parse_family_list, Kind, ProblemFamily};
use icon_core::evaluator;
use icon_core::model::{load_checkpoint, Checkpoint};
use icon_core::prompt::KvCount;
use icon_core::stochastic::SeedTree;
use icon_core::trainer::{self, TrainConfig};
use icon_core::Scalar;
use std::path::PathBuf;

type CmdResult = std::result::Result<(), Failure>;

fn cfg_err<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Config(e.into())
}

fn run_err<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

fn family_ids(list: &str) -> Result<Vec<u8>, Failure> {
    Ok(parse_family_list(list).map_err(cfg_err)?.into_iter().map(ProblemFamily::id).collect())
}

pub fn datagen(common: &Common, families: Option<&str>, operators: Option<usize>, pairs: Option<usize>) -> CmdResult {
    let mut v = config::layered(DatagenConfig::profile(common.profile), common.config.as_deref()).map_err(cfg_err)?;
    if let Some(f) = families {
        v["families"] = serde_json::to_value(family_ids(f)?).map_err(cfg_err)?;
    }
    if let Some(m) = operators {
        v["operators"] = m.into();
    }
    if let Some(n) = pairs {
        v["pairs_per_operator"] = n.into();
    }
    if let Some(s) = common.seed {
        v["seed"] = s.into();
    }
    if let Some(o) = &common.out {
        v["out"] = serde_json::to_value(o).map_err(cfg_err)?;
    }
    config::apply_overrides(&mut v, &common.overrides).map_err(cfg_err)?;
    let cfg: DatagenConfig = config::finish(v).map_err(cfg_err)?;
    let fams: Vec<ProblemFamily> =
        cfg.families.iter().map(|&f| ProblemFamily::new(f)).collect::<Result<_, _>>().map_err(cfg_err)?;
    if fams.is_empty() || cfg.operators == 0 || cfg.pairs_per_operator < 2 {
        return Err(cfg_err(anyhow!("need at least one family, one operator and two pairs per operator")));
    }
    config::echo(&cfg, &cfg.out, "datagen_config.json").map_err(run_err)?;
    let manifest =
        dataset::generate_dataset(&fams, cfg.operators, cfg.pairs_per_operator, cfg.seed, &cfg.out).map_err(run_err)?;
    for e in &manifest.files {
        println!(
            "family {:>2} {:<22} operators {:>5} records {:>7} {}",
            e.family, e.name, e.operators, e.records, e.file
        );
    }
    println!("manifest {}", cfg.out.join(dataset::MANIFEST_NAME).display());
    Ok(())
}

pub struct TrainFlags {
    pub data: Option<PathBuf>,
    pub families: Option<String>,
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub precision: Option<Precision>,
    pub resume: Option<PathBuf>,
}

pub fn train(common: &Common, flags: TrainFlags) -> CmdResult {
    let mut v = config::layered(TrainRunConfig::profile(common.profile), common.config.as_deref()).map_err(cfg_err)?;
    if let Some(d) = &flags.data {
        v["data"] = serde_json::to_value(d).map_err(cfg_err)?;
    }
    if let Some(o) = &common.out {
        v["out"] = serde_json::to_value(o).map_err(cfg_err)?;
    }
    if let Some(f) = &flags.families {
        v["train"]["families"] = serde_json::to_value(family_ids(f)?).map_err(cfg_err)?;
    }
    if let Some(s) = flags.steps {
        v["train"]["steps"] = s.into();
    }
    if let Some(b) = flags.batch_size {
        v["train"]["batch_size"] = b.into();
    }
    if let Some(s) = common.seed {
        v["train"]["seed"] = s.into();
    }
    if let Some(p) = flags.precision {
        v["precision"] = serde_json::to_value(p).map_err(cfg_err)?;
    }
    if let Some(r) = &flags.resume {
        v["resume"] = serde_json::to_value(r).map_err(cfg_err)?;
    }
    config::apply_overrides(&mut v, &common.overrides).map_err(cfg_err)?;
    let cfg: TrainRunConfig = config::finish(v).map_err(cfg_err)?;
    cfg.train.validate().map_err(cfg_err)?;
    cfg.model.validate().map_err(cfg_err)?;
    dataset::read_manifest(&cfg.data)
        .with_context(|| format!("no dataset manifest at {}", cfg.data.display()))
        .map_err(cfg_err)?;
    config::echo(&cfg, &cfg.out, "train_config.json").map_err(run_err)?;
    let data = dataset::load_dataset(&cfg.data).map_err(run_err)?;
    match cfg.precision {
        Precision::F32 => run_training::<f32>(&data, &cfg),
        Precision::F64 => run_training::<f64>(&data, &cfg),
    }
}

fn run_training<T: Scalar>(data: &dataset::Dataset, cfg: &TrainRunConfig) -> CmdResult {
    let resume = match &cfg.resume {
        Some(p) => {
            let ck: Checkpoint<T> = load_checkpoint(p).map_err(cfg_err)?;
            if *ck.model.config() != cfg.model {
                return Err(cfg_err(anyhow!("checkpoint model config differs from the run config")));
            }
            println!("resuming from {} at step {}", p.display(), ck.step);
            Some(ck)
        }
        None => None,
    };
    let train_cfg: &TrainConfig = &cfg.train;
    let (_, summary) = trainer::train::<T>(data, train_cfg, cfg.model, Some(&cfg.out), resume).map_err(run_err)?;
    if !summary.losses.is_empty() {
        let w = (summary.losses.len() / 10).max(1);
        let (first, last) = summary.smoothed_ends(w);
        println!("smoothed loss {first:.4e} -> {last:.4e} over {} steps", summary.losses.len());
    }
    match &summary.checkpoint {
        Some(p) => println!("checkpoint {}", p.display()),
        None => println!("no steps run; nothing written"),
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ProtocolArg {
    Ind,
    Demos,
    Resolution,
    Ood,
    Newode,
}

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    #[arg(value_enum)]
    protocol: ProtocolArg,
    #[command(flatten)]
    common: Common,
    /// Checkpoint to evaluate.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Held-out dataset (ind, demos, resolution).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Families for ind/demos, e.g. `1-19`.
    #[arg(long)]
    families: Option<String>,
    /// Family for resolution/ood.
    #[arg(long)]
    family: Option<u8>,
    /// Demo counts, e.g. `1-5`; a single value for ood/newode.
    #[arg(long = "J")]
    demos: Option<String>,
    /// Key-value counts for the resolution sweep, e.g. `10,20,50,500`.
    #[arg(long)]
    counts: Option<String>,
    /// OOD region `lo0:hi0,lo1:hi1`.
    #[arg(long, allow_hyphen_values = true)]
    region: Option<String>,
    /// OOD grid, e.g. `10x10`.
    #[arg(long)]
    grid: Option<String>,
    /// New-ODE b values: `lo:hi:step` or a comma list.
    #[arg(long = "b", allow_hyphen_values = true)]
    b_values: Option<String>,
    /// correct_demos, wrong_operator or wrong_demos.
    #[arg(long)]
    mode: Option<String>,
    /// Operators per family (or per OOD cell, or per b value).
    #[arg(long)]
    operators: Option<usize>,
    #[arg(long)]
    cases_per_operator: Option<usize>,
    /// Also write the per-point series behind each figure.
    #[arg(long)]
    plot_data: bool,
}

fn parse_usize_list(s: &str) -> anyhow::Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => out.extend(a.trim().parse::<usize>()?..=b.trim().parse::<usize>()?),
            None => out.push(part.parse()?),
        }
    }
    if out.is_empty() {
        anyhow::bail!("empty list '{s}'");
    }
    Ok(out)
}

fn parse_region(s: &str) -> anyhow::Result<[f64; 4]> {
    let v: Vec<f64> = s.split([',', ':']).map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| anyhow!("region must look like lo0:hi0,lo1:hi1"))
}

fn parse_grid(s: &str) -> anyhow::Result<[usize; 2]> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| anyhow!("grid must look like 10x10"))?;
    Ok([a.trim().parse()?, b.trim().parse()?])
}

/// `lo:hi:step` (inclusive, rounded to 12 decimals) or a comma list.
fn parse_b_values(s: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let (lo, hi, step): (f64, f64, f64) = (parts[0].parse()?, parts[1].parse()?, parts[2].parse()?);
        if !(step > 0.0) || hi < lo {
            anyhow::bail!("bad range '{s}'");
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        return Ok((0..n).map(|i| ((lo + i as f64 * step) * 1e12).round() / 1e12).collect());
    }
    Ok(s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>()?)
}

fn single(list: &[usize]) -> anyhow::Result<usize> {
    match list {
        [j] => Ok(*j),
        _ => anyhow::bail!("this protocol takes a single demo count"),
    }
}

fn eval_overrides(v: &mut serde_json::Value, a: &EvalArgs) -> anyhow::Result<()> {
    use serde_json::to_value;
    if let Some(c) = &a.checkpoint {
        v["checkpoint"] = to_value(c)?;
    }
    if let Some(d) = &a.data {
        v["data"] = to_value(d)?;
    }
    if let Some(o) = &a.common.out {
        v["out"] = to_value(o)?;
    }
    if a.plot_data {
        v["plot_data"] = true.into();
    }
    if let Some(f) = &a.families {
        let ids: Vec<u8> = parse_family_list(f)?.into_iter().map(ProblemFamily::id).collect();
        v["ind"]["families"] = to_value(ids)?;
    }
    if let Some(f) = a.family {
        v["resolution"]["family"] = f.into();
        v["ood"]["family"] = f.into();
    }
    if let Some(j) = &a.demos {
        let js = parse_usize_list(j)?;
        match a.protocol {
            ProtocolArg::Ind | ProtocolArg::Demos => v["ind"]["demos"] = to_value(&js)?,
            ProtocolArg::Resolution => v["resolution"]["demos"] = to_value(&js)?,
            ProtocolArg::Ood => v["ood"]["demos"] = single(&js)?.into(),
            ProtocolArg::Newode => v["newode"]["demos"] = single(&js)?.into(),
        }
    }
    if let Some(c) = &a.counts {
        v["resolution"]["counts"] = to_value(parse_usize_list(c)?)?;
    }
    if let Some(r) = &a.region {
        v["ood"]["region"] = to_value(parse_region(r)?)?;
    }
    if let Some(g) = &a.grid {
        v["ood"]["grid"] = to_value(parse_grid(g)?)?;
    }
    if let Some(b) = &a.b_values {
        v["newode"]["b_values"] = to_value(parse_b_values(b)?)?;
    }
    if let Some(m) = &a.mode {
        v["newode"]["mode"] = to_value(m.parse::<evaluator::NewOdeMode>()?)?;
    }
    if let Some(s) = a.common.seed {
        for k in ["ind", "resolution", "ood", "newode"] {
            v[k]["seed"] = s.into();
        }
    }
    if let Some(n) = a.operators {
        for k in ["ind", "resolution", "newode"] {
            v[k]["operators"] = n.into();
        }
        v["ood"]["operators_per_cell"] = n.into();
    }
    if let Some(n) = a.cases_per_operator {
        for k in ["ind", "resolution", "ood", "newode"] {
            v[k]["cases_per_operator"] = n.into();
        }
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> CmdResult {
    let mut v =
        config::layered(EvalRunConfig::profile(a.common.profile), a.common.config.as_deref()).map_err(cfg_err)?;
    eval_overrides(&mut v, a).map_err(cfg_err)?;
    config::apply_overrides(&mut v, &a.common.overrides).map_err(cfg_err)?;
    let cfg: EvalRunConfig = config::finish(v).map_err(cfg_err)?;
    // Protocol/family compatibility is a usage error, checked before any work.
    match a.protocol {
        ProtocolArg::Resolution => {
            let f = ProblemFamily::new(cfg.resolution.family).map_err(cfg_err)?;
            if !matches!(f.kind(), Kind::MfcG | Kind::MfcRho0) {
                return Err(cfg_err(anyhow!(
                    "the resolution sweep needs a mean-field control family (15-19), got {f}"
                )));
            }
        }
        ProtocolArg::Ood => {
            evaluator::ood_axes(ProblemFamily::new(cfg.ood.family).map_err(cfg_err)?).map_err(cfg_err)?;
        }
        ProtocolArg::Ind | ProtocolArg::Demos => {
            for &f in &cfg.ind.families {
                ProblemFamily::new(f).map_err(cfg_err)?;
            }
        }
        ProtocolArg::Newode => {}
    }
    let needs_data = matches!(a.protocol, ProtocolArg::Ind | ProtocolArg::Demos | ProtocolArg::Resolution);
    let data = if needs_data {
        let path = cfg.data.clone().ok_or_else(|| cfg_err(anyhow!("this protocol needs --data")))?;
        dataset::read_manifest(&path)
            .with_context(|| format!("no dataset manifest at {}", path.display()))
            .map_err(cfg_err)?;
        Some(path)
    } else {
        None
    };
    if !cfg.checkpoint.exists() {
        return Err(cfg_err(anyhow!("checkpoint {} not found", cfg.checkpoint.display())));
    }
    config::echo(&cfg, &cfg.out, &format!("eval_{}_config.json", protocol_tag(a.protocol))).map_err(run_err)?;
    let ck: Checkpoint<f32> = load_checkpoint(&cfg.checkpoint).map_err(run_err)?;
    let model = ck.model;
    let ds = match &data {
        Some(p) => Some(dataset::load_dataset(p).map_err(run_err)?),
        None => None,
    };
    let (report, paths) = match a.protocol {
        ProtocolArg::Ind | ProtocolArg::Demos => {
            let mut r = evaluator::eval_in_distribution(&model, ds.as_ref().unwrap(), &cfg.ind).map_err(run_err)?;
            if a.protocol == ProtocolArg::Demos {
                r.protocol = evaluator::Protocol::Demos;
            }
            let paths = evaluator::write_report(&r, &cfg.ind, &cfg.out, cfg.plot_data).map_err(run_err)?;
            (r, paths)
        }
        ProtocolArg::Resolution => {
            let r = evaluator::eval_resolution(&model, ds.as_ref().unwrap(), &cfg.resolution).map_err(run_err)?;
            let paths = evaluator::write_report(&r, &cfg.resolution, &cfg.out, cfg.plot_data).map_err(run_err)?;
            (r, paths)
        }
        ProtocolArg::Ood => {
            let r = evaluator::eval_ood(&model, &cfg.ood).map_err(run_err)?;
            let paths = evaluator::write_report(&r, &cfg.ood, &cfg.out, cfg.plot_data).map_err(run_err)?;
            (r, paths)
        }
        ProtocolArg::Newode => {
            let r = evaluator::eval_new_equation(&model, &cfg.newode).map_err(run_err)?;
            let paths = evaluator::write_report(&r, &cfg.newode, &cfg.out, cfg.plot_data).map_err(run_err)?;
            (r, paths)
        }
    };
    print!("{}", report.to_csv());
    for t in &report.trends {
        println!(
            "family {:>2}: non-increasing {} | within one standard error {}",
            t.family, t.non_increasing, t.within_one_se
        );
    }
    println!("{} rows in {:.1} s", report.rows.len(), report.runtime_s);
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn protocol_tag(p: ProtocolArg) -> &'static str {
    match p {
        ProtocolArg::Ind => "ind",
        ProtocolArg::Demos => "demos",
        ProtocolArg::Resolution => "resolution",
        ProtocolArg::Ood => "ood",
        ProtocolArg::Newode => "newode",
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(clap::Args, Debug)]
pub struct InspectArgs {
    /// Dataset directory or manifest.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    family: u8,
    #[arg(long, default_value_t = 0)]
    operator: usize,
    /// Demo pair indices, e.g. `0` or `0,1,2`.
    #[arg(long, default_value = "0")]
    demos: String,
    #[arg(long, default_value_t = 1)]
    question: usize,
    /// Key-value pairs kept per function.
    #[arg(long, default_value_t = 50)]
    count: usize,
    /// Seed for the random key-value selection.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

pub fn inspect(a: &InspectArgs) -> CmdResult {
    let family = ProblemFamily::new(a.family).map_err(cfg_err)?;
    let demos = parse_usize_list(&a.demos).map_err(cfg_err)?;
    dataset::read_manifest(&a.data)
        .with_context(|| format!("no dataset manifest at {}", a.data.display()))
        .map_err(cfg_err)?;
    let ds = dataset::load_dataset(&a.data).map_err(run_err)?;
    let data = ds.family(family).map_err(cfg_err)?;
    let case = evaluator::EvalCase {
        family: a.family,
        demo_family: a.family,
        operator: a.operator,
        demos: demos.clone(),
        question: a.question,
        counts: trainer::CountSpec { demo: KvCount::Fixed(a.count), question: KvCount::Fixed(a.count), query: None },
        rng_path: Vec::new(),
    };
    case.validate(data.num_operators(), data.pairs_per_operator).map_err(cfg_err)?;
    if a.count == 0 {
        return Err(cfg_err(anyhow!("count must be positive")));
    }
    let mut rng = SeedTree::new(a.seed).derive("inspect", 0).rng();
    let (prompt, query, _) =
        trainer::assemble_case::<f64, _>(data, a.operator, &demos, data, a.operator, a.question, case.counts, &mut rng)
            .map_err(run_err)?;
    match a.format {
        Format::Text => {
            println!(
                "{family}, operator {}, demos {:?}, question {}, {} columns",
                a.operator,
                demos,
                a.question,
                prompt.cols()
            );
            print!("{}", prompt.to_text());
            println!("{} queries", query.col_mask.len());
        }
        Format::Json => {
            let names = ["term", "time", "space", "value", "idx1", "idx2", "idx3", "idx4", "idx5", "idx6"];
            let mut rows = serde_json::Map::new();
            for (r, name) in names.iter().enumerate() {
                let row: Vec<f64> = (0..prompt.cols()).map(|c| prompt.column(c)[r]).collect();
                rows.insert((*name).into(), row.into());
            }
            let body = serde_json::json!({
                "family": a.family,
                "name": family.name(),
                "operator": a.operator,
                "demos": demos,
                "question": a.question,
                "columns": prompt.cols(),
                "queries": query.col_mask.len(),
                "rows": rows,
            });
            println!("{}", serde_json::to_string_pretty(&body).map_err(run_err)?);
        }
    }
    Ok(())
}
