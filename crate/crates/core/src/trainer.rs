//! Prompt assembly from stored data, the masked MSE objective, Adam with
//! warmup/cosine schedule, and the training loop.

use crate::dataset::{Dataset, FamilyData, KeyValueFunction, ProblemFamily};
use crate::error::{IconError, Result};
use crate::model::{save_checkpoint, Checkpoint, IconModel, ModelConfig};
use crate::prompt::{
    build_prompt, build_queries_and_labels, pad_and_batch, select_condition, select_qoi, Batch, Demo, KvCount,
    LabelVector, PromptMatrix, QueryMatrix, DEMO_CAPACITY, PROMPT_ROWS, QUERY_ROWS,
};
use crate::scalar::Scalar;
use crate::stochastic::{IconRng, SeedTree};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub families: Vec<u8>,
    pub batch_size: usize,
    pub steps: usize,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub clip_norm: f64,
    pub demo_range: (usize, usize),
    pub kv_range: (usize, usize),
    pub seed: u64,
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            families: (1..=19).collect(),
            batch_size: 32,
            steps: 20_000,
            peak_lr: 1e-3,
            warmup_steps: 500,
            clip_norm: 1.0,
            demo_range: (1, 5),
            kv_range: (41, 50),
            seed: 0,
            checkpoint_every: 2_000,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (jl, jh) = self.demo_range;
        let (kl, kh) = self.kv_range;
        let bad = |m: String| Err(IconError::InvalidInput(m));
        if self.families.is_empty() {
            return bad("no training families".into());
        }
        for &f in &self.families {
            ProblemFamily::new(f)?;
        }
        if jl == 0 || jl > jh || jh > DEMO_CAPACITY {
            return bad(format!("demo range {jl}..={jh} must lie in 1..={DEMO_CAPACITY}"));
        }
        if kl < 2 || kl > kh {
            return bad(format!("bad key-value range {kl}..={kh}"));
        }
        if self.batch_size == 0 || self.steps == 0 || self.log_every == 0 || self.checkpoint_every == 0 {
            return bad("batch size, steps, log and checkpoint cadence must be positive".into());
        }
        if !(self.peak_lr > 0.0 && self.clip_norm > 0.0) {
            return bad("learning rate and clip norm must be positive".into());
        }
        Ok(())
    }

    /// Linear warmup to `peak_lr`, then cosine decay to zero at `steps`.
    pub fn learning_rate(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        0.5 * self.peak_lr * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Which stored pairs form one prompt.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub family: u8,
    pub operator: usize,
    pub demos: Vec<usize>,
    pub question: usize,
}

/// Key-value counts used when turning a case into matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountSpec {
    pub demo: KvCount,
    pub question: KvCount,
    /// `None` queries every stored QoI point.
    pub query: Option<KvCount>,
}

impl CountSpec {
    pub fn training(kv: (usize, usize)) -> Self {
        let r = KvCount::Range(kv.0, kv.1);
        Self { demo: r, question: r, query: Some(r) }
    }
}

fn cast_all<T: Scalar>(fs: &[KeyValueFunction<f32>]) -> Vec<KeyValueFunction<T>> {
    fs.iter().map(|f| f.cast()).collect()
}

/// Build prompt, queries and labels for one case. Demos and the question may
/// come from different families sharing a schema.
#[allow(clippy::too_many_arguments)]
pub fn assemble_case<T: Scalar, R: Rng + ?Sized>(
    demo_data: &FamilyData,
    demo_operator: usize,
    demos: &[usize],
    question_data: &FamilyData,
    question_operator: usize,
    question: usize,
    counts: CountSpec,
    rng: &mut R,
) -> Result<(PromptMatrix<T>, QueryMatrix<T>, LabelVector<T>)> {
    let schema = demo_data.family.schema();
    let mut views = Vec::with_capacity(demos.len());
    for &j in demos {
        let rec = demo_data.record(demo_operator, j)?;
        let condition = select_condition(&schema, &cast_all::<T>(&rec.condition), counts.demo, rng)?;
        let qoi = select_qoi(&schema, &rec.qoi.cast::<T>(), counts.demo, rng)?;
        views.push(Demo { condition, qoi });
    }
    let qschema = question_data.family.schema();
    let rec = question_data.record(question_operator, question)?;
    let qcond = select_condition(&qschema, &cast_all::<T>(&rec.condition), counts.question, rng)?;
    let full = rec.qoi.cast::<T>();
    let qoi = match counts.query {
        Some(c) => select_qoi(&qschema, &full, c, rng)?,
        None => full,
    };
    let prompt = build_prompt(&views, &qcond, DEMO_CAPACITY)?;
    let (q, l) = build_queries_and_labels(&qoi)?;
    Ok((prompt, q, l))
}

const MAX_DRAW_RETRIES: usize = 16;

/// Draw one training case: family, operator, demo count and distinct pairs.
pub fn draw_case<R: Rng + ?Sized>(dataset: &Dataset, config: &TrainConfig, rng: &mut R) -> Result<CaseSpec> {
    for _ in 0..MAX_DRAW_RETRIES {
        let family = config.families[rng.random_range(0..config.families.len())];
        let data = dataset.family(ProblemFamily::new(family)?)?;
        let operator = rng.random_range(0..data.num_operators());
        let j = rng.random_range(config.demo_range.0..=config.demo_range.1);
        if data.pairs_per_operator < j + 1 {
            continue;
        }
        let picks = sample(rng, data.pairs_per_operator, j + 1).into_vec();
        return Ok(CaseSpec { family, operator, demos: picks[..j].to_vec(), question: picks[j] });
    }
    Err(IconError::InvalidInput(format!("could not draw a case with enough pairs after {MAX_DRAW_RETRIES} tries")))
}

/// Independent cases drawn in sequence from `rng`, then padded into a batch.
pub fn make_training_batch<T: Scalar, R: Rng + ?Sized>(
    dataset: &Dataset,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<(Batch<T>, Vec<CaseSpec>)> {
    let counts = CountSpec::training(config.kv_range);
    let (mut ps, mut qs, mut ls, mut cases) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..config.batch_size {
        let case = draw_case(dataset, config, rng)?;
        let data = dataset.family(ProblemFamily::new(case.family)?)?;
        let (p, q, l) =
            assemble_case(data, case.operator, &case.demos, data, case.operator, case.question, counts, rng)?;
        ps.push(p);
        qs.push(q);
        ls.push(l);
        cases.push(case);
    }
    Ok((pad_and_batch(&ps, &qs, &ls)?, cases))
}

/// Mean squared error over valid positions.
pub fn mse_loss<T: Scalar>(pred: &[T], labels: &[T], mask: &[bool]) -> Result<T> {
    if pred.len() != labels.len() || pred.len() != mask.len() {
        return Err(IconError::Dimension("prediction, label and mask lengths differ".into()));
    }
    let mut sum = T::zero();
    let mut n = 0usize;
    for ((&p, &l), &m) in pred.iter().zip(labels).zip(mask) {
        if m {
            sum += (p - l) * (p - l);
            n += 1;
        }
    }
    if n == 0 {
        return Err(IconError::InvalidInput("every position is masked".into()));
    }
    Ok(sum / T::of(n as f64))
}

/// Adam moments; `step` counts applied updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n: usize) -> Self {
        Self { m: vec![T::zero(); n], v: vec![T::zero(); n], step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn update(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        self.step += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let step_size = T::of(lr / c1);
        let inv_c2 = T::of(1.0 / c2);
        let eps = T::of(self.eps);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            params[i] -= step_size * self.m[i] / ((self.v[i] * inv_c2).sqrt() + eps);
        }
    }
}

/// Scale `grads` so its global L2 norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_global_norm<T: Scalar>(grads: &mut [T], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.f64() * g.f64()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    /// `(step, loss)` for every step run in this call.
    pub losses: Vec<(usize, f64)>,
    pub final_step: usize,
    pub checkpoint: Option<PathBuf>,
}

impl TrainSummary {
    /// Mean of the first and last `window` losses.
    pub fn smoothed_ends(&self, window: usize) -> (f64, f64) {
        let w = window.min(self.losses.len()).max(1);
        let mean = |s: &[(usize, f64)]| s.iter().map(|p| p.1).sum::<f64>() / s.len() as f64;
        (mean(&self.losses[..w]), mean(&self.losses[self.losses.len() - w..]))
    }
}

#[derive(Serialize, Deserialize)]
struct TrainState {
    train_config: TrainConfig,
}

fn batch_rng(seed: u64, step: usize) -> IconRng {
    SeedTree::new(seed).derive("batch", step as u64).rng()
}

pub fn initial_model<T: Scalar>(model_config: ModelConfig, seed: u64) -> Result<IconModel<T>> {
    IconModel::init(model_config, &mut SeedTree::new(seed).derive("init", 0).rng())
}

/// Run the loop from step 0 or from `resume`. Each step's batch is drawn from
/// its own seed path, so a resumed run repeats the uninterrupted one exactly.
///
/// With `out_dir` set, writes `metrics.csv` and checkpoints there.
pub fn train<T: Scalar>(
    dataset: &Dataset,
    config: &TrainConfig,
    model_config: ModelConfig,
    out_dir: Option<&Path>,
    resume: Option<Checkpoint<T>>,
) -> Result<(IconModel<T>, TrainSummary)> {
    config.validate()?;
    for &f in &config.families {
        dataset.family(ProblemFamily::new(f)?)?;
    }
    let (mut model, mut adam, start) = match resume {
        Some(ck) => {
            let n = ck.model.num_params();
            let mut adam = Adam::new(n);
            if let Some((m, v)) = ck.adam {
                adam.m = m;
                adam.v = v;
            }
            adam.step = ck.step;
            (ck.model, adam, ck.step as usize)
        }
        None => {
            let m = initial_model::<T>(model_config, config.seed)?;
            let n = m.num_params();
            (m, Adam::new(n), 0)
        }
    };
    let mut metrics = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join("metrics.csv");
            let fresh = start == 0 || !path.exists();
            let mut f =
                std::fs::OpenOptions::new().create(true).append(!fresh).write(true).truncate(fresh).open(&path)?;
            if fresh {
                writeln!(f, "step,loss,lr,grad_norm,wall_time_s")?;
            }
            Some(f)
        }
        None => None,
    };
    let clock = Instant::now();
    let mut summary = TrainSummary { losses: Vec::new(), final_step: start, checkpoint: None };
    let state = serde_json::to_value(TrainState { train_config: config.clone() })?;
    let save = |model: &IconModel<T>, adam: &Adam<T>, step: usize| -> Result<Option<PathBuf>> {
        let Some(dir) = out_dir else { return Ok(None) };
        let ck = Checkpoint {
            model: model.clone(),
            step: step as u64,
            adam: Some((adam.m.clone(), adam.v.clone())),
            train_state: state.clone(),
        };
        let path = dir.join(format!("checkpoint_{step:06}.ck"));
        save_checkpoint(&ck, &path)?;
        save_checkpoint(&ck, &dir.join("checkpoint.ck"))?;
        Ok(Some(path))
    };
    for step in start..config.steps {
        let (batch, _) = make_training_batch::<T, _>(dataset, config, &mut batch_rng(config.seed, step))?;
        let (loss, mut grad) = model.loss_and_grad(&batch)?;
        let loss = loss.f64();
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            let dump = match out_dir {
                Some(dir) => {
                    let p = dir.join(format!("nonfinite_batch_{step:06}.json"));
                    std::fs::write(&p, serde_json::to_vec(&batch.cast::<f64>())?)?;
                    p.display().to_string()
                }
                None => "(no output directory)".into(),
            };
            return Err(IconError::NonFiniteLoss { step, dump });
        }
        let norm = clip_global_norm(&mut grad, config.clip_norm);
        let lr = config.learning_rate(step);
        adam.update(&mut model.params, &grad, lr);
        summary.losses.push((step, loss));
        summary.final_step = step + 1;
        if let Some(f) = metrics.as_mut() {
            if step % config.log_every == 0 || step + 1 == config.steps {
                writeln!(f, "{step},{loss:e},{lr:e},{norm:e},{:.3}", clock.elapsed().as_secs_f64())?;
                f.flush()?;
            }
        }
        if (step + 1) % config.checkpoint_every == 0 || step + 1 == config.steps {
            summary.checkpoint = save(&model, &adam, step + 1)?;
        }
    }
    Ok((model, summary))
}

/// Finite-difference comparison of analytic gradients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// `(parameter index, analytic, numeric, relative error)`.
    pub entries: Vec<(usize, f64, f64, f64)>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Denominator floor so parameters with vanishing gradient are judged on
/// absolute error instead.
const GRAD_FLOOR: f64 = 1e-6;

/// Compare `analytic` against central differences of the batch loss at `indices`.
pub fn compare_gradients(
    model: &IconModel<f64>,
    batch: &Batch<f64>,
    analytic: &[f64],
    indices: &[usize],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut probe = model.clone();
    let mut entries = Vec::with_capacity(indices.len());
    for &i in indices {
        let orig = probe.params[i];
        probe.params[i] = orig + step;
        let up = probe.loss_and_grad(batch)?.0;
        probe.params[i] = orig - step;
        let down = probe.loss_and_grad(batch)?.0;
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
        entries.push((i, a, numeric, rel));
    }
    let max_rel_error = entries.iter().map(|e| e.3).fold(0.0, f64::max);
    Ok(GradCheckReport { entries, max_rel_error, tolerance, passed: max_rel_error < tolerance })
}

/// Small random padded batch for gradient and invariance checks.
pub fn random_batch<R: Rng + ?Sized>(rng: &mut R, sizes: &[(usize, usize)], pad: usize) -> Batch<f64> {
    let (mut ps, mut qs, mut ls) = (Vec::new(), Vec::new(), Vec::new());
    for &(np, nq) in sizes {
        let mut data = Vec::new();
        for c in 0..np {
            let mut col = [0.0; PROMPT_ROWS];
            col[0] = (c % 2) as f64;
            for v in &mut col[1..4] {
                *v = rng.random_range(-1.0..1.0);
            }
            let slot = rng.random_range(0..DEMO_CAPACITY + 1);
            col[4 + slot] = if c % 3 == 0 { -1.0 } else { 1.0 };
            data.extend_from_slice(&col);
        }
        data.extend(std::iter::repeat_n(0.0, pad * PROMPT_ROWS));
        let mut mask = vec![true; np];
        mask.extend(std::iter::repeat_n(false, pad));
        ps.push(PromptMatrix { data, col_mask: mask });
        let q: Vec<f64> = (0..nq * QUERY_ROWS).map(|_| rng.random_range(-1.0..1.0)).collect();
        qs.push(QueryMatrix { data: q, col_mask: vec![true; nq] });
        ls.push(LabelVector { values: (0..nq).map(|_| rng.random_range(-1.0..1.0)).collect(), mask: vec![true; nq] });
    }
    pad_and_batch(&ps, &qs, &ls).expect("consistent random batch")
}

/// Gradient check of a freshly initialised 64-bit model on a tiny random batch.
pub fn grad_check(model_config: ModelConfig, n_params: usize, tolerance: f64, seed: u64) -> Result<GradCheckReport> {
    let mut rng = IconRng::seed_from_u64(seed);
    let model = IconModel::<f64>::init(model_config, &mut rng)?;
    let batch = random_batch(&mut rng, &[(7, 3), (4, 2)], 2);
    let (_, grad) = model.loss_and_grad(&batch)?;
    let indices = sample(&mut rng, model.num_params(), n_params.min(model.num_params())).into_vec();
    compare_gradients(&model, &batch, &grad, &indices, 1e-5, tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let c = TrainConfig { steps: 1000, warmup_steps: 100, ..TrainConfig::default() };
        assert!((c.learning_rate(99) - 1e-3).abs() < 1e-15);
        assert!(c.learning_rate(0) < c.learning_rate(50));
        assert!((c.learning_rate(550) - 0.5e-3).abs() < 1e-12);
        assert!(c.learning_rate(999) < 1e-6);
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[0.0f64], &[2.0], &[true]).unwrap(), 4.0);
        assert_eq!(mse_loss(&[1.0f64, 5.0], &[1.0, 0.0], &[true, false]).unwrap(), 0.0);
        assert!(mse_loss(&[1.0f64], &[1.0], &[false]).is_err());
    }

    #[test]
    fn clipping() {
        let mut g = vec![3.0f64, 4.0];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn default_gradient_check() {
        let r = grad_check(ModelConfig::default(), 20, 1e-4, 1).unwrap();
        assert!(r.passed, "{r:?}");
    }
}
