//! Matrix encoding of demos, question condition, queries and labels.
//!
//! A prompt column is `[term, t, x, value, idx_1 .. idx_{J_m+1}]`: condition
//! pairs of demo `j` carry `+e_j`, its QoI pairs `-e_j`, and the question
//! condition `e_{J_m+1}`.

use crate::dataset::{FamilySchema, KeyValueFunction, Selection};
use crate::error::{IconError, Result};
use crate::scalar::Scalar;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Maximum number of demos a prompt can hold.
pub const DEMO_CAPACITY: usize = 5;
/// Key rows shared by prompts and queries: term, t, x.
pub const KEY_ROWS: usize = 3;
pub const PROMPT_ROWS: usize = KEY_ROWS + 1 + DEMO_CAPACITY + 1;
pub const QUERY_ROWS: usize = KEY_ROWS;

/// Prompt stored column-major: column `c` is `data[c * PROMPT_ROWS..][..PROMPT_ROWS]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptMatrix<T> {
    pub data: Vec<T>,
    pub col_mask: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryMatrix<T> {
    pub data: Vec<T>,
    pub col_mask: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelVector<T> {
    pub values: Vec<T>,
    pub mask: Vec<bool>,
}

/// A demo as the prompt sees it: condition terms and QoI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Demo<T> {
    pub condition: Vec<KeyValueFunction<T>>,
    pub qoi: KeyValueFunction<T>,
}

impl<T: Scalar> PromptMatrix<T> {
    pub fn cols(&self) -> usize {
        self.col_mask.len()
    }

    pub fn column(&self, c: usize) -> &[T] {
        &self.data[c * PROMPT_ROWS..(c + 1) * PROMPT_ROWS]
    }

    pub fn valid_cols(&self) -> usize {
        self.col_mask.iter().filter(|&&m| m).count()
    }

    /// Aligned text rendering, one labelled line per row.
    pub fn to_text(&self) -> String {
        let mut labels = vec!["term".to_owned(), "time".into(), "space".into(), "value".into()];
        labels.extend((1..=DEMO_CAPACITY + 1).map(|j| format!("idx{j}")));
        let mut out = String::new();
        for (r, label) in labels.iter().enumerate() {
            out.push_str(&format!("{label:>6} |"));
            for c in 0..self.cols() {
                let v = self.column(c)[r].f64();
                if r == 0 || r > KEY_ROWS {
                    out.push_str(&format!(" {:>8}", v as i64));
                } else {
                    out.push_str(&format!(" {v:>8.4}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

impl<T: Scalar> QueryMatrix<T> {
    pub fn cols(&self) -> usize {
        self.col_mask.len()
    }

    pub fn column(&self, c: usize) -> &[T] {
        &self.data[c * QUERY_ROWS..(c + 1) * QUERY_ROWS]
    }
}

fn check_function<T: Scalar>(f: &KeyValueFunction<T>) -> Result<()> {
    if f.is_empty() || f.t.len() != f.len() || f.x.len() != f.len() {
        return Err(IconError::InvalidInput(format!("function with term {} has inconsistent or empty keys", f.term)));
    }
    if !f.is_finite() {
        return Err(IconError::InvalidInput(format!("function with term {} has non-finite entries", f.term)));
    }
    Ok(())
}

fn push_function<T: Scalar>(data: &mut Vec<T>, f: &KeyValueFunction<T>, index_row: usize, sign: T) {
    for i in 0..f.len() {
        let mut col = [T::zero(); PROMPT_ROWS];
        col[0] = T::of(f.term as f64);
        col[1] = f.t[i];
        col[2] = f.x[i];
        col[3] = f.values[i];
        col[KEY_ROWS + 1 + index_row] = sign;
        data.extend_from_slice(&col);
    }
}

fn term_signature<T>(fs: &[KeyValueFunction<T>]) -> Vec<u32> {
    fs.iter().map(|f| f.term).collect()
}

/// Concatenate demos (condition then QoI) and the question condition.
pub fn build_prompt<T: Scalar>(
    demos: &[Demo<T>],
    question: &[KeyValueFunction<T>],
    capacity: usize,
) -> Result<PromptMatrix<T>> {
    if capacity != DEMO_CAPACITY {
        return Err(IconError::InvalidInput(format!("prompt layout is fixed to {DEMO_CAPACITY} demos")));
    }
    if demos.is_empty() || demos.len() > capacity {
        return Err(IconError::Capacity { got: demos.len(), cap: capacity });
    }
    let signature = term_signature(question);
    for d in demos {
        if term_signature(&d.condition) != signature {
            return Err(IconError::Schema("demos and question have different condition terms".into()));
        }
        if d.qoi.term != demos[0].qoi.term {
            return Err(IconError::Schema("demos have different QoI terms".into()));
        }
    }
    let mut data = Vec::new();
    for (j, d) in demos.iter().enumerate() {
        for f in &d.condition {
            check_function(f)?;
            push_function(&mut data, f, j, T::one());
        }
        check_function(&d.qoi)?;
        push_function(&mut data, &d.qoi, j, -T::one());
    }
    for f in question {
        check_function(f)?;
        push_function(&mut data, f, DEMO_CAPACITY, T::one());
    }
    let cols = data.len() / PROMPT_ROWS;
    Ok(PromptMatrix { data, col_mask: vec![true; cols] })
}

/// One query per QoI key, labels in the same order.
pub fn build_queries_and_labels<T: Scalar>(qoi: &KeyValueFunction<T>) -> Result<(QueryMatrix<T>, LabelVector<T>)> {
    check_function(qoi)?;
    let mut data = Vec::with_capacity(qoi.len() * QUERY_ROWS);
    for i in 0..qoi.len() {
        data.extend_from_slice(&[T::of(qoi.term as f64), qoi.t[i], qoi.x[i]]);
    }
    let mask = vec![true; qoi.len()];
    Ok((QueryMatrix { data, col_mask: mask.clone() }, LabelVector { values: qoi.values.clone(), mask }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubsampleScheme {
    Prefix,
    UniformRandom,
}

/// Keep `n` pairs: the first `n`, or a uniform random subset in original order.
pub fn subsample_pairs<T: Scalar, R: Rng + ?Sized>(
    f: &KeyValueFunction<T>,
    n: usize,
    rng: &mut R,
    scheme: SubsampleScheme,
) -> Result<KeyValueFunction<T>> {
    if n == 0 || n > f.len() {
        return Err(IconError::InvalidInput(format!("cannot keep {n} of {} pairs", f.len())));
    }
    let idx: Vec<usize> = match scheme {
        SubsampleScheme::Prefix => (0..n).collect(),
        SubsampleScheme::UniformRandom => {
            let mut v = rand::seq::index::sample(rng, f.len(), n).into_vec();
            v.sort_unstable();
            v
        }
    };
    Ok(f.select(&idx))
}

/// Trim one stored function to a prompt-time count `n` following its term rule.
pub fn select_for_term<T: Scalar, R: Rng + ?Sized>(
    f: &KeyValueFunction<T>,
    selection: Selection,
    n: usize,
    rng: &mut R,
) -> Result<KeyValueFunction<T>> {
    match selection {
        Selection::All => Ok(f.clone()),
        Selection::Prefix { shorten } => {
            subsample_pairs(f, n.saturating_sub(shorten).max(1).min(f.len()), rng, SubsampleScheme::Prefix)
        }
        Selection::Random => subsample_pairs(f, n.min(f.len()), rng, SubsampleScheme::UniformRandom),
    }
}

/// How many key-value pairs each prompt function keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KvCount {
    /// Independent uniform draw in `lo..=hi` per function.
    Range(usize, usize),
    Fixed(usize),
}

impl KvCount {
    fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> usize {
        match self {
            KvCount::Range(lo, hi) => rng.random_range(lo..=hi),
            KvCount::Fixed(n) => n,
        }
    }
}

/// Trim every condition term per the family schema.
pub fn select_condition<T: Scalar, R: Rng + ?Sized>(
    schema: &FamilySchema,
    condition: &[KeyValueFunction<T>],
    count: KvCount,
    rng: &mut R,
) -> Result<Vec<KeyValueFunction<T>>> {
    if condition.len() != schema.condition.len() {
        return Err(IconError::Schema(format!(
            "family {} expects {} condition terms",
            schema.id,
            schema.condition.len()
        )));
    }
    condition
        .iter()
        .zip(&schema.condition)
        .map(|(f, s)| select_for_term(f, s.selection, count.draw(rng), rng))
        .collect()
}

pub fn select_qoi<T: Scalar, R: Rng + ?Sized>(
    schema: &FamilySchema,
    qoi: &KeyValueFunction<T>,
    count: KvCount,
    rng: &mut R,
) -> Result<KeyValueFunction<T>> {
    select_for_term(qoi, schema.qoi.selection, count.draw(rng), rng)
}

/// Zero-padded batch. Prompt tensors are `[batch, max_cols, PROMPT_ROWS]`,
/// queries `[batch, max_queries, QUERY_ROWS]`, labels `[batch, max_queries]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Batch<T> {
    pub size: usize,
    pub prompt_cols: usize,
    pub query_cols: usize,
    pub prompt: Vec<T>,
    pub prompt_mask: Vec<bool>,
    pub query: Vec<T>,
    pub query_mask: Vec<bool>,
    pub labels: Vec<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn cast<U: Scalar>(&self) -> Batch<U> {
        let c = |v: &Vec<T>| v.iter().map(|&a| U::of(a.f64())).collect();
        Batch {
            size: self.size,
            prompt_cols: self.prompt_cols,
            query_cols: self.query_cols,
            prompt: c(&self.prompt),
            prompt_mask: self.prompt_mask.clone(),
            query: c(&self.query),
            query_mask: self.query_mask.clone(),
            labels: c(&self.labels),
        }
    }

    pub fn prompt_of(&self, b: usize) -> (&[T], &[bool]) {
        let (p, n) = (self.prompt_cols, PROMPT_ROWS);
        (&self.prompt[b * p * n..(b + 1) * p * n], &self.prompt_mask[b * p..(b + 1) * p])
    }

    pub fn query_of(&self, b: usize) -> (&[T], &[bool]) {
        let (q, n) = (self.query_cols, QUERY_ROWS);
        (&self.query[b * q * n..(b + 1) * q * n], &self.query_mask[b * q..(b + 1) * q])
    }

    pub fn labels_of(&self, b: usize) -> &[T] {
        &self.labels[b * self.query_cols..(b + 1) * self.query_cols]
    }
}

pub fn pad_and_batch<T: Scalar>(
    prompts: &[PromptMatrix<T>],
    queries: &[QueryMatrix<T>],
    labels: &[LabelVector<T>],
) -> Result<Batch<T>> {
    let size = prompts.len();
    if size == 0 || queries.len() != size || labels.len() != size {
        return Err(IconError::Dimension(format!(
            "batch of {} prompts, {} query sets, {} label sets",
            size,
            queries.len(),
            labels.len()
        )));
    }
    let prompt_cols = prompts.iter().map(|p| p.cols()).max().unwrap_or(0);
    let query_cols = queries.iter().map(|q| q.cols()).max().unwrap_or(0);
    let mut batch = Batch {
        size,
        prompt_cols,
        query_cols,
        prompt: vec![T::zero(); size * prompt_cols * PROMPT_ROWS],
        prompt_mask: vec![false; size * prompt_cols],
        query: vec![T::zero(); size * query_cols * QUERY_ROWS],
        query_mask: vec![false; size * query_cols],
        labels: vec![T::zero(); size * query_cols],
    };
    for b in 0..size {
        let (p, q, l) = (&prompts[b], &queries[b], &labels[b]);
        if l.values.len() != q.cols() {
            return Err(IconError::Dimension(format!("{} labels for {} queries", l.values.len(), q.cols())));
        }
        let off = b * prompt_cols;
        for c in 0..p.cols() {
            if p.col_mask[c] {
                batch.prompt[(off + c) * PROMPT_ROWS..(off + c + 1) * PROMPT_ROWS].copy_from_slice(p.column(c));
                batch.prompt_mask[off + c] = true;
            }
        }
        let off = b * query_cols;
        for c in 0..q.cols() {
            if q.col_mask[c] && l.mask[c] {
                batch.query[(off + c) * QUERY_ROWS..(off + c + 1) * QUERY_ROWS].copy_from_slice(q.column(c));
                batch.query_mask[off + c] = true;
                batch.labels[off + c] = l.values[c];
            }
        }
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic::IconRng;
    use rand::SeedableRng;

    fn series(term: u32, n: usize) -> KeyValueFunction<f64> {
        let t: Vec<f64> = (0..n).map(|i| i as f64 / 49.0).collect();
        KeyValueFunction::new(term, t.clone(), vec![0.0; n], t.iter().map(|v| v * v).collect())
    }

    fn ode_demo() -> Demo<f64> {
        Demo {
            condition: vec![series(0, 49), KeyValueFunction::new(1, vec![0.0], vec![0.0], vec![0.3])],
            qoi: series(0, 50),
        }
    }

    #[test]
    fn one_demo_layout() {
        let d = ode_demo();
        let p = build_prompt(std::slice::from_ref(&d), &d.condition, DEMO_CAPACITY).unwrap();
        assert_eq!(p.cols(), 150);
        assert_eq!(p.column(0)[KEY_ROWS + 1], 1.0);
        assert_eq!(p.column(49)[0], 1.0);
        assert_eq!(p.column(60)[KEY_ROWS + 1], -1.0);
        assert_eq!(p.column(140)[PROMPT_ROWS - 1], 1.0);
        for c in 0..p.cols() {
            let nz: Vec<f64> = p.column(c)[KEY_ROWS + 1..].iter().copied().filter(|v| *v != 0.0).collect();
            assert_eq!(nz.len(), 1);
            assert_eq!(nz[0].abs(), 1.0);
        }
        assert!(p.to_text().lines().count() == PROMPT_ROWS);
    }

    #[test]
    fn capacity_and_schema_errors() {
        let d = ode_demo();
        assert!(matches!(build_prompt(&[], &d.condition, DEMO_CAPACITY), Err(IconError::Capacity { .. })));
        let six = vec![d.clone(); 6];
        assert!(matches!(build_prompt(&six, &d.condition, DEMO_CAPACITY), Err(IconError::Capacity { .. })));
        let other = Demo { condition: vec![series(0, 10)], qoi: series(0, 10) };
        assert!(matches!(build_prompt(&[other], &d.condition, DEMO_CAPACITY), Err(IconError::Schema(_))));
        let mut bad = d.clone();
        bad.qoi.values[3] = f64::NAN;
        assert!(matches!(build_prompt(&[bad], &d.condition, DEMO_CAPACITY), Err(IconError::InvalidInput(_))));
    }

    #[test]
    fn subsampling() {
        let mut rng = IconRng::seed_from_u64(1);
        let f = series(0, 100);
        assert_eq!(subsample_pairs(&f, 100, &mut rng, SubsampleScheme::Prefix).unwrap(), f);
        let s = subsample_pairs(&f, 41, &mut rng, SubsampleScheme::UniformRandom).unwrap();
        assert_eq!(s.len(), 41);
        assert!(s.t.windows(2).all(|w| w[0] < w[1]));
        assert!(subsample_pairs(&f, 0, &mut rng, SubsampleScheme::Prefix).is_err());
        assert!(subsample_pairs(&f, 101, &mut rng, SubsampleScheme::Prefix).is_err());
        let c = select_for_term(&series(0, 50), Selection::Prefix { shorten: 1 }, 45, &mut rng).unwrap();
        assert_eq!(c.len(), 44);
        let u = select_for_term(&series(0, 50), Selection::Prefix { shorten: 0 }, 45, &mut rng).unwrap();
        assert_eq!(u.len(), 45);
    }

    #[test]
    fn padding_lengths() {
        let d = ode_demo();
        let p1 = build_prompt(std::slice::from_ref(&d), &d.condition, DEMO_CAPACITY).unwrap();
        let short = Demo { condition: vec![series(0, 39), d.condition[1].clone()], qoi: series(0, 40) };
        let p2 = build_prompt(std::slice::from_ref(&short), &short.condition, DEMO_CAPACITY).unwrap();
        assert_eq!(p2.cols(), 120);
        let (q1, l1) = build_queries_and_labels(&d.qoi).unwrap();
        let (q2, l2) = build_queries_and_labels(&short.qoi).unwrap();
        let b = pad_and_batch(&[p1, p2], &[q1, q2], &[l1, l2]).unwrap();
        assert_eq!(b.prompt_cols, 150);
        assert_eq!(b.prompt_of(0).1.iter().filter(|&&m| m).count(), 150);
        assert_eq!(b.prompt_of(1).1.iter().filter(|&&m| m).count(), 120);
        assert!(b.prompt_of(1).0[120 * PROMPT_ROWS..].iter().all(|&v| v == 0.0));
        assert_eq!(b.query_of(1).1.iter().filter(|&&m| m).count(), 40);
    }
}
