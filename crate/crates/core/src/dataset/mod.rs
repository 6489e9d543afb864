//! Operator sampling, condition/QoI generation for every problem family, and
//! the on-disk dataset format.

mod family;
mod format;
mod generate;

pub use family::{
    parse_family_list, FamilySchema, Kind, ProblemFamily, Selection, TermSchema, ALL_FAMILY_IDS, LINE_POINTS,
    MFC_EARLY_ROWS, ODE_POINTS, OSC_SPLIT, TRAINING_FAMILY_IDS,
};
pub use format::{
    decode_family, encode_family, generate_dataset, load_dataset, load_family_file, read_manifest, write_family_file,
    Dataset, FileHeader, Manifest, ManifestEntry, FORMAT_VERSION, MAGIC, MANIFEST_NAME,
};
pub use generate::{
    generate_family, generate_pair, realize, sample_operator, sample_operator_with, sample_source, verify_record,
    FamilyData, ParamBounds, Realized,
};

use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// A sampled function as key-value pairs `(term, t, x) -> value`. Unused key
/// coordinates are stored as exact zeros.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyValueFunction<T> {
    pub term: u32,
    pub t: Vec<T>,
    pub x: Vec<T>,
    pub values: Vec<T>,
}

impl<T: Scalar> KeyValueFunction<T> {
    pub fn new(term: u32, t: Vec<T>, x: Vec<T>, values: Vec<T>) -> Self {
        Self { term, t, x, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.t.iter().chain(&self.x).chain(&self.values).all(|v| v.is_finite())
    }

    /// Subset of the pairs at `idx`, in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            term: self.term,
            t: idx.iter().map(|&i| self.t[i]).collect(),
            x: idx.iter().map(|&i| self.x[i]).collect(),
            values: idx.iter().map(|&i| self.values[i]).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> KeyValueFunction<U> {
        let c = |v: &Vec<T>| v.iter().map(|&a| U::of(a.f64())).collect();
        KeyValueFunction { term: self.term, t: c(&self.t), x: c(&self.x), values: c(&self.values) }
    }
}

/// Family tag plus sampled parameters: the hidden operator identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub family: ProblemFamily,
    pub scalars: BTreeMap<String, f64>,
    pub arrays: BTreeMap<String, Vec<f64>>,
}

impl OperatorSpec {
    pub fn scalar(&self, name: &str) -> crate::Result<f64> {
        self.scalars
            .get(name)
            .copied()
            .ok_or_else(|| crate::IconError::Schema(format!("operator of family {} lacks '{name}'", self.family.id())))
    }

    pub fn array(&self, name: &str) -> crate::Result<&[f64]> {
        self.arrays
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| crate::IconError::Schema(format!("operator of family {} lacks '{name}'", self.family.id())))
    }
}

/// One condition/QoI pair under one operator.
///
/// `source` holds the exact 64-bit solver inputs the pair was built from, so
/// the stored 32-bit arrays can be regenerated and compared bitwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CondQoIRecord {
    pub operator_index: u32,
    pub pair_index: u32,
    pub condition: Vec<KeyValueFunction<f32>>,
    pub qoi: KeyValueFunction<f32>,
    pub source: Vec<f64>,
}
