//! Non-imaging context records, their network encoding, and nearest-record
//! imputation of missing fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Demographic, cognitive and genetic fields of one case. `None` = missing.
/// Categorical fields hold a level code in `0..levels`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextRecord {
    pub age: Option<f64>,
    pub gender: Option<u8>,
    pub education: Option<f64>,
    pub cdrsb: Option<f64>,
    pub adas11: Option<f64>,
    pub adas13: Option<f64>,
    pub ravlt: Option<f64>,
    pub apoe4: Option<u8>,
    pub ethnicity: Option<u8>,
    pub race: Option<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Numeric,
    Categorical { levels: u8 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Field {
    Age,
    Gender,
    Education,
    Cdrsb,
    Adas11,
    Adas13,
    Ravlt,
    Apoe4,
    Ethnicity,
    Race,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FieldValue {
    Numeric(f64),
    Categorical(u8),
}

impl Field {
    pub const ALL: [Field; 10] = [
        Field::Age,
        Field::Gender,
        Field::Education,
        Field::Cdrsb,
        Field::Adas11,
        Field::Adas13,
        Field::Ravlt,
        Field::Apoe4,
        Field::Ethnicity,
        Field::Race,
    ];

    pub const NUMERIC: [Field; 6] =
        [Field::Age, Field::Education, Field::Cdrsb, Field::Adas11, Field::Adas13, Field::Ravlt];

    pub fn name(self) -> &'static str {
        match self {
            Field::Age => "age",
            Field::Gender => "gender",
            Field::Education => "education",
            Field::Cdrsb => "cdrsb",
            Field::Adas11 => "adas11",
            Field::Adas13 => "adas13",
            Field::Ravlt => "ravlt",
            Field::Apoe4 => "apoe4",
            Field::Ethnicity => "ethnicity",
            Field::Race => "race",
        }
    }

    pub fn kind(self) -> FieldKind {
        match self {
            Field::Gender => FieldKind::Categorical { levels: 2 },
            Field::Apoe4 => FieldKind::Categorical { levels: 3 },
            Field::Ethnicity => FieldKind::Categorical { levels: 3 },
            Field::Race => FieldKind::Categorical { levels: 8 },
            _ => FieldKind::Numeric,
        }
    }

    fn numeric_slot(self) -> Option<usize> {
        Self::NUMERIC.iter().position(|&f| f == self)
    }
}

impl ContextRecord {
    pub fn get(&self, field: Field) -> Option<FieldValue> {
        use FieldValue::*;
        match field {
            Field::Age => self.age.map(Numeric),
            Field::Gender => self.gender.map(Categorical),
            Field::Education => self.education.map(Numeric),
            Field::Cdrsb => self.cdrsb.map(Numeric),
            Field::Adas11 => self.adas11.map(Numeric),
            Field::Adas13 => self.adas13.map(Numeric),
            Field::Ravlt => self.ravlt.map(Numeric),
            Field::Apoe4 => self.apoe4.map(Categorical),
            Field::Ethnicity => self.ethnicity.map(Categorical),
            Field::Race => self.race.map(Categorical),
        }
    }

    /// Copies `field` from `other` (which may itself be missing).
    pub fn copy_field(&mut self, field: Field, other: &ContextRecord) {
        match field {
            Field::Age => self.age = other.age,
            Field::Gender => self.gender = other.gender,
            Field::Education => self.education = other.education,
            Field::Cdrsb => self.cdrsb = other.cdrsb,
            Field::Adas11 => self.adas11 = other.adas11,
            Field::Adas13 => self.adas13 = other.adas13,
            Field::Ravlt => self.ravlt = other.ravlt,
            Field::Apoe4 => self.apoe4 = other.apoe4,
            Field::Ethnicity => self.ethnicity = other.ethnicity,
            Field::Race => self.race = other.race,
        }
    }

    pub fn clear(&mut self, field: Field) {
        let empty = ContextRecord::default();
        self.copy_field(field, &empty);
    }

    pub fn is_present(&self, field: Field) -> bool {
        self.get(field).is_some()
    }

    pub fn present_fields(&self) -> Vec<Field> {
        Field::ALL.into_iter().filter(|&f| self.is_present(f)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.present_fields().is_empty() {
            return Err(Error::Data("context record has no present field".into()));
        }
        for f in Field::ALL {
            match (f.kind(), self.get(f)) {
                (FieldKind::Categorical { levels }, Some(FieldValue::Categorical(c))) if c >= levels => {
                    return Err(Error::Data(format!("{} code {c} out of range 0..{levels}", f.name())));
                }
                (FieldKind::Numeric, Some(FieldValue::Numeric(v))) if !v.is_finite() => {
                    return Err(Error::Data(format!("{} is not finite", f.name())));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Per-field mean and standard deviation of the numeric fields over a bank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; 6],
    pub std: [f64; 6],
}

impl Default for Standardizer {
    fn default() -> Self {
        Self { mean: [0.0; 6], std: [1.0; 6] }
    }
}

impl Standardizer {
    /// Fits on the present values of each numeric field. Fields with no
    /// present value or zero spread keep mean 0 / std 1 respectively.
    pub fn fit(bank: &[ContextRecord]) -> Self {
        let mut out = Self::default();
        for (slot, &field) in Field::NUMERIC.iter().enumerate() {
            let vals: Vec<f64> = bank
                .iter()
                .filter_map(|r| match r.get(field) {
                    Some(FieldValue::Numeric(v)) => Some(v),
                    _ => None,
                })
                .collect();
            if vals.is_empty() {
                continue;
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            out.mean[slot] = mean;
            out.std[slot] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        out
    }

    pub fn standardize(&self, field: Field, value: f64) -> f64 {
        let slot = field.numeric_slot().expect("numeric field");
        (value - self.mean[slot]) / self.std[slot]
    }

    /// Encoded values of one field without the missingness indicator:
    /// one standardized scalar, or a one-hot block. Missing encodes as zeros.
    pub fn field_values(&self, record: &ContextRecord, field: Field) -> Vec<f64> {
        match (field.kind(), record.get(field)) {
            (FieldKind::Numeric, Some(FieldValue::Numeric(v))) => vec![self.standardize(field, v)],
            (FieldKind::Numeric, _) => vec![0.0],
            (FieldKind::Categorical { levels }, value) => {
                let mut hot = vec![0.0; levels as usize];
                if let Some(FieldValue::Categorical(c)) = value {
                    if (c as usize) < hot.len() {
                        hot[c as usize] = 1.0;
                    }
                }
                hot
            }
        }
    }

    /// Network input: per field its values followed by a missingness flag.
    pub fn encode(&self, record: &ContextRecord) -> Vec<f64> {
        let mut out = Vec::with_capacity(ENCODED_DIM);
        for f in Field::ALL {
            out.extend(self.field_values(record, f));
            out.push(if record.is_present(f) { 0.0 } else { 1.0 });
        }
        out
    }
}

/// Length of [`Standardizer::encode`] output.
pub const ENCODED_DIM: usize = 6 * 2 + (2 + 1) + (3 + 1) + (3 + 1) + (8 + 1);

#[derive(Clone, Debug, PartialEq)]
pub struct Imputation {
    pub record: ContextRecord,
    /// Index of the chosen bank record.
    pub donor: usize,
    pub similarity: f64,
    pub filled: Vec<Field>,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Fills the missing fields of `partial` from the bank record that is most
/// cosine-similar over the fields `partial` has. Numeric fields are
/// standardized with the bank's own statistics, categorical ones one-hot
/// encoded. Ties go to the lowest bank index; present fields are never
/// overwritten.
pub fn impute_context(partial: &ContextRecord, bank: &[ContextRecord]) -> Result<Imputation> {
    if bank.is_empty() {
        return Err(Error::invalid("impute_context", "empty context bank"));
    }
    let shared = partial.present_fields();
    if shared.is_empty() {
        return Err(Error::invalid("impute_context", "partial record has no present field"));
    }
    let std = Standardizer::fit(bank);
    let vectorize = |r: &ContextRecord| -> Vec<f64> { shared.iter().flat_map(|&f| std.field_values(r, f)).collect() };
    let query = vectorize(partial);

    let mut donor = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, r) in bank.iter().enumerate() {
        let s = cosine(&query, &vectorize(r));
        if s > best {
            best = s;
            donor = i;
        }
    }

    let mut record = partial.clone();
    let mut filled = Vec::new();
    for f in Field::ALL {
        if !partial.is_present(f) && bank[donor].is_present(f) {
            record.copy_field(f, &bank[donor]);
            filled.push(f);
        }
    }
    Ok(Imputation { record, donor, similarity: best, filled })
}
