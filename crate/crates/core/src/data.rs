//! Canonical transaction data model, CSV persistence, validation and the
//! chronological train/validation split.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {msg}")]
    Malformed { line: u64, msg: String },
    #[error("empty dataset file")]
    Empty,
    #[error("label kind mixed: line {line} holds a {found} label in a {expected} dataset")]
    MixedLabels {
        line: u64,
        found: &'static str,
        expected: &'static str,
    },
    #[error("bad header: {0}")]
    Header(String),
    #[error("no vocabulary for field `{0}`")]
    MissingVocabulary(&'static str),
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),
    #[error("split needs at least one day on each side: {n_days} days, train fraction {frac}")]
    Split { n_days: usize, frac: f64 },
    #[error("dataset invalid: {0}")]
    Invalid(String),
}

/// One card event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transaction {
    pub mcc: u32,
    pub txn_type: u32,
    pub currency: Option<u32>,
    pub country: Option<u32>,
    /// Hours since 00:00, in `[0, 24)`.
    pub time_hours: f64,
    /// Signed amount in currency units; refunds are negative.
    pub amount: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Label {
    Class(u8),
    Rate(f64),
}

impl Label {
    pub fn kind(&self) -> TaskKind {
        match self {
            Label::Class(_) => TaskKind::Classification,
            Label::Rate(_) => TaskKind::Regression,
        }
    }

    pub fn class(&self) -> Option<usize> {
        match *self {
            Label::Class(c) => Some(c as usize),
            Label::Rate(_) => None,
        }
    }

    pub fn rate(&self) -> Option<f64> {
        match *self {
            Label::Rate(r) => Some(r),
            Label::Class(_) => None,
        }
    }
}

pub const NUM_WEEKDAYS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Regression,
}

impl TaskKind {
    fn name(self) -> &'static str {
        match self {
            TaskKind::Classification => "class",
            TaskKind::Regression => "rate",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Classification => f.write_str("classification"),
            TaskKind::Regression => f.write_str("regression"),
        }
    }
}

/// One calendar day: time-ordered transactions plus the day's target.
#[derive(Debug, Clone, PartialEq)]
pub struct DayRecord {
    pub day_index: i64,
    pub transactions: Vec<Transaction>,
    pub label: Label,
}

impl DayRecord {
    /// Builds a day, stably sorting transactions by time of day.
    pub fn new(day_index: i64, mut transactions: Vec<Transaction>, label: Label) -> Self {
        transactions.sort_by(|a, b| a.time_hours.total_cmp(&b.time_hours));
        Self {
            day_index,
            transactions,
            label,
        }
    }

    pub fn len(&self) -> usize {
        self.transactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transactions.is_empty()
    }
}

/// Categorical fields in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Mcc,
    TxnType,
    Currency,
    Country,
}

impl Field {
    pub const ALL: [Field; 4] = [Field::Mcc, Field::TxnType, Field::Currency, Field::Country];

    pub fn name(self) -> &'static str {
        match self {
            Field::Mcc => "mcc",
            Field::TxnType => "txn_type",
            Field::Currency => "currency",
            Field::Country => "country",
        }
    }

    pub fn parse(s: &str) -> Option<Field> {
        Field::ALL.into_iter().find(|f| f.name() == s)
    }

    pub fn get(self, t: &Transaction) -> Option<u32> {
        match self {
            Field::Mcc => Some(t.mcc),
            Field::TxnType => Some(t.txn_type),
            Field::Currency => t.currency,
            Field::Country => t.country,
        }
    }
}

/// Vocabulary size per categorical field; `None` for absent optional fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSizes {
    pub mcc: usize,
    pub txn_type: usize,
    pub currency: Option<usize>,
    pub country: Option<usize>,
}

impl VocabSizes {
    pub fn get(&self, field: Field) -> Option<usize> {
        match field {
            Field::Mcc => Some(self.mcc),
            Field::TxnType => Some(self.txn_type),
            Field::Currency => self.currency,
            Field::Country => self.country,
        }
    }

    /// Present fields with their sizes, in canonical order.
    pub fn present(&self) -> Vec<(Field, usize)> {
        Field::ALL
            .into_iter()
            .filter_map(|f| self.get(f).map(|n| (f, n)))
            .collect()
    }

    pub fn has_optional(&self) -> bool {
        self.currency.is_some()
    }
}

/// String token to index map for one field. Index 0 is the unknown token.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    pub field: Field,
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

pub const UNKNOWN_TOKEN: &str = "<unk>";

impl Vocabulary {
    pub fn new(field: Field) -> Self {
        Self {
            field,
            tokens: vec![UNKNOWN_TOKEN.to_string()],
            index: HashMap::new(),
        }
    }

    /// Builds a vocabulary whose token `i` (for `i >= 1`) is `tokens[i - 1]`.
    pub fn from_tokens<S: AsRef<str>>(field: Field, tokens: &[S]) -> Result<Self, DataError> {
        let mut v = Self::new(field);
        for t in tokens {
            v.push(t.as_ref())?;
        }
        Ok(v)
    }

    fn push(&mut self, token: &str) -> Result<u32, DataError> {
        if token == UNKNOWN_TOKEN || self.index.contains_key(token) {
            return Err(DataError::Vocabulary(format!(
                "duplicate token `{token}` in field {}",
                self.field.name()
            )));
        }
        let idx = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), idx);
        Ok(idx)
    }

    /// Index of a token, 0 when unknown.
    pub fn lookup(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn token(&self, index: u32) -> &str {
        self.tokens
            .get(index as usize)
            .map(String::as_str)
            .unwrap_or(UNKNOWN_TOKEN)
    }

    /// Max index + 1.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }
}

/// Vocabularies for every field in a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabularySet {
    pub mcc: Vocabulary,
    pub txn_type: Vocabulary,
    pub currency: Option<Vocabulary>,
    pub country: Option<Vocabulary>,
}

impl VocabularySet {
    pub fn get(&self, field: Field) -> Option<&Vocabulary> {
        match field {
            Field::Mcc => Some(&self.mcc),
            Field::TxnType => Some(&self.txn_type),
            Field::Currency => self.currency.as_ref(),
            Field::Country => self.country.as_ref(),
        }
    }

    pub fn sizes(&self) -> VocabSizes {
        VocabSizes {
            mcc: self.mcc.size(),
            txn_type: self.txn_type.size(),
            currency: self.currency.as_ref().map(Vocabulary::size),
            country: self.country.as_ref().map(Vocabulary::size),
        }
    }

    /// Reads a `field,token,index` CSV. Indices must be exactly `1..size` per field.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let file = std::fs::File::open(path)?;
        Self::read(file)
    }

    pub fn read<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["field", "token", "index"] {
            return Err(DataError::Header(format!(
                "vocabulary header must be `field,token,index`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut per_field: BTreeMap<Field, Vec<(u32, String, u64)>> = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let field = Field::parse(&rec[0]).ok_or_else(|| DataError::Malformed {
                line,
                msg: format!("unknown field `{}`", &rec[0]),
            })?;
            let index: u32 = rec[2].parse().map_err(|_| DataError::Malformed {
                line,
                msg: format!("bad index `{}`", &rec[2]),
            })?;
            per_field
                .entry(field)
                .or_default()
                .push((index, rec[1].to_string(), line));
        }
        let mut built: BTreeMap<Field, Vocabulary> = BTreeMap::new();
        for (field, mut entries) in per_field {
            entries.sort_by_key(|e| e.0);
            let mut v = Vocabulary::new(field);
            for (expect, (index, token, line)) in (1u32..).zip(entries) {
                if index != expect {
                    return Err(DataError::Malformed {
                        line,
                        msg: format!(
                            "field {} indices must be contiguous from 1; found {index} where {expect} expected",
                            field.name()
                        ),
                    });
                }
                v.push(&token)?;
            }
            built.insert(field, v);
        }
        let mcc = built
            .remove(&Field::Mcc)
            .ok_or(DataError::MissingVocabulary("mcc"))?;
        let txn_type = built
            .remove(&Field::TxnType)
            .ok_or(DataError::MissingVocabulary("txn_type"))?;
        let currency = built.remove(&Field::Currency);
        let country = built.remove(&Field::Country);
        if currency.is_some() != country.is_some() {
            return Err(DataError::Vocabulary(
                "currency and country must be both present or both absent".into(),
            ));
        }
        Ok(Self {
            mcc,
            txn_type,
            currency,
            country,
        })
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["field", "token", "index"])?;
        for field in Field::ALL {
            if let Some(v) = self.get(field) {
                for i in 1..v.size() {
                    w.write_record([field.name(), v.token(i as u32), &i.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        self.write(std::fs::File::create(path)?)
    }
}

/// An ordered collection of days sharing one task kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub days: Vec<DayRecord>,
    pub task: TaskKind,
    pub vocab_sizes: VocabSizes,
    pub provenance: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn num_transactions(&self) -> usize {
        self.days.iter().map(DayRecord::len).sum()
    }

    /// Errors with the first violation, if any.
    pub fn check(&self) -> Result<(), DataError> {
        let report = validate(self);
        match report.violations.first() {
            None => Ok(()),
            Some(v) => Err(DataError::Invalid(v.to_string())),
        }
    }

    fn with_days(&self, days: Vec<DayRecord>, suffix: &str) -> Dataset {
        Dataset {
            days,
            task: self.task,
            vocab_sizes: self.vocab_sizes,
            provenance: format!("{}#{}", self.provenance, suffix),
        }
    }
}

const BASE_COLUMNS: [&str; 5] = ["day_index", "time_hours", "amount", "mcc", "txn_type"];

fn header_for(has_optional: bool) -> Vec<&'static str> {
    let mut h = BASE_COLUMNS.to_vec();
    if has_optional {
        h.extend(["currency", "country"]);
    }
    h.push("label");
    h
}

fn parse_label(raw: &str, line: u64) -> Result<Label, DataError> {
    if !raw.is_empty() && raw.bytes().all(|b| b.is_ascii_digit()) {
        let c: u8 = raw.parse().map_err(|_| DataError::Malformed {
            line,
            msg: format!("bad class label `{raw}`"),
        })?;
        return Ok(Label::Class(c));
    }
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(Label::Rate)
        .ok_or_else(|| DataError::Malformed {
            line,
            msg: format!("bad label `{raw}`"),
        })
}

fn format_label(label: Label) -> String {
    match label {
        Label::Class(c) => c.to_string(),
        // Debug formatting always carries a `.` or exponent, so rates never parse as classes.
        Label::Rate(r) => format!("{r:?}"),
    }
}

fn parse_f64(raw: &str, what: &str, line: u64) -> Result<f64, DataError> {
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DataError::Malformed {
            line,
            msg: format!("bad {what} `{raw}`"),
        })
}

/// Loads a dataset CSV, mapping tokens through `vocab` (unknown tokens → 0).
pub fn load_dataset(path: &Path, vocab: &VocabularySet) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path)?;
    let mut ds = read_dataset(file, vocab)?;
    ds.provenance = path.display().to_string();
    Ok(ds)
}

pub fn read_dataset<R: Read>(reader: R, vocab: &VocabularySet) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Err(DataError::Empty),
        Some(h) => h?,
    };
    let cols: Vec<&str> = header.iter().collect();
    let has_optional = if cols == header_for(false) {
        false
    } else if cols == header_for(true) {
        true
    } else {
        return Err(DataError::Header(format!(
            "expected `{}` or `{}`, got `{}`",
            header_for(false).join(","),
            header_for(true).join(","),
            cols.join(",")
        )));
    };
    let (currency_vocab, country_vocab) = if has_optional {
        (
            Some(vocab.currency.as_ref().ok_or(DataError::MissingVocabulary("currency"))?),
            Some(vocab.country.as_ref().ok_or(DataError::MissingVocabulary("country"))?),
        )
    } else {
        (None, None)
    };

    let mut grouped: BTreeMap<i64, (Vec<Transaction>, Label, u64)> = BTreeMap::new();
    let mut task: Option<TaskKind> = None;
    let n_cols = cols.len();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != n_cols {
            return Err(DataError::Malformed {
                line,
                msg: format!("expected {n_cols} fields, found {}", rec.len()),
            });
        }
        let day_index: i64 = rec[0].parse().map_err(|_| DataError::Malformed {
            line,
            msg: format!("bad day_index `{}`", &rec[0]),
        })?;
        let time_hours = parse_f64(&rec[1], "time_hours", line)?;
        if !(0.0..24.0).contains(&time_hours) {
            return Err(DataError::Malformed {
                line,
                msg: format!("time_hours {time_hours} outside [0, 24)"),
            });
        }
        let amount = parse_f64(&rec[2], "amount", line)?;
        let (currency, country) = match (currency_vocab, country_vocab) {
            (Some(cv), Some(kv)) => (Some(cv.lookup(&rec[5])), Some(kv.lookup(&rec[6]))),
            _ => (None, None),
        };
        let label = parse_label(&rec[n_cols - 1], line)?;
        match task {
            None => task = Some(label.kind()),
            Some(t) if t != label.kind() => {
                return Err(DataError::MixedLabels {
                    line,
                    found: label.kind().name(),
                    expected: t.name(),
                })
            }
            _ => {}
        }
        let txn = Transaction {
            mcc: vocab.mcc.lookup(&rec[3]),
            txn_type: vocab.txn_type.lookup(&rec[4]),
            currency,
            country,
            time_hours,
            amount,
        };
        let entry = grouped
            .entry(day_index)
            .or_insert_with(|| (Vec::new(), label, line));
        if entry.1 != label {
            return Err(DataError::Malformed {
                line,
                msg: format!(
                    "day {day_index} has label {} but line {} gave {}",
                    format_label(label),
                    entry.2,
                    format_label(entry.1)
                ),
            });
        }
        entry.0.push(txn);
    }
    let task = task.ok_or(DataError::Empty)?;
    let days = grouped
        .into_iter()
        .map(|(d, (txns, label, _))| DayRecord::new(d, txns, label))
        .collect();
    let mut sizes = vocab.sizes();
    if !has_optional {
        sizes.currency = None;
        sizes.country = None;
    }
    let ds = Dataset {
        days,
        task,
        vocab_sizes: sizes,
        provenance: String::from("<reader>"),
    };
    ds.check()?;
    Ok(ds)
}

/// Writes the canonical CSV form of a dataset.
pub fn write_dataset<W: Write>(
    ds: &Dataset,
    vocab: &VocabularySet,
    writer: W,
) -> Result<(), DataError> {
    let has_optional = ds.vocab_sizes.has_optional();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header_for(has_optional))?;
    let mut row: Vec<String> = Vec::with_capacity(8);
    for day in &ds.days {
        let label = format_label(day.label);
        for t in &day.transactions {
            row.clear();
            row.push(day.day_index.to_string());
            row.push(format!("{}", t.time_hours));
            row.push(format!("{}", t.amount));
            row.push(vocab.mcc.token(t.mcc).to_string());
            row.push(vocab.txn_type.token(t.txn_type).to_string());
            if has_optional {
                let cur = vocab.currency.as_ref().ok_or(DataError::MissingVocabulary("currency"))?;
                let cty = vocab.country.as_ref().ok_or(DataError::MissingVocabulary("country"))?;
                row.push(cur.token(t.currency.unwrap_or(0)).to_string());
                row.push(cty.token(t.country.unwrap_or(0)).to_string());
            }
            row.push(label.clone());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(ds: &Dataset, vocab: &VocabularySet, path: &Path) -> Result<(), DataError> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_dataset(ds, vocab, f)
}

/// First `floor(train_frac * n)` days go to training, the rest to validation.
pub fn chronological_split(ds: &Dataset, train_frac: f64) -> Result<(Dataset, Dataset), DataError> {
    let n = ds.days.len();
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(DataError::Split { n_days: n, frac: train_frac });
    }
    let n_train = (train_frac * n as f64).floor() as usize;
    if n_train == 0 || n_train >= n {
        return Err(DataError::Split { n_days: n, frac: train_frac });
    }
    let (a, b) = ds.days.split_at(n_train);
    Ok((ds.with_days(a.to_vec(), "train"), ds.with_days(b.to_vec(), "val")))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyDay { day_index: i64 },
    DayOrder { position: usize, day_index: i64 },
    UnsortedDay { day_index: i64 },
    TimeRange { day_index: i64, time_hours: f64 },
    TokenRange { day_index: i64, field: Field, index: u32, vocab: usize },
    OptionalFieldMismatch { day_index: i64 },
    LabelKind { day_index: i64 },
    LabelRange { day_index: i64, label: f64 },
    NonFinite { day_index: i64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyDay { day_index } => write!(f, "day {day_index} has no transactions"),
            Violation::DayOrder { position, day_index } => write!(
                f,
                "day_index {day_index} at position {position} is not strictly increasing"
            ),
            Violation::UnsortedDay { day_index } => {
                write!(f, "day {day_index} transactions not sorted by time")
            }
            Violation::TimeRange { day_index, time_hours } => {
                write!(f, "day {day_index}: time_hours {time_hours} outside [0, 24)")
            }
            Violation::TokenRange { day_index, field, index, vocab } => write!(
                f,
                "day {day_index}: {} index {index} >= vocabulary size {vocab}",
                field.name()
            ),
            Violation::OptionalFieldMismatch { day_index } => write!(
                f,
                "day {day_index}: optional fields must be present for all transactions or none"
            ),
            Violation::LabelKind { day_index } => {
                write!(f, "day {day_index}: label kind differs from dataset task")
            }
            Violation::LabelRange { day_index, label } => {
                write!(f, "day {day_index}: label {label} out of range")
            }
            Violation::NonFinite { day_index } => {
                write!(f, "day {day_index}: non-finite amount or time")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub day_counts: Vec<usize>,
    pub min_count: usize,
    pub mean_count: f64,
    pub max_count: usize,
    /// Per present field: fraction of known (index ≥ 1) tokens observed at least once.
    pub coverage: Vec<(Field, f64)>,
    pub label_min: f64,
    pub label_max: f64,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Summarises a dataset and lists every invariant violation.
pub fn validate(ds: &Dataset) -> ValidationReport {
    let mut violations = Vec::new();
    let day_counts: Vec<usize> = ds.days.iter().map(DayRecord::len).collect();
    let fields = ds.vocab_sizes.present();
    let mut seen: Vec<Vec<bool>> = fields.iter().map(|&(_, n)| vec![false; n]).collect();
    let mut label_min = f64::INFINITY;
    let mut label_max = f64::NEG_INFINITY;

    for (pos, day) in ds.days.iter().enumerate() {
        let di = day.day_index;
        if pos > 0 && ds.days[pos - 1].day_index >= di {
            violations.push(Violation::DayOrder { position: pos, day_index: di });
        }
        if day.transactions.is_empty() {
            violations.push(Violation::EmptyDay { day_index: di });
        }
        if day
            .transactions
            .windows(2)
            .any(|w| w[0].time_hours > w[1].time_hours)
        {
            violations.push(Violation::UnsortedDay { day_index: di });
        }
        let mut time_bad = false;
        let mut token_bad = false;
        let mut opt_bad = false;
        let mut non_finite = false;
        for t in &day.transactions {
            if !t.time_hours.is_finite() || !t.amount.is_finite() {
                non_finite = true;
            } else if !(0.0..24.0).contains(&t.time_hours) && !time_bad {
                time_bad = true;
                violations.push(Violation::TimeRange { day_index: di, time_hours: t.time_hours });
            }
            if t.currency.is_some() != ds.vocab_sizes.currency.is_some()
                || t.country.is_some() != ds.vocab_sizes.country.is_some()
            {
                opt_bad = true;
            }
            for (k, &(field, size)) in fields.iter().enumerate() {
                if let Some(idx) = field.get(t) {
                    if (idx as usize) < size {
                        seen[k][idx as usize] = true;
                    } else if !token_bad {
                        token_bad = true;
                        violations.push(Violation::TokenRange {
                            day_index: di,
                            field,
                            index: idx,
                            vocab: size,
                        });
                    }
                }
            }
        }
        if non_finite {
            violations.push(Violation::NonFinite { day_index: di });
        }
        if opt_bad {
            violations.push(Violation::OptionalFieldMismatch { day_index: di });
        }
        if day.label.kind() != ds.task {
            violations.push(Violation::LabelKind { day_index: di });
        }
        let value = match day.label {
            Label::Class(c) => {
                if c as usize >= NUM_WEEKDAYS {
                    violations.push(Violation::LabelRange { day_index: di, label: c as f64 });
                }
                c as f64
            }
            Label::Rate(r) => {
                if !(0.0..=1.0).contains(&r) {
                    violations.push(Violation::LabelRange { day_index: di, label: r });
                }
                r
            }
        };
        label_min = label_min.min(value);
        label_max = label_max.max(value);
    }

    let coverage = fields
        .iter()
        .zip(&seen)
        .map(|(&(field, size), s)| {
            let known = size.saturating_sub(1);
            let hit = s.iter().skip(1).filter(|&&b| b).count();
            (field, if known == 0 { 0.0 } else { hit as f64 / known as f64 })
        })
        .collect();
    let (min_count, max_count) = day_counts
        .iter()
        .fold((usize::MAX, 0), |(lo, hi), &c| (lo.min(c), hi.max(c)));
    let mean_count = if day_counts.is_empty() {
        0.0
    } else {
        day_counts.iter().sum::<usize>() as f64 / day_counts.len() as f64
    };
    ValidationReport {
        min_count: if day_counts.is_empty() { 0 } else { min_count },
        max_count,
        mean_count,
        day_counts,
        coverage,
        label_min,
        label_max,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> VocabularySet {
        VocabularySet {
            mcc: Vocabulary::from_tokens(Field::Mcc, &["5411", "5812", "6011"]).unwrap(),
            txn_type: Vocabulary::from_tokens(Field::TxnType, &["pos", "atm"]).unwrap(),
            currency: None,
            country: None,
        }
    }

    fn load_str(s: &str) -> Result<Dataset, DataError> {
        read_dataset(s.as_bytes(), &vocab())
    }

    #[test]
    fn groups_rows_by_day() {
        let ds = load_str(
            "day_index,time_hours,amount,mcc,txn_type,label\n\
             1,10.5,12.0,5411,pos,3\n\
             1,11,-4.5,5812,atm,3\n\
             2,0,100,6011,pos,4\n",
        )
        .unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.days.iter().map(DayRecord::len).collect::<Vec<_>>(), vec![2, 1]);
        assert_eq!(ds.task, TaskKind::Classification);
        assert_eq!(ds.vocab_sizes.mcc, 4);
    }

    #[test]
    fn unknown_token_maps_to_zero() {
        let ds = load_str(
            "day_index,time_hours,amount,mcc,txn_type,label\n1,1,1,9999,pos,0\n",
        )
        .unwrap();
        assert_eq!(ds.days[0].transactions[0].mcc, 0);
    }

    #[test]
    fn shuffled_rows_are_sorted_by_time_with_stable_ties() {
        let rows = [
            (5.0, "5411", 1.0),
            (1.0, "5812", 2.0),
            (3.0, "6011", 3.0),
            (1.0, "6011", 4.0),
            (23.5, "5411", 5.0),
        ];
        let mut csv = String::from("day_index,time_hours,amount,mcc,txn_type,label\n");
        for (t, m, a) in rows {
            csv.push_str(&format!("7,{t},{a},{m},pos,2\n"));
        }
        let ds = load_str(&csv).unwrap();
        // Oracle: stable sort of the raw rows by time.
        let mut expected = rows.to_vec();
        expected.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let got: Vec<(f64, f64)> = ds.days[0]
            .transactions
            .iter()
            .map(|t| (t.time_hours, t.amount))
            .collect();
        let want: Vec<(f64, f64)> = expected.iter().map(|r| (r.0, r.2)).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn load_errors() {
        assert!(matches!(load_str(""), Err(DataError::Empty)));
        assert!(matches!(
            load_str("day_index,time_hours,amount,mcc,txn_type,label\n"),
            Err(DataError::Empty)
        ));
        let err = load_str(
            "day_index,time_hours,amount,mcc,txn_type,label\n1,1,1,5411,pos,0\n1,xx,1,5411,pos,0\n",
        )
        .unwrap_err();
        match err {
            DataError::Malformed { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
        let err = load_str(
            "day_index,time_hours,amount,mcc,txn_type,label\n1,1,1,5411,pos,0\n2,1,1,5411,pos,0.05\n",
        )
        .unwrap_err();
        assert!(matches!(err, DataError::MixedLabels { line: 3, .. }));
        let err = load_str("day_index,time_hours,amount,mcc,txn_type,label\n1,24,1,5411,pos,0\n")
            .unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 2, .. }));
    }

    #[test]
    fn canonical_round_trip_is_byte_identical() {
        let src = "day_index,time_hours,amount,mcc,txn_type,label\n\
                   3,0.25,-1.5,5411,atm,0.125\n\
                   3,7.125,20,6011,pos,0.125\n\
                   9,13,0.1,5812,pos,0.0\n";
        let v = vocab();
        let ds = read_dataset(src.as_bytes(), &v).unwrap();
        let mut out = Vec::new();
        write_dataset(&ds, &v, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), src);
    }

    fn toy(n: usize) -> Dataset {
        let days = (0..n as i64)
            .map(|d| {
                DayRecord::new(
                    d,
                    vec![Transaction {
                        mcc: 1,
                        txn_type: 1,
                        currency: None,
                        country: None,
                        time_hours: 1.0,
                        amount: 1.0,
                    }],
                    Label::Class((d % 7) as u8),
                )
            })
            .collect();
        Dataset {
            days,
            task: TaskKind::Classification,
            vocab_sizes: VocabSizes { mcc: 2, txn_type: 2, currency: None, country: None },
            provenance: "toy".into(),
        }
    }

    #[test]
    fn split_sizes() {
        let (a, b) = chronological_split(&toy(10), 0.8).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        assert!(a.days.last().unwrap().day_index < b.days[0].day_index);
        let (a, b) = chronological_split(&toy(5), 0.5).unwrap();
        assert_eq!((a.len(), b.len()), (2, 3));
        let (a, b) = chronological_split(&toy(2), 0.9).unwrap();
        assert_eq!((a.len(), b.len()), (1, 1));
        assert!(chronological_split(&toy(1), 0.5).is_err());
        assert!(chronological_split(&toy(10), 0.05).is_err());
        assert!(chronological_split(&toy(10), 1.0).is_err());
    }

    #[test]
    fn validate_reports_violations() {
        let mut ds = toy(3);
        ds.days[1].transactions.clear();
        let r = validate(&ds);
        assert!(r.violations.contains(&Violation::EmptyDay { day_index: 1 }));
        assert_eq!(r.day_counts, vec![1, 0, 1]);
        assert_eq!((r.min_count, r.max_count), (0, 1));

        let mut ds = toy(2);
        ds.task = TaskKind::Regression;
        for d in &mut ds.days {
            d.label = Label::Rate(0.1);
        }
        ds.days[1].label = Label::Rate(1.2);
        let r = validate(&ds);
        assert_eq!(r.violations, vec![Violation::LabelRange { day_index: 1, label: 1.2 }]);
        assert_eq!(r.label_max, 1.2);
        assert_eq!(r.coverage, vec![(Field::Mcc, 1.0), (Field::TxnType, 1.0)]);
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let v = vocab();
        let mut buf = Vec::new();
        v.write(&mut buf).unwrap();
        let back = VocabularySet::read(buf.as_slice()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.mcc.lookup("5812"), 2);
        assert_eq!(back.mcc.size(), 4);
        assert!(VocabularySet::read("field,token,index\nmcc,a,2\ntxn_type,b,1\n".as_bytes()).is_err());
    }
}
