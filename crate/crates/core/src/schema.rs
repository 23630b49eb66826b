//! Label schema, segment records and one-hot movement descriptors.
//!
//! A [`LabelSchema`] is an ordered list of categorical attributes. Each
//! attribute owns a contiguous block of the descriptor, so a segment with
//! one value per attribute encodes to a binary vector with exactly one `1`
//! per block.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAGMYDAY_SCHEMA: &str = include_str!("../schemas/tagmyday.toml");

/// Column holding the user identity in segment files.
pub const USER_COLUMN: &str = "user_id";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct SchemaFile {
    attribute: Vec<Attribute>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSchema {
    attributes: Vec<Attribute>,
    offsets: Vec<usize>,
    lookup: Vec<HashMap<String, usize>>,
    dim: usize,
}

impl LabelSchema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::InvalidSchema("no attributes".into()));
        }
        let mut names = HashSet::new();
        let mut offsets = Vec::with_capacity(attributes.len());
        let mut lookup = Vec::with_capacity(attributes.len());
        let mut dim = 0;
        for attr in &attributes {
            if attr.name.is_empty() || attr.name == USER_COLUMN {
                return Err(Error::InvalidSchema(format!(
                    "invalid attribute name {:?}",
                    attr.name
                )));
            }
            if !names.insert(attr.name.as_str()) {
                return Err(Error::InvalidSchema(format!(
                    "duplicate attribute {:?}",
                    attr.name
                )));
            }
            if attr.values.is_empty() {
                return Err(Error::InvalidSchema(format!(
                    "attribute {:?} has no values",
                    attr.name
                )));
            }
            let mut index = HashMap::with_capacity(attr.values.len());
            for (i, v) in attr.values.iter().enumerate() {
                if index.insert(v.clone(), i).is_some() {
                    return Err(Error::InvalidSchema(format!(
                        "attribute {:?} lists value {v:?} twice",
                        attr.name
                    )));
                }
            }
            offsets.push(dim);
            lookup.push(index);
            dim += attr.values.len();
        }
        Ok(LabelSchema {
            attributes,
            offsets,
            lookup,
            dim,
        })
    }

    /// The eight-attribute TagMyDay label set, `|d| = 88`.
    pub fn tagmyday() -> Self {
        Self::from_toml(TAGMYDAY_SCHEMA).expect("bundled schema is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: SchemaFile =
            toml::from_str(text).map_err(|e| Error::InvalidSchema(e.to_string()))?;
        Self::new(file.attribute)
    }

    pub fn to_toml(&self) -> String {
        let file = SchemaFile {
            attribute: self.attributes.clone(),
        };
        toml::to_string(&file).expect("schema serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn n_attributes(&self) -> usize {
        self.attributes.len()
    }

    /// Descriptor length `|d|`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Start of each attribute's block inside a descriptor.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn value_index(&self, attribute: usize, value: &str) -> Option<usize> {
        self.lookup[attribute].get(value).copied()
    }

    pub fn encode(&self, segment: &Segment) -> Result<MovementDescriptor> {
        encode_segment(segment, self)
    }

    /// Recovers the labels of a descriptor built under this schema.
    pub fn decode(&self, descriptor: &MovementDescriptor) -> Result<Vec<String>> {
        if descriptor.dim != self.dim || descriptor.active.len() != self.n_attributes() {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: descriptor.dim,
            });
        }
        self.attributes
            .iter()
            .zip(&self.offsets)
            .zip(&descriptor.active)
            .map(|((attr, &off), &bit)| {
                bit.checked_sub(off)
                    .and_then(|i| attr.values.get(i))
                    .cloned()
                    .ok_or_else(|| {
                        Error::InvalidSchema(format!("bit {bit} outside block {:?}", attr.name))
                    })
            })
            .collect()
    }
}

/// One labeled trajectory segment: a user and one value per attribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub user_id: String,
    pub labels: Vec<String>,
}

/// Binary vector of length `|d|` with one set bit per attribute block.
///
/// Stored as the sorted positions of the set bits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MovementDescriptor {
    active: Vec<usize>,
    dim: usize,
}

impl MovementDescriptor {
    /// Builds a descriptor from set-bit positions. Positions must be strictly
    /// increasing and below `dim`.
    pub fn from_active(active: Vec<usize>, dim: usize) -> Result<Self> {
        if active.windows(2).any(|w| w[0] >= w[1]) || active.last().is_some_and(|&b| b >= dim) {
            return Err(Error::InvalidSchema(format!(
                "invalid set-bit positions {active:?} for dimension {dim}"
            )));
        }
        Ok(MovementDescriptor { active, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn count_ones(&self) -> usize {
        self.active.len()
    }

    pub fn to_dense(&self) -> Vec<u8> {
        let mut bits = vec![0u8; self.dim];
        for &i in &self.active {
            bits[i] = 1;
        }
        bits
    }
}

pub fn encode_segment(segment: &Segment, schema: &LabelSchema) -> Result<MovementDescriptor> {
    encode_labels(&segment.labels, schema, 0)
}

fn encode_labels<S: AsRef<str>>(
    labels: &[S],
    schema: &LabelSchema,
    line: usize,
) -> Result<MovementDescriptor> {
    if labels.len() != schema.n_attributes() {
        return Err(Error::Parse {
            line,
            message: format!(
                "expected {} labels, got {}",
                schema.n_attributes(),
                labels.len()
            ),
        });
    }
    let mut active = Vec::with_capacity(labels.len());
    for (a, label) in labels.iter().enumerate() {
        let label = label.as_ref();
        let idx = schema
            .value_index(a, label)
            .ok_or_else(|| Error::UnknownAttributeValue {
                line,
                attribute: schema.attributes[a].name.clone(),
                value: label.to_string(),
            })?;
        active.push(schema.offsets[a] + idx);
    }
    Ok(MovementDescriptor {
        active,
        dim: schema.dim,
    })
}

/// Users and their descriptor lists, in first-appearance order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserCorpus {
    users: Vec<String>,
    descriptors: Vec<Vec<MovementDescriptor>>,
    dim: usize,
}

impl UserCorpus {
    pub fn new(entries: Vec<(String, Vec<MovementDescriptor>)>, dim: usize) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut seen = HashSet::with_capacity(entries.len());
        let mut users = Vec::with_capacity(entries.len());
        let mut descriptors = Vec::with_capacity(entries.len());
        for (user, ds) in entries {
            if !seen.insert(user.clone()) {
                return Err(Error::DuplicateUser(user));
            }
            if ds.is_empty() {
                return Err(Error::TooFewDescriptors {
                    user,
                    count: 0,
                    needed: 1,
                });
            }
            if let Some(d) = ds.iter().find(|d| d.dim != dim) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: d.dim,
                });
            }
            users.push(user);
            descriptors.push(ds);
        }
        Ok(UserCorpus {
            users,
            descriptors,
            dim,
        })
    }

    /// Groups encoded segments by user, preserving order.
    pub fn from_segments(segments: &[Segment], schema: &LabelSchema) -> Result<Self> {
        let mut builder = CorpusBuilder::default();
        for (i, s) in segments.iter().enumerate() {
            let d = encode_labels(&s.labels, schema, i + 1)?;
            builder.push(&s.user_id, d);
        }
        builder.finish(schema.dim())
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn descriptors(&self, user: usize) -> &[MovementDescriptor] {
        &self.descriptors[user]
    }

    pub fn position(&self, user_id: &str) -> Option<usize> {
        self.users.iter().position(|u| u == user_id)
    }

    pub fn n_descriptors(&self) -> usize {
        self.descriptors.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[MovementDescriptor])> {
        self.users
            .iter()
            .map(String::as_str)
            .zip(self.descriptors.iter().map(Vec::as_slice))
    }

    pub fn into_entries(self) -> Vec<(String, Vec<MovementDescriptor>)> {
        self.users.into_iter().zip(self.descriptors).collect()
    }
}

#[derive(Default)]
struct CorpusBuilder {
    index: HashMap<String, usize>,
    entries: Vec<(String, Vec<MovementDescriptor>)>,
}

impl CorpusBuilder {
    fn push(&mut self, user: &str, d: MovementDescriptor) {
        let slot = match self.index.get(user) {
            Some(&i) => i,
            None => {
                self.index.insert(user.to_string(), self.entries.len());
                self.entries.push((user.to_string(), Vec::new()));
                self.entries.len() - 1
            }
        };
        self.entries[slot].1.push(d);
    }

    fn finish(self, dim: usize) -> Result<UserCorpus> {
        UserCorpus::new(self.entries, dim)
    }
}

/// Reads a segment CSV (header `user_id,<attribute names...>`, any column order).
pub fn load_corpus<R: Read>(source: R, schema: &LabelSchema) -> Result<UserCorpus> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let header = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let column = |name: &str| header.iter().position(|h| h.trim() == name);
    let user_col = column(USER_COLUMN).ok_or_else(|| Error::Parse {
        line: 1,
        message: format!("missing column {USER_COLUMN:?}"),
    })?;
    let mut attr_cols = Vec::with_capacity(schema.n_attributes());
    for attr in schema.attributes() {
        attr_cols.push(column(&attr.name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column {:?}", attr.name),
        })?);
    }
    if header.len() != schema.n_attributes() + 1 {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "expected {} columns, header has {}",
                schema.n_attributes() + 1,
                header.len()
            ),
        });
    }

    let mut builder = CorpusBuilder::default();
    let mut record = csv::StringRecord::new();
    loop {
        let more = reader.read_record(&mut record).map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, got {}", header.len(), record.len()),
            });
        }
        let user = &record[user_col];
        if user.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty user_id".into(),
            });
        }
        let mut labels = Vec::with_capacity(attr_cols.len());
        for (a, &c) in attr_cols.iter().enumerate() {
            let v = &record[c];
            if v.is_empty() {
                return Err(Error::Parse {
                    line,
                    message: format!(
                        "missing value for attribute {:?}",
                        schema.attributes[a].name
                    ),
                });
            }
            labels.push(v);
        }
        let d = encode_labels(&labels, schema, line)?;
        builder.push(user, d);
    }
    builder.finish(schema.dim())
}

pub fn load_corpus_file(path: impl AsRef<Path>, schema: &LabelSchema) -> Result<UserCorpus> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_corpus(std::io::BufReader::new(file), schema)
}

/// Writes segments in the CSV layout [`load_corpus`] reads.
pub fn write_segments<W: Write>(sink: W, schema: &LabelSchema, segments: &[Segment]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    let mut header = vec![USER_COLUMN];
    header.extend(schema.attributes().iter().map(|a| a.name.as_str()));
    writer.write_record(&header)?;
    for s in segments {
        writer.write_record(
            std::iter::once(s.user_id.as_str()).chain(s.labels.iter().map(String::as_str)),
        )?;
    }
    writer.flush().map_err(|e| Error::io("<segments>", e))?;
    Ok(())
}
