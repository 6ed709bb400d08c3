use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use super::{CodecError, Performance};
use crate::score::Score;

const HEADER: [&str; 2] = ["score_note_id", "perf_note_index"];

/// Injective map from score note ids to indices into `Performance::notes`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Alignment {
    pairs: BTreeMap<String, usize>,
}

impl Alignment {
    /// Builds an alignment without validation.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, usize)>) -> Self {
        Self { pairs: pairs.into_iter().collect() }
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.pairs.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.pairs.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Reads and validates an alignment CSV against its score and performance.
pub fn read_alignment(csv_bytes: &[u8], score: &Score, performance: &Performance) -> Result<Alignment, CodecError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(csv_bytes);
    let header = reader.headers().map_err(|e| CodecError::Alignment(e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(CodecError::Alignment(format!("expected header \"{}\"", HEADER.join(","))));
    }
    let mut pairs = BTreeMap::new();
    let mut used: HashMap<usize, String> = HashMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CodecError::Alignment(e.to_string()))?;
        let row = line + 2;
        let id = record.get(0).unwrap_or("").to_owned();
        let index: usize = record
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|_| CodecError::Alignment(format!("line {row}: perf_note_index must be a non-negative integer")))?;
        if score.note_index(&id).is_none() {
            return Err(CodecError::Alignment(format!("line {row}: unknown score note id {id:?}")));
        }
        if index >= performance.len() {
            return Err(CodecError::Alignment(format!(
                "line {row}: perf_note_index {index} out of range (performance has {} notes)",
                performance.len()
            )));
        }
        if pairs.contains_key(&id) {
            return Err(CodecError::Alignment(format!("line {row}: duplicate score note id {id:?}")));
        }
        if let Some(other) = used.insert(index, id.clone()) {
            return Err(CodecError::Alignment(format!(
                "line {row}: alignment not injective: {id:?} and {other:?} both map to performed note {index}"
            )));
        }
        pairs.insert(id, index);
    }
    Ok(Alignment { pairs })
}

/// Writes an alignment as CSV, rows ordered by performed note index.
pub fn write_alignment<W: Write>(alignment: &Alignment, writer: W) -> Result<(), CodecError> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| CodecError::Alignment(e.to_string());
    w.write_record(HEADER).map_err(err)?;
    let mut rows: Vec<_> = alignment.iter().collect();
    rows.sort_by_key(|&(id, k)| (k, id.to_owned()));
    for (id, k) in rows {
        w.write_record([id, &k.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| CodecError::Alignment(e.to_string()))
}
