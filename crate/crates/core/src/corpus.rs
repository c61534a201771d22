//! The high-fidelity labeled corpus: close-up plant photos with one of four
//! disease classes, stored as a one-hot CSV table.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Image;

/// Header required verbatim on every label table.
pub const LABEL_HEADER: &str = "image_id,healthy,multiple_diseases,rust,scab";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("label table is empty; expected header `{LABEL_HEADER}`")]
    MissingHeader,
    #[error("unexpected header `{found}`; expected `{LABEL_HEADER}`")]
    BadHeader { found: String },
    #[error("line {line} ({image_id}): expected exactly one class flag set, found {flags_set}")]
    Schema {
        line: u64,
        image_id: String,
        flags_set: usize,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: duplicate image_id `{image_id}`")]
    Duplicate { line: u64, image_id: String },
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("image `{image_id}` not available: {reason}")]
    MissingImage { image_id: String, reason: String },
    #[error("failed to decode image `{image_id}`: {source}")]
    Decode {
        image_id: String,
        #[source]
        source: image::ImageError,
    },
}

/// The four diagnosis classes, in label-table column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiseaseClass {
    Healthy,
    MultipleDiseases,
    Rust,
    Scab,
}

impl DiseaseClass {
    pub const ALL: [DiseaseClass; 4] = [
        DiseaseClass::Healthy,
        DiseaseClass::MultipleDiseases,
        DiseaseClass::Rust,
        DiseaseClass::Scab,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DiseaseClass::Healthy => "healthy",
            DiseaseClass::MultipleDiseases => "multiple_diseases",
            DiseaseClass::Rust => "rust",
            DiseaseClass::Scab => "scab",
        }
    }

    /// 0 for healthy plants, 1 for any disease.
    pub fn sick_flag(self) -> u8 {
        u8::from(self != DiseaseClass::Healthy)
    }
}

impl fmt::Display for DiseaseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DiseaseClass {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| CorpusError::UnknownClass(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HighFidelityRecord {
    pub image_id: String,
    pub label: DiseaseClass,
}

impl HighFidelityRecord {
    pub fn new(image_id: impl Into<String>, label: DiseaseClass) -> Self {
        Self {
            image_id: image_id.into(),
            label,
        }
    }
}

/// Per-class image counts. All four classes are always present.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassDistribution {
    counts: [usize; 4],
}

impl ClassDistribution {
    pub fn from_counts(counts: [usize; 4]) -> Self {
        Self { counts }
    }

    pub fn get(&self, class: DiseaseClass) -> usize {
        self.counts[class.index()]
    }

    pub fn counts(&self) -> [usize; 4] {
        self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn max(&self) -> usize {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (DiseaseClass, usize)> + '_ {
        DiseaseClass::ALL.into_iter().zip(self.counts)
    }

    pub fn is_uniform(&self) -> bool {
        self.counts.iter().all(|&c| c == self.counts[0])
    }
}

impl Serialize for ClassDistribution {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(4))?;
        for (class, count) in self.iter() {
            map.serialize_entry(class.as_str(), &count)?;
        }
        map.end()
    }
}

/// Parse a one-hot label table. Accepts LF or CRLF line endings.
pub fn parse_label_table(raw: &str) -> Result<Vec<HighFidelityRecord>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(raw.as_bytes());
    let mut rows = reader.records();

    let header = match rows.next() {
        None => return Err(CorpusError::MissingHeader),
        Some(row) => row.map_err(|e| CorpusError::Parse {
            line: 1,
            message: e.to_string(),
        })?,
    };
    let found = header.iter().collect::<Vec<_>>().join(",");
    if found != LABEL_HEADER {
        return Err(CorpusError::BadHeader { found });
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in rows {
        let row = row.map_err(|e| CorpusError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() == 1 && row[0].is_empty() {
            continue;
        }
        if row.len() != 5 {
            return Err(CorpusError::Parse {
                line,
                message: format!("expected 5 fields, found {}", row.len()),
            });
        }
        let image_id = &row[0];
        if image_id.is_empty() {
            return Err(CorpusError::Parse {
                line,
                message: "empty image_id".into(),
            });
        }
        let mut set = Vec::new();
        for (k, flag) in row.iter().skip(1).enumerate() {
            match flag {
                "0" => {}
                "1" => set.push(k),
                other => {
                    return Err(CorpusError::Parse {
                        line,
                        message: format!("non-binary flag `{other}` for {image_id}"),
                    })
                }
            }
        }
        if set.len() != 1 {
            return Err(CorpusError::Schema {
                line,
                image_id: image_id.to_string(),
                flags_set: set.len(),
            });
        }
        if !seen.insert(image_id.to_string()) {
            return Err(CorpusError::Duplicate {
                line,
                image_id: image_id.to_string(),
            });
        }
        records.push(HighFidelityRecord::new(
            image_id,
            DiseaseClass::ALL[set[0]],
        ));
    }
    Ok(records)
}

/// Serialize records back into the one-hot table format (LF line endings).
pub fn write_label_table(records: &[HighFidelityRecord]) -> String {
    let mut out = String::with_capacity(32 * (records.len() + 1));
    out.push_str(LABEL_HEADER);
    out.push('\n');
    for record in records {
        out.push_str(&record.image_id);
        for class in DiseaseClass::ALL {
            out.push_str(if class == record.label { ",1" } else { ",0" });
        }
        out.push('\n');
    }
    out
}

pub fn class_distribution(records: &[HighFidelityRecord]) -> ClassDistribution {
    let mut counts = [0usize; 4];
    for record in records {
        counts[record.label.index()] += 1;
    }
    ClassDistribution { counts }
}

pub fn binarize(record: &HighFidelityRecord) -> u8 {
    record.label.sick_flag()
}

/// Lookup from image id to ground-truth class.
pub fn label_index(records: &[HighFidelityRecord]) -> HashMap<String, DiseaseClass> {
    records
        .iter()
        .map(|r| (r.image_id.clone(), r.label))
        .collect()
}

/// Anything that can produce the pixels of a high-fidelity image by id.
pub trait PixelSource: Sync {
    fn load(&self, image_id: &str) -> Result<Image, CorpusError>;
}

/// Images resolved lazily against a root directory (`<root>/<image_id>`).
#[derive(Debug, Clone)]
pub struct ImageStore {
    root: PathBuf,
}

impl ImageStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_of(&self, image_id: &str) -> PathBuf {
        self.root.join(image_id)
    }
}

impl PixelSource for ImageStore {
    fn load(&self, image_id: &str) -> Result<Image, CorpusError> {
        let path = self.path_of(image_id);
        let bytes = std::fs::read(&path).map_err(|e| CorpusError::MissingImage {
            image_id: image_id.to_string(),
            reason: format!("{}: {e}", path.display()),
        })?;
        image::load_from_memory(&bytes)
            .map(|img| img.to_rgb8())
            .map_err(|source| CorpusError::Decode {
                image_id: image_id.to_string(),
                source,
            })
    }
}

/// Images held in memory, keyed by id.
#[derive(Debug, Clone, Default)]
pub struct InMemoryImages {
    images: HashMap<String, Image>,
}

impl InMemoryImages {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image_id: impl Into<String>, image: Image) {
        self.images.insert(image_id.into(), image);
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

impl PixelSource for InMemoryImages {
    fn load(&self, image_id: &str) -> Result<Image, CorpusError> {
        self.images
            .get(image_id)
            .cloned()
            .ok_or_else(|| CorpusError::MissingImage {
                image_id: image_id.to_string(),
                reason: "not in memory store".into(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(rows: &[&str]) -> String {
        let mut s = String::from(LABEL_HEADER);
        for r in rows {
            s.push('\n');
            s.push_str(r);
        }
        s
    }

    #[test]
    fn parses_one_hot_rows() {
        let records = parse_label_table(&table(&[
            "Train_0.jpg,0,0,0,1",
            "Train_1.jpg,0,1,0,0",
            "Train_2.jpg,1,0,0,0",
            "Train_3.jpg,0,0,1,0",
        ]))
        .unwrap();
        assert_eq!(records[0], HighFidelityRecord::new("Train_0.jpg", DiseaseClass::Scab));
        assert_eq!(records[1].label, DiseaseClass::MultipleDiseases);
        assert_eq!(records[2], HighFidelityRecord::new("Train_2.jpg", DiseaseClass::Healthy));
        assert_eq!(records[3].label, DiseaseClass::Rust);
    }

    #[test]
    fn accepts_crlf_and_trailing_newline() {
        let raw = format!("{LABEL_HEADER}\r\nA.jpg,1,0,0,0\r\nB.jpg,0,0,0,1\r\n");
        let records = parse_label_table(&raw).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].image_id, "B.jpg");
    }

    #[test]
    fn two_flags_is_a_schema_violation() {
        let err = parse_label_table(&table(&["Train_0.jpg,0,0,0,1", "X.jpg,1,1,0,0"])).unwrap_err();
        match err {
            CorpusError::Schema {
                line,
                image_id,
                flags_set,
            } => {
                assert_eq!(line, 3);
                assert_eq!(image_id, "X.jpg");
                assert_eq!(flags_set, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_label_table(&table(&["Z.jpg,0,0,0,0"])),
            Err(CorpusError::Schema { flags_set: 0, .. })
        ));
    }

    #[test]
    fn rejects_non_binary_flags_and_duplicates() {
        assert!(matches!(
            parse_label_table(&table(&["A.jpg,0,2,0,0"])),
            Err(CorpusError::Parse { .. })
        ));
        assert!(matches!(
            parse_label_table(&table(&["A.jpg,0,yes,0,0"])),
            Err(CorpusError::Parse { .. })
        ));
        assert!(matches!(
            parse_label_table(&table(&["A.jpg,1,0,0,0", "A.jpg,0,0,1,0"])),
            Err(CorpusError::Duplicate { line: 3, .. })
        ));
    }

    #[test]
    fn header_is_validated_verbatim() {
        assert!(matches!(parse_label_table(""), Err(CorpusError::MissingHeader)));
        assert!(matches!(
            parse_label_table("image_id,healthy,rust,multiple_diseases,scab\nA,1,0,0,0"),
            Err(CorpusError::BadHeader { .. })
        ));
    }

    #[test]
    fn distribution_of_fixture() {
        // 2 healthy, 3 rust, 2 scab, counted by hand
        let labels = [
            DiseaseClass::Rust,
            DiseaseClass::Healthy,
            DiseaseClass::Scab,
            DiseaseClass::Rust,
            DiseaseClass::Healthy,
            DiseaseClass::Scab,
            DiseaseClass::Rust,
        ];
        let records: Vec<_> = labels
            .iter()
            .enumerate()
            .map(|(k, &l)| HighFidelityRecord::new(format!("F_{k}.jpg"), l))
            .collect();
        let dist = class_distribution(&records);
        assert_eq!(dist.counts(), [2, 0, 3, 2]);
        assert_eq!(class_distribution(&[]).counts(), [0; 4]);
    }

    #[test]
    fn binarize_maps_any_disease_to_one() {
        let r = |c| HighFidelityRecord::new("x", c);
        assert_eq!(binarize(&r(DiseaseClass::Healthy)), 0);
        assert_eq!(binarize(&r(DiseaseClass::Rust)), 1);
        assert_eq!(binarize(&r(DiseaseClass::Scab)), 1);
        assert_eq!(binarize(&r(DiseaseClass::MultipleDiseases)), 1);
    }

    #[test]
    fn distribution_serializes_as_named_map() {
        let json = serde_json::to_string(&ClassDistribution::from_counts([416, 91, 622, 592])).unwrap();
        assert_eq!(
            json,
            r#"{"healthy":416,"multiple_diseases":91,"rust":622,"scab":592}"#
        );
    }

    #[test]
    fn missing_pixels_surface_on_load_only() {
        let store = ImageStore::new("/nonexistent/root");
        let err = store.load("Train_0.jpg").unwrap_err();
        assert!(matches!(err, CorpusError::MissingImage { .. }));
    }

    fn arb_records() -> impl Strategy<Value = Vec<HighFidelityRecord>> {
        prop::collection::vec(0usize..4, 0..60).prop_map(|labels| {
            labels
                .into_iter()
                .enumerate()
                .map(|(k, l)| HighFidelityRecord::new(format!("Train_{k}.jpg"), DiseaseClass::ALL[l]))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn write_parse_round_trip(records in arb_records()) {
            let text = write_label_table(&records);
            prop_assert_eq!(parse_label_table(&text).unwrap(), records.clone());
            let dist = class_distribution(&records);
            prop_assert_eq!(dist.total(), records.len());
            for r in &records {
                prop_assert_eq!(binarize(r) == 0, r.label == DiseaseClass::Healthy);
            }
        }
    }
}
