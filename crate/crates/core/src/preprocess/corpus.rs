//! On-disk segment corpus: every normalized segment concatenated into one
//! record file, plus a JSON manifest holding per-segment statistics and split tags.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{encode_clb1, load_records, split_dataset, write_bytes, write_csv, Format, Record, SplitRatios};
use crate::error::{Error, Result};
use crate::preprocess::{preprocess_records, PreprocessConfig, Rejection, SegmentPair, SegmentSource, Stats};

pub const CORPUS_MANIFEST: &str = "segments.json";
const DATA_STEM: &str = "segment_data";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Unit that the train/validation/test partition is drawn over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitLevel {
    /// Whole records, so no subject contributes to two partitions.
    #[default]
    Record,
    Segment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub subject_id: String,
    pub offset: usize,
    pub split: Split,
    pub ppg: Stats,
    pub abp: Stats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format: Format,
    pub file: String,
    pub fs: f64,
    pub segment_len: usize,
    pub segments: Vec<CorpusEntry>,
    #[serde(default)]
    pub rejections: Vec<Rejection>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentCorpus {
    pub fs: f64,
    pub segment_len: usize,
    pub segments: Vec<SegmentPair>,
    /// Split tag of each segment, parallel to `segments`.
    pub splits: Vec<Split>,
    pub rejections: Vec<Rejection>,
}

impl SegmentCorpus {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Segments tagged `split`, in corpus order.
    pub fn part(&self, split: Split) -> Vec<SegmentPair> {
        self.segments
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == split)
            .map(|(p, _)| p.clone())
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.splits.iter().filter(|s| **s == split).count()
    }

    /// Writes the data file and manifest into `dir`.
    pub fn save(&self, dir: &Path, format: Format) -> Result<CorpusManifest> {
        if self.is_empty() {
            return Err(Error::validation("refusing to save an empty segment corpus"));
        }
        if self.splits.len() != self.segments.len() {
            return Err(Error::validation("split tags do not match the segment count"));
        }
        let mut ppg = Vec::with_capacity(self.len() * self.segment_len);
        let mut abp = Vec::with_capacity(self.len() * self.segment_len);
        let mut entries = Vec::with_capacity(self.len());
        for (seg, split) in self.segments.iter().zip(&self.splits) {
            if seg.len() != self.segment_len {
                return Err(Error::validation(format!(
                    "segment of length {} in a corpus of length-{} segments",
                    seg.len(),
                    self.segment_len
                )));
            }
            ppg.extend_from_slice(&seg.ppg);
            abp.extend_from_slice(&seg.abp);
            entries.push(CorpusEntry {
                subject_id: seg.source.subject_id.clone(),
                offset: seg.source.offset,
                split: *split,
                ppg: seg.ppg_stats,
                abp: seg.abp_stats,
            });
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let record = Record::new(ppg, abp, self.fs, DATA_STEM)?;
        let file = format!("{DATA_STEM}.{}", format.extension());
        let path = dir.join(&file);
        match format {
            Format::Csv => write_csv(&path, &record)?,
            Format::Clb1 => write_bytes(&path, &encode_clb1(&record)?)?,
        }
        let manifest = CorpusManifest {
            format,
            file,
            fs: self.fs,
            segment_len: self.segment_len,
            segments: entries,
            rejections: self.rejections.clone(),
        };
        write_bytes(
            &dir.join(CORPUS_MANIFEST),
            serde_json::to_string_pretty(&manifest)?.as_bytes(),
        )?;
        Ok(manifest)
    }

    pub fn load(dir: &Path) -> Result<SegmentCorpus> {
        let manifest_path = dir.join(CORPUS_MANIFEST);
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: CorpusManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: manifest_path.clone(),
            message: e.to_string(),
        })?;
        let mut records = load_records(&dir.join(&manifest.file), manifest.format)?;
        let record = records.pop().ok_or_else(|| Error::validation("corpus data file is empty"))?;
        let len = manifest.segment_len;
        if len == 0 || record.len() != len * manifest.segments.len() {
            return Err(Error::validation(format!(
                "corpus data holds {} samples, manifest describes {} segments of {}",
                record.len(),
                manifest.segments.len(),
                len
            )));
        }
        let mut segments = Vec::with_capacity(manifest.segments.len());
        let mut splits = Vec::with_capacity(manifest.segments.len());
        for (i, e) in manifest.segments.into_iter().enumerate() {
            let range = i * len..(i + 1) * len;
            segments.push(SegmentPair {
                ppg: record.ppg[range.clone()].to_vec(),
                abp: record.abp[range].to_vec(),
                ppg_stats: e.ppg,
                abp_stats: e.abp,
                source: SegmentSource {
                    subject_id: e.subject_id,
                    offset: e.offset,
                },
            });
            splits.push(e.split);
        }
        Ok(SegmentCorpus {
            fs: manifest.fs,
            segment_len: len,
            segments,
            splits,
            rejections: manifest.rejections,
        })
    }
}

fn tag(n: usize, ratios: SplitRatios, seed: u64) -> Result<Vec<Split>> {
    let (train, val, test) = split_dataset((0..n).collect(), ratios, seed)?;
    let mut tags = vec![Split::Train; n];
    for (idx, s) in [(train, Split::Train), (val, Split::Val), (test, Split::Test)] {
        for i in idx {
            tags[i] = s;
        }
    }
    Ok(tags)
}

/// Preprocesses `records` and tags every segment with its partition.
///
/// Segments keep record order. The corpus may be empty if every span was rejected.
pub fn build_corpus(
    records: &[Record],
    config: &PreprocessConfig,
    ratios: SplitRatios,
    level: SplitLevel,
    seed: u64,
) -> Result<SegmentCorpus> {
    let first = records
        .first()
        .ok_or_else(|| Error::validation("no records to preprocess"))?;
    if let Some(r) = records.iter().find(|r| r.fs != first.fs) {
        return Err(Error::validation(format!(
            "mixed sampling rates: {} has {} Hz, {} has {} Hz",
            first.subject_id, first.fs, r.subject_id, r.fs
        )));
    }
    let outcomes = preprocess_records(records, config)?;
    let record_tags = match level {
        SplitLevel::Record => Some(tag(records.len(), ratios, seed)?),
        SplitLevel::Segment => None,
    };
    let mut segments = Vec::new();
    let mut splits = Vec::new();
    let mut rejections = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        if let Some(tags) = &record_tags {
            splits.extend(std::iter::repeat_n(tags[i], o.segments.len()));
        }
        segments.extend(o.segments);
        rejections.extend(o.rejections);
    }
    if record_tags.is_none() && !segments.is_empty() {
        splits = tag(segments.len(), ratios, seed)?;
    }
    Ok(SegmentCorpus {
        fs: first.fs,
        segment_len: config.segment_len,
        segments,
        splits,
        rejections,
    })
}
