//! Dataset files: JSONL sample records plus a manifest.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VlqaError};
use crate::language::{SyntaxTree, TreeLayout, TreeNode};
use crate::parallel::Execution;
use crate::synth::{self, SampleRecord, Template, TEST_STREAM_BASE};
use crate::visual::RegionInput;

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestDims {
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "K")]
    pub k: Vec<usize>,
    #[serde(rename = "C")]
    pub c: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub vocab: Vec<String>,
    pub answer_vocab: Vec<String>,
    /// Task category of each answer, aligned with `answer_vocab`.
    pub answer_categories: Vec<String>,
    pub categories: Vec<String>,
    pub classes: Vec<String>,
    pub states: Vec<String>,
    pub dims: ManifestDims,
    pub templates: Vec<String>,
    pub seed: u64,
    pub noise: f64,
    pub train_count: usize,
    pub test_count: usize,
}

impl Manifest {
    pub fn synthetic(seed: u64, noise: f64, train_count: usize, test_count: usize, channels: usize) -> Self {
        Self {
            vocab: synth::question_vocab(),
            answer_vocab: synth::answer_vocab(),
            answer_categories: synth::answer_categories()
                .into_iter()
                .map(|c| synth::CATEGORIES[c].to_string())
                .collect(),
            categories: synth::CATEGORIES.iter().map(|s| s.to_string()).collect(),
            classes: synth::CLASSES.iter().map(|s| s.to_string()).collect(),
            states: synth::STATES.iter().map(|s| s.to_string()).collect(),
            dims: ManifestDims {
                s: synth::FEATURE_DIMS.len(),
                k: synth::FEATURE_DIMS.to_vec(),
                c: channels,
            },
            templates: Template::ALL.iter().map(|t| t.name().to_string()).collect(),
            seed,
            noise,
            train_count,
            test_count,
        }
    }

    pub fn category_index(&self, name: &str) -> Result<usize> {
        self.categories
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| VlqaError::Category(format!("{name:?} is not one of {:?}", self.categories)))
    }

    /// Category index of every answer.
    pub fn answer_category_indices(&self) -> Result<Vec<usize>> {
        self.answer_categories.iter().map(|c| self.category_index(c)).collect()
    }

    pub fn token_index(&self, word: &str) -> Result<usize> {
        self.vocab
            .iter()
            .position(|w| w == word)
            .ok_or_else(|| VlqaError::Vocabulary(format!("token {word:?} not in the manifest vocabulary")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| VlqaError::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| VlqaError::Data(format!("{}: {e}", path.display())))?;
        if m.answer_categories.len() != m.answer_vocab.len() {
            return Err(VlqaError::Data(format!(
                "manifest lists {} answer categories for {} answers",
                m.answer_categories.len(),
                m.answer_vocab.len()
            )));
        }
        if m.answer_vocab.is_empty() {
            return Err(VlqaError::Data("manifest has an empty answer vocabulary".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| VlqaError::io(path, e))
    }
}

/// A record resolved against the manifest, ready for the model.
#[derive(Clone, Debug)]
pub struct Sample {
    pub regions: Vec<RegionInput>,
    pub tree: SyntaxTree,
    pub layout: TreeLayout,
    pub category: usize,
    pub answer: usize,
    pub answer_category: usize,
    pub template: Option<String>,
}

impl Sample {
    pub fn from_record(record: &SampleRecord, manifest: &Manifest) -> Result<Self> {
        if record.regions.is_empty() {
            return Err(VlqaError::Data("sample without regions".into()));
        }
        let regions = record
            .regions
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let object_class = manifest
                    .classes
                    .iter()
                    .position(|c| *c == r.class)
                    .ok_or_else(|| VlqaError::Data(format!("region {i} has unknown class {:?}", r.class)))?;
                let region = RegionInput {
                    region_id: i,
                    features: vec![r.feats_s1.clone(), r.feats_s2.clone()],
                    bbox: r.bbox,
                    object_class,
                };
                region.validate(&manifest.dims.k)?;
                Ok(region)
            })
            .collect::<Result<Vec<_>>>()?;

        let tree = match &record.tree {
            Some(t) => SyntaxTree {
                root: t.root,
                nodes: t
                    .nodes
                    .iter()
                    .map(|n| {
                        Ok(TreeNode {
                            id: n.id,
                            children: n.children.clone(),
                            scores: n.scores.clone(),
                            token: n.token.as_deref().map(|w| manifest.token_index(w)).transpose()?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            },
            None => {
                let ids = record
                    .question
                    .split_whitespace()
                    .map(|w| manifest.token_index(w))
                    .collect::<Result<Vec<_>>>()?;
                SyntaxTree::right_branching(&ids)?
            }
        };
        let layout = tree.layout()?;
        let category = manifest.category_index(&record.category)?;
        if record.answer >= manifest.answer_vocab.len() {
            return Err(VlqaError::Vocabulary(format!(
                "answer index {} outside {} answers",
                record.answer,
                manifest.answer_vocab.len()
            )));
        }
        let answer_category = manifest.category_index(&record.answer_category)?;
        Ok(Self {
            regions,
            tree,
            layout,
            category,
            answer: record.answer,
            answer_category,
            template: record.template.clone(),
        })
    }
}

pub fn write_jsonl(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| VlqaError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| VlqaError::io(path, e))?;
    }
    w.flush().map_err(|e| VlqaError::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<SampleRecord>> {
    let file = std::fs::File::open(path).map_err(|e| VlqaError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| VlqaError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line)
            .map_err(|e| VlqaError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(r);
    }
    Ok(out)
}

pub fn resolve(records: &[SampleRecord], manifest: &Manifest) -> Result<Vec<Sample>> {
    records.iter().map(|r| Sample::from_record(r, manifest)).collect()
}

/// Samples per category name, in manifest order.
pub fn category_histogram(records: &[SampleRecord], manifest: &Manifest) -> BTreeMap<String, usize> {
    let mut h: BTreeMap<String, usize> = manifest.categories.iter().map(|c| (c.clone(), 0)).collect();
    for r in records {
        *h.entry(r.category.clone()).or_default() += 1;
    }
    h
}

/// Train and held-out splits with their manifest.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = Manifest::load(&dir.join(MANIFEST_FILE))?;
        let train = resolve(&read_jsonl(&dir.join(TRAIN_FILE))?, &manifest)?;
        let test = resolve(&read_jsonl(&dir.join(TEST_FILE))?, &manifest)?;
        Ok(Self { manifest, train, test })
    }

    /// Generate in memory without touching disk.
    pub fn synthetic(seed: u64, train_count: usize, test_count: usize, noise: f64, channels: usize) -> Result<Self> {
        let manifest = Manifest::synthetic(seed, noise, train_count, test_count, channels);
        let (train, test) = synthetic_records(seed, train_count, test_count, noise)?;
        Ok(Self {
            train: resolve(&train, &manifest)?,
            test: resolve(&test, &manifest)?,
            manifest,
        })
    }
}

pub fn synthetic_records(
    seed: u64,
    train_count: usize,
    test_count: usize,
    noise: f64,
) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>)> {
    let strip = |v: Vec<synth::GeneratedSample>| v.into_iter().map(|g| g.record).collect::<Vec<_>>();
    let train = synth::generate_streams(seed, 0, train_count, noise, Execution::Auto)?;
    let test = synth::generate_streams(seed, TEST_STREAM_BASE, test_count, noise, Execution::Auto)?;
    Ok((strip(train), strip(test)))
}

/// Write `train.jsonl`, `test.jsonl` and `manifest.json` into `dir`.
pub fn write_synthetic(
    dir: &Path,
    seed: u64,
    train_count: usize,
    test_count: usize,
    noise: f64,
    channels: usize,
) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>, Manifest)> {
    let (train, test) = synthetic_records(seed, train_count, test_count, noise)?;
    std::fs::create_dir_all(dir).map_err(|e| VlqaError::io(dir, e))?;
    let manifest = Manifest::synthetic(seed, noise, train_count, test_count, channels);
    write_jsonl(&dir.join(TRAIN_FILE), &train)?;
    write_jsonl(&dir.join(TEST_FILE), &test)?;
    manifest.save(&dir.join(MANIFEST_FILE))?;
    Ok((train, test, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_resolve_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (train, _, m) = write_synthetic(dir.path(), 5, 20, 5, 0.1, 6).unwrap();
        let back = read_jsonl(&dir.path().join(TRAIN_FILE)).unwrap();
        assert_eq!(back, train);
        assert_eq!(Manifest::load(&dir.path().join(MANIFEST_FILE)).unwrap(), m);
        let ds = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds.train.len(), 20);
        assert_eq!(ds.test.len(), 5);
    }

    #[test]
    fn missing_tree_falls_back_to_right_branching() {
        let m = Manifest::synthetic(1, 0.0, 1, 1, 6);
        let mut r = synth::generate(1, 1, 0.0).unwrap().remove(0);
        r.tree = None;
        let s = Sample::from_record(&r, &m).unwrap();
        assert_eq!(s.layout.leaf_tokens.len(), r.question.split_whitespace().count());
    }

    #[test]
    fn unknown_category_and_token() {
        let m = Manifest::synthetic(1, 0.0, 1, 1, 6);
        let mut r = synth::generate(1, 1, 0.0).unwrap().remove(0);
        r.category = "welding".into();
        assert!(matches!(Sample::from_record(&r, &m), Err(VlqaError::Category(_))));
        let mut r = synth::generate(1, 1, 0.0).unwrap().remove(0);
        r.tree = None;
        r.question = "what is flux".into();
        assert!(matches!(Sample::from_record(&r, &m), Err(VlqaError::Vocabulary(_))));
    }
}
