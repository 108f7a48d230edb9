//! Construction of chiral-action benchmark groups.
//!
//! A chiral group is a (verb+, verb-, noun-group) triplet defining one binary
//! classification task: label 1 for the positive verb, 0 for its temporal
//! opposite. Videos join a group when their verb matches either side exactly
//! (case-folded, trimmed) and their noun is in the group's noun list; the
//! train/test split is inherited from the source annotations.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::data::Split;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NounGroup {
    pub group_name: String,
    pub nouns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AntonymEntry {
    pub verb_pos: String,
    pub verb_neg: String,
    pub noun_groups: Vec<NounGroup>,
}

/// Curated verb antonym pairs with their noun groupings.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AntonymConfig {
    pub entries: Vec<AntonymEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChiralError {
    SelfAntonym { verb: String },
    DuplicateKey { verb_pos: String, verb_neg: String, group_name: String },
    EmptyNounList { group_name: String },
}

impl fmt::Display for ChiralError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChiralError::SelfAntonym { verb } => {
                write!(f, "verb '{verb}' is listed as its own antonym")
            }
            ChiralError::DuplicateKey { verb_pos, verb_neg, group_name } => {
                write!(f, "duplicate triplet ({verb_pos}, {verb_neg}, {group_name})")
            }
            ChiralError::EmptyNounList { group_name } => {
                write!(f, "noun group '{group_name}' has no nouns")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ChiralError {}

fn canon(s: &str) -> String {
    s.trim().to_lowercase()
}

impl AntonymConfig {
    /// Reject self-antonyms, empty noun lists, and duplicate triplet keys.
    pub fn validate(&self) -> Result<(), ChiralError> {
        let mut seen: Vec<(String, String, String)> = Vec::new();
        for entry in &self.entries {
            let vp = canon(&entry.verb_pos);
            let vn = canon(&entry.verb_neg);
            if vp == vn {
                return Err(ChiralError::SelfAntonym { verb: entry.verb_pos.clone() });
            }
            for group in &entry.noun_groups {
                if group.nouns.is_empty() {
                    return Err(ChiralError::EmptyNounList {
                        group_name: group.group_name.clone(),
                    });
                }
                let key = (vp.clone(), vn.clone(), canon(&group.group_name));
                if seen.contains(&key) {
                    return Err(ChiralError::DuplicateKey {
                        verb_pos: entry.verb_pos.clone(),
                        verb_neg: entry.verb_neg.clone(),
                        group_name: group.group_name.clone(),
                    });
                }
                seen.push(key);
            }
        }
        Ok(())
    }
}

/// Annotation row for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoMeta {
    pub video_id: String,
    pub verb: Option<String>,
    pub noun: Option<String>,
    pub split: Split,
}

/// One binary task: (video_id, label) lists, label 1 for `verb_pos`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChiralGroup {
    pub verb_pos: String,
    pub verb_neg: String,
    pub group_name: String,
    pub train: Vec<(String, u8)>,
    pub test: Vec<(String, u8)>,
}

impl ChiralGroup {
    pub fn name(&self) -> String {
        alloc::format!("{}-vs-{}.{}", self.verb_pos, self.verb_neg, self.group_name)
    }
}

/// Groups built from a manifest, plus a reason per dropped group.
pub struct ChiralBuild {
    pub groups: Vec<ChiralGroup>,
    pub dropped: Vec<String>,
}

/// Assign videos to groups. A video whose verb/noun matches several entries
/// joins each of them; groups lacking both classes in train are dropped.
pub fn build_chiral_groups(videos: &[VideoMeta], config: &AntonymConfig) -> ChiralBuild {
    let mut groups = Vec::new();
    let mut dropped = Vec::new();
    for entry in &config.entries {
        let vp = canon(&entry.verb_pos);
        let vn = canon(&entry.verb_neg);
        for noun_group in &entry.noun_groups {
            let nouns: Vec<String> = noun_group.nouns.iter().map(|n| canon(n)).collect();
            let mut group = ChiralGroup {
                verb_pos: entry.verb_pos.clone(),
                verb_neg: entry.verb_neg.clone(),
                group_name: noun_group.group_name.clone(),
                train: Vec::new(),
                test: Vec::new(),
            };
            for video in videos {
                let verb = match &video.verb {
                    Some(v) => canon(v),
                    None => continue,
                };
                let noun = match &video.noun {
                    Some(n) => canon(n),
                    None => continue,
                };
                let label = if verb == vp {
                    1
                } else if verb == vn {
                    0
                } else {
                    continue;
                };
                if !nouns.contains(&noun) {
                    continue;
                }
                match video.split {
                    Split::Train => group.train.push((video.video_id.clone(), label)),
                    Split::Test => group.test.push((video.video_id.clone(), label)),
                }
            }
            let has_pos = group.train.iter().any(|(_, l)| *l == 1);
            let has_neg = group.train.iter().any(|(_, l)| *l == 0);
            if has_pos && has_neg {
                groups.push(group);
            } else {
                dropped.push(alloc::format!(
                    "{}: train split lacks {} examples",
                    group.name(),
                    if has_pos { "negative" } else { "positive" }
                ));
            }
        }
    }
    ChiralBuild { groups, dropped }
}

/// Aggregate counts over a group list.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroupStats {
    pub n_groups: usize,
    pub total_train: usize,
    pub total_test: usize,
    pub mean_train_per_group: f64,
    pub mean_test_per_group: f64,
}

pub fn group_stats(groups: &[ChiralGroup]) -> GroupStats {
    let n = groups.len();
    let total_train: usize = groups.iter().map(|g| g.train.len()).sum();
    let total_test: usize = groups.iter().map(|g| g.test.len()).sum();
    GroupStats {
        n_groups: n,
        total_train,
        total_test,
        mean_train_per_group: if n == 0 { 0.0 } else { total_train as f64 / n as f64 },
        mean_test_per_group: if n == 0 { 0.0 } else { total_test as f64 / n as f64 },
    }
}
