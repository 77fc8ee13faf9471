//! Rewrites questions into one fixed clinical template.
//!
//! A finding is recognized by dictionary lookup: every canonical name and
//! synonym is matched case-insensitively on word boundaries, the longest
//! match (words, then characters) wins, and equal matches resolve to the
//! alphabetically first canonical finding. Text without a match passes
//! through unchanged.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interchange::{read_json, QuestionRecord};

const DEFAULT_DICTIONARY: &[(&str, &[&str])] = &[
    ("atelectasis", &["partial lung collapse", "collapsed alveoli", "atelectatic changes"]),
    ("cardiomegaly", &["big heart", "enlarged heart", "heart enlargement", "cardiac enlargement", "enlarged cardiac silhouette"]),
    ("consolidation", &["lung consolidation", "airspace consolidation", "airspace disease"]),
    ("edema", &["pulmonary edema", "pulmonary oedema", "oedema", "fluid in the lungs", "fluid in the lung", "lung edema"]),
    ("emphysema", &["emphysematous changes", "emphysematous lungs"]),
    ("fracture", &["fractures", "broken rib", "broken ribs", "rib fracture", "broken bone"]),
    ("hyperinflation", &["hyperinflated lungs", "overinflated lungs", "hyperexpanded lungs"]),
    ("infiltrate", &["infiltrates", "pulmonary infiltrate", "infiltration"]),
    ("mass", &["lung mass", "pulmonary mass", "tumor", "tumour"]),
    ("nodule", &["nodules", "lung nodule", "pulmonary nodule", "spot on the lung"]),
    ("opacity", &["opacities", "lung opacity", "shadow on the lung", "haziness"]),
    ("pleural effusion", &["fluid buildup", "fluid build up", "effusion", "pleural fluid", "fluid around the lung", "fluid around the lungs", "water on the lung"]),
    ("pneumonia", &["lung infection", "chest infection"]),
    ("pneumothorax", &["collapsed lung", "air around the lung", "air in the pleural space", "pneumothoraces"]),
];

pub fn template(finding: &str) -> String {
    format!("Is {finding} present in this chest radiograph?")
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone)]
struct Phrase {
    words: Vec<String>,
    chars: usize,
    finding: String,
}

/// Canonical finding → synonyms. The canonical name always matches itself.
#[derive(Debug, Clone)]
pub struct FindingDictionary {
    entries: BTreeMap<String, Vec<String>>,
    phrases: Vec<Phrase>,
}

impl Default for FindingDictionary {
    fn default() -> Self {
        let map = DEFAULT_DICTIONARY
            .iter()
            .map(|(f, syn)| (f.to_string(), syn.iter().map(|s| s.to_string()).collect()))
            .collect();
        FindingDictionary::new(map).expect("default dictionary is consistent")
    }
}

impl FindingDictionary {
    /// Rejects empty phrases, phrases claimed by two findings, and findings
    /// whose own template would not extract back to them.
    pub fn new(entries: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let mut owner: BTreeMap<Vec<String>, String> = BTreeMap::new();
        let mut phrases = Vec::new();
        for (finding, synonyms) in &entries {
            for s in std::iter::once(finding).chain(synonyms) {
                let w = words(s);
                if w.is_empty() {
                    return Err(Error::invalid(format!("finding {finding:?}: empty phrase {s:?}")));
                }
                match owner.get(&w) {
                    Some(f) if f != finding => {
                        return Err(Error::invalid(format!(
                            "phrase {s:?} belongs to both {f:?} and {finding:?}"
                        )))
                    }
                    Some(_) => continue,
                    None => {}
                }
                owner.insert(w.clone(), finding.clone());
                phrases.push(Phrase {
                    chars: w.iter().map(String::len).sum::<usize>() + w.len() - 1,
                    words: w,
                    finding: finding.clone(),
                });
            }
        }
        let dict = FindingDictionary { entries, phrases };
        for finding in dict.entries.keys() {
            let got = dict.extract_finding(&template(finding));
            if got != Some(finding.as_str()) {
                return Err(Error::invalid(format!(
                    "template for {finding:?} extracts {got:?}; the dictionary is ambiguous"
                )));
            }
        }
        Ok(dict)
    }

    /// Reads `{canonical: [synonyms]}` JSON.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        FindingDictionary::new(read_json(path)?)
    }

    pub fn entries(&self) -> &BTreeMap<String, Vec<String>> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn extract_finding(&self, text: &str) -> Option<&str> {
        let tokens = words(text);
        let mut best: Option<&Phrase> = None;
        for p in &self.phrases {
            let n = p.words.len();
            if n > tokens.len() || !tokens.windows(n).any(|w| w == p.words.as_slice()) {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => {
                    (n, p.chars, std::cmp::Reverse(&p.finding))
                        > (b.words.len(), b.chars, std::cmp::Reverse(&b.finding))
                }
            };
            if better {
                best = Some(p);
            }
        }
        best.map(|p| p.finding.as_str())
    }

    pub fn normalize(&self, text: &str) -> Normalized {
        match self.extract_finding(text) {
            Some(f) => Normalized {
                text: template(f),
                finding: Some(f.to_string()),
            },
            None => Normalized {
                text: text.to_string(),
                finding: None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Normalized {
    pub text: String,
    /// `None` when the text passed through unchanged.
    pub finding: Option<String>,
}

impl Normalized {
    pub fn is_passthrough(&self) -> bool {
        self.finding.is_none()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NormalizeStats {
    pub total: usize,
    pub normalized: usize,
    pub passthrough: usize,
    pub passthrough_rate: f64,
    pub by_finding: BTreeMap<String, usize>,
}

impl NormalizeStats {
    fn add(&mut self, n: &Normalized) {
        self.total += 1;
        match &n.finding {
            Some(f) => {
                self.normalized += 1;
                *self.by_finding.entry(f.clone()).or_default() += 1;
            }
            None => self.passthrough += 1,
        }
        self.passthrough_rate = self.passthrough as f64 / self.total as f64;
    }
}

/// Normalizes every question and paraphrase text. A recognized finding is
/// also written to the question's `finding` when that is unset.
pub fn normalize_corpus(
    questions: &[QuestionRecord],
    dict: &FindingDictionary,
) -> (Vec<QuestionRecord>, NormalizeStats) {
    let mut stats = NormalizeStats::default();
    let out = questions
        .iter()
        .map(|q| {
            let mut q = q.clone();
            let n = dict.normalize(&q.text);
            stats.add(&n);
            if q.finding.is_none() {
                q.finding = n.finding.clone();
            }
            q.text = n.text;
            for p in &mut q.paraphrases {
                let n = dict.normalize(&p.text);
                stats.add(&n);
                p.text = n.text;
            }
            q
        })
        .collect();
    (out, stats)
}
