//! Yes/No extraction from free-text model output.
//!
//! Matching is case-insensitive on whole words. Multi-word phrases win over
//! the single words they contain, so "not seen" is one negative match rather
//! than "not" plus "seen". Precedence, highest first:
//!
//! 1. hedge phrase anywhere -> `Excluded(hedge)`
//! 2. refusal phrase anywhere -> `Excluded(refusal)`
//! 3. list response (several lines or `;`-separated items answering with
//!    different polarities) -> the answer for the queried finding when exactly
//!    one item names it with one polarity, else `Excluded(offtopic)`
//! 4. affirmative and negative keywords together -> `Excluded(conflict)`
//! 5. conditional marker before the first answer keyword -> `Excluded(conditional)`
//! 6. one polarity -> `Yes` / `No`
//! 7. leading "yes"/"no" token -> `Yes` / `No`, else `Excluded(unparseable)`

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interchange::{read_json, ParsedRecord, ResponseRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    Hedge,
    Conflict,
    Conditional,
    Refusal,
    Offtopic,
    Unparseable,
}

impl ExclusionReason {
    pub const ALL: [ExclusionReason; 6] = [
        ExclusionReason::Hedge,
        ExclusionReason::Conflict,
        ExclusionReason::Conditional,
        ExclusionReason::Refusal,
        ExclusionReason::Offtopic,
        ExclusionReason::Unparseable,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "label", rename_all = "snake_case")]
pub enum ParsedAnswer {
    Yes,
    No,
    Excluded { reason: ExclusionReason },
}

impl ParsedAnswer {
    pub fn excluded(reason: ExclusionReason) -> Self {
        ParsedAnswer::Excluded { reason }
    }

    /// `Some(true)` for Yes, `Some(false)` for No, `None` when excluded.
    pub fn polarity(self) -> Option<bool> {
        match self {
            ParsedAnswer::Yes => Some(true),
            ParsedAnswer::No => Some(false),
            ParsedAnswer::Excluded { .. } => None,
        }
    }

    pub fn is_valid(self) -> bool {
        self.polarity().is_some()
    }
}

/// Phrase lists as written in a lexicon JSON file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconSpec {
    pub affirmative: Vec<String>,
    pub negative: Vec<String>,
    pub hedge: Vec<String>,
    pub conditional: Vec<String>,
    #[serde(default)]
    pub refusal: Vec<String>,
}

impl Default for LexiconSpec {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        LexiconSpec {
            affirmative: s(&["yes", "present", "visible", "confirmed", "shows", "evident"]),
            negative: s(&[
                "no",
                "absent",
                "not seen",
                "negative",
                "normal",
                "clear",
                "not present",
                "not visible",
                "not confirmed",
                "not evident",
                "does not show",
            ]),
            hedge: s(&[
                "possibly",
                "may",
                "may be",
                "uncertain",
                "cannot determine",
            ]),
            conditional: s(&["if", "assuming"]),
            refusal: s(&["i cannot", "as an ai"]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Category {
    Affirmative,
    Negative,
    Conditional,
}

/// Validated, pre-tokenized lexicon.
#[derive(Debug, Clone)]
pub struct Lexicon {
    spec: LexiconSpec,
    hedge: Vec<Vec<String>>,
    refusal: Vec<Vec<String>>,
    /// Answer and conditional phrases by first word, longest first.
    by_first: HashMap<String, Vec<(Vec<String>, Category)>>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon::new(LexiconSpec::default()).expect("default lexicon is valid")
    }
}

impl Lexicon {
    pub fn new(spec: LexiconSpec) -> Result<Self> {
        let norm = |v: &[String]| -> Result<Vec<Vec<String>>> {
            v.iter()
                .map(|p| {
                    let t = tokenize(p);
                    if t.is_empty() {
                        Err(Error::invalid(format!("lexicon phrase {p:?} has no words")))
                    } else {
                        Ok(t)
                    }
                })
                .collect()
        };
        let aff = norm(&spec.affirmative)?;
        let neg = norm(&spec.negative)?;
        let hedge = norm(&spec.hedge)?;
        let cond = norm(&spec.conditional)?;
        let refusal = norm(&spec.refusal)?;

        let sets = [("affirmative", &aff), ("negative", &neg), ("hedge", &hedge)];
        for (i, (na, a)) in sets.iter().enumerate() {
            for (nb, b) in &sets[i + 1..] {
                let a: HashSet<_> = a.iter().collect();
                if let Some(common) = b.iter().find(|p| a.contains(p)) {
                    return Err(Error::invalid(format!(
                        "phrase {:?} is in both the {na} and {nb} lists",
                        common.join(" ")
                    )));
                }
            }
        }

        let mut by_first: HashMap<String, Vec<(Vec<String>, Category)>> = HashMap::new();
        for (phrases, cat) in [
            (aff, Category::Affirmative),
            (neg, Category::Negative),
            (cond, Category::Conditional),
        ] {
            for p in phrases {
                by_first.entry(p[0].clone()).or_default().push((p, cat));
            }
        }
        for v in by_first.values_mut() {
            v.sort_by(|a, b| b.0.len().cmp(&a.0.len()));
            v.dedup_by(|a, b| a.0 == b.0);
        }
        Ok(Lexicon {
            spec,
            hedge,
            refusal,
            by_first,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Lexicon::new(read_json(path)?)
    }

    pub fn spec(&self) -> &LexiconSpec {
        &self.spec
    }

    fn longest_at(&self, tokens: &[String], i: usize) -> Option<(usize, Category)> {
        self.by_first.get(&tokens[i])?.iter().find_map(|(p, cat)| {
            tokens[i..]
                .starts_with(p)
                .then_some((p.len(), *cat))
        })
    }
}

/// Lowercased word tokens; apostrophes stay inside words.
fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .replace('\u{2019}', "'")
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|w| w.trim_matches('\''))
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

fn contains_phrase(tokens: &[String], phrase: &[String]) -> bool {
    tokens.windows(phrase.len()).any(|w| w == phrase)
}

#[derive(Debug, Default, Clone, Copy)]
struct Scan {
    affirmative: usize,
    negative: usize,
    first_answer: Option<usize>,
    first_conditional: Option<usize>,
}

fn scan(tokens: &[String], lex: &Lexicon) -> Scan {
    let mut s = Scan::default();
    let mut i = 0;
    while i < tokens.len() {
        match lex.longest_at(tokens, i) {
            Some((len, cat)) => {
                match cat {
                    Category::Affirmative => s.affirmative += 1,
                    Category::Negative => s.negative += 1,
                    Category::Conditional => {
                        s.first_conditional.get_or_insert(i);
                    }
                }
                if cat != Category::Conditional {
                    s.first_answer.get_or_insert(i);
                }
                i += len;
            }
            None => i += 1,
        }
    }
    s
}

impl Scan {
    fn single_polarity(&self) -> Option<ParsedAnswer> {
        match (self.affirmative > 0, self.negative > 0) {
            (true, false) => Some(ParsedAnswer::Yes),
            (false, true) => Some(ParsedAnswer::No),
            _ => None,
        }
    }
}

/// Splits list-style output into items: lines, or `;`-separated clauses.
fn list_items(text: &str) -> Vec<&str> {
    text.split(['\n', ';'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

pub fn parse_answer(raw_text: &str, lexicon: &Lexicon) -> ParsedAnswer {
    parse_answer_for(raw_text, lexicon, None)
}

/// As [`parse_answer`], with the queried finding used to resolve list
/// responses.
pub fn parse_answer_for(raw_text: &str, lexicon: &Lexicon, finding: Option<&str>) -> ParsedAnswer {
    use ExclusionReason::*;
    let tokens = tokenize(raw_text);
    if tokens.is_empty() {
        return ParsedAnswer::excluded(Unparseable);
    }
    if lexicon.hedge.iter().any(|p| contains_phrase(&tokens, p)) {
        return ParsedAnswer::excluded(Hedge);
    }
    if lexicon.refusal.iter().any(|p| contains_phrase(&tokens, p)) {
        return ParsedAnswer::excluded(Refusal);
    }

    let whole = scan(&tokens, lexicon);
    let items = list_items(raw_text);
    if items.len() >= 2 && whole.affirmative > 0 && whole.negative > 0 {
        let answered: Vec<(Vec<String>, Option<ParsedAnswer>)> = items
            .iter()
            .map(|it| {
                let t = tokenize(it);
                let s = scan(&t, lexicon);
                (t, s.single_polarity())
            })
            .filter(|(_, a)| a.is_some())
            .collect();
        if answered.len() >= 2 {
            let Some(finding) = finding.map(tokenize).filter(|f| !f.is_empty()) else {
                return ParsedAnswer::excluded(Offtopic);
            };
            let hits: Vec<ParsedAnswer> = answered
                .iter()
                .filter(|(t, _)| contains_phrase(t, &finding))
                .filter_map(|(_, a)| *a)
                .collect();
            return match hits[..] {
                [a] => a,
                _ => ParsedAnswer::excluded(Offtopic),
            };
        }
    }

    if whole.affirmative > 0 && whole.negative > 0 {
        return ParsedAnswer::excluded(Conflict);
    }
    if let (Some(c), Some(a)) = (whole.first_conditional, whole.first_answer) {
        if c < a {
            return ParsedAnswer::excluded(Conditional);
        }
    }
    if let Some(a) = whole.single_polarity() {
        return a;
    }
    match tokens[0].as_str() {
        "yes" => ParsedAnswer::Yes,
        "no" => ParsedAnswer::No,
        _ => ParsedAnswer::excluded(Unparseable),
    }
}

pub fn parse_records(
    responses: Vec<ResponseRecord>,
    lexicon: &Lexicon,
    finding_of: impl Fn(&ResponseRecord) -> Option<String>,
) -> Vec<ParsedRecord> {
    responses
        .into_iter()
        .map(|r| {
            let finding = finding_of(&r);
            let parsed = parse_answer_for(&r.raw_text, lexicon, finding.as_deref());
            ParsedRecord {
                response: r,
                parsed,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelExclusions {
    pub total: usize,
    pub kept: usize,
    pub kept_rate: f64,
    pub exclusion_rate: f64,
    pub counts: BTreeMap<ExclusionReason, usize>,
    pub rates: BTreeMap<ExclusionReason, f64>,
}

/// Per-model exclusion rates, overall and by reason.
pub fn exclusion_report(parsed: &[ParsedRecord]) -> BTreeMap<String, ModelExclusions> {
    let mut by_model: BTreeMap<String, (usize, BTreeMap<ExclusionReason, usize>)> = BTreeMap::new();
    for r in parsed {
        let e = by_model.entry(r.response.model_id.clone()).or_default();
        e.0 += 1;
        if let ParsedAnswer::Excluded { reason } = r.parsed {
            *e.1.entry(reason).or_default() += 1;
        }
    }
    by_model
        .into_iter()
        .map(|(model, (total, counts))| {
            let excluded: usize = counts.values().sum();
            let t = total as f64;
            let rates = counts.iter().map(|(k, &v)| (*k, v as f64 / t)).collect();
            (
                model,
                ModelExclusions {
                    total,
                    kept: total - excluded,
                    kept_rate: (total - excluded) as f64 / t,
                    exclusion_rate: excluded as f64 / t,
                    counts,
                    rates,
                },
            )
        })
        .collect()
}
