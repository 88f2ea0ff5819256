//! Yes/no question banks: balanced object-existence questions built from
//! ground-truth object lists, and loaders for fine-grained question files.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::warn;

use crate::datamodel::{read_jsonl, validate_all, Category, ImageObjects, Label, ProbeQuestion, Source};
use crate::error::BankError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeStrategy {
    /// Most frequent corpus objects that are absent from the image.
    #[default]
    Popular,
    /// Uniformly drawn absent objects.
    Random,
}

impl FromStr for NegativeStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "popular" => Ok(NegativeStrategy::Popular),
            "random" => Ok(NegativeStrategy::Random),
            other => Err(format!("unknown negative strategy `{other}` (popular, random)")),
        }
    }
}

impl fmt::Display for NegativeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NegativeStrategy::Popular => "popular",
            NegativeStrategy::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BankConfig {
    pub questions_per_image: usize,
    pub negative_strategy: NegativeStrategy,
    pub seed: u64,
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig {
            questions_per_image: 6,
            negative_strategy: NegativeStrategy::Popular,
            seed: 0,
        }
    }
}

pub fn object_question(object: &str) -> String {
    format!("Is there a {object} in the image?")
}

fn image_rng(seed: u64, image_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(image_id.as_bytes());
    let d = h.finalize();
    ChaCha8Rng::from_seed(d.into())
}

/// Object names ordered by how many images contain them, most first, ties
/// alphabetical.
pub fn popularity_ranking(images: &[ImageObjects]) -> Vec<(String, usize)> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for img in images {
        for o in &img.objects {
            *counts.entry(o.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().map(|(o, n)| (o.to_string(), n)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

/// Builds `questions_per_image` questions per image, half yes and half no,
/// alternating yes/no. Images with too few present or absent objects are
/// skipped with a warning.
pub fn build_pope_bank(images: &[ImageObjects], cfg: &BankConfig) -> Result<Vec<ProbeQuestion>, BankError> {
    let k = cfg.questions_per_image;
    if k == 0 || !k.is_multiple_of(2) {
        return Err(BankError::OddQuestionsPerImage(k));
    }
    if images.is_empty() {
        return Err(BankError::EmptyCorpus);
    }
    let mut images = images.to_vec();
    for img in &mut images {
        crate::datamodel::Record::normalize(img);
    }
    validate_all(&images)?;
    let half = k / 2;
    let ranking = popularity_ranking(&images);
    let vocabulary: Vec<&str> = {
        let mut v: Vec<&str> = ranking.iter().map(|(o, _)| o.as_str()).collect();
        v.sort_unstable();
        v
    };

    let mut bank = Vec::with_capacity(images.len() * k);
    for img in &images {
        if img.objects.len() < half {
            warn!(image_id = %img.image_id, objects = img.objects.len(), needed = half, "skipping image with too few objects");
            continue;
        }
        let present: HashSet<&str> = img.objects.iter().map(String::as_str).collect();
        let mut rng = image_rng(cfg.seed, &img.image_id);
        let positives: Vec<&str> = index::sample(&mut rng, img.objects.len(), half)
            .into_iter()
            .map(|i| img.objects[i].as_str())
            .collect();
        let negatives: Vec<&str> = match cfg.negative_strategy {
            NegativeStrategy::Popular => ranking
                .iter()
                .map(|(o, _)| o.as_str())
                .filter(|o| !present.contains(o))
                .take(half)
                .collect(),
            NegativeStrategy::Random => {
                let absent: Vec<&str> = vocabulary
                    .iter()
                    .copied()
                    .filter(|o| !present.contains(o))
                    .collect();
                absent
                    .choose_multiple(&mut rng, half.min(absent.len()))
                    .copied()
                    .collect()
            }
        };
        if negatives.len() < half {
            warn!(image_id = %img.image_id, absent = negatives.len(), needed = half, "skipping image with too few absent objects");
            continue;
        }
        for (i, (yes, no)) in positives.iter().zip(&negatives).enumerate() {
            for (j, (object, label)) in [(*yes, Label::Yes), (*no, Label::No)].into_iter().enumerate() {
                bank.push(ProbeQuestion {
                    question_id: format!("pope-{}-{}", img.image_id, 2 * i + j + 1),
                    image_id: img.image_id.clone(),
                    text: object_question(object),
                    label,
                    category: Category::Object,
                    source: Source::Pope,
                });
            }
        }
    }
    Ok(bank)
}

/// Reads a fine-grained question file; every record must be a `fghe`
/// question in one of the fine-grained categories.
pub fn load_fghe(path: impl AsRef<Path>) -> Result<Vec<ProbeQuestion>, BankError> {
    let path = path.as_ref();
    let questions: Vec<ProbeQuestion> = read_jsonl(path)?;
    if questions.is_empty() {
        warn!(path = %path.display(), "fine-grained question file is empty");
    }
    check_fghe(&questions)?;
    Ok(questions)
}

pub fn check_fghe(questions: &[ProbeQuestion]) -> Result<(), BankError> {
    for q in questions {
        let reason = if q.source != Source::Fghe {
            format!("source is `{}`, expected `fghe`", q.source.as_str())
        } else if !Category::FINE_GRAINED.contains(&q.category) {
            format!("category `{}` is not fine-grained", q.category.as_str())
        } else {
            continue;
        };
        return Err(BankError::Schema {
            kind: "fghe",
            id: q.question_id.clone(),
            reason,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct YesNo {
    pub yes: usize,
    pub no: usize,
}

impl YesNo {
    pub fn total(&self) -> usize {
        self.yes + self.no
    }

    fn add(&mut self, label: Label) {
        match label {
            Label::Yes => self.yes += 1,
            Label::No => self.no += 1,
        }
    }
}

/// Yes/no counts overall and per category.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankStats {
    pub overall: YesNo,
    pub per_category: BTreeMap<Category, YesNo>,
}

impl BankStats {
    pub fn of(questions: &[ProbeQuestion]) -> Self {
        let mut s = BankStats::default();
        for q in questions {
            s.overall.add(q.label);
            s.per_category.entry(q.category).or_default().add(q.label);
        }
        s
    }

    /// Published fine-grained set: 100 yes / 100 no; multi-object 47/51,
    /// attribute 45/42, behavior 8/7.
    pub fn fghe_reference() -> Self {
        BankStats {
            overall: YesNo { yes: 100, no: 100 },
            per_category: BTreeMap::from([
                (Category::MultiObject, YesNo { yes: 47, no: 51 }),
                (Category::Attribute, YesNo { yes: 45, no: 42 }),
                (Category::Behavior, YesNo { yes: 8, no: 7 }),
            ]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatDiff {
    /// `overall` or a category name, then `yes` or `no`.
    pub cell: String,
    pub expected: usize,
    pub actual: usize,
}

impl fmt::Display for StatDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: expected {}, found {}",
            self.cell, self.expected, self.actual
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatsReport {
    pub passed: bool,
    pub actual: BankStats,
    pub diffs: Vec<StatDiff>,
}

/// Compares observed counts with `expected`, cell by cell. Categories
/// present on only one side are compared against zero.
pub fn validate_bank_stats(questions: &[ProbeQuestion], expected: &BankStats) -> StatsReport {
    let actual = BankStats::of(questions);
    let mut diffs = Vec::new();
    let mut cmp = |name: &str, e: YesNo, a: YesNo| {
        for (side, ev, av) in [("yes", e.yes, a.yes), ("no", e.no, a.no)] {
            if ev != av {
                diffs.push(StatDiff {
                    cell: format!("{name} {side}"),
                    expected: ev,
                    actual: av,
                });
            }
        }
    };
    cmp("overall", expected.overall, actual.overall);
    for category in Category::ALL {
        let e = expected.per_category.get(&category).copied().unwrap_or_default();
        let a = actual.per_category.get(&category).copied().unwrap_or_default();
        cmp(category.as_str(), e, a);
    }
    StatsReport {
        passed: diffs.is_empty(),
        actual,
        diffs,
    }
}
