//! Seeded synthetic corpus and the baseline-vs-knowledge A/B experiment.
//!
//! Person names are built from shared first/last-name pools, so name tokens
//! say nothing about a person's fine-grained class. The class is recoverable
//! only from the person's occupation, which reaches the model exclusively
//! through the retrieved KB context. Test sentences mention only persons that
//! never occur in training.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{assemble, build_attention_mask, MaskMode};
use crate::conll::Sentence;
use crate::encoder::{train, EncoderConfig, Example, TrainConfig};
use crate::ensemble::repair_bio;
use crate::error::Result;
use crate::eval::score;
use crate::kb::{parse_dump, KbBuilder, PropertyKind, PropertyMask};
use crate::matcher::{build_matcher, retrieve};

/// `(class, occupations, sampling weight)`
const CLASSES: [(&str, [&str; 3], f64); 4] = [
    ("Artist", ["painter", "sculptor", "photographer"], 0.40),
    ("Athlete", ["footballer", "swimmer", "sprinter"], 0.25),
    ("Politician", ["senator", "diplomat", "mayor"], 0.20),
    ("Scientist", ["physicist", "chemist", "biologist"], 0.15),
];

const FIRST_NAMES: [&str; 20] = [
    "Anna", "Boris", "Clara", "Dario", "Elena", "Felix", "Greta", "Hugo", "Ines", "Jonas", "Karin",
    "Luca", "Mira", "Nils", "Olga", "Pavel", "Rosa", "Stefan", "Tara", "Viktor",
];

const LAST_NAMES: [&str; 20] = [
    "Adler", "Berg", "Costa", "Dahl", "Engel", "Falk", "Gruber", "Holm", "Ivanov", "Jansen",
    "Keller", "Lind", "Moreau", "Novak", "Olsen", "Petrov", "Quist", "Rossi", "Sandberg", "Vogel",
];

const CITIES: [&str; 8] = [
    "Paris", "Berlin", "Madrid", "Lisbon", "Vienna", "Oslo", "Prague", "Dublin",
];

const DAYS: [&str; 5] = ["Monday", "Tuesday", "Wednesday", "Thursday", "Friday"];

/// `P`/`Q` are person slots, `C` a city, `D` a day.
const TEMPLATES: [&str; 7] = [
    "P arrived in C on D",
    "on D P visited C",
    "P met Q in C",
    "reporters spoke with P after the event",
    "P and Q were seen in C on D",
    "the interview with P aired on D",
    "a crowd waited for P outside the hotel",
];

const HUMAN_QID: u64 = 5;
const CITY_CLASS_QID: u64 = 515;
const OCCUPATION_QID_BASE: u64 = 100;
const CITY_QID_BASE: u64 = 200;
const PERSON_QID_BASE: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_persons: usize,
    /// Share of persons reserved for the held-out split.
    pub test_fraction: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub max_len: usize,
    pub mask_mode: MaskMode,
    #[serde(with = "mask_serde")]
    pub property_mask: PropertyMask,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 1,
            n_persons: 240,
            test_fraction: 0.3,
            n_train: 300,
            n_test: 200,
            max_len: 64,
            mask_mode: MaskMode::Default,
            property_mask: PropertyMask::all(),
            encoder: EncoderConfig::default(),
            train: TrainConfig {
                learning_rate: 0.05,
                epochs: 12,
                seed: 1,
            },
        }
    }
}

impl SyntheticConfig {
    pub fn with_seed(seed: u64) -> Self {
        let base = SyntheticConfig::default();
        SyntheticConfig {
            seed,
            train: TrainConfig { seed, ..base.train },
            encoder: EncoderConfig {
                seed,
                ..base.encoder
            },
            ..base
        }
    }
}

mod mask_serde {
    use super::PropertyMask;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &PropertyMask, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&m.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<PropertyMask, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    /// WikiData-style dump lines describing persons, occupations and cities.
    pub dump: Vec<String>,
    pub train: Vec<Sentence>,
    pub test: Vec<Sentence>,
}

struct Person {
    tokens: [&'static str; 2],
    class: &'static str,
}

pub fn generate_corpus(config: &SyntheticConfig) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dump = Vec::new();
    let record = |id: u64, label: &str, p31: &[u64], p106: &[u64]| {
        let qids = |v: &[u64]| v.iter().map(|q| format!("Q{q}")).collect::<Vec<_>>();
        serde_json::json!({
            "id": format!("Q{id}"),
            "labels": {"en": label},
            "claims": {"P31": qids(p31), "P106": qids(p106)},
        })
        .to_string()
    };
    dump.push(record(HUMAN_QID, "human", &[], &[]));
    dump.push(record(CITY_CLASS_QID, "city", &[], &[]));
    for (c, (_, occupations, _)) in CLASSES.iter().enumerate() {
        for (o, occ) in occupations.iter().enumerate() {
            dump.push(record(
                OCCUPATION_QID_BASE + (c * 3 + o) as u64,
                occ,
                &[],
                &[],
            ));
        }
    }
    for (i, city) in CITIES.iter().enumerate() {
        dump.push(record(
            CITY_QID_BASE + i as u64,
            city,
            &[CITY_CLASS_QID],
            &[],
        ));
    }

    let mut combos: Vec<[&'static str; 2]> = FIRST_NAMES
        .iter()
        .flat_map(|f| LAST_NAMES.iter().map(move |l| [*f, *l]))
        .collect();
    combos.shuffle(&mut rng);
    let weights = WeightedIndex::new(CLASSES.iter().map(|c| c.2)).expect("positive weights");
    let persons: Vec<Person> = combos
        .into_iter()
        .take(
            config
                .n_persons
                .clamp(2, FIRST_NAMES.len() * LAST_NAMES.len()),
        )
        .enumerate()
        .map(|(i, tokens)| {
            let c = weights.sample(&mut rng);
            let o = rng.random_range(0..3);
            let occupation_qid = OCCUPATION_QID_BASE + (c * 3 + o) as u64;
            dump.push(record(
                PERSON_QID_BASE + i as u64,
                &tokens.join(" "),
                &[HUMAN_QID],
                &[occupation_qid],
            ));
            Person {
                tokens,
                class: CLASSES[c].0,
            }
        })
        .collect();

    let n_test_persons = ((persons.len() as f64 * config.test_fraction).round() as usize)
        .clamp(1, persons.len() - 1);
    let (test_pool, train_pool) = persons.split_at(n_test_persons);
    let mut sentences = |pool: &[Person], n: usize, prefix: &str| -> Vec<Sentence> {
        (0..n)
            .map(|i| sentence(&mut rng, pool, &format!("{prefix}{i}")))
            .collect()
    };
    let train = sentences(train_pool, config.n_train, "train-");
    let test = sentences(test_pool, config.n_test, "test-");
    SyntheticCorpus { dump, train, test }
}

fn sentence(rng: &mut ChaCha8Rng, pool: &[Person], id: &str) -> Sentence {
    let template = TEMPLATES.choose(rng).expect("templates");
    let first = rng.random_range(0..pool.len());
    let mut second = rng.random_range(0..pool.len() - 1);
    if second >= first {
        second += 1;
    }
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    for slot in template.split_whitespace() {
        match slot {
            "P" | "Q" => {
                let person = &pool[if slot == "P" { first } else { second }];
                tokens.extend(person.tokens.iter().map(|t| t.to_string()));
                tags.push(format!("B-{}", person.class));
                tags.push(format!("I-{}", person.class));
            }
            "C" | "D" => {
                let word = if slot == "C" {
                    CITIES.choose(rng)
                } else {
                    DAYS.choose(rng)
                };
                tokens.push(word.expect("non-empty").to_string());
                tags.push("O".into());
            }
            word => {
                tokens.push(word.to_owned());
                tags.push("O".into());
            }
        }
    }
    Sentence::new(id, tokens, Some(tags))
}

/// A generated corpus plus the means to train and score variants on it.
pub struct Experiment {
    pub config: SyntheticConfig,
    pub corpus: SyntheticCorpus,
}

impl Experiment {
    pub fn new(config: SyntheticConfig) -> Self {
        let corpus = generate_corpus(&config);
        Experiment { config, corpus }
    }

    /// Sentence-only inputs with all-ones masks.
    pub fn baseline_examples(&self) -> Result<(Vec<Example>, Vec<Example>)> {
        let build = |data: &[Sentence]| -> Result<Vec<Example>> {
            data.iter()
                .map(|s| {
                    let aug = assemble(s, &[], self.config.max_len)?;
                    let mask = build_attention_mask(&aug, MaskMode::Default);
                    Ok((aug, mask))
                })
                .collect()
        };
        Ok((build(&self.corpus.train)?, build(&self.corpus.test)?))
    }

    /// Inputs augmented through the full KB → matcher → assembly path.
    pub fn knowledge_examples(
        &self,
        property_mask: PropertyMask,
        mode: MaskMode,
    ) -> Result<(Vec<Example>, Vec<Example>)> {
        let text = self.corpus.dump.join("\n");
        let (kb, _) = KbBuilder::new("en", property_mask).build(|| parse_dump(text.as_bytes()));
        let matcher = build_matcher(&kb);
        let build = |data: &[Sentence]| -> Result<Vec<Example>> {
            data.iter()
                .map(|s| {
                    let pairs = retrieve(&kb, &matcher, s)?;
                    let aug = assemble(s, &pairs, self.config.max_len)?;
                    let mask = build_attention_mask(&aug, mode);
                    Ok((aug, mask))
                })
                .collect()
        };
        Ok((build(&self.corpus.train)?, build(&self.corpus.test)?))
    }

    /// Trains on `train` and returns held-out micro F1 on `test`.
    pub fn train_and_score(&self, train_set: &[Example], test_set: &[Example]) -> Result<f64> {
        let (model, _) = train(train_set, self.config.encoder.clone(), &self.config.train)?;
        let mut gold = Vec::with_capacity(test_set.len());
        let mut pred = Vec::with_capacity(test_set.len());
        for (aug, mask) in test_set {
            pred.push(repair_bio(&model.predict_tags(aug, mask)?)?);
            gold.push(aug.gold_tags.clone().unwrap_or_default());
        }
        Ok(score(&gold, &pred)?.micro_f1())
    }

    pub fn baseline_f1(&self) -> Result<f64> {
        let (train_set, test_set) = self.baseline_examples()?;
        self.train_and_score(&train_set, &test_set)
    }

    pub fn augmented_f1(&self, property_mask: PropertyMask, mode: MaskMode) -> Result<f64> {
        let (train_set, test_set) = self.knowledge_examples(property_mask, mode)?;
        self.train_and_score(&train_set, &test_set)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticReport {
    pub seed: u64,
    pub mask_mode: MaskMode,
    pub properties: String,
    pub n_train: usize,
    pub n_test: usize,
    pub baseline_f1: f64,
    pub augmented_f1: f64,
    /// `augmented_f1 - baseline_f1`
    pub gap: f64,
}

/// Trains a sentence-only baseline and a knowledge-augmented model with the
/// same seeds and reports both held-out micro F1 scores.
pub fn run_synthetic_ab(config: &SyntheticConfig) -> Result<SyntheticReport> {
    let experiment = Experiment::new(config.clone());
    let baseline_f1 = experiment.baseline_f1()?;
    let augmented_f1 = experiment.augmented_f1(config.property_mask, config.mask_mode)?;
    Ok(SyntheticReport {
        seed: config.seed,
        mask_mode: config.mask_mode,
        properties: config.property_mask.to_string(),
        n_train: config.n_train,
        n_test: config.n_test,
        baseline_f1,
        augmented_f1,
        gap: augmented_f1 - baseline_f1,
    })
}

/// The full property mask minus occupation.
pub fn without_occupation() -> PropertyMask {
    PropertyMask::all().without(PropertyKind::Occupation)
}
