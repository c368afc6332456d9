use std::cell::RefCell;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use log::{info, warn};

use super::*;
use crate::augment::{assemble, AugmentedRecord};
use crate::conll::{read_conll, Sentence};
use crate::encoder::{train, EncoderConfig, Example, ToyEncoder, TrainConfig};
use crate::ensemble::{
    kfold_split, repair_bio, weighted_vote, FoldPlan, PredictionSet, SentencePrediction, VoteMode,
    WeightedPredictions,
};
use crate::error::Result;
use crate::eval::score;
use crate::kb::{coverage_counts, parse_dump, DumpError, EntityRecord, KbBuilder, KnowledgeBase};
use crate::matcher::{build_matcher, retrieve, EntityMatch};
use crate::synthetic::{run_synthetic_ab, SyntheticConfig};

pub(super) fn execute(command: Command) -> Result<()> {
    match command {
        Command::BuildKb(a) => build_kb(a),
        Command::Coverage(a) => coverage(a),
        Command::Retrieve(a) => retrieve_cmd(a),
        Command::Augment(a) => augment(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict(a),
        Command::Split(a) => split(a),
        Command::Vote(a) => vote(a),
        Command::Score(a) => score_cmd(a),
        Command::SyntheticAb(a) => synthetic_ab(a),
    }
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Records of a dump file; errors of the finished pass land in `errors`.
struct DumpPass {
    reader: crate::kb::DumpReader<BufReader<fs::File>>,
    errors: Rc<RefCell<Vec<DumpError>>>,
}

impl Iterator for DumpPass {
    type Item = EntityRecord;

    fn next(&mut self) -> Option<EntityRecord> {
        let next = self.reader.next();
        if next.is_none() {
            *self.errors.borrow_mut() = self.reader.errors().to_vec();
        }
        next
    }
}

fn build_kb(a: BuildKbArgs) -> Result<()> {
    // Fail early on an unreadable dump rather than inside the builder.
    fs::File::open(&a.dump).map_err(|e| Error::io(&a.dump, e))?;
    let errors = Rc::new(RefCell::new(Vec::new()));
    let open = || DumpPass {
        reader: parse_dump(BufReader::new(
            fs::File::open(&a.dump).expect("dump was readable a moment ago"),
        )),
        errors: Rc::clone(&errors),
    };
    let (kb, report) = KbBuilder::new(&a.lang, a.properties)
        .qid_cap(a.qid_cap)
        .build(open);
    for e in errors.borrow().iter() {
        warn!("{}:{}: skipped: {}", a.dump.display(), e.line, e.message);
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    kb.save(&a.out)?;
    info!(
        "{} records, {} surfaces, {} duplicate qids, {} dropped names, {} bad lines",
        report.records,
        kb.surface_count(),
        report.duplicate_qids.len(),
        report.dropped_names,
        errors.borrow().len()
    );
    Ok(())
}

fn coverage(a: CoverageArgs) -> Result<()> {
    let kb = KnowledgeBase::load(&a.kb)?;
    let data = read_conll(&a.data)?;
    let (found, total) = coverage_counts(&kb, &data)?;
    let rate = if total == 0 {
        1.0
    } else {
        found as f64 / total as f64
    };
    println!("coverage\t{rate:.4}\t{found}/{total}");
    Ok(())
}

fn retrieve_all(kb: &KnowledgeBase, data: &[Sentence]) -> Result<Vec<Vec<EntityMatch>>> {
    let matcher = build_matcher(kb);
    data.iter().map(|s| retrieve(kb, &matcher, s)).collect()
}

#[derive(serde::Serialize)]
struct RetrievedLine<'a> {
    id: &'a str,
    pairs: &'a [EntityMatch],
}

fn retrieve_cmd(a: RetrieveArgs) -> Result<()> {
    let kb = KnowledgeBase::load(&a.kb)?;
    let data = read_conll(&a.data)?;
    let mut out = String::new();
    for (s, pairs) in data.iter().zip(retrieve_all(&kb, &data)?) {
        out.push_str(&serde_json::to_string(&RetrievedLine {
            id: &s.id,
            pairs: &pairs,
        })?);
        out.push('\n');
    }
    write(&a.out, out)
}

fn augment(a: AugmentArgs) -> Result<()> {
    let kb = KnowledgeBase::load(&a.kb)?;
    let data = read_conll(&a.data)?;
    let mut out = String::new();
    for (s, pairs) in data.iter().zip(retrieve_all(&kb, &data)?) {
        let aug = assemble(s, &pairs, a.max_len)?;
        if aug.segments.len() < pairs.len() {
            info!(
                "{}: kept {} of {} pairs",
                s.id,
                aug.segments.len(),
                pairs.len()
            );
        }
        out.push_str(&serde_json::to_string(&AugmentedRecord::new(
            &aug,
            a.mask_mode,
        ))?);
        out.push('\n');
    }
    write(&a.out, out)
}

/// Reads an augmented-input file into examples.
pub fn read_augmented(path: &Path) -> Result<Vec<Example>> {
    read(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let record: AugmentedRecord =
                serde_json::from_str(l).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            record.into_parts()
        })
        .collect()
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut data = read_augmented(&a.aug)?;
    if let (Some(plan_path), Some(fold)) = (&a.plan, a.fold) {
        let plan: FoldPlan = read(plan_path)?.parse()?;
        if fold >= plan.k {
            return Err(Error::Config(format!(
                "fold {fold} out of range for k={}",
                plan.k
            )));
        }
        data.retain(|(aug, _)| plan.fold_of(&aug.id).is_some_and(|f| f != fold));
        info!("fold {fold}: training on {} sentences", data.len());
    }
    let encoder = EncoderConfig {
        d_model: a.d_model,
        n_heads: a.heads,
        n_layers: a.layers,
        d_ff: a.d_ff,
        max_len: a.max_len,
        seed: a.seed,
    };
    let config = TrainConfig {
        learning_rate: a.learning_rate,
        epochs: a.epochs,
        seed: a.seed,
    };
    let (model, log) = train(&data, encoder, &config)?;
    if let Some(last) = log.epoch_losses.last() {
        info!("final epoch loss {last:.6}");
    }
    model.save(&a.out)
}

fn tagged_conll(id: &str, tokens: &[String], tags: &[String], out: &mut String) {
    writeln!(out, "# id {id}").unwrap();
    for (t, tag) in tokens.iter().zip(tags) {
        writeln!(out, "{t}\t{tag}").unwrap();
    }
    out.push('\n');
}

fn default_sidecar(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".dist.json");
    PathBuf::from(name)
}

fn predict(a: PredictArgs) -> Result<()> {
    let model = ToyEncoder::load(&a.model)?;
    let data = read_augmented(&a.aug)?;
    let mut text = String::new();
    let mut sentences = Vec::with_capacity(data.len());
    for (aug, mask) in &data {
        let tags = repair_bio(&model.predict_tags(aug, mask)?)?;
        tagged_conll(&aug.id, aug.sentence_tokens(), &tags, &mut text);
        sentences.push(SentencePrediction {
            id: aug.id.clone(),
            tokens: aug.sentence_tokens().to_vec(),
            distributions: model.predict(aug, mask)?,
        });
    }
    write(&a.out, text)?;
    let sidecar = PredictionSet {
        labels: model.labels.clone(),
        sentences,
    };
    let dist = a.dist.unwrap_or_else(|| default_sidecar(&a.out));
    write(&dist, serde_json::to_string(&sidecar)?)
}

fn split(a: SplitArgs) -> Result<()> {
    let data = read_conll(&a.data)?;
    let ids: Vec<&str> = data.iter().map(|s| s.id.as_str()).collect();
    let plan = kfold_split(&ids, a.k, a.seed)?;
    write(&a.out, plan.to_tsv())
}

fn vote(a: VoteArgs) -> Result<()> {
    if a.preds.len() != a.weights.len() {
        return Err(Error::Config(format!(
            "{} prediction files but {} weights",
            a.preds.len(),
            a.weights.len()
        )));
    }
    let folds = a
        .preds
        .iter()
        .zip(&a.weights)
        .map(|(p, w)| {
            let set: PredictionSet = serde_json::from_str(&read(p)?)
                .map_err(|e| Error::parse(p, e.line(), e.to_string()))?;
            Ok((*w, set))
        })
        .collect::<Result<Vec<_>>>()?;
    let mode = if a.hard {
        VoteMode::Hard
    } else {
        VoteMode::Soft
    };
    let preds = WeightedPredictions { folds };
    let voted = weighted_vote(&preds, mode)?;
    let mut text = String::new();
    for (s, tags) in preds.folds[0].1.sentences.iter().zip(&voted) {
        tagged_conll(&s.id, &s.tokens, tags, &mut text);
    }
    write(&a.out, text)
}

fn score_cmd(a: ScoreArgs) -> Result<()> {
    let tags = |path: &Path| -> Result<Vec<Sentence>> {
        let data = read_conll(path)?;
        if let Some(s) = data.iter().find(|s| s.gold_tags.is_none()) {
            return Err(Error::Config(format!(
                "{}: sentence {:?} has no tags",
                path.display(),
                s.id
            )));
        }
        Ok(data)
    };
    let gold = tags(&a.gold)?;
    let pred = tags(&a.pred)?;
    if gold.len() != pred.len() {
        return Err(Error::Alignment(format!(
            "{} gold sentences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    for (g, p) in gold.iter().zip(&pred) {
        if g.tokens != p.tokens {
            return Err(Error::Alignment(format!(
                "sentence {:?}: gold and predicted tokens differ",
                g.id
            )));
        }
    }
    let unwrap = |d: Vec<Sentence>| -> Vec<Vec<String>> {
        d.into_iter()
            .map(|s| s.gold_tags.unwrap_or_default())
            .collect()
    };
    let report = score(&unwrap(gold), &unwrap(pred))?;
    let text = match a.report {
        ReportFormat::Json => serde_json::to_string_pretty(&report)? + "\n",
        ReportFormat::Text => report.to_text(),
    };
    match a.out {
        Some(path) => write(&path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn synthetic_ab(a: SyntheticAbArgs) -> Result<()> {
    let mut config = SyntheticConfig::with_seed(a.seed);
    config.property_mask = a.properties;
    config.mask_mode = a.mask_mode;
    if let Some(e) = a.epochs {
        config.train.epochs = e;
    }
    let report = run_synthetic_ab(&config)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match a.out {
        Some(path) => write(&path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
