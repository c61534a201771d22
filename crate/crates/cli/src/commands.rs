use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fieldforge::augment::{CutMixConfig, CutMixDataset};
use fieldforge::corpus::{self, class_distribution, label_index};
use fieldforge::fusion::{nms, wbf, TtaKind};
use fieldforge::metrics::{
    accuracy, confidence_summary, confusion, match_detections, per_class_metrics, pipeline_bounds, ConfusionMatrix,
    EvaluationReport, SupportConvention,
};
use fieldforge::mosaic::{
    self, generate_batch, list_pairs, parse_annotations, procedural_soil_texture, read_pair, write_pair, TilePool,
};
use fieldforge::pipeline::{
    baseline_classifier, oracle_classifier, oracle_identifier, run_pipeline, ClassifierModel, DetectorIdentifier,
    IdentifierModel, PipelineConfig, TileGridDetector,
};
use fieldforge::rebalance::{self, balance_plan, builtin_generator, DirectoryGenerator, GeneratorConfig, ImageGenerator};
use fieldforge::schedule::LrSchedule;
use fieldforge::{rng, DiseaseClass, MosaicSpec, ScoredBox};
use serde::Serialize;

use crate::args::*;
use crate::{split_records, Corpus};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Stats(a) => stats(&a),
        Command::Plan(a) => plan(&a),
        Command::Synthesize(a) => synthesize(&a),
        Command::Generate(a) => generate(&a),
        Command::Augment(a) => augment(&a),
        Command::Fuse(a) => fuse(&a),
        Command::LrDump(a) => lr_dump(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Serve(a) => crate::service::serve_blocking(&a),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

/// Write to `out` or stdout.
fn emit(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => write(path, text),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

#[derive(Serialize)]
struct Stats {
    counts: corpus::ClassDistribution,
    total: usize,
}

fn stats(a: &StatsArgs) -> Result<()> {
    let records = corpus::parse_label_table(&read(&a.labels)?)?;
    let counts = class_distribution(&records);
    emit(None, &to_json(&Stats { total: counts.total(), counts })?)
}

fn plan(a: &PlanArgs) -> Result<()> {
    let records = corpus::parse_label_table(&read(&a.labels)?)?;
    let quota = balance_plan(&class_distribution(&records), a.target)?;
    emit(None, &to_json(&quota)?)
}

fn synthesize(a: &SynthesizeArgs) -> Result<()> {
    let corpus = Corpus::open(&a.labels, a.images.as_deref())?;
    let quota = balance_plan(&class_distribution(corpus.records()), a.target)?;
    let generator: Box<dyn ImageGenerator> = match &a.generator_dir {
        Some(dir) => Box::new(DirectoryGenerator::open(dir)?),
        None => Box::new(builtin_generator(GeneratorConfig::default())?),
    };
    let novel = rebalance::synthesize(corpus.records(), &quota, generator.as_ref(), corpus.pixels(), a.seed)?;

    create_dir(&a.out)?;
    for n in &novel {
        write(&a.out.join(&n.record.image_id), mosaic::encode_png(&n.image)?)?;
    }
    let synthetic: Vec<_> = novel.iter().map(|n| n.record.clone()).collect();
    let mut balanced = corpus.records().to_vec();
    balanced.extend(synthetic.iter().cloned());
    write(&a.out.join("synthetic.csv"), corpus::write_label_table(&synthetic))?;
    write(&a.out.join("balanced.csv"), corpus::write_label_table(&balanced))?;
    eprintln!("wrote {} images to {}", novel.len(), a.out.display());
    Ok(())
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let spec = MosaicSpec {
        soil_ratio: a.soil_ratio,
        rng_seed: a.seed,
        ..MosaicSpec::default()
    };
    let corpus = Corpus::resolve(a.corpus.labels.as_ref(), a.corpus.images.as_ref(), a.seed)?;
    let pool = TilePool::prepare(corpus.records(), corpus.pixels(), &spec)?;
    let texture = match &a.soil_texture {
        Some(path) => mosaic::decode_png(&fs::read(path).with_context(|| format!("reading {}", path.display()))?)?,
        None => procedural_soil_texture(256, 256, rng::derive_seed(a.seed, &[u64::MAX])),
    };
    let items = generate_batch(&pool, &texture, &spec, a.count)?;
    create_dir(&a.out)?;
    for (k, item) in items.iter().enumerate() {
        write_pair(&a.out, k, item).with_context(|| format!("writing mosaic {k} to {}", a.out.display()))?;
    }
    eprintln!("wrote {} mosaics to {}", items.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct MixLog {
    index: usize,
    donor: Option<usize>,
    region: Option<String>,
}

fn augment(a: &AugmentArgs) -> Result<()> {
    let spec = MosaicSpec::default();
    let pairs = list_pairs(&a.input).with_context(|| format!("listing {}", a.input.display()))?;
    if pairs.is_empty() {
        bail!("no train_<k>.png / train_<k>.csv pairs in {}", a.input.display());
    }
    let items = pairs
        .iter()
        .map(|(_, png, csv)| read_pair(png, csv, &spec))
        .collect::<Result<Vec<_>, _>>()?;
    let dataset = CutMixDataset::new(
        &items,
        CutMixConfig {
            probability: a.probability,
            rng_seed: a.seed,
        },
    )?;
    create_dir(&a.out)?;
    let mut log = Vec::with_capacity(items.len());
    for (i, (k, _, _)) in pairs.iter().enumerate() {
        let outcome = dataset.get(i, a.epoch)?;
        write_pair(&a.out, *k, &outcome.item)?;
        log.push(MixLog {
            index: *k,
            donor: outcome.mixed.map(|(d, _)| pairs[d].0),
            region: outcome.mixed.map(|(_, r)| r.to_string()),
        });
    }
    write(&a.out.join("cutmix.json"), to_json(&log)?)
}

/// A file holding one box list or a list of box lists.
pub fn read_box_lists(text: &str) -> Result<Vec<Vec<ScoredBox>>> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let nested = value
        .as_array()
        .and_then(|v| v.first())
        .is_some_and(serde_json::Value::is_array);
    let lists: Vec<Vec<ScoredBox>> = if nested {
        serde_json::from_value(value)?
    } else {
        vec![serde_json::from_value(value)?]
    };
    for b in lists.iter().flatten() {
        b.validate()?;
    }
    Ok(lists)
}

fn fuse(a: &FuseArgs) -> Result<()> {
    let mut lists = Vec::new();
    for path in &a.inputs {
        lists.extend(read_box_lists(&read(path)?).with_context(|| format!("parsing {}", path.display()))?);
    }
    let fused = match a.method {
        FuseMethod::Nms => nms(&lists.concat(), a.iou),
        FuseMethod::Wbf => wbf(&lists, a.iou, a.source_count.unwrap_or(lists.len())),
    };
    emit(a.out.as_ref(), &to_json(&fused)?)
}

fn lr_dump(a: &LrDumpArgs) -> Result<()> {
    let schedule = LrSchedule {
        lr_start: a.lr_start,
        lr_max: a.lr_max,
        lr_min: a.lr_min,
        ramp_epochs: a.ramp_epochs,
        sustain_epochs: a.sustain_epochs,
        decay: a.decay,
    };
    schedule.validate()?;
    let mut text = String::from("epoch,lr\n");
    for (epoch, lr) in schedule.curve(a.epochs).iter().enumerate() {
        text.push_str(&format!("{epoch},{lr}\n"));
    }
    emit(a.out.as_ref(), &text)
}

/// `image_id,label` rows (header optional) joined with the label table.
fn read_predictions(text: &str, labels: &[fieldforge::HighFidelityRecord]) -> Result<(Vec<String>, Vec<String>)> {
    let truth = label_index(labels);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let (mut predicted, mut actual) = (Vec::new(), Vec::new());
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        let (Some(id), Some(label)) = (row.get(0), row.get(1)) else {
            bail!("line {}: expected `image_id,label`", line + 1);
        };
        if line == 0 && id == "image_id" {
            continue;
        }
        let class = *truth
            .get(id)
            .with_context(|| format!("line {}: `{id}` is not in the label table", line + 1))?;
        predicted.push(label.to_string());
        actual.push(class.to_string());
    }
    Ok((predicted, actual))
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let classes: Vec<String> = DiseaseClass::ALL.iter().map(|c| c.to_string()).collect();
    let cm: Option<ConfusionMatrix> = match (&a.confusion, &a.predictions, &a.labels) {
        (Some(path), _, _) => Some(serde_json::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))?),
        (None, Some(pred), Some(labels)) => {
            let records = corpus::parse_label_table(&read(labels)?)?;
            let (predicted, actual) = read_predictions(&read(pred)?, &records)?;
            Some(confusion(&predicted, &actual, &classes)?)
        }
        _ => None,
    };
    if let Some(cm) = &cm {
        // round-trip through the validating constructor
        ConfusionMatrix::from_counts(cm.classes.clone(), cm.counts.clone())?;
    }
    let support = match a.support {
        Support::Predicted => SupportConvention::Predicted,
        Support::Actual => SupportConvention::Actual,
    };
    let acc = cm.as_ref().map(accuracy).transpose()?;
    let confidence = match (&a.detections, &a.annotations) {
        (Some(det), Some(ann)) => {
            let preds = read_box_lists(&read(det)?)?.concat();
            let truth = parse_annotations(&read(ann)?)?;
            Some(confidence_summary(&match_detections(&preds, &truth, a.match_iou)))
        }
        _ => None,
    };
    let bounds = match (a.identifier_accuracy, a.classifier_accuracy.or(acc)) {
        (Some(i), Some(c)) => Some(pipeline_bounds(i, c)?),
        (Some(_), None) => bail!("--identifier-accuracy needs a classifier accuracy"),
        _ => None,
    };
    let report = EvaluationReport {
        per_class: cm.as_ref().map(|m| per_class_metrics(m, support)),
        confusion: cm,
        accuracy: acc,
        confidence,
        bounds,
    };
    emit(a.out.as_ref(), &to_json(&report)?)
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    if a.fields == 0 {
        bail!("--fields must be positive");
    }
    let corpus = Corpus::resolve(a.corpus.labels.as_ref(), a.corpus.images.as_ref(), a.seed)?;
    let needs_training = a.identifier == IdentifierKind::Baseline || a.classifier == ClassifierKind::Baseline;
    let (train, field_records) = if needs_training {
        split_records(corpus.records(), a.holdout, rng::derive_seed(a.seed, &[0]))
    } else {
        (Vec::new(), corpus.records().to_vec())
    };
    if field_records.is_empty() {
        bail!("no records left to build fields from");
    }

    let spec = MosaicSpec {
        rng_seed: rng::derive_seed(a.seed, &[1]),
        ..MosaicSpec::default()
    };
    let pool = TilePool::prepare(&field_records, corpus.pixels(), &spec)?;
    let texture = procedural_soil_texture(256, 256, rng::derive_seed(a.seed, &[2]));
    let fields = generate_batch(&pool, &texture, &spec, a.fields)?;

    let id_seed = rng::derive_seed(a.seed, &[3]);
    let cls_seed = if a.correlated { id_seed } else { rng::derive_seed(a.seed, &[4]) };
    let baseline = if needs_training {
        Some(baseline_classifier(&train, corpus.pixels())?)
    } else {
        None
    };
    let identifier: Box<dyn IdentifierModel> = match a.identifier {
        IdentifierKind::Oracle => Box::new(oracle_identifier(a.miss_rate, a.false_alarm_rate, id_seed)?),
        IdentifierKind::Baseline => Box::new(DetectorIdentifier {
            detector: TileGridDetector {
                classifier: baseline.clone().expect("trained above"),
                spec,
                threshold: 0.5,
            },
            tta: Some((TtaKind::ALL.to_vec(), 0.55)),
        }),
    };
    let classifier: Box<dyn ClassifierModel> = match a.classifier {
        ClassifierKind::Oracle => Box::new(oracle_classifier(a.error_rate, cls_seed, corpus.records())?),
        ClassifierKind::Baseline => Box::new(baseline.expect("trained above")),
    };
    let report = run_pipeline(
        identifier.as_ref(),
        classifier.as_ref(),
        &fields,
        &label_index(corpus.records()),
        corpus.pixels(),
        &PipelineConfig::default(),
    )?;
    let mut value = serde_json::to_value(&report)?;
    if !a.diagnoses {
        if let Some(obj) = value.as_object_mut() {
            obj.remove("diagnoses");
        }
    }
    emit(a.out.as_ref(), &(serde_json::to_string_pretty(&value)? + "\n"))
}
