//! One function per subcommand. Every stage reads from and writes under the
//! output directory, so a run is a fixed sequence of invocations sharing
//! `--out`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hsd_core::annotation::{agreement_pipeline, read_records, router, write_records, AnnotationStore, ServiceState};
use hsd_core::classifiers::{
    read_predictions, run_experiment, write_predictions, ClassifierSpec, ExperimentData, HttpLlm, LlmBackend,
    LlmProvider, PromptTemplate, ScriptedLlm, TrainedModel,
};
use hsd_core::corpus::{corpus_stats, load_corpus, stratified_split, Corpus, Label, Language};
use hsd_core::eval::{confusion, macro_metrics, report, round2, Report, RunResult, TableStyle};
use hsd_core::features::{build_cooccurrence, glove_train, tfidf_matrix, Vocabulary};
use hsd_core::preprocess::{preprocess_corpus, read_tokens, write_tokens, PreprocessConfig, TokenizedTweet};
use hsd_core::toy::gen_toy;
use hsd_core::translation::{
    align_corpora, translate_corpora, validate_translations, BuildOptions, CachedProvider, Glossary, HttpTranslator,
    MockTranslator, PhraseTable, TranslatedTweet, TranslationProvider,
};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

/// Corpora every downstream stage runs on, in this order.
pub const DATASETS: [&str; 4] = ["english", "urdu", "spanish", "joint"];
pub const SPLITS: [&str; 2] = ["train", "test"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    Mock,
    Live,
}

/// State shared by the stages that need a config.
pub struct Ctx {
    pub config: RunConfig,
    pub out: PathBuf,
    pub provider: Provider,
    /// SHA-256 of the config text plus the effective overrides.
    pub config_hash: String,
}

impl Ctx {
    pub fn new(
        config_path: &Path,
        out: PathBuf,
        seed: Option<u64>,
        idf_mode: Option<String>,
        provider: Provider,
    ) -> Result<Self, CliError> {
        let text = fs::read(config_path)
            .map_err(|e| CliError::Config(vec![format!("cannot read config {}: {e}", config_path.display())]))?;
        let mut config = RunConfig::load(config_path)?;
        if let Some(seed) = seed {
            config.seed = seed;
        }
        if let Some(mode) = idf_mode {
            config.features.idf_mode = mode;
        }
        let mut h = Sha256::new();
        h.update(&text);
        h.update(format!("\nseed={};idf={}", config.seed, config.features.idf_mode).as_bytes());
        Ok(Ctx {
            config,
            out,
            provider,
            config_hash: hex::encode(h.finalize()),
        })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    /// Path of a stage input under `--out`, failing if an earlier stage has
    /// not produced it.
    fn input(&self, rel: &str, producer: &str) -> Result<PathBuf, CliError> {
        let p = self.path(rel);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::Data(format!(
                "missing input {}; run `hsd {producer}` first",
                p.display()
            )))
        }
    }

    /// Writes `meta/<stage>.meta.json` with the seed, config hash and the
    /// digests of everything read and written.
    fn meta(&self, stage: &str, inputs: &[PathBuf], outputs: &[PathBuf], extra: Value) -> Result<(), CliError> {
        let digests = |files: &[PathBuf]| -> Result<BTreeMap<String, String>, CliError> {
            files.iter().map(|p| Ok((self.display(p), sha256_file(p)?))).collect()
        };
        let meta = json!({
            "stage": stage,
            "seed": self.config.seed,
            "config_hash": self.config_hash,
            "provider": self.provider,
            "inputs": digests(inputs)?,
            "outputs": digests(outputs)?,
            "details": extra,
        });
        write_json(&self.path(&format!("meta/{stage}.meta.json")), &meta)
    }

    /// Paths under `--out` are shown relative to it, external files by name,
    /// so metadata does not depend on where a run lives.
    fn display(&self, p: &Path) -> String {
        match p.strip_prefix(&self.out) {
            Ok(rel) => rel.to_string_lossy().replace('\\', "/"),
            Err(_) => p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        }
    }
}

fn sha256_file(p: &Path) -> Result<String, CliError> {
    let bytes = fs::read(p).map_err(|e| CliError::io(p, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CliError> {
    let mut buf = Vec::new();
    corpus.write_csv(&mut buf)?;
    write_bytes(path, &buf)
}

fn lang_name(lang: Language) -> &'static str {
    match lang {
        Language::English => "english",
        Language::Urdu => "urdu",
        Language::Spanish => "spanish",
    }
}

fn corpus_path(lang: Language) -> String {
    format!("corpus/{}.csv", lang_name(lang))
}

fn split_path(dataset: &str, part: &str) -> String {
    format!("splits/{dataset}/{part}.csv")
}

fn processed_path(dataset: &str, part: &str) -> String {
    format!("processed/{dataset}/{part}.csv")
}

/// Writes the toy corpora, resources and a matching config into `out`.
pub fn gen_toy_cmd(out: &Path, seed: u64) -> Result<(), CliError> {
    let toy = gen_toy(seed);
    for lang in Language::ALL {
        save_corpus(toy.corpus(lang), &out.join(format!("{}.csv", lang_name(lang))))?;
    }
    write_bytes(&out.join("phrase_table.csv"), toy.phrase_table.as_bytes())?;
    write_bytes(&out.join("glossary.csv"), toy.glossary.as_bytes())?;
    write_bytes(&out.join("llm_script.txt"), toy.llm_script.as_bytes())?;
    let mut log = Vec::new();
    write_records(&toy.annotations, &mut log).map_err(|e| CliError::io(out, e))?;
    write_bytes(&out.join("annotations.jsonl"), &log)?;
    write_bytes(&out.join("hsd.toml"), toy_config(seed).as_bytes())?;
    println!(
        "wrote toy corpus ({} tweets) to {}",
        3 * toy.english.len(),
        out.display()
    );
    Ok(())
}

/// A small model configuration that runs the full pipeline in seconds.
pub fn toy_config(seed: u64) -> String {
    format!(
        r#"version = 1
seed = {seed}
classifiers = ["svm", "attention"]

[paths]
english = "english.csv"
urdu = "urdu.csv"
spanish = "spanish.csv"
glossary = "glossary.csv"
phrase_table = "phrase_table.csv"
llm_script = "llm_script.txt"
annotations = "annotations.jsonl"

[split]
test_fraction = 0.2

[features]
idf_mode = "literal"
window = 5
glove_dim = 16
glove_epochs = 30

[svm]
c = 1.0
epochs = 50

[attention]
heads = 2
head_dim = 8
n_max = 32
epochs = 15
batch_size = 8
learning_rate = 0.01

[llm]
model = "gpt-4o"
shots_per_class = 2

[annotation]
host = "127.0.0.1"
port = 8080
annotators_per_item = 3
language = "en"
"#
    )
}

pub fn ingest(ctx: &Ctx) -> Result<(), CliError> {
    let paths = &ctx.config.paths;
    let mut seen: HashMap<String, Language> = HashMap::new();
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let mut counts = BTreeMap::new();
    for (lang, src) in [
        (Language::English, &paths.english),
        (Language::Urdu, &paths.urdu),
        (Language::Spanish, &paths.spanish),
    ] {
        let corpus = load_corpus(src, Some(lang)).map_err(|e| CliError::Data(format!("{}: {e}", src.display())))?;
        for t in corpus.iter() {
            if t.label.is_none() {
                return Err(CliError::Data(format!(
                    "{}: tweet `{}` has no label",
                    src.display(),
                    t.id
                )));
            }
            if let Some(other) = seen.insert(t.id.clone(), lang) {
                return Err(CliError::Data(format!(
                    "tweet id `{}` occurs in both the {other} and {lang} corpora",
                    t.id
                )));
            }
        }
        let dest = ctx.path(&corpus_path(lang));
        save_corpus(&corpus, &dest)?;
        counts.insert(lang_name(lang), corpus.len());
        inputs.push(src.clone());
        outputs.push(dest);
    }
    ctx.meta("ingest", &inputs, &outputs, json!({ "tweets": counts }))
}

fn load_ingested(ctx: &Ctx) -> Result<[Corpus; 3], CliError> {
    let load =
        |lang| -> Result<Corpus, CliError> { Ok(load_corpus(&ctx.input(&corpus_path(lang), "ingest")?, Some(lang))?) };
    Ok([
        load(Language::English)?,
        load(Language::Urdu)?,
        load(Language::Spanish)?,
    ])
}

pub fn stats(ctx: &Ctx) -> Result<(), CliError> {
    let corpora = load_ingested(ctx)?;
    let all: Vec<_> = corpora.iter().flat_map(|c| c.tweets.clone()).collect();
    let stats = corpus_stats(&Corpus::new(all, "all")?);
    let (json_out, txt_out) = (ctx.path("stats.json"), ctx.path("stats.txt"));
    write_json(&json_out, &stats)?;
    write_bytes(&txt_out, stats.to_table().as_bytes())?;
    print!("{}", stats.to_table());
    let inputs: Vec<PathBuf> = Language::ALL.iter().map(|&l| ctx.path(&corpus_path(l))).collect();
    ctx.meta("stats", &inputs, &[json_out, txt_out], Value::Null)
}

pub fn kappa(ctx: &Ctx) -> Result<(), CliError> {
    let src = ctx
        .config
        .paths
        .annotations
        .clone()
        .ok_or_else(|| CliError::Config(vec!["paths.annotations is required for `kappa`".into()]))?;
    let records = read_records(&src)?;
    let outcome = agreement_pipeline(&records, ctx.config.annotation.annotators_per_item)?;
    let r = &outcome.report;
    let doc = json!({
        "kappa": r.kappa,
        "observed_agreement": r.observed_agreement,
        "expected_agreement": r.expected_agreement,
        "interpretation": r.interpretation,
        "interpretation_label": r.interpretation.label(),
        "items": r.items,
        "annotators_per_item": r.annotators_per_item,
        "ties": outcome.ties(),
        "votes": outcome.votes,
        "excluded": outcome.excluded,
    });
    let dest = ctx.path("agreement.json");
    write_json(&dest, &doc)?;
    println!(
        "kappa {:.4} ({}) over {} items, {} ties, {} excluded",
        r.kappa,
        r.interpretation.label(),
        r.items,
        outcome.ties(),
        outcome.excluded.len()
    );
    ctx.meta("kappa", &[src], &[dest], Value::Null)
}

fn glossary(ctx: &Ctx) -> Result<(Glossary, Vec<PathBuf>), CliError> {
    match &ctx.config.paths.glossary {
        Some(p) => Ok((
            Glossary::load(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
            vec![p.clone()],
        )),
        None => Ok((Glossary::new(Vec::new()), Vec::new())),
    }
}

fn run_translation<P: TranslationProvider + ?Sized>(
    corpora: &[Corpus; 3],
    provider: &P,
    glossary: &Glossary,
    parallelism: usize,
) -> Result<Vec<TranslatedTweet>, CliError> {
    let options = BuildOptions { parallelism };
    Ok(translate_corpora(
        &corpora[0],
        &corpora[1],
        &corpora[2],
        provider,
        glossary,
        options,
    )?)
}

pub fn translate(ctx: &Ctx) -> Result<(), CliError> {
    let corpora = load_ingested(ctx)?;
    let (glossary, mut inputs) = glossary(ctx)?;
    inputs.extend(Language::ALL.iter().map(|&l| ctx.path(&corpus_path(l))));
    let settings = &ctx.config.translation;
    let mut translations = match ctx.provider {
        Provider::Mock => {
            let table_path =
                ctx.config.paths.phrase_table.clone().ok_or_else(|| {
                    CliError::Config(vec!["paths.phrase_table is required with --provider=mock".into()])
                })?;
            let table =
                PhraseTable::load(&table_path).map_err(|e| CliError::Data(format!("{}: {e}", table_path.display())))?;
            inputs.push(table_path);
            run_translation(&corpora, &MockTranslator::new(table), &glossary, settings.parallelism)?
        }
        Provider::Live => {
            let http = match &settings.api_key {
                Some(key) => HttpTranslator::with_key(ctx.config.http_settings(), key.clone())?,
                None => HttpTranslator::new(ctx.config.http_settings())?,
            };
            if settings.cache {
                let cache_path = ctx.path("cache/translations.jsonl");
                fs::create_dir_all(ctx.path("cache")).map_err(|e| CliError::io(&ctx.out, e))?;
                let cached = CachedProvider::open(http, &cache_path)?;
                run_translation(&corpora, &cached, &glossary, settings.parallelism)?
            } else {
                run_translation(&corpora, &http, &glossary, settings.parallelism)?
            }
        }
    };
    let validation = validate_translations(&mut translations, &glossary);
    let mut lines = String::new();
    for t in &translations {
        lines.push_str(&serde_json::to_string(t)?);
        lines.push('\n');
    }
    let (tr_out, val_out) = (ctx.path("translations.jsonl"), ctx.path("validation.json"));
    write_bytes(&tr_out, lines.as_bytes())?;
    write_json(&val_out, &validation)?;
    println!(
        "{} translations, {} validated, {} glossary flags",
        translations.len(),
        validation.validated(),
        validation.flags.len()
    );
    ctx.meta(
        "translate",
        &inputs,
        &[tr_out, val_out],
        json!({ "translations": translations.len() }),
    )
}

fn read_translations(path: &Path) -> Result<Vec<TranslatedTweet>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Data(format!("{}, line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn align(ctx: &Ctx) -> Result<(), CliError> {
    let [en, ur, es] = load_ingested(ctx)?;
    let tr_path = ctx.input("translations.jsonl", "translate")?;
    let unified = align_corpora(&en, &ur, &es, read_translations(&tr_path)?)?;
    let mut outputs = Vec::new();
    let mut sizes = BTreeMap::new();
    for lang in Language::ALL {
        let dest = ctx.path(&format!("datasets/{}.csv", lang_name(lang)));
        save_corpus(unified.combined(lang), &dest)?;
        sizes.insert(lang_name(lang), unified.combined(lang).len());
        outputs.push(dest);
    }
    let dest = ctx.path("datasets/joint.csv");
    save_corpus(&unified.joint, &dest)?;
    sizes.insert("joint", unified.joint.len());
    outputs.push(dest);
    let mut inputs: Vec<PathBuf> = Language::ALL.iter().map(|&l| ctx.path(&corpus_path(l))).collect();
    inputs.push(tr_path);
    ctx.meta("align", &inputs, &outputs, json!({ "sizes": sizes }))
}

pub fn split(ctx: &Ctx) -> Result<(), CliError> {
    let (mut inputs, mut outputs) = (Vec::new(), Vec::new());
    let mut sizes = BTreeMap::new();
    for ds in DATASETS {
        let src = ctx.input(&format!("datasets/{ds}.csv"), "align")?;
        let corpus = load_corpus(&src, None)?;
        let (train, test) = stratified_split(&corpus, ctx.config.split.test_fraction, ctx.config.seed)?;
        for (part, c) in [("train", &train), ("test", &test)] {
            let dest = ctx.path(&split_path(ds, part));
            save_corpus(c, &dest)?;
            outputs.push(dest);
        }
        sizes.insert(ds, json!({ "train": train.len(), "test": test.len() }));
        inputs.push(src);
    }
    ctx.meta(
        "split",
        &inputs,
        &outputs,
        json!({ "test_fraction": ctx.config.split.test_fraction, "sizes": sizes }),
    )
}

/// Bundled resources plus any extra stopword lists, replacement stem rules
/// and minimum lengths from the config.
pub fn preprocess_config(config: &RunConfig) -> Result<PreprocessConfig, CliError> {
    let mut pc = PreprocessConfig::default();
    for (lang, path) in config.stopword_files() {
        pc.stopwords.load_file(lang, path)?;
    }
    for (lang, path) in config.stem_rule_files() {
        pc.stems.load_file(lang, path)?;
    }
    pc.min_token_len.extend(config.min_token_len());
    Ok(pc)
}

fn load_split(ctx: &Ctx, ds: &str, part: &str) -> Result<(Corpus, PathBuf), CliError> {
    let p = ctx.input(&split_path(ds, part), "split")?;
    Ok((load_corpus(&p, None)?, p))
}

pub fn preprocess(ctx: &Ctx) -> Result<(), CliError> {
    let pc = preprocess_config(&ctx.config)?;
    let (mut inputs, mut outputs) = (Vec::new(), Vec::new());
    let mut reports = BTreeMap::new();
    for ds in DATASETS {
        let mut per_part = BTreeMap::new();
        for part in SPLITS {
            let (corpus, src) = load_split(ctx, ds, part)?;
            let processed = preprocess_corpus(&corpus, &pc)?;
            let dest = ctx.path(&processed_path(ds, part));
            let mut buf = Vec::new();
            write_tokens(&processed.tweets, &mut buf).map_err(|e| CliError::io(&dest, e))?;
            write_bytes(&dest, &buf)?;
            per_part.insert(part, processed.report);
            inputs.push(src);
            outputs.push(dest);
        }
        reports.insert(ds, per_part);
    }
    let report_path = ctx.path("processed/report.json");
    write_json(&report_path, &reports)?;
    outputs.push(report_path);
    inputs.extend(config_resource_files(&ctx.config));
    ctx.meta("preprocess", &inputs, &outputs, Value::Null)
}

fn config_resource_files(config: &RunConfig) -> Vec<PathBuf> {
    config
        .stopword_files()
        .into_iter()
        .chain(config.stem_rule_files())
        .map(|(_, p)| p.to_path_buf())
        .collect()
}

fn load_tokens(ctx: &Ctx, ds: &str, part: &str) -> Result<(Vec<TokenizedTweet>, PathBuf), CliError> {
    let p = ctx.input(&processed_path(ds, part), "preprocess")?;
    let file = fs::File::open(&p).map_err(|e| CliError::io(&p, e))?;
    Ok((read_tokens(BufReader::new(file), &p.display().to_string())?, p))
}

pub fn featurize(ctx: &Ctx) -> Result<(), CliError> {
    let mode = ctx.config.idf_mode();
    let glove = ctx.config.glove_config();
    let (mut inputs, mut outputs) = (Vec::new(), Vec::new());
    let mut traces = BTreeMap::new();
    for ds in DATASETS {
        let (train, train_src) = load_tokens(ctx, ds, "train")?;
        let (test, test_src) = load_tokens(ctx, ds, "test")?;
        inputs.extend([train_src, test_src]);
        let docs = |ts: &[TokenizedTweet]| -> Vec<Vec<String>> { ts.iter().map(|t| t.tokens.clone()).collect() };
        let ids = |ts: &[TokenizedTweet]| -> Vec<String> { ts.iter().map(|t| t.tweet_id.clone()).collect() };
        let train_docs = docs(&train);
        let vocab = Vocabulary::build(&train_docs);
        let dir = format!("features/{ds}");

        let vocab_path = ctx.path(&format!("{dir}/vocabulary.json"));
        write_bytes(&vocab_path, vocab.to_json().as_bytes())?;
        outputs.push(vocab_path);
        for (part, tweets) in [("train", &train), ("test", &test)] {
            let m = tfidf_matrix(ids(tweets), &docs(tweets), &vocab, mode);
            let dest = ctx.path(&format!("{dir}/tfidf_{part}.txt"));
            let mut buf = Vec::new();
            m.write_triplets(&mut buf).map_err(|e| CliError::io(&dest, e))?;
            write_bytes(&dest, &buf)?;
            outputs.push(dest);
        }

        let x = build_cooccurrence(&train_docs, &vocab, ctx.config.features.window)?;
        let (params, trace) = glove_train(&x, &glove)?;
        let dest = ctx.path(&format!("{dir}/glove.txt"));
        let mut buf = Vec::new();
        params
            .write_text(&vocab, glove.seed, &mut buf)
            .map_err(|e| CliError::io(&dest, e))?;
        write_bytes(&dest, &buf)?;
        outputs.push(dest);
        traces.insert(ds, trace);
    }
    let trace_path = ctx.path("features/glove_trace.json");
    write_json(&trace_path, &traces)?;
    outputs.push(trace_path);
    ctx.meta(
        "featurize",
        &inputs,
        &outputs,
        json!({ "idf_mode": ctx.config.features.idf_mode, "glove": glove }),
    )
}

fn classifier_spec(config: &RunConfig, name: &str) -> ClassifierSpec {
    match name {
        "svm" => ClassifierSpec::Svm {
            svm: config.svm_config(),
            idf: config.idf_mode(),
        },
        _ => ClassifierSpec::Attention {
            encoder: config.attention_config(),
            train: config.neural_config(),
        },
    }
}

fn save_predictions(
    ctx: &Ctx,
    ds: &str,
    run: &hsd_core::classifiers::ExperimentRun,
    extra: Value,
) -> Result<Vec<PathBuf>, CliError> {
    let id = &run.metadata.classifier_id;
    let dest = ctx.path(&format!("predictions/{ds}/{id}.csv"));
    let mut buf = Vec::new();
    write_predictions(&run.predictions, &mut buf)?;
    write_bytes(&dest, &buf)?;
    let meta_path = ctx.path(&format!("predictions/{ds}/{id}.meta.json"));
    write_json(&meta_path, &json!({ "run": run.metadata, "details": extra }))?;
    Ok(vec![dest, meta_path])
}

pub fn train(ctx: &Ctx) -> Result<(), CliError> {
    let pc = preprocess_config(&ctx.config)?;
    let (mut inputs, mut outputs) = (Vec::new(), Vec::new());
    for ds in DATASETS {
        let (train, train_src) = load_split(ctx, ds, "train")?;
        let (test, test_src) = load_split(ctx, ds, "test")?;
        inputs.extend([train_src, test_src]);
        let data = ExperimentData {
            train: &train,
            test: &test,
            preprocess: &pc,
        };
        for name in &ctx.config.classifiers {
            let spec = classifier_spec(&ctx.config, name);
            let run = run_experiment(&data, &spec, None)?;
            let (model_path, model_bytes, trace) = match &run.model {
                TrainedModel::Svm {
                    model,
                    vocabulary,
                    trace,
                } => {
                    let doc = json!({ "model": model, "vocabulary": vocabulary.tokens() });
                    (
                        format!("models/{ds}/svm.json"),
                        serde_json::to_vec_pretty(&doc)?,
                        serde_json::to_value(trace)?,
                    )
                }
                TrainedModel::Attention { model, trace } => {
                    let mut buf = Vec::new();
                    model.write(&mut buf).map_err(|e| CliError::io(&ctx.out, e))?;
                    (format!("models/{ds}/attention.txt"), buf, serde_json::to_value(trace)?)
                }
                TrainedModel::Llm { .. } => unreachable!("train runs trainable classifiers only"),
            };
            let model_path = ctx.path(&model_path);
            write_bytes(&model_path, &model_bytes)?;
            outputs.push(model_path);
            outputs.extend(save_predictions(
                ctx,
                ds,
                &run,
                json!({ "spec": spec, "trace": trace }),
            )?);
            println!(
                "{ds}/{}: {} predictions",
                run.metadata.classifier_id,
                run.predictions.len()
            );
        }
    }
    inputs.extend(config_resource_files(&ctx.config));
    ctx.meta("train", &inputs, &outputs, Value::Null)
}

pub fn classify_llm(ctx: &Ctx) -> Result<(), CliError> {
    let template = match &ctx.config.llm.template {
        Some(p) => PromptTemplate::load(p)?,
        None => PromptTemplate::bundled(),
    };
    let mut llm = ctx.config.llm_config();
    llm.template = template.id.clone();
    let mut inputs = Vec::new();
    let script_path = match ctx.provider {
        Provider::Mock => {
            let p =
                ctx.config.paths.llm_script.clone().ok_or_else(|| {
                    CliError::Config(vec!["paths.llm_script is required with --provider=mock".into()])
                })?;
            // scripted replies may depend on request order
            llm.parallelism = 1;
            inputs.push(p.clone());
            Some(p)
        }
        Provider::Live => None,
    };
    let spec = ClassifierSpec::Llm { llm: llm.clone() };
    let mut outputs = Vec::new();
    for ds in DATASETS {
        let (train, train_src) = load_split(ctx, ds, "train")?;
        let (test, test_src) = load_split(ctx, ds, "test")?;
        inputs.extend([train_src, test_src]);
        // a fresh provider per dataset keeps scripted sequences aligned
        let provider: Box<dyn LlmProvider> = match &script_path {
            Some(p) => Box::new(ScriptedLlm::load(p)?),
            None => match &ctx.config.llm.api_key {
                Some(key) => Box::new(HttpLlm::with_key(llm.clone(), key.clone())?),
                None => Box::new(HttpLlm::new(llm.clone())?),
            },
        };
        let backend = LlmBackend {
            provider: provider.as_ref(),
            template: template.clone(),
        };
        let data = ExperimentData {
            train: &train,
            test: &test,
            preprocess: &PreprocessConfig::default(),
        };
        let run = run_experiment(&data, &spec, Some(&backend))?;
        let exemplars = match &run.model {
            TrainedModel::Llm { prompt } => serde_json::to_value(&prompt.exemplars)?,
            _ => Value::Null,
        };
        outputs.extend(save_predictions(
            ctx,
            ds,
            &run,
            json!({ "spec": spec, "exemplars": exemplars }),
        )?);
        println!(
            "{ds}/{}: {} predictions, {} abstained",
            run.metadata.classifier_id,
            run.predictions.len(),
            run.metadata.abstains
        );
    }
    ctx.meta("classify-llm", &inputs, &outputs, Value::Null)
}

fn gold_labels(corpus: &Corpus) -> HashMap<String, Label> {
    corpus
        .iter()
        .filter_map(|t| t.label.map(|l| (t.id.clone(), l)))
        .collect()
}

/// Prediction files of one dataset, sorted by classifier id.
fn prediction_files(ctx: &Ctx, ds: &str) -> Result<Vec<(String, PathBuf)>, CliError> {
    let dir = ctx.path(&format!("predictions/{ds}"));
    let Ok(entries) = fs::read_dir(&dir) else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for e in entries {
        let p = e.map_err(|err| CliError::io(&dir, err))?.path();
        if p.extension().is_some_and(|x| x == "csv") {
            let id = p.file_stem().expect("has extension").to_string_lossy().into_owned();
            out.push((id, p));
        }
    }
    out.sort();
    Ok(out)
}

pub fn evaluate(ctx: &Ctx) -> Result<(), CliError> {
    let mut runs = Vec::new();
    let mut inputs = Vec::new();
    for ds in DATASETS {
        let (test, test_src) = load_split(ctx, ds, "test")?;
        inputs.push(test_src);
        let gold = gold_labels(&test);
        let mut scored = Vec::new();
        for (id, path) in prediction_files(ctx, ds)? {
            let file = fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
            let preds = read_predictions(BufReader::new(file))
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let (matrix, abstains) =
                confusion(&preds, &gold).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            scored.push((id, matrix, abstains));
            inputs.push(path);
        }
        let baseline = scored
            .iter()
            .find(|(id, ..)| id == "svm")
            .map(|(_, m, _)| round2(macro_metrics(m).macro_f1));
        for (id, matrix, abstains) in scored {
            runs.push(RunResult {
                baseline_f1: if id == "svm" { None } else { baseline },
                name: format!("{ds}/{id}"),
                matrix,
                abstains,
            });
        }
    }
    if runs.is_empty() {
        return Err(CliError::Data(format!(
            "no predictions under {}; run `hsd train` or `hsd classify-llm` first",
            ctx.path("predictions").display()
        )));
    }
    let dest = ctx.path("evaluation.json");
    write_json(&dest, &runs)?;
    ctx.meta("evaluate", &inputs, &[dest], json!({ "runs": runs.len() }))
}

pub fn report_cmd(ctx: &Ctx) -> Result<(), CliError> {
    let src = ctx.input("evaluation.json", "evaluate")?;
    let runs: Vec<RunResult> = read_json(&src)?;
    let rep: Report = report(&runs);
    let (json_out, md_out, txt_out) = (ctx.path("report.json"), ctx.path("report.md"), ctx.path("report.txt"));
    write_bytes(&json_out, rep.to_json().as_bytes())?;
    write_bytes(&md_out, rep.render(TableStyle::Markdown).as_bytes())?;
    let text = rep.render(TableStyle::Text);
    write_bytes(&txt_out, text.as_bytes())?;
    print!("{text}");
    ctx.meta("report", &[src], &[json_out, md_out, txt_out], Value::Null)
}

/// Serves the labeling API (and UI assets, if configured) until killed.
/// Labels go to `annotations/labels.jsonl` under `--out`.
pub fn annotate_serve(ctx: &Ctx) -> Result<(), CliError> {
    let lang = ctx.config.annotation_language();
    let paths = &ctx.config.paths;
    let src = match lang {
        Language::English => &paths.english,
        Language::Urdu => &paths.urdu,
        Language::Spanish => &paths.spanish,
    };
    let corpus = load_corpus(src, Some(lang)).map_err(|e| CliError::Data(format!("{}: {e}", src.display())))?;
    let store_path = ctx.path("annotations/labels.jsonl");
    fs::create_dir_all(ctx.path("annotations")).map_err(|e| CliError::io(&ctx.out, e))?;
    let store = Arc::new(AnnotationStore::open(&store_path)?);
    let state = ServiceState {
        store,
        corpus,
        annotators_per_item: ctx.config.annotation.annotators_per_item,
    };
    let app = router(Arc::new(state), ctx.config.annotation.assets_dir.clone());
    let addr = format!("{}:{}", ctx.config.annotation.host, ctx.config.annotation.port);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Data(format!("runtime: {e}")))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Config(vec![format!("cannot bind {addr}: {e}")]))?;
        let local = listener.local_addr().map_err(|e| CliError::Data(e.to_string()))?;
        println!("listening on http://{local}");
        use std::io::Write;
        let _ = std::io::stdout().flush();
        axum::serve(listener, app)
            .await
            .map_err(|e| CliError::Data(format!("server: {e}")))
    })
}
