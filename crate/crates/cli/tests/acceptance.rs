//! Acceptance suite: one PASS/FAIL line per criterion, each with its own
//! oracle and runtime budget. Exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use hsd_core::annotation::{agreement_pipeline, interpret_kappa, AnnotationRecord, Interpretation};
use hsd_core::attention::{
    attention_weights, compressed_multi_head, encoder_grad, multi_head, scaled_dot_attention, AttentionConfig,
    AttentionParams, EncoderParams, Example,
};
use hsd_core::classifiers::{svm_predict, svm_train, SvmConfig};
use hsd_core::corpus::{Corpus, Label, Language, Tweet};
use hsd_core::eval::{improvement, macro_metrics, ConfusionMatrix, Report};
use hsd_core::features::{
    build_cooccurrence, glove_cost, glove_gradient, glove_train, inverse_document_frequency, term_frequency,
    tfidf_matrix, FeatureMatrix, GloveConfig, GloveParams, IdfMode, Vocabulary,
};
use hsd_core::translation::{build_unified_corpora, BuildOptions, Glossary, MockTranslator, PhraseTable};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<(), String>;

/// Name, check and runtime budget.
type Criterion = (&'static str, fn() -> Check, Duration);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($msg)+));
        }
    };
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

// metrics

fn metrics_oracle() -> Check {
    let published = [
        ("English", ConfusionMatrix::new(854, 99, 166, 920), 0.87),
        ("Spanish", ConfusionMatrix::new(833, 119, 187, 900), 0.85),
        ("Urdu", ConfusionMatrix::new(792, 159, 228, 860), 0.81),
        ("Joint", ConfusionMatrix::new(864, 89, 156, 930), 0.88),
    ];
    for (name, cm, want) in published {
        let m = macro_metrics(&cm);
        for (metric, got) in [
            ("accuracy", m.accuracy),
            ("precision", m.macro_precision),
            ("recall", m.macro_recall),
            ("f1", m.macro_f1),
        ] {
            ensure!((got - want).abs() <= 0.005, "{name} {metric}: {got} vs {want}");
        }
    }
    Ok(())
}

fn improvement_oracle() -> Check {
    for (model, base, want) in [
        (0.87, 0.80, 8.75),
        (0.85, 0.78, 8.97),
        (0.81, 0.77, 5.19),
        (0.88, 0.82, 7.32),
    ] {
        let got = improvement(model, base).map_err(|e| e.to_string())?;
        ensure!(got == want, "improvement({model}, {base}) = {got}, want {want}");
    }
    Ok(())
}

// agreement

fn records(hateful_votes: &[usize]) -> Vec<AnnotationRecord> {
    let mut out = Vec::new();
    for (i, &h) in hateful_votes.iter().enumerate() {
        for a in 0..3 {
            let label = if a < h { Label::Hateful } else { Label::NotHateful };
            out.push(AnnotationRecord::new(
                &format!("t{i:02}"),
                &format!("a{a}"),
                label,
                (3 * i + a) as u64,
            ));
        }
    }
    out
}

/// Fleiss' definition in exact integer arithmetic over (hateful, other)
/// count columns.
fn integer_kappa(hateful_votes: &[usize], n: i64) -> f64 {
    let items = hateful_votes.len() as i64;
    let agree: i64 = hateful_votes
        .iter()
        .map(|&h| h as i64)
        .map(|h| h * h + (n - h) * (n - h) - n)
        .sum();
    let h: i64 = hateful_votes.iter().map(|&h| h as i64).sum();
    let o = items * n - h;
    let (d1, d2) = (items * n * (n - 1), (items * n) * (items * n));
    let marg = h * h + o * o;
    (agree * d2 - marg * d1) as f64 / (d1 * d2 - marg * d1) as f64
}

fn agreement_suite() -> Check {
    for unanimous in [&[3usize, 0, 3][..], &[0, 0, 3, 3, 0, 3, 3]] {
        let k = agreement_pipeline(&records(unanimous), 3)
            .map_err(|e| e.to_string())?
            .report
            .kappa;
        ensure!(k == 1.0, "unanimous fixture gave {k}");
    }
    let mixed = [3, 3, 3, 2, 2, 1, 0, 0, 0, 1, 2, 3];
    let oracle = integer_kappa(&mixed, 3);
    ensure!(oracle == 7.0 / 16.0, "oracle self-check {oracle}");
    let got = agreement_pipeline(&records(&mixed), 3)
        .map_err(|e| e.to_string())?
        .report
        .kappa;
    ensure!((got - oracle).abs() <= 1e-9, "12-item kappa {got} vs {oracle}");
    let band = interpret_kappa(0.821).map_err(|e| e.to_string())?;
    ensure!(band == Interpretation::Substantial, "0.821 -> {band:?}");
    Ok(())
}

// attention

fn fixture(rows: usize, cols: usize, seed: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        ((i * 7 + j * 3) as f64 * 0.61 + seed).sin() * 2.0
    })
}

fn tiny() -> AttentionConfig {
    AttentionConfig {
        heads: 2,
        d_k: 4,
        d_v: 4,
        d_model: 8,
        n_max: 4,
        projection_dim: 2,
    }
}

fn attention_suite() -> Check {
    // stochastic rows
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let q = Array2::from_shape_fn((3, 4), |_| rng.random_range(-40.0..40.0));
        let k = Array2::from_shape_fn((5, 4), |_| rng.random_range(-40.0..40.0));
        let w = attention_weights(&q.view(), &k.view()).map_err(|e| e.to_string())?;
        for row in w.rows() {
            ensure!((row.sum() - 1.0).abs() <= 1e-6, "row sum {}", row.sum());
        }
    }

    // one head with identity projections is plain attention
    let cfg = AttentionConfig {
        heads: 1,
        d_k: 3,
        d_v: 3,
        d_model: 3,
        n_max: 4,
        projection_dim: 1,
    };
    let mut p = AttentionParams::zeros(&cfg, false);
    p.heads[0].query = Array2::eye(3);
    p.heads[0].key = Array2::eye(3);
    p.heads[0].value = Array2::eye(3);
    p.output = Array2::eye(3);
    let x = fixture(4, 3, 0.2);
    let a = multi_head(&x.view(), &p).map_err(|e| e.to_string())?;
    let b = scaled_dot_attention(&x.view(), &x.view(), &x.view()).map_err(|e| e.to_string())?;
    ensure!(a == b, "single head differs from attention");

    // zero queries weight every key equally, so each output row is the mean of V
    let q = Array2::<f64>::zeros((3, 2));
    let k = fixture(4, 2, 1.0);
    let v = Array2::from_shape_vec((4, 2), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
    let out = scaled_dot_attention(&q.view(), &k.view(), &v.view()).map_err(|e| e.to_string())?;
    for row in out.rows() {
        ensure!(row[0] == 4.0 && row[1] == 5.0, "zero-query row {row:?}");
    }

    // identity projection with k = n matches the dense block
    let n = 6;
    let cfg = AttentionConfig {
        heads: 3,
        d_k: 2,
        d_v: 2,
        d_model: 6,
        n_max: n,
        projection_dim: n,
    };
    let mut p = AttentionParams::seeded(&cfg, true, 5);
    p.projection = Some(Array2::eye(n));
    let x = fixture(n, 6, 0.7);
    let dense = multi_head(&x.view(), &p).map_err(|e| e.to_string())?;
    let low_rank = compressed_multi_head(&x.view(), &p).map_err(|e| e.to_string())?;
    let worst = dense
        .iter()
        .zip(low_rank.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure!(worst <= 1e-6, "identity projection differs by {worst}");

    // encoder gradient against central differences
    let params = EncoderParams::seeded(tiny(), 9, 21).map_err(|e| e.to_string())?;
    let batch = vec![
        Example {
            ids: vec![1, 3, 5, 0],
            mask: vec![true, true, true, false],
            label: Label::Hateful,
        },
        Example {
            ids: vec![2, 4, 6, 7],
            mask: vec![true; 4],
            label: Label::NotHateful,
        },
    ];
    let (_, g) = encoder_grad(&batch, &params).map_err(|e| e.to_string())?;
    let analytic = g.flat();
    let base = params.flat();
    let mut probe = params.clone();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut v = base.clone();
        v[i] = base[i] + h;
        probe.set_flat(&v).map_err(|e| e.to_string())?;
        let plus = encoder_grad(&batch, &probe).map_err(|e| e.to_string())?.0;
        v[i] = base[i] - h;
        probe.set_flat(&v).map_err(|e| e.to_string())?;
        let minus = encoder_grad(&batch, &probe).map_err(|e| e.to_string())?.0;
        worst = worst.max(relative_error(analytic[i], (plus - minus) / (2.0 * h)));
    }
    ensure!(worst <= 1e-4, "encoder gradient relative error {worst}");
    Ok(())
}

// GloVe

fn docs(raw: &[&str]) -> Vec<Vec<String>> {
    raw.iter()
        .map(|d| d.split_whitespace().map(String::from).collect())
        .collect()
}

fn glove_suite() -> Check {
    let corpus = docs(&["cat dog cat bird dog", "bird cat"]);
    let vocab = Vocabulary::build(&corpus);
    let x = build_cooccurrence(&corpus, &vocab, 2).map_err(|e| e.to_string())?;
    let mut p = GloveParams::init(vocab.len(), 4, 1.5, 0.75, 11);
    p.word_bias
        .iter_mut()
        .enumerate()
        .for_each(|(i, b)| *b = 0.1 * i as f64);
    p.context_bias
        .iter_mut()
        .enumerate()
        .for_each(|(i, b)| *b = -0.05 * i as f64);
    fn flat(p: &mut GloveParams) -> Vec<&mut f64> {
        p.word
            .iter_mut()
            .chain(p.context.iter_mut())
            .chain(p.word_bias.iter_mut())
            .chain(p.context_bias.iter_mut())
            .collect()
    }
    let mut g = glove_gradient(&x, &p);
    let analytic: Vec<f64> = flat(&mut g).into_iter().map(|v| *v).collect();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (k, &a) in analytic.iter().enumerate() {
        let (mut plus, mut minus) = (p.clone(), p.clone());
        *flat(&mut plus)[k] += h;
        *flat(&mut minus)[k] -= h;
        let numeric = (glove_cost(&x, &plus) - glove_cost(&x, &minus)) / (2.0 * h);
        worst = worst.max(relative_error(a, numeric));
    }
    ensure!(worst <= 1e-4, "GloVe gradient relative error {worst}");

    let six = docs(&[
        "the cat sat on the mat",
        "the dog sat on the mat",
        "cat dog sat",
        "the mat on the cat",
        "dog on mat",
        "cat sat on dog",
    ]);
    let vocab = Vocabulary::build(&six);
    ensure!(vocab.len() == 6, "toy vocabulary has {} words", vocab.len());
    let x = build_cooccurrence(&six, &vocab, 2).map_err(|e| e.to_string())?;
    let config = GloveConfig {
        dim: 10,
        epochs: 50,
        seed: 3,
        ..GloveConfig::default()
    };
    let (params, trace) = glove_train(&x, &config).map_err(|e| e.to_string())?;
    ensure!(
        trace.final_cost() < 0.5 * trace.initial_cost,
        "cost {} -> {}",
        trace.initial_cost,
        trace.final_cost()
    );
    let (again, _) = glove_train(&x, &config).map_err(|e| e.to_string())?;
    ensure!(params == again, "GloVe training is not deterministic");
    Ok(())
}

// TF-IDF

fn tfidf_suite() -> Check {
    let corpus = docs(&[
        "hate you all hate the day and the night sky",
        "hate again",
        "calm water",
        "quiet night",
    ]);
    let vocab = Vocabulary::build(&corpus);
    let tf = term_frequency("hate", &corpus[0]).map_err(|e| e.to_string())?;
    let idf = inverse_document_frequency("hate", &vocab, 4, IdfMode::Literal).map_err(|e| e.to_string())?;
    ensure!(tf == 0.2 && idf == 2.0 && tf * idf == 0.4, "tf {tf}, idf {idf}");
    let ids = (0..4).map(|i| i.to_string()).collect();
    let m = tfidf_matrix(ids, &corpus, &vocab, IdfMode::Literal);
    let cell = m.get(0, vocab.get("hate").unwrap());
    ensure!(cell == 0.4, "matrix cell {cell}");

    let everywhere = docs(&["dog barks", "dog sleeps here", "big dog"]);
    let vocab = Vocabulary::build(&everywhere);
    let idf = inverse_document_frequency("dog", &vocab, 3, IdfMode::Literal).map_err(|e| e.to_string())?;
    ensure!(idf == 1.0, "idf of a term in every document is {idf}");
    Ok(())
}

// SVM

fn separable() -> (FeatureMatrix, Vec<Label>) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut rows, mut labels) = (Vec::new(), Vec::new());
    for i in 0..60 {
        let label = if i % 2 == 0 { Label::Hateful } else { Label::NotHateful };
        let s = label.sign();
        rows.push(vec![
            (0, s * rng.random_range(1.0..3.0)),
            (1, s * rng.random_range(1.0..3.0)),
            (2, rng.random_range(-1.0..1.0)),
        ]);
        labels.push(label);
    }
    (
        FeatureMatrix::new((0..60).map(|i| i.to_string()).collect(), 3, rows),
        labels,
    )
}

fn svm_suite() -> Check {
    let (x, y) = separable();
    let cfg = SvmConfig {
        c: 10.0,
        epochs: 50,
        seed: 4,
    };
    let (model, trace) = svm_train(&x, &y, &cfg).map_err(|e| e.to_string())?;
    let preds = svm_predict(&model, &x).map_err(|e| e.to_string())?;
    let correct = preds.iter().zip(&y).filter(|((l, _), g)| l == *g).count();
    ensure!(correct == y.len(), "training accuracy {correct}/{}", y.len());
    ensure!(
        trace.epochs.windows(2).all(|w| w[1] <= w[0]),
        "objective trace increases: {:?}",
        trace.epochs
    );
    let again = svm_train(&x, &y, &cfg).map_err(|e| e.to_string())?;
    ensure!(again == (model, trace), "same seed, different model");
    Ok(())
}

// end to end

const STAGES: [&str; 12] = [
    "ingest",
    "stats",
    "kappa",
    "translate",
    "align",
    "split",
    "preprocess",
    "featurize",
    "train",
    "classify-llm",
    "evaluate",
    "report",
];

fn hsd(args: &[&str]) -> Check {
    let out = Command::new(env!("CARGO_BIN_EXE_hsd"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "`hsd {}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr).trim()
    );
    Ok(())
}

fn pipeline(root: &Path) -> Check {
    let root_s = root.to_str().unwrap();
    hsd(&["gen-toy", "--out", root_s, "--seed", "7"])?;
    let config = root.join("hsd.toml");
    let out = root.join("out");
    for stage in STAGES {
        hsd(&[
            stage,
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--provider",
            "mock",
        ])?;
    }
    Ok(())
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn end_to_end() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipeline(a.path())?;
    let text = std::fs::read_to_string(a.path().join("out/report.json")).map_err(|e| e.to_string())?;
    let report = Report::from_json(&text).map_err(|e| e.to_string())?;
    ensure!(
        report.metrics.len() == 12,
        "{} metric rows, want 4 datasets x 3 classifiers",
        report.metrics.len()
    );
    ensure!(
        report.confusion.len() == 12,
        "{} confusion rows",
        report.confusion.len()
    );
    ensure!(
        report.improvement.len() == 8,
        "{} improvement rows",
        report.improvement.len()
    );
    for f in [
        "report.md",
        "report.txt",
        "agreement.json",
        "stats.json",
        "validation.json",
    ] {
        ensure!(a.path().join("out").join(f).is_file(), "missing {f}");
    }
    pipeline(b.path())?;
    let (ta, tb) = (tree(&a.path().join("out")), tree(&b.path().join("out")));
    ensure!(ta.keys().eq(tb.keys()), "reruns produced different file sets");
    for (name, bytes) in &ta {
        ensure!(tb[name] == *bytes, "{name} differs between reruns");
    }
    Ok(())
}

// unified corpora structure

fn random_corpus(rng: &mut ChaCha8Rng, lang: Language, prefix: &str) -> Corpus {
    let words: &[&str] = match lang {
        Language::English => &["you", "are", "bad", "good", "dog", "zzz"],
        Language::Urdu => &["تم", "برے", "ہو", "اچھے"],
        Language::Spanish => &["eres", "malo", "bueno", "perro"],
    };
    let n = rng.random_range(0..8);
    let tweets = (0..n)
        .map(|i| {
            let len = rng.random_range(1..6);
            let text: Vec<&str> = (0..len).map(|_| words[rng.random_range(0..words.len())]).collect();
            let label = if rng.random_bool(0.5) {
                Label::Hateful
            } else {
                Label::NotHateful
            };
            Tweet::new(format!("{prefix}{i}"), text.join(" "), lang, Some(label))
        })
        .collect();
    Corpus::new(tweets, prefix).unwrap()
}

const PHRASES: &str = "source_lang,target_lang,source_phrase,target_phrase
en,ur,you,تم
en,ur,bad,برے
en,es,you,tú
en,es,bad,malo
ur,en,تم,you
ur,en,برے,bad
ur,es,برے,malo
es,en,malo,bad
es,ur,malo,برے
";

fn structural_check() -> Check {
    let table = PhraseTable::from_csv(PHRASES.as_bytes()).map_err(|e| e.to_string())?;
    let provider = MockTranslator::new(table);
    let glossary = Glossary::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let en = random_corpus(&mut rng, Language::English, "e");
        let ur = random_corpus(&mut rng, Language::Urdu, "u");
        let es = random_corpus(&mut rng, Language::Spanish, "s");
        let u = build_unified_corpora(&en, &ur, &es, &provider, &glossary, BuildOptions { parallelism: 2 })
            .map_err(|e| format!("case {case}: {e}"))?;
        let total = en.len() + ur.len() + es.len();
        let gold: BTreeMap<&str, Label> = [&en, &ur, &es]
            .iter()
            .flat_map(|c| c.iter().map(|t| (t.id.as_str(), t.label.unwrap())))
            .collect();
        for lang in Language::ALL {
            let c = u.combined(lang);
            ensure!(
                c.len() == total,
                "case {case}: combined {lang} has {} of {total}",
                c.len()
            );
            for t in c.iter() {
                ensure!(t.language == lang, "case {case}: {} is {}", t.id, t.language);
                let source = t.id.split('>').next().unwrap();
                ensure!(
                    gold.get(source) == t.label.as_ref(),
                    "case {case}: label of {} changed",
                    t.id
                );
            }
        }
        ensure!(u.joint.len() == 3 * total, "case {case}: joint has {}", u.joint.len());
        ensure!(
            u.translations.len() == 2 * total,
            "case {case}: {} translations",
            u.translations.len()
        );
        let joint_hateful = u.joint.iter().filter(|t| t.label == Some(Label::Hateful)).count();
        let input_hateful = gold.values().filter(|&&l| l == Label::Hateful).count();
        ensure!(
            joint_hateful == 3 * input_hateful,
            "case {case}: joint label counts drift"
        );
    }
    Ok(())
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("metrics oracle", metrics_oracle, Duration::from_secs(1)),
        ("improvement oracle", improvement_oracle, Duration::from_secs(1)),
        ("agreement suite", agreement_suite, Duration::from_secs(1)),
        ("attention suite", attention_suite, Duration::from_secs(30)),
        ("glove suite", glove_suite, Duration::from_secs(30)),
        ("tf-idf suite", tfidf_suite, Duration::from_secs(1)),
        ("svm suite", svm_suite, Duration::from_secs(30)),
        ("end-to-end smoke", end_to_end, Duration::from_secs(60)),
        ("unified corpora structure", structural_check, Duration::from_secs(30)),
    ];
    let mut failed = 0;
    for (name, check, budget) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let outcome = outcome.and_then(|()| {
            if took <= budget {
                Ok(())
            } else {
                Err(format!("took {took:.2?}, budget {budget:?}"))
            }
        });
        match outcome {
            Ok(()) => println!("PASS {name} ({took:.2?})"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({took:.2?}): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
