//! Small seeded trilingual corpus with matching phrase tables, glossary,
//! scripted model replies and annotations, for smoke runs and tests.

use std::fmt::Write as _;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::annotation::AnnotationRecord;
use crate::corpus::{Corpus, Label, Language, Tweet};

/// English, Urdu, Spanish.
type Entry = [&'static str; 3];

const HATEFUL: &[Entry] = &[
    ["idiot", "احمق", "idiota"],
    ["filthy", "غلیظ", "asqueroso"],
    ["vermin", "کیڑے", "alimañas"],
    ["hate", "نفرت", "odio"],
    ["disgusting", "گھناؤنا", "repugnante"],
    ["traitors", "غدار", "traidores"],
    ["scum", "کمینے", "escoria"],
    ["kill", "مارو", "matar"],
    ["get out", "نکل جاؤ", "lárgate"],
    ["son of a bitch", "کتے کا بچہ", "hijo de puta"],
];

const FRIENDLY: &[Entry] = &[
    ["beautiful", "خوبصورت", "hermoso"],
    ["friends", "دوست", "amigos"],
    ["family", "خاندان", "familia"],
    ["happy", "خوش", "feliz"],
    ["thanks", "شکریہ", "gracias"],
    ["match", "میچ", "partido"],
    ["weather", "موسم", "clima"],
    ["music", "موسیقی", "música"],
    ["delicious", "مزیدار", "delicioso"],
    ["morning", "صبح", "mañana"],
];

const NEUTRAL: &[Entry] = &[
    ["people", "لوگ", "gente"],
    ["today", "آج", "hoy"],
    ["city", "شہر", "ciudad"],
    ["neighbors", "پڑوسی", "vecinos"],
    ["immigrants", "تارکین وطن", "inmigrantes"],
    ["market", "بازار", "mercado"],
];

/// Provider renderings that soften an insult into English.
const SOFTENED: &[(Language, &str, &str)] = &[
    (Language::Spanish, "hijo de puta", "jerk"),
    (Language::Urdu, "کتے کا بچہ", "jerk"),
];

const NOISE: &[&str] = &["#news", "http://t.co/x1", "@user", "!!", "😡", "2024"];

pub const TWEETS_PER_LANGUAGE: usize = 20;
pub const ANNOTATORS: [&str; 3] = ["ann1", "ann2", "ann3"];

fn slot(lang: Language) -> usize {
    match lang {
        Language::English => 0,
        Language::Urdu => 1,
        Language::Spanish => 2,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyData {
    pub english: Corpus,
    pub urdu: Corpus,
    pub spanish: Corpus,
    /// `source_lang,target_lang,source_phrase,target_phrase`
    pub phrase_table: String,
    /// `lang,term,required_rendering,note`
    pub glossary: String,
    pub llm_script: String,
    /// Three labels per English tweet.
    pub annotations: Vec<AnnotationRecord>,
}

impl ToyData {
    pub fn corpus(&self, lang: Language) -> &Corpus {
        match lang {
            Language::English => &self.english,
            Language::Urdu => &self.urdu,
            Language::Spanish => &self.spanish,
        }
    }
}

fn tweet_words(rng: &mut ChaCha8Rng, label: Label) -> Vec<Entry> {
    let (own, other) = match label {
        Label::Hateful => (HATEFUL, FRIENDLY),
        Label::NotHateful => (FRIENDLY, HATEFUL),
    };
    let n_own = rng.random_range(2..=3);
    let n_neutral = rng.random_range(1..=2);
    let mut words: Vec<Entry> = own.choose_multiple(rng, n_own).copied().collect();
    words.extend(NEUTRAL.choose_multiple(rng, n_neutral).copied());
    // An occasional word from the other class keeps the task from being trivial.
    if rng.random_bool(0.15) {
        words.push(*other.choose(rng).expect("non-empty"));
    }
    words.shuffle(rng);
    words
}

fn language_corpus(rng: &mut ChaCha8Rng, lang: Language) -> Corpus {
    let mut labels: Vec<Label> = (0..TWEETS_PER_LANGUAGE)
        .map(|i| if i % 2 == 0 { Label::Hateful } else { Label::NotHateful })
        .collect();
    labels.shuffle(rng);
    let tweets = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let mut parts: Vec<&str> = tweet_words(rng, label).iter().map(|e| e[slot(lang)]).collect();
            if rng.random_bool(0.3) {
                parts.push(NOISE.choose(rng).expect("non-empty"));
            }
            let text = parts.join(" ");
            Tweet::new(format!("{}-{:02}", lang.code(), i + 1), text, lang, Some(label))
        })
        .collect();
    Corpus::new(tweets, format!("toy-{}", lang.code())).expect("generated ids are unique")
}

fn phrase_table() -> String {
    let mut out = String::from("source_lang,target_lang,source_phrase,target_phrase\n");
    for source in Language::ALL {
        for target in Language::ALL {
            if source == target {
                continue;
            }
            for entry in HATEFUL.iter().chain(FRIENDLY).chain(NEUTRAL) {
                let phrase = entry[slot(source)];
                let rendering = SOFTENED
                    .iter()
                    .find(|(l, p, _)| *l == source && *p == phrase && target == Language::English)
                    .map_or(entry[slot(target)], |(_, _, soft)| *soft);
                let _ = writeln!(out, "{},{},{phrase},{rendering}", source.code(), target.code());
            }
        }
    }
    out
}

fn glossary() -> String {
    let mut out = String::from("lang,term,required_rendering,note\n");
    for (lang, term, _) in SOFTENED {
        let _ = writeln!(
            out,
            "{}>en,{term},son of a bitch,severe insult often softened",
            lang.code()
        );
    }
    out
}

/// Hateful vocabulary in any language answers Hateful; weather talk gets
/// an unparsable reply so that abstentions show up.
fn llm_script() -> String {
    let mut out = String::from("# toy replies\n");
    for w in FRIENDLY.iter().filter(|e| e[0] == "weather") {
        for s in w {
            let _ = writeln!(out, "rule: {s} => I cannot decide");
        }
    }
    for e in HATEFUL {
        for s in e {
            let _ = writeln!(out, "rule: {s} => Hateful");
        }
    }
    out.push_str("default: Not-Hateful\n");
    out
}

fn annotations(rng: &mut ChaCha8Rng, corpus: &Corpus) -> Vec<AnnotationRecord> {
    let mut out = Vec::new();
    let mut ts = 0;
    for t in corpus.iter() {
        let gold = t.label.expect("toy tweets are labeled");
        for a in ANNOTATORS {
            ts += 1;
            let label = if rng.random_bool(0.1) {
                Label::from_index(1 - gold.index())
            } else {
                gold
            };
            out.push(AnnotationRecord::new(&t.id, a, label, ts));
        }
    }
    out
}

pub fn gen_toy(seed: u64) -> ToyData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let english = language_corpus(&mut rng, Language::English);
    let urdu = language_corpus(&mut rng, Language::Urdu);
    let spanish = language_corpus(&mut rng, Language::Spanish);
    let annotations = annotations(&mut rng, &english);
    ToyData {
        english,
        urdu,
        spanish,
        phrase_table: phrase_table(),
        glossary: glossary(),
        llm_script: llm_script(),
        annotations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::translation::{Glossary, PhraseTable};

    #[test]
    fn deterministic_and_balanced() {
        let a = gen_toy(7);
        assert_eq!(a, gen_toy(7));
        assert_ne!(a.english, gen_toy(8).english);
        for lang in Language::ALL {
            let c = a.corpus(lang);
            assert_eq!(c.len(), TWEETS_PER_LANGUAGE);
            let hateful = c.iter().filter(|t| t.label == Some(Label::Hateful)).count();
            assert_eq!(hateful, TWEETS_PER_LANGUAGE / 2);
            assert!(c.iter().all(|t| t.language == lang));
        }
        assert_eq!(a.annotations.len(), 3 * TWEETS_PER_LANGUAGE);
    }

    #[test]
    fn side_files_parse() {
        let a = gen_toy(0);
        let table = PhraseTable::from_csv(a.phrase_table.as_bytes()).unwrap();
        assert_eq!(table.len(), 6 * (HATEFUL.len() + FRIENDLY.len() + NEUTRAL.len()));
        assert_eq!(Glossary::from_csv(a.glossary.as_bytes()).unwrap().len(), 2);
        crate::classifiers::ScriptedLlm::parse(&a.llm_script).unwrap();
    }
}
