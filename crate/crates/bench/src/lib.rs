//! Shared fixtures for the benchmarks.

use hsd_core::corpus::{Corpus, Language};
use hsd_core::toy::gen_toy;

/// Toy documents repeated `copies` times, as whitespace tokens.
pub fn documents(copies: usize) -> Vec<Vec<String>> {
    let toy = gen_toy(0);
    let mut docs = Vec::new();
    for _ in 0..copies {
        for lang in Language::ALL {
            let corpus: &Corpus = toy.corpus(lang);
            docs.extend(
                corpus
                    .iter()
                    .map(|t| t.text.split_whitespace().map(String::from).collect::<Vec<_>>()),
            );
        }
    }
    docs
}

/// Hateful vote counts out of three for `items` items.
pub fn vote_rows(items: usize) -> Vec<[usize; 2]> {
    (0..items).map(|i| [i % 4, 3 - i % 4]).collect()
}
