//! Compositional word vectors: a word's embedding is the sum of the vectors
//! of its boundary-marked character n-grams, plus its own vector when the
//! table has one. N-grams are hashed (32-bit FNV-1a) into a fixed number of
//! buckets, so unseen words always embed.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FeatureError;

pub const DEFAULT_DIM: usize = 100;
pub const DEFAULT_N_MIN: usize = 3;
pub const DEFAULT_N_MAX: usize = 5;
pub const DEFAULT_BUCKETS: usize = 1 << 14;

const BINARY_MAGIC: &[u8; 8] = b"HSDNGRM1";

/// All substrings of `<word>` whose length in characters lies in
/// `[n_min, n_max]`, in order of start position then length.
pub fn char_ngrams(word: &str, n_min: usize, n_max: usize) -> Vec<String> {
    let marked: Vec<char> = std::iter::once('<')
        .chain(word.chars())
        .chain(std::iter::once('>'))
        .collect();
    let mut out = Vec::new();
    for start in 0..marked.len() {
        for n in n_min.max(1)..=n_max {
            if start + n > marked.len() {
                break;
            }
            out.push(marked[start..start + n].iter().collect());
        }
    }
    out
}

pub fn fnv1a(bytes: &[u8]) -> u32 {
    let mut h: u32 = 2_166_136_261;
    for &b in bytes {
        h ^= b as u32;
        h = h.wrapping_mul(16_777_619);
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramTable {
    pub dim: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub seed: u64,
    buckets: Vec<f64>,
    words: BTreeMap<String, Vec<f64>>,
}

impl NgramTable {
    /// Bucket vectors drawn uniformly from (-1/dim, 1/dim) with a ChaCha8
    /// stream seeded by `seed`.
    pub fn random(dim: usize, n_min: usize, n_max: usize, buckets: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / dim as f64;
        let data = (0..buckets * dim).map(|_| rng.random_range(-bound..bound)).collect();
        NgramTable {
            dim,
            n_min,
            n_max,
            seed,
            buckets: data,
            words: BTreeMap::new(),
        }
    }

    pub fn zeros(dim: usize, n_min: usize, n_max: usize, buckets: usize) -> Self {
        NgramTable {
            dim,
            n_min,
            n_max,
            seed: 0,
            buckets: vec![0.0; buckets * dim],
            words: BTreeMap::new(),
        }
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len() / self.dim
    }

    pub fn bucket_of(&self, ngram: &str) -> usize {
        fnv1a(ngram.as_bytes()) as usize % self.bucket_count()
    }

    pub fn bucket_vector(&self, bucket: usize) -> &[f64] {
        &self.buckets[bucket * self.dim..(bucket + 1) * self.dim]
    }

    pub fn bucket_vector_mut(&mut self, bucket: usize) -> &mut [f64] {
        &mut self.buckets[bucket * self.dim..(bucket + 1) * self.dim]
    }

    pub fn ngram_vector(&self, ngram: &str) -> &[f64] {
        self.bucket_vector(self.bucket_of(ngram))
    }

    pub fn set_word(&mut self, word: &str, vector: Vec<f64>) {
        assert_eq!(vector.len(), self.dim, "word vector dimension");
        self.words.insert(word.to_string(), vector);
    }

    pub fn word_vector(&self, word: &str) -> Option<&[f64]> {
        self.words.get(word).map(Vec::as_slice)
    }

    /// Text format: a header line, then `bucket:<i>` and `word:<w>` records
    /// followed by `dim` floats, space-separated.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "ngram-table dim={} count={} n_min={} n_max={} buckets={} seed={}",
            self.dim,
            self.bucket_count() + self.words.len(),
            self.n_min,
            self.n_max,
            self.bucket_count(),
            self.seed
        )?;
        let write_rec = |w: &mut W, key: &str, v: &[f64]| -> std::io::Result<()> {
            write!(w, "{key}")?;
            for x in v {
                write!(w, " {x}")?;
            }
            writeln!(w)
        };
        for b in 0..self.bucket_count() {
            write_rec(&mut w, &format!("bucket:{b}"), self.bucket_vector(b))?;
        }
        for (word, v) in &self.words {
            write_rec(&mut w, &format!("word:{word}"), v)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self, FeatureError> {
        let bad = |message: String| FeatureError::Format {
            context: "ngram table".into(),
            message,
        };
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| bad("empty input".into()))??;
        let field = |key: &str| -> Result<u64, FeatureError> {
            header
                .split_whitespace()
                .find_map(|p| p.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(format!("header missing {key}")))
        };
        let dim = field("dim")? as usize;
        let buckets = field("buckets")? as usize;
        let mut table = NgramTable::zeros(dim, field("n_min")? as usize, field("n_max")? as usize, buckets);
        table.seed = field("seed")?;
        let count = field("count")? as usize;
        let mut seen = 0;
        for line in lines {
            let line = line?;
            // word keys may contain spaces only if the table was built that
            // way; the last `dim` fields are always the vector
            let parts: Vec<&str> = line.split(' ').collect();
            if parts.len() < dim + 1 {
                return Err(bad(format!("short record `{line}`")));
            }
            let key = parts[..parts.len() - dim].join(" ");
            let v = parts[parts.len() - dim..]
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad(e.to_string()))?;
            if let Some(b) = key.strip_prefix("bucket:") {
                let b: usize = b.parse().map_err(|_| bad(format!("bad key {key}")))?;
                if b >= buckets {
                    return Err(bad(format!("bucket {b} out of range")));
                }
                table.bucket_vector_mut(b).copy_from_slice(&v);
            } else if let Some(word) = key.strip_prefix("word:") {
                table.words.insert(word.to_string(), v);
            } else {
                return Err(bad(format!("bad key {key}")));
            }
            seen += 1;
        }
        if seen != count {
            return Err(bad(format!("expected {count} records, read {seen}")));
        }
        Ok(table)
    }

    /// Binary format: magic, six little-endian u64 header fields (dim,
    /// buckets, words, n_min, n_max, seed), bucket floats, then each word as
    /// a u64 byte length, UTF-8 bytes and `dim` floats.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(BINARY_MAGIC)?;
        for v in [
            self.dim,
            self.bucket_count(),
            self.words.len(),
            self.n_min,
            self.n_max,
            self.seed as usize,
        ] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for x in &self.buckets {
            w.write_all(&x.to_le_bytes())?;
        }
        for (word, v) in &self.words {
            w.write_all(&(word.len() as u64).to_le_bytes())?;
            w.write_all(word.as_bytes())?;
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, FeatureError> {
        let bad = |message: &str| FeatureError::Format {
            context: "ngram table".into(),
            message: message.to_string(),
        };
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut u64s = [0u64; 6];
        for v in &mut u64s {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *v = u64::from_le_bytes(b);
        }
        let [dim, buckets, words, n_min, n_max, seed] = u64s;
        let read_f64 = |r: &mut R| -> std::io::Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let mut table = NgramTable::zeros(dim as usize, n_min as usize, n_max as usize, buckets as usize);
        table.seed = seed;
        for i in 0..table.buckets.len() {
            table.buckets[i] = read_f64(&mut r)?;
        }
        for _ in 0..words {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            let mut name = vec![0u8; u64::from_le_bytes(b) as usize];
            r.read_exact(&mut name)?;
            let word = String::from_utf8(name).map_err(|_| bad("word is not UTF-8"))?;
            let v = (0..dim).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>, _>>()?;
            table.words.insert(word, v);
        }
        Ok(table)
    }
}

pub fn fasttext_embed(word: &str, table: &NgramTable) -> Vec<f64> {
    let mut out = vec![0.0; table.dim];
    for g in char_ngrams(word, table.n_min, table.n_max) {
        for (o, x) in out.iter_mut().zip(table.ngram_vector(&g)) {
            *o += x;
        }
    }
    if let Some(v) = table.word_vector(word) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    out
}

/// Mean of the word embeddings; zeros for an empty document.
pub fn document_vector<S: AsRef<str>>(tokens: &[S], table: &NgramTable) -> Vec<f64> {
    let mut out = vec![0.0; table.dim];
    if tokens.is_empty() {
        return out;
    }
    for t in tokens {
        for (o, x) in out.iter_mut().zip(fasttext_embed(t.as_ref(), table)) {
            *o += x;
        }
    }
    let n = tokens.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ngrams_of_short_word() {
        assert_eq!(char_ngrams("ab", 3, 3), vec!["<ab", "ab>"]);
        assert_eq!(char_ngrams("a", 3, 5), vec!["<a>"]);
        assert_eq!(char_ngrams("گدھا", 3, 3).len(), 4);
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0x811c9dc5);
        assert_eq!(fnv1a(b"a"), 0xe40c292c);
    }

    #[test]
    fn zero_table_gives_zero_vector() {
        let t = NgramTable::zeros(4, 3, 5, 64);
        assert_eq!(fasttext_embed("hate", &t), vec![0.0; 4]);
    }

    #[test]
    fn two_ngram_word_sums_its_vectors() {
        let mut t = NgramTable::zeros(3, 3, 3, 1024);
        let (b1, b2) = (t.bucket_of("<ab"), t.bucket_of("ab>"));
        assert_ne!(b1, b2);
        t.bucket_vector_mut(b1).copy_from_slice(&[1.0, 2.0, 3.0]);
        t.bucket_vector_mut(b2).copy_from_slice(&[0.5, -1.0, 4.0]);
        assert_eq!(fasttext_embed("ab", &t), vec![1.5, 1.0, 7.0]);
        t.set_word("ab", vec![1.0, 1.0, 1.0]);
        assert_eq!(fasttext_embed("ab", &t), vec![2.5, 2.0, 8.0]);
    }

    #[test]
    fn unseen_word_is_finite() {
        let t = NgramTable::random(8, 3, 5, 128, 1);
        let v = fasttext_embed("pendejazo", &t);
        assert!(v.iter().all(|x| x.is_finite()));
        assert!(v.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn text_and_binary_round_trip() {
        let mut t = NgramTable::random(3, 2, 4, 16, 9);
        t.set_word("perro", vec![0.25, -0.5, 1e-17]);
        let mut text = Vec::new();
        t.write_text(&mut text).unwrap();
        assert_eq!(NgramTable::read_text(text.as_slice()).unwrap(), t);
        let mut bin = Vec::new();
        t.write_binary(&mut bin).unwrap();
        assert_eq!(NgramTable::read_binary(bin.as_slice()).unwrap(), t);
    }
}
