use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::FeatureError;

/// IDF variant. `Literal` is the plain ratio N / df; `SmoothedLog` is
/// ln((1 + N) / (1 + df)) + 1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdfMode {
    #[default]
    Literal,
    SmoothedLog,
}

impl std::str::FromStr for IdfMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "literal" => Ok(IdfMode::Literal),
            "log" => Ok(IdfMode::SmoothedLog),
            other => Err(format!("unknown idf mode `{other}` (expected literal|log)")),
        }
    }
}

/// Token ↔ column index with document frequencies. Tokens are indexed in
/// lexicographic order so the layout does not depend on document order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    df: Vec<usize>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    documents: usize,
}

impl Vocabulary {
    pub fn build<S: AsRef<str>>(documents: &[Vec<S>]) -> Self {
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in documents {
            let unique: HashSet<&str> = doc.iter().map(AsRef::as_ref).collect();
            for t in unique {
                *df.entry(t).or_default() += 1;
            }
        }
        let (tokens, df): (Vec<String>, Vec<usize>) = df.into_iter().map(|(t, d)| (t.to_string(), d)).unzip();
        let mut v = Vocabulary {
            tokens,
            df,
            index: HashMap::new(),
            documents: documents.len(),
        };
        v.reindex();
        v
    }

    fn reindex(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn documents(&self) -> usize {
        self.documents
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn df(&self, token: &str) -> Option<usize> {
        self.get(token).map(|i| self.df[i])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocabulary serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, FeatureError> {
        let mut v: Vocabulary = serde_json::from_str(s).map_err(|e| FeatureError::Format {
            context: "vocabulary".into(),
            message: e.to_string(),
        })?;
        v.reindex();
        Ok(v)
    }
}

pub fn term_frequency<S: AsRef<str>>(term: &str, document: &[S]) -> Result<f64, FeatureError> {
    if document.is_empty() {
        return Err(FeatureError::EmptyDocument);
    }
    let count = document.iter().filter(|t| t.as_ref() == term).count();
    Ok(count as f64 / document.len() as f64)
}

pub fn inverse_document_frequency(
    term: &str,
    vocabulary: &Vocabulary,
    documents: usize,
    mode: IdfMode,
) -> Result<f64, FeatureError> {
    let df = vocabulary
        .df(term)
        .filter(|&d| d > 0)
        .ok_or_else(|| FeatureError::UnknownTerm(term.to_string()))?;
    Ok(idf_value(documents, df, mode))
}

fn idf_value(documents: usize, df: usize, mode: IdfMode) -> f64 {
    let (n, df) = (documents as f64, df as f64);
    match mode {
        IdfMode::Literal => n / df,
        IdfMode::SmoothedLog => ((1.0 + n) / (1.0 + df)).ln() + 1.0,
    }
}

/// Sparse document × term matrix. Each row holds `(column, value)` pairs in
/// ascending column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub row_ids: Vec<String>,
    pub columns: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl FeatureMatrix {
    pub fn new(row_ids: Vec<String>, columns: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        FeatureMatrix { row_ids, columns, rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.rows[row]
            .binary_search_by_key(&col, |&(c, _)| c)
            .map(|i| self.rows[row][i].1)
            .unwrap_or(0.0)
    }

    pub fn dense_row(&self, row: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.columns];
        for &(c, v) in &self.rows[row] {
            out[c] = v;
        }
        out
    }

    pub fn dot(&self, row: usize, weights: &[f64]) -> f64 {
        self.rows[row].iter().map(|&(c, v)| v * weights[c]).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for row in &mut self.rows {
            for (_, v) in row.iter_mut() {
                *v *= factor;
            }
        }
    }

    /// Text export: a `# rows=R cols=C` header, a `row_id` section, then
    /// `row,col,value` triplets for the nonzero cells.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# rows={} cols={}", self.rows.len(), self.columns)?;
        for (i, id) in self.row_ids.iter().enumerate() {
            writeln!(w, "# row {i} {id}")?;
        }
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                writeln!(w, "{r},{c},{v}")?;
            }
        }
        Ok(())
    }

    pub fn read_triplets<R: BufRead>(r: R) -> Result<Self, FeatureError> {
        let bad = |message: String| FeatureError::Format {
            context: "triplets".into(),
            message,
        };
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| bad("empty input".into()))??;
        let parse_kv = |key: &str| -> Result<usize, FeatureError> {
            header
                .split_whitespace()
                .find_map(|p| p.strip_prefix(key))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(format!("header missing {key}")))
        };
        let n_rows = parse_kv("rows=")?;
        let columns = parse_kv("cols=")?;
        let mut row_ids = vec![String::new(); n_rows];
        let mut rows = vec![Vec::new(); n_rows];
        for line in lines {
            let line = line?;
            if let Some(rest) = line.strip_prefix("# row ") {
                let (i, id) = rest.split_once(' ').ok_or_else(|| bad(line.clone()))?;
                let i: usize = i.parse().map_err(|_| bad(line.clone()))?;
                *row_ids.get_mut(i).ok_or_else(|| bad(line.clone()))? = id.to_string();
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(bad(line));
            }
            let r: usize = parts[0].parse().map_err(|_| bad(line.clone()))?;
            let c: usize = parts[1].parse().map_err(|_| bad(line.clone()))?;
            let v: f64 = parts[2].parse().map_err(|_| bad(line.clone()))?;
            if r >= n_rows || c >= columns {
                return Err(bad(format!("cell ({r},{c}) out of bounds")));
            }
            rows[r].push((c, v));
        }
        for row in &mut rows {
            row.sort_by_key(|&(c, _)| c);
        }
        Ok(FeatureMatrix { row_ids, columns, rows })
    }
}

/// TF × IDF for every vocabulary term in each document. Tokens outside the
/// vocabulary are dropped (they still count toward document length), and
/// empty documents give all-zero rows. IDF uses the vocabulary's own
/// document count.
pub fn tfidf_matrix<S: AsRef<str>>(
    row_ids: Vec<String>,
    documents: &[Vec<S>],
    vocabulary: &Vocabulary,
    mode: IdfMode,
) -> FeatureMatrix {
    let n = vocabulary.documents();
    let rows = documents
        .iter()
        .map(|doc| {
            if doc.is_empty() {
                return Vec::new();
            }
            let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
            for t in doc {
                if let Some(i) = vocabulary.get(t.as_ref()) {
                    *counts.entry(i).or_default() += 1;
                }
            }
            let len = doc.len() as f64;
            counts
                .into_iter()
                .map(|(i, c)| (i, (c as f64 / len) * idf_value(n, vocabulary.df[i], mode)))
                .collect()
        })
        .collect();
    FeatureMatrix::new(row_ids, vocabulary.len(), rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn tf_cases() {
        let d = doc("hate x x x x hate y y y y");
        assert_eq!(term_frequency("hate", &d).unwrap(), 0.2);
        assert_eq!(term_frequency("absent", &d).unwrap(), 0.0);
        assert_eq!(term_frequency("t", &doc("t")).unwrap(), 1.0);
        assert!(matches!(
            term_frequency::<String>("t", &[]),
            Err(FeatureError::EmptyDocument)
        ));
    }

    #[test]
    fn idf_cases() {
        let docs = vec![doc("a b"), doc("a c"), doc("d"), doc("e")];
        let v = Vocabulary::build(&docs);
        assert_eq!(inverse_document_frequency("a", &v, 4, IdfMode::Literal).unwrap(), 2.0);
        let all = Vocabulary::build(&[doc("z y"), doc("z")]);
        assert_eq!(inverse_document_frequency("z", &all, 2, IdfMode::Literal).unwrap(), 1.0);
        assert!(matches!(
            inverse_document_frequency("q", &v, 4, IdfMode::Literal),
            Err(FeatureError::UnknownTerm(_))
        ));
        let log = inverse_document_frequency("a", &v, 4, IdfMode::SmoothedLog).unwrap();
        assert!((log - ((5.0f64 / 3.0).ln() + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn single_doc_cells_equal_tf() {
        let docs = vec![doc("a b a c")];
        let v = Vocabulary::build(&docs);
        let m = tfidf_matrix(vec!["d".into()], &docs, &v, IdfMode::Literal);
        assert_eq!(m.get(0, v.get("a").unwrap()), 0.5);
        assert_eq!(m.get(0, v.get("b").unwrap()), 0.25);
    }

    #[test]
    fn empty_document_row_is_zero() {
        let docs = vec![doc("a b"), vec![]];
        let v = Vocabulary::build(&docs);
        let m = tfidf_matrix(vec!["x".into(), "y".into()], &docs, &v, IdfMode::Literal);
        assert!(m.rows[1].is_empty());
        assert!(m.dense_row(1).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn triplets_round_trip() {
        let docs = vec![doc("a b a"), doc("c"), vec![]];
        let v = Vocabulary::build(&docs);
        let m = tfidf_matrix(
            vec!["r0".into(), "r1".into(), "r2".into()],
            &docs,
            &v,
            IdfMode::SmoothedLog,
        );
        let mut buf = Vec::new();
        m.write_triplets(&mut buf).unwrap();
        let back = FeatureMatrix::read_triplets(buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn vocabulary_json_round_trip() {
        let v = Vocabulary::build(&[doc("b a"), doc("a")]);
        let back = Vocabulary::from_json(&v.to_json()).unwrap();
        assert_eq!(back.get("a"), Some(0));
        assert_eq!(back.df("a"), Some(2));
        assert_eq!(back.documents(), 2);
    }
}
