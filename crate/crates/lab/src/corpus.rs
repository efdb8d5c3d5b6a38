//! Bag-of-words corpora: sparse documents, ingestion of UCI-style docword
//! files, and synthetic corpora drawn from a planted Multinomial–Bernoulli
//! RBM.
//!
//! Docword grammar: three header lines holding the integers D (documents),
//! W (vocabulary size) and NNZ (entries), then exactly NNZ lines
//! `docID wordID count` with 1-based ids and a positive integer count.
//! Blank lines are allowed only at the end of the file.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use efvae::numeric::{ln_factorial, log_softmax};
use efvae::rbm::{Rbm, RbmVariant};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

/// Word counts of one document over a fixed vocabulary, stored sparsely
/// with strictly increasing word indices and positive counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub words: Vec<u32>,
    pub counts: Vec<u32>,
}

impl Document {
    /// Builds a document from `(word, count)` pairs; zero counts are dropped
    /// and repeated words are summed.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut map = BTreeMap::new();
        for (w, c) in pairs {
            if c > 0 {
                *map.entry(w).or_insert(0) += c;
            }
        }
        Document {
            words: map.keys().copied().collect(),
            counts: map.values().copied().collect(),
        }
    }

    /// From dense counts.
    pub fn from_dense(x: &[u32]) -> Self {
        Document::from_pairs(x.iter().enumerate().map(|(w, c)| (w as u32, *c)))
    }

    /// `l = Σ_k x_k`.
    pub fn length(&self) -> u64 {
        self.counts.iter().map(|c| *c as u64).sum()
    }

    pub fn dense(&self, vocab: usize) -> Vec<f64> {
        let mut x = vec![0.0; vocab];
        for (w, c) in self.words.iter().zip(&self.counts) {
            x[*w as usize] = *c as f64;
        }
        x
    }

    /// `log (l! / Π x_k!)`.
    pub fn log_multinomial_coefficient(&self) -> f64 {
        ln_factorial(self.length() as f64) - self.counts.iter().map(|c| ln_factorial(*c as f64)).sum::<f64>()
    }

    fn validate(&self, vocab: usize) -> Result<(), String> {
        if self.words.len() != self.counts.len() {
            return Err("words and counts differ in length".into());
        }
        if self.words.windows(2).any(|w| w[0] >= w[1]) {
            return Err("word indices must be strictly increasing".into());
        }
        if self.words.last().is_some_and(|w| *w as usize >= vocab) {
            return Err(format!("word index outside vocabulary of size {vocab}"));
        }
        if self.counts.contains(&0) {
            return Err("counts must be positive".into());
        }
        Ok(())
    }
}

/// A vocabulary with train and test documents. `word_ids[k]` is the
/// original identifier of vocabulary entry `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corpus {
    pub vocab_size: usize,
    pub word_ids: Vec<u32>,
    pub train: Vec<Document>,
    pub test: Vec<Document>,
}

impl Corpus {
    pub fn validate(&self) -> LabResult<()> {
        if self.vocab_size == 0 || self.word_ids.len() != self.vocab_size {
            return Err(LabError::Validation(format!(
                "corpus vocabulary: size {} with {} word ids",
                self.vocab_size,
                self.word_ids.len()
            )));
        }
        for (split, docs) in [("train", &self.train), ("test", &self.test)] {
            for (i, d) in docs.iter().enumerate() {
                d.validate(self.vocab_size)
                    .map_err(|e| LabError::Validation(format!("{split} document {i}: {e}")))?;
            }
        }
        Ok(())
    }
}

/// Raw contents of a docword file: one sparse document per declared id, with
/// the original 1-based word ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Docword {
    pub vocab_size: usize,
    pub docs: Vec<Vec<(u32, u32)>>,
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> LabError {
    LabError::Parse {
        path: path.to_path_buf(),
        line,
        column: 1,
        message: message.into(),
    }
}

fn parse_uint(path: &Path, line: usize, field: &str, what: &str) -> LabResult<u64> {
    field
        .parse::<u64>()
        .map_err(|_| parse_error(path, line, format!("{what} must be a nonnegative integer, got {field:?}")))
}

/// Parses docword text; `path` is used only for diagnostics.
pub fn parse_docword(path: &Path, text: &str) -> LabResult<Docword> {
    let lines: Vec<&str> = text.lines().collect();
    let mut end = lines.len();
    while end > 0 && lines[end - 1].trim().is_empty() {
        end -= 1;
    }
    if end < 3 {
        return Err(parse_error(path, end + 1, "missing header (D, W, NNZ)"));
    }
    let mut header = [0u64; 3];
    for (i, name) in ["document count D", "vocabulary size W", "entry count NNZ"].iter().enumerate() {
        header[i] = parse_uint(path, i + 1, lines[i].trim(), name)?;
    }
    let [d, w, nnz] = header;
    if end - 3 != nnz as usize {
        return Err(parse_error(
            path,
            end.min(3 + nnz as usize) + 1,
            format!("header declares {nnz} entries, file has {}", end - 3),
        ));
    }
    let mut docs = vec![BTreeMap::new(); d as usize];
    for (offset, raw) in lines[3..end].iter().enumerate() {
        let lineno = offset + 4;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_error(path, lineno, format!("expected 3 fields, found {}", fields.len())));
        }
        let doc = parse_uint(path, lineno, fields[0], "docID")?;
        let word = parse_uint(path, lineno, fields[1], "wordID")?;
        let count = parse_uint(path, lineno, fields[2], "count")?;
        if doc == 0 || doc > d {
            return Err(parse_error(path, lineno, format!("docID {doc} outside 1..={d}")));
        }
        if word == 0 || word > w {
            return Err(parse_error(path, lineno, format!("wordID {word} outside 1..={w}")));
        }
        if count == 0 || count > u32::MAX as u64 {
            return Err(parse_error(path, lineno, format!("count {count} must be positive and fit in 32 bits")));
        }
        if docs[(doc - 1) as usize].insert(word as u32, count as u32).is_some() {
            return Err(parse_error(path, lineno, format!("duplicate entry for document {doc}, word {word}")));
        }
    }
    Ok(Docword {
        vocab_size: w as usize,
        docs: docs.into_iter().map(|m| m.into_iter().collect()).collect(),
    })
}

pub fn read_docword(path: &Path) -> LabResult<Docword> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    parse_docword(path, &text)
}

/// The `max_vocab` words with the highest total count in `train`, ties going
/// to the lower word id, returned in increasing id order. Words that never
/// occur in `train` are not kept.
pub fn select_vocabulary(train: &Docword, max_vocab: usize) -> Vec<u32> {
    let mut freq: HashMap<u32, u64> = HashMap::new();
    for doc in &train.docs {
        for (w, c) in doc {
            *freq.entry(*w).or_insert(0) += *c as u64;
        }
    }
    let mut ranked: Vec<(u32, u64)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut keep: Vec<u32> = ranked.into_iter().take(max_vocab).map(|(w, _)| w).collect();
    keep.sort_unstable();
    keep
}

fn restrict(doc: &[(u32, u32)], index: &HashMap<u32, u32>) -> Document {
    Document::from_pairs(doc.iter().filter_map(|(w, c)| index.get(w).map(|k| (*k, *c))))
}

/// Reads a training docword file (and optionally a test file over the same
/// word ids), keeps the `max_vocab` most frequent training words and drops
/// all other counts. Lengths are recomputed from the kept counts; documents
/// may become empty.
pub fn ingest_bow(train_path: &Path, test_path: Option<&Path>, max_vocab: usize) -> LabResult<Corpus> {
    if max_vocab == 0 {
        return Err(LabError::Validation("max_vocab must be positive".into()));
    }
    let train = read_docword(train_path)?;
    let test = match test_path {
        Some(p) => Some(read_docword(p)?),
        None => None,
    };
    Ok(build_corpus(&train, test.as_ref(), max_vocab))
}

pub fn build_corpus(train: &Docword, test: Option<&Docword>, max_vocab: usize) -> Corpus {
    let vocab = select_vocabulary(train, max_vocab);
    let index: HashMap<u32, u32> = vocab.iter().enumerate().map(|(k, w)| (*w, k as u32)).collect();
    Corpus {
        vocab_size: vocab.len(),
        word_ids: vocab,
        train: train.docs.iter().map(|d| restrict(d, &index)).collect(),
        test: test
            .map(|t| t.docs.iter().map(|d| restrict(d, &index)).collect())
            .unwrap_or_default(),
    }
}

/// A Multinomial–Bernoulli RBM with `bits` hidden units whose joint is a
/// VAE with uniform prior and linear decoder. Each bit owns two groups of
/// `group_size` words; flipping the bit swaps the logits `0` and `strength`
/// between its groups, so every latent state has the same log-partition.
/// Remaining vocabulary entries are background words with logit 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantedSpec {
    pub vocab: usize,
    pub bits: usize,
    pub group_size: usize,
    pub strength: f64,
    /// Median document length; lengths are log-normal.
    pub median_length: f64,
    /// Standard deviation of the log length.
    pub length_sigma: f64,
    pub max_length: u64,
    pub train_docs: usize,
    pub test_docs: usize,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            vocab: 100,
            bits: 8,
            group_size: 6,
            strength: 0.8,
            median_length: 40.0,
            length_sigma: 1.2,
            max_length: 500,
            train_docs: 2000,
            test_docs: 500,
        }
    }
}

impl PlantedSpec {
    pub fn validate(&self) -> LabResult<()> {
        let used = 2 * self.bits * self.group_size;
        let bad = |m: String| Err(LabError::Validation(m));
        if self.bits == 0 || self.group_size == 0 {
            return bad("planted corpus needs at least one bit and one word per group".into());
        }
        if used > self.vocab {
            return bad(format!(
                "planted corpus needs {used} words for {} bits, vocabulary has {}",
                self.bits, self.vocab
            ));
        }
        if self.bits > efvae::spaces::MAX_BINARY_BITS {
            return bad(format!("planted corpus supports at most {} bits", efvae::spaces::MAX_BINARY_BITS));
        }
        if !(self.strength.is_finite() && self.median_length >= 1.0 && self.length_sigma >= 0.0) {
            return bad("planted strength, median length and length spread must be finite, median ≥ 1".into());
        }
        if self.max_length == 0 || self.train_docs == 0 || self.test_docs == 0 {
            return bad("planted corpus needs positive max length and document counts".into());
        }
        Ok(())
    }

    /// The planted RBM: `W` is `vocab × bits`, hidden bias zero.
    pub fn rbm(&self) -> LabResult<Rbm> {
        self.validate()?;
        let mut w = DMatrix::zeros(self.vocab, self.bits);
        let mut u = DVector::zeros(self.vocab);
        for j in 0..self.bits {
            let base = 2 * j * self.group_size;
            for k in 0..self.group_size {
                // bit j on moves the larger logit from group B to group A
                w[(base + k, j)] = self.strength;
                w[(base + self.group_size + k, j)] = -self.strength;
                u[base + self.group_size + k] = self.strength;
            }
        }
        Ok(Rbm::new(w, u, DVector::zeros(self.bits), RbmVariant::MultinomialBernoulli)?)
    }
}

fn sample_length<R: Rng + ?Sized>(spec: &PlantedSpec, rng: &mut R) -> u64 {
    let e: f64 = rng.sample(StandardNormal);
    let l = (spec.median_length.ln() + spec.length_sigma * e).exp().round();
    (l as u64).clamp(1, spec.max_length)
}

fn sample_document<R: Rng + ?Sized>(rbm: &Rbm, spec: &PlantedSpec, rng: &mut R) -> Document {
    let z: Vec<f64> = (0..spec.bits).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
    let logits = &rbm.w * DVector::from_vec(z) + &rbm.u;
    let logp = log_softmax(logits.as_slice());
    let mut cdf = Vec::with_capacity(logp.len());
    let mut acc = 0.0;
    for lp in &logp {
        acc += lp.exp();
        cdf.push(acc);
    }
    let l = sample_length(spec, rng);
    let mut counts = vec![0u32; spec.vocab];
    for _ in 0..l {
        let r = rng.random::<f64>() * acc;
        let k = cdf.partition_point(|c| *c <= r).min(spec.vocab - 1);
        counts[k] += 1;
    }
    Document::from_dense(&counts)
}

/// Draws train and test documents from the planted RBM.
pub fn synthesize<R: Rng + ?Sized>(spec: &PlantedSpec, rng: &mut R) -> LabResult<(Corpus, Rbm)> {
    let rbm = spec.rbm()?;
    let train = (0..spec.train_docs).map(|_| sample_document(&rbm, spec, rng)).collect();
    let test = (0..spec.test_docs).map(|_| sample_document(&rbm, spec, rng)).collect();
    let corpus = Corpus {
        vocab_size: spec.vocab,
        word_ids: (1..=spec.vocab as u32).collect(),
        train,
        test,
    };
    Ok((corpus, rbm))
}

/// Mean negative log-likelihood per document under a Multinomial–Bernoulli
/// RBM, excluding the multinomial coefficient (the same units as the text
/// VAE NELBO).
pub fn rbm_nll_per_doc(rbm: &Rbm, docs: &[Document]) -> LabResult<f64> {
    let mut partitions: BTreeMap<u64, f64> = BTreeMap::new();
    let mut total = 0.0;
    let mut n = 0usize;
    for d in docs.iter().filter(|d| d.length() > 0) {
        let l = d.length();
        let lz = match partitions.get(&l) {
            Some(v) => *v,
            None => {
                let v = rbm.log_partition(l)?;
                partitions.insert(l, v);
                v
            }
        };
        let x = d.dense(rbm.visible());
        let lp = rbm.log_unnormalized(&x)? - lz;
        total -= lp - d.log_multinomial_coefficient();
        n += 1;
    }
    if n == 0 {
        return Err(LabError::Validation("no nonempty documents".into()));
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use efvae::numeric::log_sum_exp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p() -> &'static Path {
        Path::new("toy.docword")
    }

    #[test]
    fn parses_two_document_file() {
        let text = "2\n3\n4\n1 1 2\n1 3 1\n2 2 5\n2 3 1\n";
        let dw = parse_docword(p(), text).unwrap();
        assert_eq!(dw.docs, vec![vec![(1, 2), (3, 1)], vec![(2, 5), (3, 1)]]);
        let c = build_corpus(&dw, None, 10);
        assert_eq!(c.word_ids, vec![1, 2, 3]);
        assert_eq!(c.train[0], Document { words: vec![0, 2], counts: vec![2, 1] });
        assert_eq!(c.train[1], Document { words: vec![1, 2], counts: vec![5, 1] });
    }

    #[test]
    fn single_word_vocabulary_keeps_most_frequent() {
        let text = "2\n3\n4\n1 1 2\n1 3 1\n2 2 5\n2 3 1\n";
        let c = build_corpus(&parse_docword(p(), text).unwrap(), None, 1);
        assert_eq!(c.word_ids, vec![2]);
        assert_eq!(c.train[0].length(), 0);
        assert_eq!(c.train[1], Document { words: vec![0], counts: vec![5] });
    }

    #[test]
    fn frequency_tie_keeps_lower_id() {
        let text = "1\n3\n2\n1 3 4\n1 2 4\n";
        let c = build_corpus(&parse_docword(p(), text).unwrap(), None, 1);
        assert_eq!(c.word_ids, vec![2]);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let cases = [
            ("2\n3\n1\n1 1 x\n", 4),
            ("2\n3\n1\n1 1 2.5\n", 4),
            ("2\n3\n2\n1 1 1\n", 5),
            ("2\n3\n1\n3 1 1\n", 4),
            ("2\n3\n1\n1 1\n", 4),
            ("2\nW\n1\n1 1 1\n", 2),
        ];
        for (text, line) in cases {
            match parse_docword(p(), text) {
                Err(LabError::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn planted_model_has_constant_partition_per_state() {
        let spec = PlantedSpec::default();
        let rbm = spec.rbm().unwrap();
        let zs = efvae::FiniteSpace::binary(spec.bits, efvae::BitEncoding::ZeroOne).unwrap();
        let lses: Vec<f64> = zs
            .iter()
            .map(|z| log_sum_exp((&rbm.w * DVector::from_column_slice(z) + &rbm.u).as_slice()))
            .collect();
        assert!(lses.iter().all(|v| (v - lses[0]).abs() < 1e-12));
    }

    #[test]
    fn synthetic_corpus_is_valid_and_deterministic() {
        let spec = PlantedSpec {
            train_docs: 50,
            test_docs: 10,
            ..Default::default()
        };
        let (a, _) = synthesize(&spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let (b, _) = synthesize(&spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        assert!(a.train.iter().all(|d| (1..=spec.max_length).contains(&d.length())));
    }

    #[test]
    fn planted_nll_matches_hidden_enumeration() {
        let spec = PlantedSpec {
            bits: 3,
            vocab: 20,
            group_size: 3,
            train_docs: 5,
            test_docs: 1,
            ..Default::default()
        };
        let (c, rbm) = synthesize(&spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let zs = efvae::FiniteSpace::binary(3, efvae::BitEncoding::ZeroOne).unwrap();
        let mut expect = 0.0;
        for d in &c.train {
            let x = d.dense(spec.vocab);
            let terms: Vec<f64> = zs
                .iter()
                .map(|z| {
                    let lp = log_softmax((&rbm.w * DVector::from_column_slice(z) + &rbm.u).as_slice());
                    x.iter().zip(&lp).map(|(a, b)| a * b).sum::<f64>() - 3f64 * 2f64.ln()
                })
                .collect();
            expect -= log_sum_exp(&terms);
        }
        expect /= c.train.len() as f64;
        let got = rbm_nll_per_doc(&rbm, &c.train).unwrap();
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
    }
}
