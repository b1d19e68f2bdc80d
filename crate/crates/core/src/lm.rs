//! Backoff n-gram language models parsed from ARPA text.
//!
//! Probabilities and backoff weights stay in base-10 logs exactly as the
//! format stores them; the decoder converts to natural logs once at its
//! boundary. Scoring is incremental: an [`LmState`] carries at most
//! `order - 1` recent words so each word costs a bounded number of lookups.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

pub const BOS_WORD: &str = "<s>";
pub const EOS_WORD: &str = "</s>";
pub const UNK_WORD: &str = "<unk>";

/// Log10 probability assumed for out-of-vocabulary words when the model has
/// no `<unk>` entry.
pub const DEFAULT_UNK_LOGPROB: f64 = -10.0;

/// Stand-in id for an out-of-vocabulary word in a model without `<unk>`;
/// never matches any stored n-gram.
const OOV_SENTINEL: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum ArpaError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("missing \\data\\ section")]
    MissingData,
    #[error("line {line}: malformed count declaration {text:?}")]
    BadCountLine { line: usize, text: String },
    #[error("line {line}: unexpected content {text:?}")]
    UnexpectedContent { line: usize, text: String },
    #[error("line {line}: malformed n-gram entry: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: positive log probability {value}")]
    PositiveLogProb { line: usize, value: f64 },
    #[error("line {line}: duplicate {order}-gram")]
    DuplicateNGram { line: usize, order: usize },
    #[error("order {order}: declared {declared} n-grams, found {found}")]
    CountMismatch {
        order: usize,
        declared: usize,
        found: usize,
    },
    #[error("{order}-gram {ngram:?} lacks its length-{prefix_len} prefix")]
    MissingPrefix {
        order: usize,
        ngram: String,
        prefix_len: usize,
    },
    #[error("missing \\end\\ marker")]
    MissingEnd,
    #[error("section \\{order}-grams: missing or out of order")]
    MissingSection { order: usize },
}

#[derive(Debug, Clone, Copy)]
struct ProbBackoff {
    prob: f64,
    backoff: f64,
}

/// Incremental scoring context: the most recent words, capped at `order - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LmState {
    context: Vec<u32>,
}

impl LmState {
    pub fn context_len(&self) -> usize {
        self.context.len()
    }
}

/// A backoff n-gram model over word strings.
///
/// Immutable after parsing; states are small values copied per hypothesis.
#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    words: Vec<String>,
    index: HashMap<String, u32>,
    /// tables[n-1] maps interned word-id n-grams to (log10 prob, log10 backoff).
    tables: Vec<HashMap<Box<[u32]>, ProbBackoff>>,
    unk_id: Option<u32>,
    bos_id: Option<u32>,
    unk_logprob: f64,
}

impl NGramModel {
    /// Parse an ARPA text file from disk.
    pub fn parse_arpa(path: &Path) -> Result<Self, ArpaError> {
        let text = fs::read_to_string(path).map_err(|source| ArpaError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_arpa_str(&text)
    }

    /// Parse ARPA text from memory.
    pub fn parse_arpa_str(text: &str) -> Result<Self, ArpaError> {
        Parser::default().run(text)
    }

    /// Override the log10 probability used for OOV words when the model has
    /// no `<unk>` entry.
    pub fn with_unk_logprob(mut self, unk_logprob: f64) -> Self {
        self.unk_logprob = unk_logprob;
        self
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn ngram_count(&self, order: usize) -> usize {
        self.tables.get(order - 1).map_or(0, HashMap::len)
    }

    pub fn contains_word(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// Every word seen in any n-gram, in interning order.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Look up a stored n-gram; returns (log10 prob, log10 backoff).
    pub fn lookup(&self, words: &[&str]) -> Option<(f64, f64)> {
        let ids: Option<Vec<u32>> = words.iter().map(|w| self.index.get(*w).copied()).collect();
        let ids = ids?;
        self.tables
            .get(ids.len() - 1)?
            .get(ids.as_slice())
            .map(|e| (e.prob, e.backoff))
    }

    /// Scoring context at the start of an utterance: `<s>` when present.
    pub fn begin_state(&self) -> LmState {
        let mut state = LmState::default();
        if self.order > 1 {
            if let Some(bos) = self.bos_id {
                state.context.push(bos);
            }
        }
        state
    }

    /// Score `p(word | state)` by longest-match backoff and advance the state.
    ///
    /// Out-of-vocabulary words are scored as `<unk>`; if the model has no
    /// `<unk>` entry the configured constant log10 probability applies. The
    /// next state is the last `order - 1` words of context + word.
    pub fn score_word(&self, state: &LmState, word: &str) -> (f64, LmState) {
        self.score_word_with_unk(state, word, self.unk_logprob)
    }

    /// Same as [`score_word`](Self::score_word) with an explicit OOV constant.
    pub fn score_word_with_unk(
        &self,
        state: &LmState,
        word: &str,
        unk_logprob: f64,
    ) -> (f64, LmState) {
        let word_id = self.index.get(word).copied().or(self.unk_id);
        let score = self.backoff_score(&state.context, word_id, unk_logprob);
        let mut next = state.clone();
        next.context.push(word_id.unwrap_or(OOV_SENTINEL));
        let keep = self.order.saturating_sub(1);
        if next.context.len() > keep {
            let drop = next.context.len() - keep;
            next.context.drain(..drop);
        }
        (score, next)
    }

    /// Katz backoff: use the longest matching (context, word) n-gram; each
    /// context that fails to extend contributes its backoff weight (zero when
    /// that context n-gram is itself absent).
    fn backoff_score(&self, context: &[u32], word_id: Option<u32>, unk_logprob: f64) -> f64 {
        let max_ctx = context.len().min(self.order - 1);
        let mut start = context.len() - max_ctx;
        let mut backoff_sum = 0.0;
        loop {
            let ctx = &context[start..];
            if let Some(wid) = word_id {
                let mut key: Vec<u32> = Vec::with_capacity(ctx.len() + 1);
                key.extend_from_slice(ctx);
                key.push(wid);
                if let Some(entry) = self.tables[ctx.len()].get(key.as_slice()) {
                    return backoff_sum + entry.prob;
                }
            }
            if ctx.is_empty() {
                break;
            }
            if let Some(entry) = self.tables[ctx.len() - 1].get(ctx) {
                backoff_sum += entry.backoff;
            }
            start += 1;
        }
        // No unigram matched: OOV against a model without <unk>.
        backoff_sum + unk_logprob
    }

    /// Log10 probability of a word sequence framed by `<s>` and `</s>`,
    /// as a fold of [`score_word`](Self::score_word).
    pub fn sentence_logprob<S: AsRef<str>>(&self, words: &[S]) -> f64 {
        let mut state = self.begin_state();
        let mut total = 0.0;
        for word in words {
            let (score, next) = self.score_word(&state, word.as_ref());
            total += score;
            state = next;
        }
        let (score, _) = self.score_word(&state, EOS_WORD);
        total + score
    }
}

#[derive(Default)]
struct Parser {
    words: Vec<String>,
    index: HashMap<String, u32>,
    tables: Vec<HashMap<Box<[u32]>, ProbBackoff>>,
    declared: Vec<usize>,
}

enum Section {
    Preamble,
    Data,
    Grams(usize),
    End,
}

impl Parser {
    fn intern(&mut self, word: &str) -> u32 {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = self.words.len() as u32;
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), id);
        id
    }

    fn run(mut self, text: &str) -> Result<NGramModel, ArpaError> {
        let mut section = Section::Preamble;
        let mut seen_sections = 0usize;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            match section {
                Section::Preamble => {
                    if line == "\\data\\" {
                        section = Section::Data;
                    }
                    // Anything before \data\ is header commentary.
                }
                Section::Data => {
                    if let Some(rest) = line.strip_prefix("ngram ") {
                        let (order, count) =
                            rest.split_once('=')
                                .ok_or_else(|| ArpaError::BadCountLine {
                                    line: line_no,
                                    text: line.to_string(),
                                })?;
                        let order: usize =
                            order.trim().parse().map_err(|_| ArpaError::BadCountLine {
                                line: line_no,
                                text: line.to_string(),
                            })?;
                        let count: usize =
                            count.trim().parse().map_err(|_| ArpaError::BadCountLine {
                                line: line_no,
                                text: line.to_string(),
                            })?;
                        if order != self.declared.len() + 1 {
                            return Err(ArpaError::BadCountLine {
                                line: line_no,
                                text: line.to_string(),
                            });
                        }
                        self.declared.push(count);
                        self.tables.push(HashMap::with_capacity(count));
                    } else if let Some(order) = parse_section_header(line) {
                        self.check_section_order(order, &mut seen_sections)?;
                        section = Section::Grams(order);
                    } else {
                        return Err(ArpaError::UnexpectedContent {
                            line: line_no,
                            text: line.to_string(),
                        });
                    }
                }
                Section::Grams(order) => {
                    if let Some(next_order) = parse_section_header(line) {
                        self.check_section_order(next_order, &mut seen_sections)?;
                        section = Section::Grams(next_order);
                    } else if line == "\\end\\" {
                        section = Section::End;
                    } else {
                        self.parse_entry(line, line_no, order)?;
                    }
                }
                Section::End => {
                    return Err(ArpaError::UnexpectedContent {
                        line: line_no,
                        text: line.to_string(),
                    });
                }
            }
        }
        match section {
            Section::Preamble => return Err(ArpaError::MissingData),
            Section::End => {}
            _ => return Err(ArpaError::MissingEnd),
        }
        if seen_sections != self.declared.len() {
            return Err(ArpaError::MissingSection {
                order: seen_sections + 1,
            });
        }
        self.finish()
    }

    fn check_section_order(
        &self,
        order: usize,
        seen_sections: &mut usize,
    ) -> Result<(), ArpaError> {
        if order != *seen_sections + 1 || order > self.declared.len() {
            return Err(ArpaError::MissingSection {
                order: *seen_sections + 1,
            });
        }
        *seen_sections = order;
        Ok(())
    }

    fn parse_entry(&mut self, line: &str, line_no: usize, order: usize) -> Result<(), ArpaError> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != order + 1 && fields.len() != order + 2 {
            return Err(ArpaError::MalformedLine {
                line: line_no,
                reason: format!(
                    "expected {} or {} fields for a {}-gram, found {}",
                    order + 1,
                    order + 2,
                    order,
                    fields.len()
                ),
            });
        }
        let prob: f64 = fields[0].parse().map_err(|_| ArpaError::MalformedLine {
            line: line_no,
            reason: format!("unparseable log probability {:?}", fields[0]),
        })?;
        if !prob.is_finite() {
            return Err(ArpaError::MalformedLine {
                line: line_no,
                reason: format!("non-finite log probability {prob}"),
            });
        }
        if prob > 0.0 {
            return Err(ArpaError::PositiveLogProb {
                line: line_no,
                value: prob,
            });
        }
        let backoff: f64 = if fields.len() == order + 2 {
            let raw = fields[order + 1];
            raw.parse().map_err(|_| ArpaError::MalformedLine {
                line: line_no,
                reason: format!("unparseable backoff weight {raw:?}"),
            })?
        } else {
            0.0
        };
        if !backoff.is_finite() {
            return Err(ArpaError::MalformedLine {
                line: line_no,
                reason: format!("non-finite backoff weight {backoff}"),
            });
        }
        let ids: Box<[u32]> = fields[1..=order].iter().map(|w| self.intern(w)).collect();
        if self.tables[order - 1]
            .insert(ids, ProbBackoff { prob, backoff })
            .is_some()
        {
            return Err(ArpaError::DuplicateNGram {
                line: line_no,
                order,
            });
        }
        Ok(())
    }

    fn finish(self) -> Result<NGramModel, ArpaError> {
        for (i, &declared) in self.declared.iter().enumerate() {
            let found = self.tables[i].len();
            if found != declared {
                return Err(ArpaError::CountMismatch {
                    order: i + 1,
                    declared,
                    found,
                });
            }
        }
        // Every k-gram (k > 1) must have its (k-1)-length prefix.
        for k in 2..=self.tables.len() {
            for key in self.tables[k - 1].keys() {
                let prefix = &key[..k - 1];
                if !self.tables[k - 2].contains_key(prefix) {
                    return Err(ArpaError::MissingPrefix {
                        order: k,
                        ngram: key
                            .iter()
                            .map(|&id| self.words[id as usize].as_str())
                            .collect::<Vec<_>>()
                            .join(" "),
                        prefix_len: k - 1,
                    });
                }
            }
        }
        let unk_id = self.index.get(UNK_WORD).copied();
        let bos_id = self.index.get(BOS_WORD).copied();
        Ok(NGramModel {
            order: self.tables.len(),
            words: self.words,
            index: self.index,
            tables: self.tables,
            unk_id,
            bos_id,
            unk_logprob: DEFAULT_UNK_LOGPROB,
        })
    }
}

fn parse_section_header(line: &str) -> Option<usize> {
    let rest = line.strip_prefix('\\')?.strip_suffix("-grams:")?;
    rest.parse().ok()
}


#[cfg(test)]
#[allow(clippy::approx_constant)] // ARPA fixtures store rounded log10 values
mod tests {
    use super::fixtures::*;
    use super::*;

    fn ctx(model: &NGramModel, words: &[&str]) -> LmState {
        let mut state = LmState::default();
        for w in words {
            let (_, next) = model.score_word(&state, w);
            state = next;
        }
        state
    }

    #[test]
    fn parses_minimal_unigram_model() {
        let m = NGramModel::parse_arpa_str(UNIGRAM_FIXTURE).unwrap();
        assert_eq!(m.order(), 1);
        assert_eq!(m.ngram_count(1), 3);
        assert_eq!(m.lookup(&["a"]), Some((-0.30103, -0.1)));
        assert_eq!(m.lookup(&["</s>"]), Some((-0.477, 0.0)));
    }

    #[test]
    fn parses_from_a_file_path() {
        use std::io::Write;
        let mut file = tempfile::NamedTempFile::new().unwrap();
        write!(file, "{TRIGRAM_FIXTURE}").unwrap();
        let m = NGramModel::parse_arpa(file.path()).unwrap();
        assert_eq!(m.order(), 3);
        assert_eq!(m.ngram_count(2), 4);
        assert!(matches!(
            NGramModel::parse_arpa(std::path::Path::new("/nonexistent.arpa")),
            Err(ArpaError::Io { .. })
        ));
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let text = UNIGRAM_FIXTURE.replace("ngram 1=3", "ngram 1=4");
        let err = NGramModel::parse_arpa_str(&text).unwrap_err();
        assert!(matches!(
            err,
            ArpaError::CountMismatch {
                order: 1,
                declared: 4,
                found: 3
            }
        ));
    }

    #[test]
    fn bigram_entries_and_backoffs_are_retrievable() {
        let m = NGramModel::parse_arpa_str(BIGRAM_FIXTURE).unwrap();
        assert_eq!(m.lookup(&["a", "b"]), Some((-0.15, 0.0)));
        assert_eq!(m.lookup(&["a"]), Some((-0.30103, -0.1)));
    }

    #[test]
    fn direct_bigram_hit() {
        let m = NGramModel::parse_arpa_str(BIGRAM_FIXTURE).unwrap();
        let state = ctx(&m, &["a"]);
        let (score, _) = m.score_word(&state, "b");
        assert_eq!(score, -0.15);
    }

    #[test]
    fn backoff_applies_failed_context_weight() {
        let m = NGramModel::parse_arpa_str(BIGRAM_FIXTURE).unwrap();
        // ("a", "c") absent: backoff("a") + p("c") = -0.1 + -0.5
        let state = ctx(&m, &["a"]);
        let (score, _) = m.score_word(&state, "c");
        assert!((score - (-0.6)).abs() < 1e-12);
        // ("b", "c") absent and "b" has no backoff weight: 0 + p("c")
        let state = ctx(&m, &["b"]);
        let (score, _) = m.score_word(&state, "c");
        assert_eq!(score, -0.5);
    }

    #[test]
    fn trigram_backoff_chains_across_levels() {
        let m = NGramModel::parse_arpa_str(TRIGRAM_FIXTURE).unwrap();
        // ("a","b","b") absent -> backoff("a b") = -0.05;
        // ("b","b") absent -> backoff("b") = -0.2; unigram "b" = -1.0.
        let state = ctx(&m, &["a", "b"]);
        let (score, _) = m.score_word(&state, "b");
        let expected = -0.05 + -0.2 + -1.0;
        assert_eq!(score, expected);
        // Longest match wins: ("a","b","a") is a stored trigram.
        let (score, _) = m.score_word(&state, "a");
        assert_eq!(score, -0.4);
    }

    #[test]
    fn oov_words_score_as_unk_with_same_backoff_path() {
        let m = NGramModel::parse_arpa_str(TRIGRAM_FIXTURE).unwrap();
        let state = ctx(&m, &["a"]);
        let (oov, next_oov) = m.score_word(&state, "zzz");
        // ("a","<unk>") absent -> backoff("a") = -0.1; unigram <unk> = -1.30103.
        assert!((oov - (-0.1 + -1.30103)).abs() < 1e-12);
        let (via_unk, next_unk) = m.score_word(&state, UNK_WORD);
        assert_eq!(oov, via_unk);
        assert_eq!(next_oov, next_unk);
    }

    #[test]
    fn missing_unk_falls_back_to_configured_constant() {
        let m = NGramModel::parse_arpa_str(BIGRAM_FIXTURE)
            .unwrap()
            .with_unk_logprob(-7.0);
        let state = ctx(&m, &["a"]);
        let (score, _) = m.score_word(&state, "zzz");
        // backoff("a") = -0.1 plus the constant.
        assert!((score - (-0.1 + -7.0)).abs() < 1e-12);
        let (score, _) = m.score_word_with_unk(&state, "zzz", -3.0);
        assert!((score - (-0.1 + -3.0)).abs() < 1e-12);
    }

    #[test]
    fn sentence_logprob_is_the_fold_of_score_word() {
        let m = NGramModel::parse_arpa_str(TRIGRAM_FIXTURE).unwrap();
        // Empty sequence: p(</s> | <s>).
        let begin = m.begin_state();
        let (eos, _) = m.score_word(&begin, EOS_WORD);
        assert_eq!(m.sentence_logprob::<&str>(&[]), eos);

        let words = ["a", "b", "a", "b"];
        let mut state = m.begin_state();
        let mut manual = 0.0;
        for w in &words {
            let (s, next) = m.score_word(&state, w);
            manual += s;
            state = next;
        }
        let (s, _) = m.score_word(&state, EOS_WORD);
        manual += s;
        assert_eq!(m.sentence_logprob(&words), manual);
    }

    #[test]
    fn hand_checked_sentence_score() {
        let m = NGramModel::parse_arpa_str(TRIGRAM_FIXTURE).unwrap();
        // p(a|<s>) = -0.30103, p(b|<s> a) = -0.1 (trigram),
        // p(</s>|a b) -> backoff("a b") = -0.05 + p(</s>|b) = -0.9.
        let expected = -0.30103 + -0.1 + (-0.05 + -0.9);
        assert!((m.sentence_logprob(&["a", "b"]) - expected).abs() < 1e-12);
    }

    #[test]
    fn state_context_is_capped_at_order_minus_one() {
        let m = NGramModel::parse_arpa_str(TRIGRAM_FIXTURE).unwrap();
        let state = ctx(&m, &["a", "b", "a", "b", "a"]);
        assert_eq!(state.context_len(), 2);
        let m1 = NGramModel::parse_arpa_str(UNIGRAM_FIXTURE).unwrap();
        let state = ctx(&m1, &["a", "a"]);
        assert_eq!(state.context_len(), 0);
    }

    #[test]
    fn rejects_documented_malformations() {
        let no_end = TRIGRAM_FIXTURE.replace("\\end\\", "");
        assert!(matches!(
            NGramModel::parse_arpa_str(&no_end),
            Err(ArpaError::MissingEnd)
        ));

        let positive = TRIGRAM_FIXTURE.replace("-0.15\ta b\t-0.05", "0.15\ta b\t-0.05");
        assert!(matches!(
            NGramModel::parse_arpa_str(&positive),
            Err(ArpaError::PositiveLogProb { .. })
        ));

        let garbage = TRIGRAM_FIXTURE.replace("-0.15\ta b\t-0.05", "-0.15\ta b extra junk here");
        assert!(matches!(
            NGramModel::parse_arpa_str(&garbage),
            Err(ArpaError::MalformedLine { .. })
        ));

        let no_data = "\\1-grams:\n-0.5\ta\n\\end\\\n";
        assert!(matches!(
            NGramModel::parse_arpa_str(no_data),
            Err(ArpaError::MissingData)
        ));

        // 2-gram whose 1-word prefix is missing from the unigram table.
        let orphan = BIGRAM_FIXTURE.replace("-0.15\ta b", "-0.15\tq b");
        assert!(matches!(
            NGramModel::parse_arpa_str(&orphan),
            Err(ArpaError::MissingPrefix { order: 2, .. })
        ));
    }

    #[test]
    fn incremental_scoring_is_path_independent() {
        let m = NGramModel::parse_arpa_str(TRIGRAM_FIXTURE).unwrap();
        let sequences: Vec<Vec<&str>> = vec![
            vec![],
            vec!["a"],
            vec!["b", "a"],
            vec!["a", "b", "a", "zzz", "b"],
            vec!["zzz", "zzz"],
        ];
        for words in sequences {
            let mut state = m.begin_state();
            let mut total = 0.0;
            for w in &words {
                let (s, next) = m.score_word(&state, w);
                total += s;
                state = next;
            }
            let (s, _) = m.score_word(&state, EOS_WORD);
            total += s;
            assert_eq!(total, m.sentence_logprob(&words), "sequence {words:?}");
        }
    }

    #[test]
    fn longest_match_always_wins_over_backoff() {
        let m = NGramModel::parse_arpa_str(TRIGRAM_FIXTURE).unwrap();
        // For every stored bigram (w1, w2), scoring w2 after w1 from an empty
        // deeper context returns exactly the stored probability.
        for (w1, w2, p) in [("a", "b", -0.15), ("b", "a", -0.5), ("b", "</s>", -0.9)] {
            let state = ctx(&m, &[w1]);
            let (score, _) = m.score_word(&state, w2);
            assert_eq!(score, p, "bigram {w1} {w2}");
        }
    }
}
