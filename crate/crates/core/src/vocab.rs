//! Token tables with designated blank, word-separator, and unknown tokens.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::TokenId;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("vocabulary file is empty")]
    EmptyFile,
    #[error("empty token at line {line}")]
    EmptyToken { line: usize },
    #[error("duplicate token {token:?} at line {line}")]
    DuplicateToken { token: String, line: usize },
    #[error("special token {token:?} not found in vocabulary")]
    MissingSpecial { token: String },
    #[error("blank and word separator must be distinct tokens")]
    BlankEqualsWordSep,
    #[error("vocabulary needs at least 2 tokens, found {0}")]
    TooSmall(usize),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    OutOfRange { id: TokenId, size: usize },
}

/// Ordered token table; the token id is the zero-based position.
///
/// Immutable after construction and freely shareable across threads. Only the
/// blank, word-separator, and optional unknown tokens carry decoding
/// semantics; anything else (bos/eos and friends) is an ordinary label.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    blank_id: TokenId,
    word_sep_id: TokenId,
    unk_id: Option<TokenId>,
}

impl Vocabulary {
    pub fn from_tokens(
        tokens: Vec<String>,
        blank: &str,
        word_sep: &str,
        unk: Option<&str>,
    ) -> Result<Self, VocabError> {
        if tokens.is_empty() {
            return Err(VocabError::EmptyFile);
        }
        if tokens.len() < 2 {
            return Err(VocabError::TooSmall(tokens.len()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (line, token) in tokens.iter().enumerate() {
            if token.is_empty() {
                return Err(VocabError::EmptyToken { line: line + 1 });
            }
            if index.insert(token.clone(), line as TokenId).is_some() {
                return Err(VocabError::DuplicateToken {
                    token: token.clone(),
                    line: line + 1,
                });
            }
        }
        let resolve = |token: &str| {
            index
                .get(token)
                .copied()
                .ok_or_else(|| VocabError::MissingSpecial {
                    token: token.to_string(),
                })
        };
        let blank_id = resolve(blank)?;
        let word_sep_id = resolve(word_sep)?;
        if blank_id == word_sep_id {
            return Err(VocabError::BlankEqualsWordSep);
        }
        let unk_id = unk.map(resolve).transpose()?;
        Ok(Vocabulary {
            tokens,
            index,
            blank_id,
            word_sep_id,
            unk_id,
        })
    }

    /// Load a UTF-8, LF-separated token file; line number is the token id.
    pub fn load(
        path: &Path,
        blank: &str,
        word_sep: &str,
        unk: Option<&str>,
    ) -> Result<Self, VocabError> {
        let text = fs::read_to_string(path).map_err(|source| VocabError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.is_empty() {
            return Err(VocabError::EmptyFile);
        }
        Vocabulary::from_tokens(tokens, blank, word_sep, unk)
    }

    /// The token inventory used by the synthetic corpus generator: blank,
    /// word separator, then letters, apostrophe, and sentence markers.
    /// Supports sizes from 3 up to 32.
    pub fn synthetic(vocab_size: usize) -> Result<Self, VocabError> {
        let mut tokens: Vec<String> = vec!["<pad>".into(), "|".into()];
        tokens.extend(('a'..='z').map(|c| c.to_string()));
        tokens.extend(["'", "<s>", "</s>", "<unk>"].map(str::to_string));
        if vocab_size < 3 || vocab_size > tokens.len() {
            return Err(VocabError::TooSmall(vocab_size));
        }
        tokens.truncate(vocab_size);
        let unk = if vocab_size == 32 {
            Some("<unk>")
        } else {
            None
        };
        Vocabulary::from_tokens(tokens, "<pad>", "|", unk)
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn blank_id(&self) -> TokenId {
        self.blank_id
    }

    pub fn word_sep_id(&self) -> TokenId {
        self.word_sep_id
    }

    pub fn unk_id(&self) -> Option<TokenId> {
        self.unk_id
    }

    pub fn id_to_token(&self, id: TokenId) -> Result<&str, VocabError> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or(VocabError::OutOfRange {
                id,
                size: self.tokens.len(),
            })
    }

    pub fn token_to_id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Concatenate the token strings of a label-id run (one word's spelling).
    pub fn word_string(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.tokens[id as usize].as_str())
            .collect()
    }

    /// Render a collapsed labeling as text: word separators become single
    /// spaces, leading/trailing whitespace is trimmed.
    pub fn render_transcript(&self, prefix: &[TokenId]) -> String {
        let mut raw = String::new();
        for &id in prefix {
            if id == self.word_sep_id {
                raw.push(' ');
            } else {
                raw.push_str(&self.tokens[id as usize]);
            }
        }
        raw.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}
