//! Whitespace tokenizer: one token per maximal non-whitespace run.

use std::collections::HashMap;
use std::sync::RwLock;

use super::{TokenSeq, TokenizeError, Tokenizer};

/// Splits on Unicode whitespace; detokenizes by joining with a single space.
///
/// Token ids are interned per instance, so `encode` has no fixed vocabulary:
/// the first distinct word seen gets id 0, the next id 1, and so on. Ids are
/// stable within one instance but carry no meaning across instances; anything
/// persisted for later processes should use the decoded text.
pub struct WhitespaceTokenizer {
    interner: RwLock<Interner>,
}

#[derive(Default)]
struct Interner {
    by_token: HashMap<String, u32>,
    by_id: Vec<String>,
}

impl Interner {
    fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.by_token.get(token) {
            return id;
        }
        let id = self.by_id.len() as u32;
        self.by_token.insert(token.to_string(), id);
        self.by_id.push(token.to_string());
        id
    }
}

impl WhitespaceTokenizer {
    pub fn new() -> Self {
        Self {
            interner: RwLock::new(Interner::default()),
        }
    }
}

impl Default for WhitespaceTokenizer {
    fn default() -> Self {
        Self::new()
    }
}

impl Tokenizer for WhitespaceTokenizer {
    fn name(&self) -> &str {
        "whitespace"
    }

    fn encode(&self, text: &str) -> Result<TokenSeq, TokenizeError> {
        let mut ids = Vec::new();
        let mut spans = Vec::new();
        let mut interner = self.interner.write().expect("interner poisoned");

        let mut start = None;
        for (pos, ch) in text.char_indices() {
            if ch.is_whitespace() {
                if let Some(s) = start.take() {
                    ids.push(interner.intern(&text[s..pos]));
                    spans.push((s, pos));
                }
            } else if start.is_none() {
                start = Some(pos);
            }
        }
        if let Some(s) = start {
            ids.push(interner.intern(&text[s..]));
            spans.push((s, text.len()));
        }

        Ok(TokenSeq {
            tokenizer_name: self.name().to_string(),
            ids,
            spans,
        })
    }

    fn decode(&self, ids: &[u32]) -> Result<String, TokenizeError> {
        let interner = self.interner.read().expect("interner poisoned");
        let mut out = String::new();
        for (index, &id) in ids.iter().enumerate() {
            let token = interner
                .by_id
                .get(id as usize)
                .ok_or(TokenizeError::InvalidId { id, index })?;
            if index > 0 {
                out.push(' ');
            }
            out.push_str(token);
        }
        Ok(out)
    }
}
