//! Shared integration-test helpers: synthetic corpora and endpoint plumbing.
#![allow(dead_code)]

pub mod oracles;

use chrono::NaiveDate;
use rand::Rng;

use memprobe_core::corpus::{BookRecord, Catalog};
use memprobe_core::extract::EndpointConfig;

/// A book whose tokens are the distinct words `<id>w0 <id>w1 ...`; trimmed
/// text equals raw text so geometry is under test control.
pub fn synthetic_book(id: &str, tokens: usize) -> BookRecord {
    let text: String = (0..tokens)
        .map(|i| format!("{id}w{i}"))
        .collect::<Vec<_>>()
        .join(" ");
    BookRecord {
        book_id: id.to_string(),
        title: format!("Book {id}"),
        author: "Synthetic".to_string(),
        ratings_count: 0,
        gutenberg_added: NaiveDate::from_ymd_opt(2001, 6, 1).expect("valid date"),
        post_cutoff: false,
        raw_text: text.clone(),
        trimmed_text: text,
        usable: tokens > 0,
    }
}

pub fn catalog_of(books: Vec<BookRecord>) -> Catalog {
    Catalog {
        books,
        cutoff_date: NaiveDate::from_ymd_opt(2023, 12, 31).expect("valid date"),
    }
}

/// Random word sequence over a vocabulary of `vocab_size` distinct words.
pub fn random_words<R: Rng>(rng: &mut R, len: usize, vocab_size: usize) -> Vec<String> {
    (0..len)
        .map(|_| format!("w{}", rng.random_range(0..vocab_size)))
        .collect()
}

/// Endpoint config pointed at an in-process mock: short timeouts, fast
/// retries, greedy decoding.
pub fn mock_endpoint(base_url: String) -> EndpointConfig {
    EndpointConfig {
        base_url,
        model_name: "mock-model".to_string(),
        request_timeout_secs: 10,
        max_retries: 1,
        retry_backoff_ms: 1,
        max_in_flight: 4,
        ..EndpointConfig::default()
    }
}
