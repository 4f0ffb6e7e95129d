//! Byte-level tokenization with a fixed template.
//!
//! Token ids 0..=255 are raw bytes. Three specials follow: start, end, pad.
//! No merges, no vocabulary files; any byte string round-trips exactly.

use super::{ModelError, QueryDoc};

pub const START: u16 = 256;
pub const END: u16 = 257;
pub const PAD: u16 = 258;
pub const VOCAB_SIZE: usize = 259;

/// Separator byte between query, title, and summary in the template.
pub const SEP: u16 = b':' as u16;

/// Tokens the template spends beyond the content: start, two separators, end.
pub const TEMPLATE_OVERHEAD: usize = 4;

/// Raw bytes to token ids.
pub fn encode_bytes(text: &[u8]) -> Vec<u16> {
    text.iter().map(|&b| b as u16).collect()
}

/// Token ids back to bytes; special tokens are dropped.
pub fn decode_bytes(ids: &[u16]) -> Vec<u8> {
    ids.iter()
        .filter(|&&id| id < 256)
        .map(|&id| id as u8)
        .collect()
}

/// Encode `<s> query : title : summary </s>` into at most `max_len` tokens.
///
/// When the template does not fit, the summary is truncated first, then the
/// title. The query is never cut and the end token is always present; a query
/// that cannot fit alongside the overhead is an error.
pub fn encode_pair(doc: &QueryDoc, max_len: usize) -> Result<Vec<u16>, ModelError> {
    if doc.query.is_empty() {
        return Err(ModelError::EmptyQuery);
    }
    let query = doc.query.as_bytes();
    if query.len() + TEMPLATE_OVERHEAD > max_len {
        return Err(ModelError::QueryTooLong {
            query_len: query.len(),
            max_len,
        });
    }
    let budget = max_len - TEMPLATE_OVERHEAD - query.len();
    let title = &doc.title.as_bytes()[..doc.title.len().min(budget)];
    let summary = &doc.summary.as_bytes()[..doc.summary.len().min(budget - title.len())];

    let mut seq = Vec::with_capacity(TEMPLATE_OVERHEAD + query.len() + title.len() + summary.len());
    seq.push(START);
    seq.extend(encode_bytes(query));
    seq.push(SEP);
    seq.extend(encode_bytes(title));
    seq.push(SEP);
    seq.extend(encode_bytes(summary));
    seq.push(END);
    Ok(seq)
}

/// Index of the separator that closes the query span in an encoded pair.
///
/// Derived from the query length rather than scanned, since query bytes may
/// themselves contain the separator byte. Continued pre-training predicts
/// every token from here on (separators, document bytes, end token); the
/// query itself is given, not learned.
pub fn query_span_end(doc: &QueryDoc) -> usize {
    1 + doc.query.len()
}
