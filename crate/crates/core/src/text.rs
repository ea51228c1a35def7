//! Tokenization shared by the lexical index, the hashing embedder and the
//! oracle backend.

/// Lowercases and splits on any non-alphanumeric character, dropping empty
/// tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

const STOPWORDS: &[&str] = &[
    "about", "above", "after", "again", "against", "also", "because", "been", "before", "being",
    "below", "between", "both", "cannot", "could", "does", "doing", "down", "during", "each",
    "even", "every", "from", "further", "have", "having", "here", "into", "itself", "just",
    "like", "more", "most", "much", "must", "only", "other", "ought", "ourselves", "over",
    "really", "same", "should", "since", "some", "still", "such", "than", "that", "their",
    "theirs", "them", "themselves", "then", "there", "these", "they", "thing", "things",
    "think", "this", "those", "through", "under", "until", "very", "view", "want", "well",
    "were", "what", "when", "where", "which", "while", "whom", "will", "with", "would", "your",
    "yours", "yourself",
];

/// Distinct content-bearing tokens of `text` in first-occurrence order, at
/// most `limit` of them. A token qualifies when it has at least four
/// characters and is not a common function word.
pub fn salient_tokens(text: &str, limit: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for tok in tokenize(text) {
        if out.len() >= limit {
            break;
        }
        if tok.chars().count() < 4 || STOPWORDS.contains(&tok.as_str()) {
            continue;
        }
        if !out.contains(&tok) {
            out.push(tok);
        }
    }
    out
}

/// 64-bit FNV-1a, used where a fast, platform-independent hash is needed.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
