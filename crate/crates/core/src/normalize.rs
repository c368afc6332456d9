//! Surface-form normalization shared by KB construction and lookup.

use unicode_normalization::UnicodeNormalization;

/// NFKC, lowercase, collapse whitespace runs to one space, trim.
///
/// Must be applied identically when building the surface index and when
/// querying it; [`normalize_token`] is the per-token form used by the matcher.
pub fn normalize(text: &str) -> String {
    let folded: String = text.nfkc().flat_map(char::to_lowercase).collect();
    let mut out = String::with_capacity(folded.len());
    for piece in folded.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(piece);
    }
    out
}

/// Normalizes one token and splits it into the space-free pieces the
/// matcher walks. Whitespace-only tokens yield no pieces.
pub fn normalize_token(token: &str) -> Vec<String> {
    let norm = normalize(token);
    if norm.is_empty() {
        Vec::new()
    } else {
        norm.split(' ').map(str::to_owned).collect()
    }
}
