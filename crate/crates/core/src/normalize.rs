//! String normalization applied wherever two names are compared.

use unicode_normalization::UnicodeNormalization;

/// NFC-normalizes `s`, trims it and collapses internal whitespace runs to a
/// single ASCII space.
pub fn normalize_name(s: &str) -> String {
    let nfc: String = s.nfc().collect();
    let mut out = String::with_capacity(nfc.len());
    for word in nfc.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Case-folded form used only by diagnostic indexes and the lexical scorer.
pub fn casefold(s: &str) -> String {
    s.to_lowercase()
}
