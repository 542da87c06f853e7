//! Deterministic sentence splitting and tokenization.
//!
//! All offsets are Unicode scalar-value (char) offsets into the source
//! text, 0-based and end-exclusive.

use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// Tokens ending in a period that never end a sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "cm.", "mm.", "dr.", "mr.", "mrs.", "ms.", "vs.", "e.g.", "i.e.", "approx.", "fig.", "no.",
    "st.", "etc.", "ca.", "hr.", "min.",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    /// Lowercased, NFC-normalized surface form.
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Splits a document into sentences.
///
/// Boundaries are placed after `.`, `?` or `!` when followed by whitespace
/// and then an uppercase letter or digit (unless the period closes a known
/// abbreviation), at blank lines, and at a newline that follows a line
/// ending in `:`. Returned spans are whitespace-trimmed and never empty.
pub fn split_sentences(text: &str) -> Vec<SentenceSpan> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut cuts = Vec::new();

    let mut i = 0;
    while i < n {
        let c = chars[i];
        if matches!(c, '.' | '?' | '!') && i + 1 < n && chars[i + 1].is_whitespace() {
            let mut k = i + 1;
            while k < n && chars[k].is_whitespace() {
                k += 1;
            }
            if k < n
                && (chars[k].is_uppercase() || chars[k].is_ascii_digit())
                && !(c == '.' && ends_with_abbreviation(&chars, i))
            {
                cuts.push(i + 1);
            }
        } else if c == '\n' {
            // blank line
            let mut k = i + 1;
            while k < n && chars[k].is_whitespace() && chars[k] != '\n' {
                k += 1;
            }
            if k < n && chars[k] == '\n' {
                cuts.push(i);
            } else {
                // header line ending in a colon
                let mut j = i;
                while j > 0 && chars[j - 1].is_whitespace() && chars[j - 1] != '\n' {
                    j -= 1;
                }
                if j > 0 && chars[j - 1] == ':' {
                    cuts.push(i);
                }
            }
        }
        i += 1;
    }

    let mut out = Vec::new();
    let mut start = 0;
    cuts.push(n);
    for cut in cuts {
        if cut <= start {
            continue;
        }
        let mut s = start;
        let mut e = cut;
        while s < e && chars[s].is_whitespace() {
            s += 1;
        }
        while e > s && chars[e - 1].is_whitespace() {
            e -= 1;
        }
        if s < e {
            out.push(SentenceSpan {
                start: s,
                end: e,
                text: chars[s..e].iter().collect(),
            });
        }
        start = cut;
    }
    out
}

fn ends_with_abbreviation(chars: &[char], period: usize) -> bool {
    let mut s = period;
    while s > 0 && !chars[s - 1].is_whitespace() {
        s -= 1;
    }
    let word: String = chars[s..=period].iter().collect::<String>().to_lowercase();
    ABBREVIATIONS.contains(&word.as_str())
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || is_combining_mark(c)
}

/// Tokenizes text: runs of letters and digits form words (a `.` or `,`
/// between two digits stays inside the number), every other non-space
/// character is its own token.
pub fn tokenize(text: &str) -> Vec<TokenSpan> {
    tokenize_at(text, 0)
}

/// [`tokenize`] with offsets shifted by `base`.
pub fn tokenize_at(text: &str, base: usize) -> Vec<TokenSpan> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if is_word_char(c) {
            i += 1;
            while i < n {
                let in_number = matches!(chars[i], '.' | ',')
                    && chars[i - 1].is_ascii_digit()
                    && i + 1 < n
                    && chars[i + 1].is_ascii_digit();
                if is_word_char(chars[i]) || in_number {
                    i += 1;
                } else {
                    break;
                }
            }
        } else {
            i += 1;
        }
        let surface: String = chars[start..i].iter().collect();
        out.push(TokenSpan {
            text: normalize_token(&surface),
            start: base + start,
            end: base + i,
        });
    }
    out
}

pub fn normalize_token(surface: &str) -> String {
    surface.nfc().collect::<String>().to_lowercase().nfc().collect()
}

/// Token strings only.
pub fn tokenize_words(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.text).collect()
}

/// Character-level substring, by char offsets.
pub fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end.saturating_sub(start)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(spans: &[SentenceSpan]) -> Vec<&str> {
        spans.iter().map(|s| s.text.as_str()).collect()
    }

    #[test]
    fn terminal_period_splits() {
        let s = split_sentences("Benign nevus. No atypia.");
        assert_eq!(texts(&s), vec!["Benign nevus.", "No atypia."]);
    }

    #[test]
    fn colon_header_splits() {
        let s = split_sentences("Specimen A:\nSkin, left arm.\n");
        assert_eq!(texts(&s), vec!["Specimen A:", "Skin, left arm."]);
    }

    #[test]
    fn abbreviation_and_lowercase_do_not_split() {
        let s = split_sentences("Margin 0.2 cm. clear");
        assert_eq!(s.len(), 1);
        let s = split_sentences("Seen by Dr. Smith today. Stable.");
        assert_eq!(texts(&s), vec!["Seen by Dr. Smith today.", "Stable."]);
    }

    #[test]
    fn blank_line_splits() {
        let s = split_sentences("Final diagnosis\n\n  \nskin biopsy");
        assert_eq!(texts(&s), vec!["Final diagnosis", "skin biopsy"]);
    }

    #[test]
    fn question_and_digit_rules() {
        let s = split_sentences("Is it benign? 3 fragments received! yes");
        assert_eq!(texts(&s), vec!["Is it benign?", "3 fragments received! yes"]);
    }

    #[test]
    fn empty_document() {
        assert!(split_sentences("").is_empty());
        assert!(split_sentences(" \n\n ").is_empty());
    }

    #[test]
    fn offsets_recover_source() {
        let doc = "Lésion cutanée:\nNævus bénin.  Marges libres.";
        for s in split_sentences(doc) {
            assert_eq!(char_slice(doc, s.start, s.end), s.text);
            for t in tokenize_at(&s.text, s.start) {
                let src = char_slice(doc, t.start, t.end);
                assert_eq!(normalize_token(&src), t.text);
            }
        }
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(
            tokenize_words("Melanocytic Nevus,"),
            vec!["melanocytic", "nevus", ","]
        );
        assert!(tokenize_words("").is_empty());
        assert_eq!(
            tokenize_words("cervix biopsy - endocervix curettage"),
            vec!["cervix", "biopsy", "-", "endocervix", "curettage"]
        );
        assert_eq!(tokenize_words("Margin 0.2 cm."), vec!["margin", "0.2", "cm", "."]);
        assert_eq!(tokenize_words("C34.90"), vec!["c34.90"]);
    }

    #[test]
    fn nfc_normalizes_decomposed_input() {
        let decomposed = "Ne\u{301}vus";
        let toks = tokenize(decomposed);
        assert_eq!(toks.len(), 1);
        assert_eq!(toks[0].text, "n\u{e9}vus");
        assert_eq!((toks[0].start, toks[0].end), (0, 6));
    }
}
