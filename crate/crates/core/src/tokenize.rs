//! Deterministic rule-based tokenizer.
//!
//! Text is NFC-normalized, split on whitespace, then split again at
//! punctuation boundaries. English clitics (`n't`, `'s`, `'re`, `'ve`, `'ll`,
//! `'d`, `'m`) become separate tokens, so `isn't` yields `is` + `n't`.
//! Numerals keep their internal separators (`3.5`, `1,000`).

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::Instance;

const CLITICS: &[&str] = &["s", "re", "ve", "ll", "d", "m"];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    /// NFC-normalized Unicode case fold of `surface`.
    pub lower: String,
    /// Letters only, apart from apostrophes inside clitics like `n't`.
    pub is_alpha: bool,
    pub is_capitalized: bool,
}

impl Token {
    fn new(surface: String) -> Self {
        let lower: String = caseless::default_case_fold_str(&surface).nfc().collect();
        let is_alpha = surface.chars().any(char::is_alphabetic)
            && surface
                .chars()
                .all(|c| c.is_alphabetic() || is_apostrophe(c));
        let is_capitalized = surface.chars().next().is_some_and(char::is_uppercase);
        Token {
            surface,
            lower,
            is_alpha,
            is_capitalized,
        }
    }

    /// Alphabetic token made only of letters (no clitic apostrophe).
    pub fn is_plain_word(&self) -> bool {
        self.is_alpha && self.surface.chars().all(char::is_alphabetic)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedInstance {
    pub id: String,
    pub premise_tokens: Vec<Token>,
    pub hypothesis_tokens: Vec<Token>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub split_contractions: bool,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer {
            split_contractions: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Piece {
    Word(String),
    Apostrophe(char),
    Punct(char),
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

impl Tokenizer {
    pub fn tokenize(&self, instance: &Instance) -> TokenizedInstance {
        TokenizedInstance {
            id: instance.id.clone(),
            premise_tokens: self.tokenize_text(&instance.premise),
            hypothesis_tokens: self.tokenize_text(&instance.hypothesis),
        }
    }

    pub fn tokenize_text(&self, text: &str) -> Vec<Token> {
        let normalized: String = text.nfc().collect();
        let mut tokens = Vec::new();
        for chunk in normalized.split_whitespace() {
            let pieces = split_chunk(chunk);
            if self.split_contractions {
                merge_clitics(pieces, &mut tokens);
            } else {
                tokens.extend(pieces.into_iter().map(|p| Token::new(piece_text(&p))));
            }
        }
        tokens
    }
}

/// Tokenizes with the default rules.
pub fn tokenize(instance: &Instance) -> TokenizedInstance {
    Tokenizer::default().tokenize(instance)
}

fn piece_text(piece: &Piece) -> String {
    match piece {
        Piece::Word(w) => w.clone(),
        Piece::Apostrophe(c) | Piece::Punct(c) => c.to_string(),
    }
}

fn split_chunk(chunk: &str) -> Vec<Piece> {
    let chars: Vec<char> = chunk.chars().collect();
    let mut pieces = Vec::new();
    let mut word = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            word.push(c);
            continue;
        }
        // Keep separators inside numerals: 3.5, 1,000.
        let numeric_separator = (c == '.' || c == ',')
            && !word.is_empty()
            && word
                .chars()
                .all(|w| w.is_ascii_digit() || w == '.' || w == ',')
            && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
        if numeric_separator {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            pieces.push(Piece::Word(std::mem::take(&mut word)));
        }
        if is_apostrophe(c) {
            pieces.push(Piece::Apostrophe(c));
        } else {
            pieces.push(Piece::Punct(c));
        }
    }
    if !word.is_empty() {
        pieces.push(Piece::Word(word));
    }
    pieces
}

fn merge_clitics(pieces: Vec<Piece>, out: &mut Vec<Token>) {
    let mut i = 0;
    while i < pieces.len() {
        match (&pieces[i], pieces.get(i + 1), pieces.get(i + 2)) {
            // isn't -> is + n't
            (Piece::Word(w), Some(Piece::Apostrophe(a)), Some(Piece::Word(t)))
                if t.eq_ignore_ascii_case("t")
                    && w.chars().last().is_some_and(|c| c == 'n' || c == 'N') =>
            {
                let split = w.len() - 1;
                if split > 0 {
                    out.push(Token::new(w[..split].to_string()));
                }
                out.push(Token::new(format!("{}{}{}", &w[split..], a, t)));
                i += 3;
            }
            (Piece::Apostrophe(a), Some(Piece::Word(t)), next)
                if CLITICS.contains(&t.to_lowercase().as_str())
                    && !matches!(next, Some(Piece::Word(_))) =>
            {
                out.push(Token::new(format!("{a}{t}")));
                i += 2;
            }
            (piece, _, _) => {
                out.push(Token::new(piece_text(piece)));
                i += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surfaces(text: &str) -> Vec<String> {
        Tokenizer::default()
            .tokenize_text(text)
            .into_iter()
            .map(|t| t.surface)
            .collect()
    }

    #[test]
    fn splits_negative_contraction() {
        assert_eq!(
            surfaces("He isn't happy."),
            ["He", "is", "n't", "happy", "."]
        );
    }

    #[test]
    fn empty_text_has_no_tokens() {
        assert!(Tokenizer::default().tokenize_text("").is_empty());
        assert!(Tokenizer::default().tokenize_text("   \t\n").is_empty());
    }

    #[test]
    fn lowercase_phrase_is_three_alpha_tokens() {
        let toks = Tokenizer::default().tokenize_text("low flying airplane");
        assert_eq!(toks.len(), 3);
        assert!(toks.iter().all(|t| t.is_alpha));
        assert!(toks.iter().all(|t| !t.is_capitalized));
    }

    #[test]
    fn pre_split_clitic_stays_whole() {
        assert_eq!(surfaces("It was n't long"), ["It", "was", "n't", "long"]);
        let toks = Tokenizer::default().tokenize_text("n't");
        assert!(toks[0].is_alpha);
        assert!(!toks[0].is_plain_word());
    }

    #[test]
    fn other_clitics() {
        assert_eq!(surfaces("they're John's"), ["they", "'re", "John", "'s"]);
        assert_eq!(
            surfaces("we've I'm she'd"),
            ["we", "'ve", "I", "'m", "she", "'d"]
        );
        assert_eq!(surfaces("o'clock"), ["o", "'", "clock"]);
        assert_eq!(surfaces("don\u{2019}t"), ["do", "n\u{2019}t"]);
    }

    #[test]
    fn numerals_and_punctuation() {
        assert_eq!(
            surfaces("about 3.5 or 1,000."),
            ["about", "3.5", "or", "1,000", "."]
        );
        assert_eq!(
            surfaces("low-flying (plane)!"),
            ["low", "-", "flying", "(", "plane", ")", "!"]
        );
    }

    #[test]
    fn case_folding_after_nfc() {
        // "e" + combining acute composes to "é" before folding.
        let toks = Tokenizer::default().tokenize_text("Caf\u{0065}\u{0301} STRASSE Stra\u{00df}e");
        assert_eq!(toks[0].surface, "Caf\u{00e9}");
        assert_eq!(toks[0].lower, "caf\u{00e9}");
        assert!(toks[0].is_capitalized);
        assert_eq!(toks[1].lower, "strasse");
        assert_eq!(toks[2].lower, "strasse");
    }

    #[test]
    fn without_contraction_splitting() {
        let t = Tokenizer {
            split_contractions: false,
        };
        let s: Vec<_> = t
            .tokenize_text("isn't")
            .into_iter()
            .map(|t| t.surface)
            .collect();
        assert_eq!(s, ["isn", "'", "t"]);
    }

    proptest::proptest! {
        #[test]
        fn tokenize_is_deterministic(text in "\\PC{0,60}") {
            let a = Tokenizer::default().tokenize_text(&text);
            let b = Tokenizer::default().tokenize_text(&text);
            proptest::prop_assert_eq!(a, b);
        }

        #[test]
        fn tokens_never_contain_whitespace(text in "[a-zA-Z' .,!n]{0,40}") {
            for t in Tokenizer::default().tokenize_text(&text) {
                proptest::prop_assert!(!t.surface.is_empty());
                proptest::prop_assert!(!t.surface.chars().any(char::is_whitespace));
            }
        }
    }
}
