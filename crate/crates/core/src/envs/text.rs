//! Word-level tokenizer over the Mining+ hint messages.

pub const TEXT_LEN: usize = 12;
pub const PAD: usize = 0;
pub const NOISE: usize = 1;

/// Words of the hint messages, in order of first appearance.
const WORDS: [&str; 17] = [
    "you", "should", "find", "gold", "and", "mine", "do", "not", "have", "ax", "get", "the", "go", "to", "hurt",
    "by", "tiger",
];

pub const VOCAB_SIZE: usize = WORDS.len() + 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Hint {
    FindGold,
    NoAx,
    GotAx,
    GotGold,
    HurtByTiger,
}

impl Hint {
    pub fn message(self) -> &'static str {
        match self {
            Hint::FindGold => "You should find gold and mine gold.",
            Hint::NoAx => "You do not have ax.",
            Hint::GotAx => "You get the ax, go to mine gold.",
            Hint::GotGold => "You get gold.",
            Hint::HurtByTiger => "You hurt by tiger.",
        }
    }
}

/// Id of a word, `NOISE` for anything outside the vocabulary.
pub fn token_id(word: &str) -> usize {
    WORDS.iter().position(|w| *w == word).map_or(NOISE, |i| i + 2)
}

/// Lowercases, strips punctuation, maps words to ids and pads/truncates to
/// [`TEXT_LEN`].
pub fn tokenize(text: &str) -> Vec<usize> {
    let cleaned: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c.to_ascii_lowercase() } else { ' ' })
        .collect();
    let mut ids: Vec<usize> = cleaned.split_whitespace().map(token_id).take(TEXT_LEN).collect();
    ids.resize(TEXT_LEN, PAD);
    ids
}

pub fn padding() -> Vec<usize> {
    vec![PAD; TEXT_LEN]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn got_ax_message_tokens() {
        let ids = tokenize(Hint::GotAx.message());
        let words = ["you", "get", "the", "ax", "go", "to", "mine", "gold"];
        let expected: Vec<usize> = words.iter().map(|w| token_id(w)).chain(std::iter::repeat(PAD)).take(TEXT_LEN).collect();
        assert_eq!(ids, expected);
        assert!(ids.iter().all(|&i| i != NOISE));
    }

    #[test]
    fn every_hint_is_in_vocabulary() {
        for h in [Hint::FindGold, Hint::NoAx, Hint::GotAx, Hint::GotGold, Hint::HurtByTiger] {
            let ids = tokenize(h.message());
            assert_eq!(ids.len(), TEXT_LEN);
            assert!(ids.iter().all(|&i| i < VOCAB_SIZE && i != NOISE), "{h:?}");
        }
        assert_eq!(tokenize("unknown words"), {
            let mut v = vec![NOISE, NOISE];
            v.resize(TEXT_LEN, PAD);
            v
        });
    }
}
