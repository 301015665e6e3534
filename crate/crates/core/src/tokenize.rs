//! Tokenizer strategies. Text is assumed pre-tokenized for word mode; char
//! mode splits on Unicode scalar values with no other processing.

use crate::registry::Registry;

pub trait Tokenizer: Send + Sync {
    fn name(&self) -> &'static str;
    fn tokenize(&self, text: &str) -> Vec<String>;
}

/// Space-separated, pre-tokenized text.
pub struct WordTokenizer;

impl Tokenizer for WordTokenizer {
    fn name(&self) -> &'static str {
        "word"
    }

    fn tokenize(&self, text: &str) -> Vec<String> {
        text.split(' ')
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect()
    }
}

/// One token per character. Stray newline characters become spaces.
pub struct CharTokenizer;

impl Tokenizer for CharTokenizer {
    fn name(&self) -> &'static str {
        "char"
    }

    fn tokenize(&self, text: &str) -> Vec<String> {
        text.chars()
            .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
            .map(String::from)
            .collect()
    }
}

pub fn tokenizers() -> Registry<dyn Tokenizer> {
    let mut reg: Registry<dyn Tokenizer> = Registry::new("tokenizer mode");
    reg.register("word", |_| Box::new(WordTokenizer))
        .register("char", |_| Box::new(CharTokenizer));
    reg
}
