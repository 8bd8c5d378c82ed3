//! Plain-text vocabulary files: one word per line, the word on line `n`
//! (counting from 0) has id `n + 3`.

use std::path::Path;

use videollm_core::ingest::Vocabulary;

use crate::error::{CliError, Result};

pub fn encode(vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for w in vocab.words() {
        out.push_str(w);
        out.push('\n');
    }
    out
}

pub fn store_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    std::fs::write(path, encode(vocab)).map_err(|e| CliError::write(path, e))
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    Vocabulary::from_words(text.lines()).map_err(|e| CliError::format(path, e.to_string()))
}
