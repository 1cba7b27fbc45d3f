use crate::error::{Error, Result};

/// Token `i` is byte `i` of the UTF-8 encoding.
pub fn tokenize_bytes(text: &str) -> Vec<u32> {
    text.bytes().map(u32::from).collect()
}

pub fn detokenize(tokens: &[u32]) -> Result<String> {
    let bytes = tokens
        .iter()
        .map(|&t| u8::try_from(t).map_err(|_| Error::invalid(format!("token {t} is outside the byte vocabulary"))))
        .collect::<Result<Vec<u8>>>()?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(format!("tokens are not valid UTF-8: {e}")))
}
