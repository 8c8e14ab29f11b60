//! Byte-level tokenizer.
//!
//! Token ids `0..=255` are raw UTF-8 bytes; three specials follow them.
//! Framing (BOS/EOS) is left to callers.

pub const BOS: u32 = 256;
pub const EOS: u32 = 257;
pub const PAD: u32 = 258;
pub const VOCAB_SIZE: usize = 259;

/// Result of decoding a token run back to text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub text: String,
    /// Set when the byte run was not valid UTF-8 and replacement characters were substituted.
    pub lossy: bool,
}

pub fn encode(text: &str) -> Vec<u32> {
    text.bytes().map(u32::from).collect()
}

/// Decodes byte tokens up to the first EOS. BOS and PAD are skipped.
pub fn decode(tokens: &[u32]) -> Decoded {
    let bytes: Vec<u8> = tokens
        .iter()
        .take_while(|&&t| t != EOS)
        .filter_map(|&t| u8::try_from(t).ok())
        .collect();
    match String::from_utf8(bytes) {
        Ok(text) => Decoded { text, lossy: false },
        Err(e) => Decoded {
            text: String::from_utf8_lossy(e.as_bytes()).into_owned(),
            lossy: true,
        },
    }
}

pub fn is_special(token: u32) -> bool {
    token >= BOS
}
