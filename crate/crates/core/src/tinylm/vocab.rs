//! Byte-level vocabulary with four reserved tokens.
//!
//! Tokens 0..=255 are raw UTF-8 bytes; BOS, EOT, SEP, and PAD sit above the
//! byte range, so any text is free of reserved tokens by construction. EOT
//! doubles as the terminal position where the preference head reads its score.

/// Token id. The byte-level vocabulary needs only 260 distinct values.
pub type Token = u16;

/// Beginning-of-sequence marker.
pub const BOS: Token = 256;
/// End-of-text marker; also the score-readout position for preference heads.
pub const EOT: Token = 257;
/// Separator between request and response.
pub const SEP: Token = 258;
/// Left-padding for positions before the sequence start.
pub const PAD: Token = 259;

/// Total vocabulary size: 256 bytes + 4 reserved tokens.
pub const VOCAB_SIZE: usize = 260;

/// Encodes text as its UTF-8 bytes.
pub fn encode(text: &str) -> Vec<Token> {
    text.bytes().map(Token::from).collect()
}

/// Decodes byte tokens back to text. Reserved tokens are skipped; invalid
/// UTF-8 byte runs (possible in sampled output) decode lossily.
pub fn decode(tokens: &[Token]) -> String {
    let bytes: Vec<u8> = tokens
        .iter()
        .filter(|&&t| t < 256)
        .map(|&t| t as u8)
        .collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

/// `BOS + request + SEP`: the context that precedes any response.
pub fn prompt_tokens(request: &str) -> Vec<Token> {
    let mut tokens = Vec::with_capacity(request.len() + 2);
    tokens.push(BOS);
    tokens.extend(encode(request));
    tokens.push(SEP);
    tokens
}

/// `BOS + request + SEP + response + EOT`: the full scored sequence.
pub fn full_sequence(request: &str, response: &str) -> Vec<Token> {
    let mut tokens = prompt_tokens(request);
    tokens.extend(encode(response));
    tokens.push(EOT);
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_distinct_and_out_of_byte_range() {
        let ids = [BOS, EOT, SEP, PAD];
        for (i, a) in ids.iter().enumerate() {
            assert!(*a >= 256);
            for b in &ids[i + 1..] {
                assert_ne!(a, b);
            }
        }
        assert_eq!(VOCAB_SIZE, 260);
    }

    #[test]
    fn encode_decode_round_trip() {
        for text in ["hello", "ünïcôde ✓", "", "tab\tand\nnewline"] {
            assert_eq!(decode(&encode(text)), text);
        }
    }

    #[test]
    fn full_sequence_layout() {
        let seq = full_sequence("ab", "xyz");
        assert_eq!(seq[0], BOS);
        assert_eq!(seq[3], SEP);
        assert_eq!(*seq.last().unwrap(), EOT);
        assert_eq!(seq.len(), 2 + 2 + 3 + 1);
    }
}
