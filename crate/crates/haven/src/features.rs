//! Deterministic hash-based text/context representation for the toy
//! training lab.
//!
//! Both trainers share one fixed featurization so their policies live in the
//! same space: token embeddings are pseudo-random vectors derived from a
//! splitmix64 stream keyed by (token id, component index), and a context is
//! summarized as a blend of prompt embedding, folded video features, a
//! geometrically decayed history of generated tokens, and a position marker.
//! Nothing in here is trainable; gradients only ever flow into the policy
//! weight matrices that the feature vectors multiply.

/// splitmix64: tiny, well-known 64-bit mixer. Chosen over `DefaultHasher`
/// because its output is guaranteed stable across toolchain versions, which
/// keeps training runs and frozen regression values reproducible.
pub fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Maps a 64-bit hash to a float in [-1, 1).
pub fn to_signed_unit(bits: u64) -> f64 {
    // Top 53 bits -> [0, 1), then shift to [-1, 1).
    (bits >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Domain-separation salts so the embedding streams for tokens, positions
/// and plain words never collide.
const TOKEN_SALT: u64 = 0x7061_6431;
const POSITION_SALT: u64 = 0x7061_6432;
const WORD_SALT: u64 = 0x7061_6433;

/// Decay applied to the embedding of each previously generated token; the
/// most recent token weighs 1, the one before `HISTORY_DECAY`, and so on.
const HISTORY_DECAY: f64 = 0.7;

/// Fixed pseudo-random embedding of a vocabulary token.
pub fn token_embedding(token: u32, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|j| to_signed_unit(splitmix64(TOKEN_SALT ^ ((token as u64) << 20) ^ j as u64)))
        .collect()
}

fn position_embedding(pos: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|j| to_signed_unit(splitmix64(POSITION_SALT ^ ((pos as u64) << 20) ^ j as u64)))
        .collect()
}

/// FNV-1a over the bytes of a word, used to map words onto toy token ids.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Hash-tokenizes text into toy vocabulary ids: alphanumeric runs and
/// individual punctuation marks each become one token, lowercased, then
/// hashed into `[0, vocab)`.
pub fn hash_tokenize(text: &str, vocab: usize) -> Vec<u32> {
    assert!(vocab > 0, "vocabulary must be non-empty");
    let mut tokens = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, tokens: &mut Vec<u32>| {
        if !word.is_empty() {
            let h = splitmix64(WORD_SALT ^ fnv1a(word.as_bytes()));
            tokens.push((h % vocab as u64) as u32);
            word.clear();
        }
    };
    for ch in text.chars() {
        if ch.is_whitespace() {
            flush(&mut word, &mut tokens);
        } else if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                word.push(lc);
            }
        } else {
            flush(&mut word, &mut tokens);
            let mut punct = String::new();
            punct.push(ch);
            flush(&mut punct, &mut tokens);
        }
    }
    flush(&mut word, &mut tokens);
    tokens
}

/// Context summary the toy policy conditions on when scoring the token at
/// position `pos` (i.e. after `prev` tokens have been generated).
///
/// The blend is fixed: mean prompt embedding + video features folded into
/// the embedding dimension + decayed history of generated tokens + a
/// position marker, averaged so magnitudes stay O(1) regardless of lengths.
pub fn context_features(
    prompt: &[u32],
    video_features: &[f64],
    prev: &[u32],
    pos: usize,
    dim: usize,
) -> Vec<f64> {
    let mut f = vec![0.0; dim];

    if !prompt.is_empty() {
        let scale = 1.0 / prompt.len() as f64;
        for &t in prompt {
            for (fj, ej) in f.iter_mut().zip(token_embedding(t, dim)) {
                *fj += scale * ej;
            }
        }
    }

    if !video_features.is_empty() {
        for j in 0..dim {
            f[j] += video_features[j % video_features.len()];
        }
    }

    // Most recent token first, geometric decay backwards.
    let mut weight = 1.0;
    for &t in prev.iter().rev() {
        for (fj, ej) in f.iter_mut().zip(token_embedding(t, dim)) {
            *fj += weight * ej;
        }
        weight *= HISTORY_DECAY;
    }

    for (fj, ej) in f.iter_mut().zip(position_embedding(pos, dim)) {
        *fj += 0.25 * ej;
    }

    for fj in f.iter_mut() {
        *fj *= 0.25;
    }
    f
}
