use crate::error::{KcotError, Result};
use crate::numerics::DenseMatrix;
use crate::par;

pub const DEFAULT_TEXT_DIM: usize = 128;

/// Lowercase alphanumeric word tokens.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Signed feature hashing into `dim` buckets, L2-normalized. Whitespace-only
/// text maps to the zero vector. Text with no word tokens hashes as a single
/// token; if signed contributions cancel exactly, unsigned counts are used.
pub fn embed_text(text: &str, dim: usize) -> Result<Vec<f64>> {
    if dim < 8 {
        return Err(KcotError::InvalidParameter(format!(
            "text embedding dimension must be at least 8, got {dim}"
        )));
    }
    Ok(embed_unchecked(text, dim))
}

fn embed_unchecked(text: &str, dim: usize) -> Vec<f64> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return vec![0.0; dim];
    }
    let mut hashes: Vec<u64> = tokenize(trimmed).map(|t| fnv1a64(t.as_bytes())).collect();
    if hashes.is_empty() {
        hashes.push(fnv1a64(trimmed.as_bytes()));
    }
    let mut v = vec![0.0; dim];
    for &h in &hashes {
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % dim as u64) as usize] += sign;
    }
    if v.iter().all(|&x| x == 0.0) {
        for &h in &hashes {
            v[(h % dim as u64) as usize] += 1.0;
        }
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// One embedded row per text.
pub fn embed_texts<S: AsRef<str> + Sync>(texts: &[S], dim: usize) -> Result<DenseMatrix> {
    if dim < 8 {
        return Err(KcotError::InvalidParameter(format!(
            "text embedding dimension must be at least 8, got {dim}"
        )));
    }
    let rows = par::map_range(texts.len(), |i| embed_unchecked(texts[i].as_ref(), dim));
    DenseMatrix::from_vec(texts.len(), dim, rows.concat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn deterministic_and_case_insensitive() {
        let a = embed_text("Graph Neural networks", 32).unwrap();
        assert_eq!(a, embed_text("graph, neural NETWORKS!", 32).unwrap());
    }

    #[test]
    fn empty_text_is_zero() {
        assert!(embed_text("", 16).unwrap().iter().all(|&x| x == 0.0));
        assert!(embed_text(" \t\n ", 16).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn cancelling_and_punctuation_text_still_unit() {
        // find two tokens that land in the same bucket with opposite signs
        let (a, b) = (0..10_000)
            .flat_map(|i| (0..200).map(move |j| (format!("w{i}"), format!("v{j}"))))
            .find(|(a, b)| {
                let (ha, hb) = (fnv1a64(a.as_bytes()), fnv1a64(b.as_bytes()));
                ha % 8 == hb % 8 && (ha >> 63) != (hb >> 63)
            })
            .unwrap();
        let v = embed_text(&format!("{a} {b}"), 8).unwrap();
        assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        let p = embed_text("?!", 8).unwrap();
        assert!((p.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_dim_rejected() {
        assert!(embed_text("x", 7).is_err());
        assert!(embed_texts(&["x"], 4).is_err());
    }

    #[test]
    fn known_hash_values() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn matrix_rows_match_single_embeddings() {
        let texts = ["alpha beta", "", "gamma gamma delta"];
        let m = embed_texts(&texts, 16).unwrap();
        for (i, t) in texts.iter().enumerate() {
            assert_eq!(m.row(i), embed_text(t, 16).unwrap().as_slice());
        }
    }

    proptest! {
        #[test]
        fn nonempty_text_has_unit_norm(text in "\\PC*[^\\s]\\PC*", dim in 8usize..64) {
            let v = embed_text(&text, dim).unwrap();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() <= 1e-12);
        }
    }
}
