//! Content hashing helpers shared by the cache, the manifest and seed derivation.

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 over `parts`, each terminated by a NUL byte so that
/// `["ab", "c"]` and `["a", "bc"]` hash differently.
pub fn sha256_parts<S: AsRef<[u8]>>(parts: &[S]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part.as_ref());
        hasher.update([0u8]);
    }
    hex::encode(hasher.finalize())
}

/// Derive a 64-bit seed from a base seed and a list of labels.
///
/// Used to give each program its own RNG stream, independent of the order in
/// which programs are processed.
pub fn derive_seed(base: u64, labels: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    for label in labels {
        hasher.update(label.as_bytes());
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn parts_are_delimited() {
        assert_ne!(sha256_parts(&["ab", "c"]), sha256_parts(&["a", "bc"]));
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        assert_eq!(derive_seed(7, &["p1", "s1"]), derive_seed(7, &["p1", "s1"]));
        assert_ne!(derive_seed(7, &["p1", "s1"]), derive_seed(7, &["p1", "s2"]));
        assert_ne!(derive_seed(7, &["p1", "s1"]), derive_seed(8, &["p1", "s1"]));
    }
}
