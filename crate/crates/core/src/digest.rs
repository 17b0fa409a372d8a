use sha2::{Digest, Sha256};

pub(crate) fn f64s(data: &[f64]) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in data {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize().into()
}

pub(crate) fn bytes_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn leading_u64(d: &[u8; 32]) -> u64 {
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Stable 64-bit key for a string.
pub(crate) fn str_u64(s: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let d: [u8; 32] = Sha256::digest(s.as_bytes()).into();
    leading_u64(&d)
}
