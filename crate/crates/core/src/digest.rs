use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a value's JSON serialization.
pub fn json_hash<T: serde::Serialize>(v: &T) -> String {
    let bytes = serde_json::to_vec(v).expect("serializable value");
    sha256_hex(&bytes)
}
