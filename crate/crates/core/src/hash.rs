use serde::Serialize;
use sha2::{Digest, Sha256};

/// Lower-case hex SHA-256 of the compact JSON serialization of `value`.
///
/// Struct fields serialize in declaration order, so equal configs hash equally.
pub fn config_sha256<S: Serialize>(value: &S) -> String {
    let bytes = serde_json::to_vec(value).expect("config types serialize infallibly");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        // sha256 of the two bytes `{}`
        assert_eq!(
            config_sha256(&serde_json::json!({})),
            "44136fa355b3678a1146ad16f7e8649e94fb4fc21fe77e8310c060f61caaff8a"
        );
    }
}
