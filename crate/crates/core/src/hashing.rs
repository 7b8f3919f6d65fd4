use std::io::{self, Write};

use sha2::{Digest, Sha256};

/// `io::Write` sink that feeds everything into SHA-256.
#[derive(Default)]
pub struct HashWriter(Sha256);

impl HashWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn finish_hex(self) -> String {
        hex::encode(self.0.finalize())
    }
}

impl Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 of the compact JSON encoding of `value`.
pub fn json_hash<T: serde::Serialize>(value: &T) -> String {
    let mut w = HashWriter::new();
    serde_json::to_writer(&mut w, value).expect("serializing into a hash never fails");
    w.finish_hex()
}
