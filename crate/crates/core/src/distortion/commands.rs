//! The fixed pool of 24 distortion commands inserted into LLM distortion prompts.

use sha2::{Digest, Sha256};

const SHIPPED: &str = include_str!("../../assets/distortion_commands.txt");

/// SHA-256 of the shipped command file. A mismatch means the pool drifted.
pub const SHIPPED_SHA256: &str =
    "44cb205687fca516f3fd92d72368ec1063dcf55f43fb733e7af9e947a21cca84";

pub const POOL_SIZE: usize = 24;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PoolError {
    #[error("command pool must hold {POOL_SIZE} commands, found {0}")]
    WrongSize(usize),
    #[error("command pool hash {found} does not match {expected}")]
    HashMismatch { found: String, expected: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandPool {
    commands: Vec<String>,
}

impl CommandPool {
    /// The pool compiled into the crate, hash-checked.
    pub fn shipped() -> Self {
        Self::from_text(SHIPPED, SHIPPED_SHA256).expect("shipped command pool is intact")
    }

    /// Parse a pool file (one command per line) and verify its hash.
    pub fn from_text(text: &str, expected_sha256: &str) -> Result<Self, PoolError> {
        let found = hex::encode(Sha256::digest(text.as_bytes()));
        if found != expected_sha256 {
            return Err(PoolError::HashMismatch {
                found,
                expected: expected_sha256.to_string(),
            });
        }
        let commands: Vec<String> = text.lines().map(str::to_string).collect();
        if commands.len() != POOL_SIZE {
            return Err(PoolError::WrongSize(commands.len()));
        }
        Ok(CommandPool { commands })
    }

    pub fn get(&self, index: usize) -> Option<&str> {
        self.commands.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.commands.iter().map(String::as_str)
    }
}
