use sha2::{Digest, Sha256};

/// Git-style content hash: SHA-256 of `blob <len>\0<content>`.
pub fn content_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}

/// Ordered `key=value` configuration used for hashing and output headers.
#[derive(Debug, Clone, Default)]
pub struct Metadata {
    entries: Vec<(String, String)>,
}

impl Metadata {
    pub fn new(command: &str) -> Self {
        let mut m = Self::default();
        m.push("command", command);
        m
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    fn canonical(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn hash(&self) -> String {
        content_hash(self.canonical().as_bytes())
    }

    /// Entries followed by the tool version and config hash.
    pub fn with_hash(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("tool".to_string(), concat!("gmvshrink ", env!("CARGO_PKG_VERSION")).to_string()),
            ("config_hash".to_string(), self.hash()),
        ];
        out.extend(self.entries.iter().cloned());
        out
    }

    /// `# key=value` comment lines.
    pub fn comment_block(&self) -> String {
        self.with_hash()
            .iter()
            .map(|(k, v)| format!("# {k}={v}\n"))
            .collect()
    }
}
