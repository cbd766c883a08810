use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::table::Table;
use crate::Format;

/// Provenance record written next to the outputs of one command.
///
/// Everything except `timestamp` is a function of the command line (and of
/// the contents of any input files it names).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub params: Value,
    pub seed: u64,
    pub kernel_hash: Option<String>,
    pub version: String,
    pub timestamp: String,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn file_name(command: &str) -> String {
        format!("{command}.manifest.json")
    }

    pub fn read(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Collects the outputs of one run and writes its manifest last.
pub struct Run {
    pub out: PathBuf,
    pub format: Format,
    manifest: RunManifest,
}

impl Run {
    pub fn start(
        command: &str,
        params: Value,
        seed: u64,
        out: &Path,
        format: Format,
    ) -> std::io::Result<Self> {
        fs::create_dir_all(out)?;
        Ok(Self {
            out: out.to_path_buf(),
            format,
            manifest: RunManifest {
                command: command.to_string(),
                params,
                seed,
                kernel_hash: None,
                version: mfou::VERSION.to_string(),
                timestamp: String::new(),
                outputs: Vec::new(),
            },
        })
    }

    pub fn set_kernel_hash(&mut self, hash: String) {
        self.manifest.kernel_hash = Some(hash);
    }

    fn manifest_name(&self) -> String {
        RunManifest::file_name(&self.manifest.command)
    }

    fn write(&mut self, name: String, body: &str) -> std::io::Result<PathBuf> {
        let path = self.out.join(&name);
        fs::write(&path, body)?;
        self.manifest.outputs.push(name);
        Ok(path)
    }

    /// Write `<stem>.csv` or `<stem>.json` according to the run format.
    pub fn table(&mut self, stem: &str, table: &Table) -> std::io::Result<PathBuf> {
        let body = table.encode(self.format, &self.manifest_name());
        let name = format!("{stem}.{}", self.format.extension());
        self.write(name, &body)
    }

    /// Write a JSON document with a `manifest` field added.
    pub fn json(&mut self, name: &str, mut doc: Value) -> std::io::Result<PathBuf> {
        if let Value::Object(map) = &mut doc {
            map.insert("manifest".into(), Value::String(self.manifest_name()));
        }
        let body = serde_json::to_string_pretty(&doc).expect("value serializes") + "\n";
        self.write(name.to_string(), &body)
    }

    /// Write a non-tabular artifact (SVG).
    pub fn raw(&mut self, name: &str, body: &str) -> std::io::Result<PathBuf> {
        self.write(name.to_string(), body)
    }

    pub fn finish(mut self) -> std::io::Result<PathBuf> {
        self.manifest.timestamp =
            chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        let body =
            serde_json::to_string_pretty(&self.manifest).expect("manifest serializes") + "\n";
        let path = self.out.join(self.manifest_name());
        fs::write(&path, body)?;
        Ok(path)
    }
}
