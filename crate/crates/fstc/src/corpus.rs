//! 20 Newsgroups ingestion from the standard "bydate" directory layout:
//! one subdirectory per class, one plain-text file per article.
//!
//! The network is out of scope — ingestion starts from an extracted
//! directory tree (see the README for where to obtain the archive).
//! Loading is fully deterministic: classes and files are visited in
//! lexicographic order, so the same tree always yields the same corpus.

use std::fs;
use std::path::Path;

use fstc_core::text::{Corpus, Document};

use crate::error::{CliError, IoContext, Result};

/// A loaded corpus plus ingestion diagnostics.
#[derive(Debug)]
pub struct LoadedCorpus {
    pub corpus: Corpus,
    /// Number of files that were not valid UTF-8 and were decoded lossily
    /// (replacement characters substituted). Reported as a warning.
    pub lossy_files: usize,
}

/// Strips the message header block: every line up to and including the
/// first blank line. Headers carry the newsgroup name and would leak the
/// label into the features; stripping them is standard evaluation hygiene.
/// A file with no blank line is treated as having no header.
pub fn strip_headers(text: &str) -> &str {
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        offset += line.len();
        if line.trim_end_matches(['\r', '\n']).is_empty() {
            return &text[offset..];
        }
    }
    text
}

/// Loads a corpus from `root`, one class per subdirectory. Document ids
/// are `class_name/file_name`; document order is (class, file) both
/// lexicographic. Non-UTF-8 files are decoded lossily and counted.
pub fn load_20news(root: &Path) -> Result<LoadedCorpus> {
    if !root.is_dir() {
        return Err(CliError::Data(format!(
            "corpus root {} is not a directory",
            root.display()
        )));
    }
    let mut class_names = Vec::new();
    for entry in fs::read_dir(root).data_context("reading corpus root", root)? {
        let entry = entry.data_context("reading corpus root", root)?;
        if entry.path().is_dir() {
            class_names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    class_names.sort();
    if class_names.is_empty() {
        return Err(CliError::Data(format!(
            "corpus root {} contains no class directories",
            root.display()
        )));
    }

    let mut documents = Vec::new();
    let mut lossy_files = 0usize;
    for (label, class) in class_names.iter().enumerate() {
        let dir = root.join(class);
        let mut file_names = Vec::new();
        for entry in fs::read_dir(&dir).data_context("reading class directory", &dir)? {
            let entry = entry.data_context("reading class directory", &dir)?;
            if entry.path().is_file() {
                file_names.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        file_names.sort();
        if file_names.is_empty() {
            return Err(CliError::Data(format!("class {class:?} has no documents")));
        }
        for name in file_names {
            let path = dir.join(&name);
            let bytes = fs::read(&path).data_context("reading document", &path)?;
            let text = String::from_utf8_lossy(&bytes);
            if matches!(text, std::borrow::Cow::Owned(_)) {
                lossy_files += 1;
            }
            documents.push(Document {
                id: format!("{class}/{name}"),
                text: strip_headers(&text).to_string(),
                label,
                class_name: class.clone(),
            });
        }
    }
    let corpus = Corpus::new(documents, class_names)?;
    Ok(LoadedCorpus { corpus, lossy_files })
}
