//! Shared fixtures for the integration suites: a deterministic synthetic
//! newsgroup corpus with a planted topic structure.
//!
//! Every class is a mixture of three topics drawn from a shared pool, so
//! classes overlap pairwise and an encoder trained on some classes carries
//! useful structure for the rest. Documents get realistic message headers
//! (including a `Newsgroups:` line naming the class, which would leak the
//! label if header stripping ever broke).

use std::fs;
use std::path::Path;

/// Topics in the shared pool.
pub const TOPICS: usize = 12;
/// Distinct words per topic.
pub const WORDS_PER_TOPIC: usize = 40;
/// Shared filler words that carry no class signal.
const FILLER_WORDS: usize = 30;
/// Topical tokens per document body.
const TOPIC_TOKENS: usize = 30;
/// Filler tokens per document body.
const FILLER_TOKENS: usize = 8;
/// Fraction of topical tokens drawn from a random topic instead of the
/// class mixture, so classes stay imperfectly separable.
const NOISE_CHANCE: f64 = 0.22;

/// Self-contained SplitMix64 generator so fixtures depend on no RNG crate.
pub struct Mix(u64);

impl Mix {
    pub fn new(seed: u64) -> Mix {
        Mix(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn chance(&mut self, p: f64) -> bool {
        (self.next_u64() >> 11) as f64 / ((1u64 << 53) as f64) < p
    }
}

/// All 3-subsets of the topic pool in lexicographic order.
fn topic_combos() -> Vec<[usize; 3]> {
    let mut combos = Vec::new();
    for a in 0..TOPICS {
        for b in a + 1..TOPICS {
            for c in b + 1..TOPICS {
                combos.push([a, b, c]);
            }
        }
    }
    combos
}

/// The topic mixture of one class: combos are strided so nearby classes
/// share topics (220 combos, stride 7 is coprime, so assignments stay
/// distinct for any realistic class count).
pub fn class_topics(class: usize) -> [usize; 3] {
    let combos = topic_combos();
    combos[class * 7 % combos.len()]
}

fn synth_document(rng: &mut Mix, class: usize) -> String {
    let mix = class_topics(class);
    let mut tokens: Vec<String> = Vec::with_capacity(TOPIC_TOKENS + FILLER_TOKENS);
    for _ in 0..TOPIC_TOKENS {
        let topic = if rng.chance(NOISE_CHANCE) { rng.below(TOPICS) } else { mix[rng.below(3)] };
        tokens.push(format!("t{topic:02}w{:02}", rng.below(WORDS_PER_TOPIC)));
    }
    for _ in 0..FILLER_TOKENS {
        tokens.push(format!("fill{:02}", rng.below(FILLER_WORDS)));
    }
    let mut text = format!(
        "From: user{}@example.com\nNewsgroups: {}\nSubject: {} {}\n\n",
        rng.below(500),
        class_name(class),
        tokens[0],
        tokens[1],
    );
    for chunk in tokens.chunks(9) {
        text.push_str(&chunk.join(" "));
        text.push('\n');
    }
    text
}

/// Class directory name; zero-padded so lexicographic order is numeric.
pub fn class_name(class: usize) -> String {
    format!("group{class:02}")
}

/// Writes `classes × docs_per_class` documents under `root` in the
/// one-directory-per-class layout the loader expects. Deterministic in
/// `seed`.
pub fn write_corpus(root: &Path, classes: usize, docs_per_class: usize, seed: u64) {
    let mut rng = Mix::new(seed);
    for class in 0..classes {
        let dir = root.join(class_name(class));
        fs::create_dir_all(&dir).unwrap();
        for doc in 0..docs_per_class {
            fs::write(dir.join(format!("{doc:04}")), synth_document(&mut rng, class)).unwrap();
        }
    }
}

/// A fresh temporary directory that is removed on drop.
pub struct TempDir(std::path::PathBuf);

impl TempDir {
    pub fn new(tag: &str) -> TempDir {
        let pid = std::process::id();
        let stamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .as_nanos();
        let path = std::env::temp_dir().join(format!("fstc-{tag}-{pid}-{stamp}"));
        fs::create_dir_all(&path).unwrap();
        TempDir(path)
    }

    pub fn path(&self) -> &Path {
        &self.0
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.0);
    }
}
