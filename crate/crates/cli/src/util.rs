use std::fmt::Display;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use trackmpnn::data::Vocabulary;
use trackmpnn::trainer::{read_checkpoint, write_checkpoint, Checkpoint};
use trackmpnn::RunConfig;

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub type CliResult<T> = Result<T, Failure>;

pub fn usage(msg: impl Display) -> Failure {
    Failure {
        code: EXIT_USAGE,
        error: anyhow!("{msg}"),
    }
}

/// Tags an error with an exit code and a context message.
pub trait Classify<T> {
    fn usage_err(self, ctx: impl FnOnce() -> String) -> CliResult<T>;
    fn runtime_err(self, ctx: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage_err(self, ctx: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| Failure {
            code: EXIT_USAGE,
            error: e.into().context(ctx()),
        })
    }

    fn runtime_err(self, ctx: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| Failure {
            code: EXIT_RUNTIME,
            error: e.into().context(ctx()),
        })
    }
}

/// Defaults, then the file, then `--set` overrides in order.
pub fn load_config(path: Option<&Path>, sets: &[String]) -> CliResult<RunConfig> {
    let mut c = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).usage_err(|| format!("cannot read config {}", p.display()))?;
            RunConfig::parse(&text).usage_err(|| format!("invalid config {}", p.display()))?
        }
        None => RunConfig::parse("").expect("defaults are valid"),
    };
    apply_sets(&mut c, sets)?;
    Ok(c)
}

pub fn apply_sets(c: &mut RunConfig, sets: &[String]) -> CliResult<()> {
    for s in sets {
        c.apply_assignment(s).usage_err(|| format!("invalid override `{s}`"))?;
    }
    c.validate().usage_err(|| "invalid configuration".into())
}

pub fn vocabulary(c: &RunConfig) -> Vocabulary {
    Vocabulary::new(&c.model.categories)
}

/// `(name, path)` of every `*.txt` file in `dir`, sorted by name.
pub fn list_sequences(dir: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    if !dir.is_dir() {
        return Err(usage(format!("data directory {} does not exist", dir.display())));
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).runtime_err(|| format!("cannot list {}", dir.display()))? {
        let path = entry.runtime_err(|| format!("cannot list {}", dir.display()))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "txt") {
            let name = path.file_stem().expect("file name").to_string_lossy().into_owned();
            out.push((name, path));
        }
    }
    out.sort();
    Ok(out)
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).runtime_err(|| format!("cannot create {}", dir.display()))
}

pub fn create_file(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .runtime_err(|| format!("cannot create {}", path.display()))
}

pub fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    let f = File::open(path).usage_err(|| format!("cannot open checkpoint {}", path.display()))?;
    read_checkpoint(BufReader::new(f)).usage_err(|| format!("cannot load checkpoint {}", path.display()))
}

/// Writes through a temporary file so a crash never leaves a partial
/// checkpoint behind.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> CliResult<()> {
    let ctx = || format!("cannot write checkpoint {}", path.display());
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let tmp = path.with_extension("tmp");
    let mut w = create_file(&tmp)?;
    write_checkpoint(&mut w, ckpt).runtime_err(ctx)?;
    w.flush().runtime_err(ctx)?;
    drop(w);
    std::fs::rename(&tmp, path).runtime_err(ctx)
}

/// Peak resident set size of this process in KiB (Linux only).
pub fn peak_rss_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}
