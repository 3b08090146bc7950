//! JSON-lines corpus and plan files.
//!
//! A corpus file starts with one [`CorpusHeader`] line followed by one
//! [`SceneRecord`] per line. Files are written to a temporary sibling and
//! renamed into place on completion, so readers never observe partial output.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::error::{Error, Result};
use crate::sampler::SelectionPlan;
use crate::scenario::{validate_scene, SceneRecord};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub format_version: u32,
    pub dt: f64,
    pub history_len: usize,
    pub future_len: usize,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

impl CorpusHeader {
    pub fn new(dt: f64, history_len: usize, future_len: usize) -> Self {
        CorpusHeader {
            format_version: FORMAT_VERSION,
            dt,
            history_len,
            future_len,
            tags: BTreeMap::new(),
        }
    }

    fn matches(&self, scene: &SceneRecord) -> bool {
        scene.dt == self.dt && scene.history_len == self.history_len && scene.future_len == self.future_len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMode {
    /// The first invalid scene aborts the read.
    #[default]
    Strict,
    /// Invalid scenes are skipped and counted.
    Lenient,
}

/// Parses, normalizes and validates one scene line. `Ok(None)` means the scene
/// was invalid and skipped in lenient mode.
pub fn parse_scene_line(
    path: &Path,
    line: usize,
    text: &str,
    header: &CorpusHeader,
    mode: ValidationMode,
) -> Result<Option<SceneRecord>> {
    let mut scene: SceneRecord = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: e.to_string(),
    })?;
    scene.normalize_headings();
    let report = validate_scene(&scene);
    let problem = if !report.is_empty() {
        Some(report.summary())
    } else if !header.matches(&scene) {
        Some(format!(
            "timing (dt={}, T_H={}, T_F={}) differs from corpus header",
            scene.dt, scene.history_len, scene.future_len
        ))
    } else {
        None
    };
    match (problem, mode) {
        (None, _) => Ok(Some(scene)),
        (Some(summary), ValidationMode::Strict) => Err(Error::InvalidScene {
            path: path.to_path_buf(),
            line,
            scene_id: scene.scene_id,
            summary,
        }),
        (Some(summary), ValidationMode::Lenient) => {
            log::debug!("{}:{line}: skipping scene {}: {summary}", path.display(), scene.scene_id);
            Ok(None)
        }
    }
}

/// Streaming reader over a corpus file.
pub struct CorpusReader {
    path: PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
    header: CorpusHeader,
    mode: ValidationMode,
    skipped: usize,
}

pub fn read_corpus(path: impl AsRef<Path>, mode: ValidationMode) -> Result<CorpusReader> {
    let path = path.as_ref().to_path_buf();
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = BufReader::with_capacity(1 << 20, file).lines();
    let first = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(&path, e))?,
        None => {
            return Err(Error::Parse {
                path,
                line: 1,
                reason: "missing corpus header".into(),
            })
        }
    };
    let header: CorpusHeader = serde_json::from_str(&first).map_err(|e| Error::Parse {
        path: path.clone(),
        line: 1,
        reason: format!("bad corpus header: {e}"),
    })?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Parse {
            path,
            line: 1,
            reason: format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                header.format_version
            ),
        });
    }
    Ok(CorpusReader {
        path,
        lines,
        line_no: 1,
        header,
        mode,
        skipped: 0,
    })
}

impl CorpusReader {
    pub fn header(&self) -> &CorpusHeader {
        &self.header
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn mode(&self) -> ValidationMode {
        self.mode
    }

    /// Scenes skipped so far in lenient mode.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn note_skipped(&mut self, n: usize) {
        self.skipped += n;
    }

    /// Up to `n` raw `(line number, text)` pairs; blank lines are ignored.
    pub fn next_raw_batch(&mut self, n: usize) -> Result<Vec<(usize, String)>> {
        let mut batch = Vec::with_capacity(n);
        while batch.len() < n {
            match self.lines.next() {
                None => break,
                Some(line) => {
                    self.line_no += 1;
                    let text = line.map_err(|e| Error::io(&self.path, e))?;
                    if !text.trim().is_empty() {
                        batch.push((self.line_no, text));
                    }
                }
            }
        }
        Ok(batch)
    }
}

impl Iterator for CorpusReader {
    type Item = Result<SceneRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let (line, text) = match self.next_raw_batch(1) {
                Err(e) => return Some(Err(e)),
                Ok(mut b) => b.pop()?,
            };
            match parse_scene_line(&self.path, line, &text, &self.header, self.mode) {
                Ok(Some(scene)) => return Some(Ok(scene)),
                Ok(None) => self.skipped += 1,
                Err(e) => return Some(Err(e)),
            }
        }
    }
}

/// Reads a whole corpus into memory.
pub fn read_corpus_all(path: impl AsRef<Path>, mode: ValidationMode) -> Result<(CorpusHeader, Vec<SceneRecord>)> {
    let reader = read_corpus(path, mode)?;
    let header = reader.header().clone();
    let scenes = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, scenes))
}

/// Line-oriented writer that becomes visible at `path` only on [`finish`](Self::finish).
pub struct JsonLinesWriter {
    path: PathBuf,
    out: BufWriter<NamedTempFile>,
    lines: usize,
}

impl JsonLinesWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let tmp = NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(JsonLinesWriter {
            path,
            out: BufWriter::with_capacity(1 << 20, tmp),
            lines: 0,
        })
    }

    pub fn write_value<T: Serialize>(&mut self, value: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, value).map_err(|e| Error::io(&self.path, e.into()))?;
        self.end_line()
    }

    /// Writes one already-serialized line (without trailing newline).
    pub fn write_raw(&mut self, line: &str) -> Result<()> {
        self.out.write_all(line.as_bytes()).map_err(|e| Error::io(&self.path, e))?;
        self.end_line()
    }

    /// Writes a preformatted chunk holding `lines` complete lines.
    pub fn write_chunk(&mut self, chunk: &[u8], lines: usize) -> Result<()> {
        self.out.write_all(chunk).map_err(|e| Error::io(&self.path, e))?;
        self.lines += lines;
        Ok(())
    }

    /// Appends another file's bytes verbatim; used to concatenate spill files.
    pub fn append_file(&mut self, other: &Path, lines: usize) -> Result<()> {
        let mut src = File::open(other).map_err(|e| Error::io(other, e))?;
        std::io::copy(&mut src, &mut self.out).map_err(|e| Error::io(&self.path, e))?;
        self.lines += lines;
        Ok(())
    }

    fn end_line(&mut self) -> Result<()> {
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))?;
        self.lines += 1;
        Ok(())
    }

    pub fn lines(&self) -> usize {
        self.lines
    }

    /// Flushes and atomically renames into place. Returns the line count.
    pub fn finish(self) -> Result<usize> {
        let path = self.path;
        let tmp = self.out.into_inner().map_err(|e| Error::io(&path, e.into_error()))?;
        tmp.as_file().sync_all().map_err(|e| Error::io(&path, e))?;
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        Ok(self.lines)
    }
}

/// Corpus writer: header first, then scenes.
pub struct CorpusWriter {
    inner: JsonLinesWriter,
}

impl CorpusWriter {
    pub fn create(path: impl AsRef<Path>, header: &CorpusHeader) -> Result<Self> {
        let mut inner = JsonLinesWriter::create(path)?;
        inner.write_value(header)?;
        Ok(CorpusWriter { inner })
    }

    pub fn write_scene(&mut self, scene: &SceneRecord) -> Result<()> {
        self.inner.write_value(scene)
    }

    pub fn write_raw(&mut self, line: &str) -> Result<()> {
        self.inner.write_raw(line)
    }

    pub fn append_file(&mut self, other: &Path, scenes: usize) -> Result<()> {
        self.inner.append_file(other, scenes)
    }

    /// Number of scenes written so far.
    pub fn scenes(&self) -> usize {
        self.inner.lines() - 1
    }

    pub fn finish(self) -> Result<usize> {
        Ok(self.inner.finish()? - 1)
    }
}

pub fn write_corpus<'a>(
    path: impl AsRef<Path>,
    header: &CorpusHeader,
    scenes: impl IntoIterator<Item = &'a SceneRecord>,
) -> Result<usize> {
    let mut w = CorpusWriter::create(path, header)?;
    for s in scenes {
        w.write_scene(s)?;
    }
    w.finish()
}

pub fn write_plans(path: impl AsRef<Path>, plans: &[SelectionPlan]) -> Result<usize> {
    let mut w = JsonLinesWriter::create(path)?;
    for p in plans {
        w.write_value(p)?;
    }
    w.finish()
}

pub fn read_plans(path: impl AsRef<Path>) -> Result<Vec<SelectionPlan>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut plans = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let plan = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            reason: e.to_string(),
        })?;
        plans.push(plan);
    }
    Ok(plans)
}

/// Serializes `value` as pretty JSON and writes it atomically.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut w = JsonLinesWriter::create(path)?;
    serde_json::to_writer_pretty(&mut w.out, value).map_err(|e| Error::io(path, e.into()))?;
    w.end_line()?;
    w.finish().map(|_| ())
}

/// Writes whatever `fill` produces to `path` atomically.
pub fn write_with<F>(path: impl AsRef<Path>, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let path = path.as_ref();
    let mut w = JsonLinesWriter::create(path)?;
    fill(&mut w.out).map_err(|e| Error::io(path, e))?;
    w.finish().map(|_| ())
}
