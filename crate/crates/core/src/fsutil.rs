use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Write-temp-then-rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub(crate) fn to_json_lines<T: Serialize>(items: &[T]) -> serde_json::Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub(crate) fn write_json_lines<T: Serialize>(path: &Path, items: &[T]) -> crate::Result<()> {
    let bytes = to_json_lines(items)?;
    write_atomic(path, &bytes).map_err(|e| crate::Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> crate::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes).map_err(|e| crate::Error::io(path, e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> crate::Result<T> {
    let bytes = fs::read(path).map_err(|e| crate::Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| crate::Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Reads a line-delimited JSON file; blank lines are skipped. A trailing
/// partial line (torn append) is ignored when `tolerate_torn_tail` is set.
pub(crate) fn read_json_lines<T: DeserializeOwned>(
    path: &Path,
    tolerate_torn_tail: bool,
) -> crate::Result<Vec<T>> {
    let f = File::open(path).map_err(|e| crate::Error::io(path, e))?;
    let lines: Vec<String> = BufReader::new(f)
        .lines()
        .collect::<io::Result<_>>()
        .map_err(|e| crate::Error::io(path, e))?;
    let last = lines.len();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(_) if tolerate_torn_tail && i + 1 == last => break,
            Err(e) => {
                return Err(crate::Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

/// Appends one JSON line and flushes it to disk.
pub(crate) fn append_json_line<T: Serialize>(file: &mut File, item: &T) -> io::Result<()> {
    let mut buf = serde_json::to_vec(item)?;
    buf.push(b'\n');
    file.write_all(&buf)?;
    file.sync_data()
}

pub(crate) fn open_append(path: &Path) -> io::Result<File> {
    OpenOptions::new().create(true).append(true).open(path)
}
