//! Feature file formats.
//!
//! Binary layout (`LFTR`): magic `LFTR`, format version u32 LE, dim u32 LE,
//! item count u64 LE, then per item: id length u16 LE, UTF-8 id bytes, and
//! the values as f32 LE. Frame-level files insert a frame-count u32 LE
//! between the id and the values and store `frames × dim` values.
//!
//! Text layout: one line per item, the id followed by whitespace-separated
//! decimal values. Text files carry video-level features only.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::diffmath::Matrix;
use crate::error::{Error, Result};

use super::{FeatureData, FeatureLevel, FeatureSet};

pub const FEATURE_MAGIC: &[u8; 4] = b"LFTR";
pub const FEATURE_VERSION: u32 = 1;

fn format_err(path: &Path, offset: u64, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset,
        detail: detail.into(),
    }
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn read_exact(&mut self, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|e| format_err(path, self.offset, format!("truncated {what}: {e}")))?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn read_u16(&mut self, path: &Path, what: &str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.read_exact(&mut b, path, what)?;
        Ok(u16::from_le_bytes(b))
    }

    fn read_u32(&mut self, path: &Path, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, path, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn read_u64(&mut self, path: &Path, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b, path, what)?;
        Ok(u64::from_le_bytes(b))
    }

    fn read_f32_values(&mut self, n: usize, path: &Path, what: &str) -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; n * 4];
        self.read_exact(&mut bytes, path, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }
}

/// Load one feature file (binary or text, sniffed by magic) and validate
/// it against the expected name, dimensionality and level.
pub fn load_features(
    path: &Path,
    name: &str,
    expected_dim: usize,
    expected_level: FeatureLevel,
) -> Result<FeatureSet> {
    let mut file = File::open(path).map_err(|e| {
        Error::Config(format!("cannot open feature file {}: {e}", path.display()))
    })?;
    let mut magic = [0u8; 4];
    let n = file.read(&mut magic)?;
    if n == 4 && &magic == FEATURE_MAGIC {
        load_binary(file, path, name, expected_dim, expected_level)
    } else {
        drop(file);
        load_text(path, name, expected_dim, expected_level)
    }
}

fn load_binary(
    file: File,
    path: &Path,
    name: &str,
    expected_dim: usize,
    expected_level: FeatureLevel,
) -> Result<FeatureSet> {
    let mut cur = Cursor {
        inner: BufReader::new(file),
        offset: 4, // magic already consumed
    };
    let version = cur.read_u32(path, "version")?;
    if version != FEATURE_VERSION {
        return Err(format_err(
            path,
            4,
            format!("unsupported feature format version {version}"),
        ));
    }
    let dim = cur.read_u32(path, "dim")? as usize;
    if dim != expected_dim {
        return Err(format_err(
            path,
            8,
            format!("feature {name:?} declares dim {expected_dim} but file has {dim}"),
        ));
    }
    let count = cur.read_u64(path, "count")?;

    match expected_level {
        FeatureLevel::Video => {
            let mut map = BTreeMap::new();
            for i in 0..count {
                let at = cur.offset;
                let id = read_id(&mut cur, path)?;
                let values = cur.read_f32_values(dim, path, "values")?;
                if map.insert(id.clone(), values).is_some() {
                    return Err(format_err(
                        path,
                        at,
                        format!("duplicate id {id:?} (item {i})"),
                    ));
                }
            }
            expect_eof(&mut cur, path)?;
            Ok(FeatureSet {
                name: name.to_string(),
                dim,
                data: FeatureData::Video(map),
            })
        }
        FeatureLevel::Frame => {
            let mut map = BTreeMap::new();
            for i in 0..count {
                let at = cur.offset;
                let id = read_id(&mut cur, path)?;
                let frames = cur.read_u32(path, "frame count")? as usize;
                if frames == 0 {
                    return Err(format_err(
                        path,
                        at,
                        format!("item {id:?} has zero frames"),
                    ));
                }
                let values = cur.read_f32_values(frames * dim, path, "frame values")?;
                let m = Matrix::from_vec(frames, dim, values)?;
                if map.insert(id.clone(), m).is_some() {
                    return Err(format_err(
                        path,
                        at,
                        format!("duplicate id {id:?} (item {i})"),
                    ));
                }
            }
            expect_eof(&mut cur, path)?;
            Ok(FeatureSet {
                name: name.to_string(),
                dim,
                data: FeatureData::Frame(map),
            })
        }
    }
}

fn read_id<R: Read>(cur: &mut Cursor<R>, path: &Path) -> Result<String> {
    let at = cur.offset;
    let len = cur.read_u16(path, "id length")? as usize;
    if len == 0 {
        return Err(format_err(path, at, "empty item id"));
    }
    let mut bytes = vec![0u8; len];
    cur.read_exact(&mut bytes, path, "id bytes")?;
    String::from_utf8(bytes).map_err(|e| format_err(path, at, format!("id is not UTF-8: {e}")))
}

fn expect_eof<R: Read>(cur: &mut Cursor<R>, path: &Path) -> Result<()> {
    let mut probe = [0u8; 1];
    match cur.inner.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(format_err(
            path,
            cur.offset,
            "trailing bytes after the declared item count",
        )),
    }
}

fn load_text(
    path: &Path,
    name: &str,
    expected_dim: usize,
    expected_level: FeatureLevel,
) -> Result<FeatureSet> {
    if expected_level == FeatureLevel::Frame {
        return Err(Error::Config(format!(
            "feature {name:?} is frame-level; the text format stores video-level features only"
        )));
    }
    let file = File::open(path).map_err(|e| {
        Error::Config(format!("cannot open feature file {}: {e}", path.display()))
    })?;
    let mut map = BTreeMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id = parts.next().unwrap().to_string();
        let values: Vec<f64> = parts
            .map(|t| {
                t.parse::<f64>()
                    .map(|v| v as f32 as f64)
                    .map_err(|e| {
                        format_err(
                            path,
                            lineno as u64 + 1,
                            format!("line {}: bad value {t:?}: {e}", lineno + 1),
                        )
                    })
            })
            .collect::<Result<_>>()?;
        if values.len() != expected_dim {
            return Err(format_err(
                path,
                lineno as u64 + 1,
                format!(
                    "line {}: id {id:?} has {} values, expected {expected_dim}",
                    lineno + 1,
                    values.len()
                ),
            ));
        }
        if map.insert(id.clone(), values).is_some() {
            return Err(format_err(
                path,
                lineno as u64 + 1,
                format!("line {}: duplicate id {id:?}", lineno + 1),
            ));
        }
    }
    Ok(FeatureSet {
        name: name.to_string(),
        dim: expected_dim,
        data: FeatureData::Video(map),
    })
}

/// Write a feature set in the binary layout. Values are stored as f32.
pub fn save_features_binary(set: &FeatureSet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&(set.dim as u32).to_le_bytes())?;
    w.write_all(&(set.len() as u64).to_le_bytes())?;
    match &set.data {
        FeatureData::Video(map) => {
            for (id, values) in map {
                write_id(&mut w, id)?;
                for &v in values {
                    w.write_all(&(v as f32).to_le_bytes())?;
                }
            }
        }
        FeatureData::Frame(map) => {
            for (id, frames) in map {
                write_id(&mut w, id)?;
                w.write_all(&(frames.rows() as u32).to_le_bytes())?;
                for &v in frames.data() {
                    w.write_all(&(v as f32).to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Write a video-level feature set in the one-line-per-item text layout.
pub fn save_features_text(set: &FeatureSet, path: &Path) -> Result<()> {
    let map = match &set.data {
        FeatureData::Video(map) => map,
        FeatureData::Frame(_) => {
            return Err(Error::Config(format!(
                "feature {:?} is frame-level; the text format stores video-level features only",
                set.name
            )))
        }
    };
    let mut w = BufWriter::new(File::create(path)?);
    for (id, values) in map {
        write!(w, "{id}")?;
        for &v in values {
            write!(w, " {}", v as f32)?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn write_id<W: Write>(w: &mut W, id: &str) -> Result<()> {
    let bytes = id.as_bytes();
    if bytes.len() > u16::MAX as usize {
        return Err(Error::Config(format!("item id too long: {id:?}")));
    }
    w.write_all(&(bytes.len() as u16).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn video_set(name: &str, dim: usize, items: &[(&str, &[f64])]) -> FeatureSet {
        let map = items
            .iter()
            .map(|(id, v)| (id.to_string(), v.to_vec()))
            .collect();
        FeatureSet {
            name: name.into(),
            dim,
            data: FeatureData::Video(map),
        }
    }

    #[test]
    fn binary_round_trip_is_identity() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.lftr");
        // Values chosen representable in f32 so the round trip is exact.
        let set = video_set(
            "f",
            3,
            &[("a", &[1.0, 2.5, -3.25]), ("b", &[0.0, 0.5, 255.0])],
        );
        save_features_binary(&set, &path).unwrap();
        let loaded = load_features(&path, "f", 3, FeatureLevel::Video).unwrap();
        assert_eq!(loaded.vector("a").unwrap(), &[1.0, 2.5, -3.25]);
        assert_eq!(loaded.vector("b").unwrap(), &[0.0, 0.5, 255.0]);
        assert_eq!(loaded.len(), 2);
    }

    #[test]
    fn empty_file_with_header_loads_empty() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.lftr");
        let set = video_set("f", 4, &[]);
        save_features_binary(&set, &path).unwrap();
        let loaded = load_features(&path, "f", 4, FeatureLevel::Video).unwrap();
        assert!(loaded.is_empty());
    }

    #[test]
    fn text_and_binary_load_identically() {
        let dir = tempdir().unwrap();
        let set = video_set("f", 2, &[("x", &[0.125, -7.5]), ("y", &[3.0, 0.0625])]);
        let bin = dir.path().join("f.lftr");
        let txt = dir.path().join("f.txt");
        save_features_binary(&set, &bin).unwrap();
        save_features_text(&set, &txt).unwrap();
        let from_bin = load_features(&bin, "f", 2, FeatureLevel::Video).unwrap();
        let from_txt = load_features(&txt, "f", 2, FeatureLevel::Video).unwrap();
        assert_eq!(from_bin.vector("x"), from_txt.vector("x"));
        assert_eq!(from_bin.vector("y"), from_txt.vector("y"));
    }

    #[test]
    fn dim_mismatch_is_rejected_with_offset() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.lftr");
        let set = video_set("f", 3, &[("a", &[1.0, 2.0, 3.0])]);
        save_features_binary(&set, &path).unwrap();
        let err = load_features(&path, "f", 5, FeatureLevel::Video).unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset, 8),
            other => panic!("expected format error, got {other}"),
        }
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.txt");
        std::fs::write(&path, "a 1 2\na 3 4\n").unwrap();
        let err = load_features(&path, "f", 2, FeatureLevel::Video).unwrap_err();
        assert!(err.to_string().contains("duplicate id"));
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.lftr");
        let set = video_set("f", 3, &[("a", &[1.0, 2.0, 3.0])]);
        save_features_binary(&set, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        let err = load_features(&path, "f", 3, FeatureLevel::Video).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn frame_level_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("frames.lftr");
        let mut map = BTreeMap::new();
        map.insert(
            "a".to_string(),
            Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]),
        );
        let set = FeatureSet {
            name: "fr".into(),
            dim: 2,
            data: FeatureData::Frame(map),
        };
        save_features_binary(&set, &path).unwrap();
        let loaded = load_features(&path, "fr", 2, FeatureLevel::Frame).unwrap();
        let frames = loaded.frames("a").unwrap();
        assert_eq!(frames.rows(), 3);
        assert_eq!(frames.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn text_format_rejects_frame_level() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("fr.txt");
        std::fs::write(&path, "a 1 2\n").unwrap();
        assert!(load_features(&path, "fr", 2, FeatureLevel::Frame).is_err());
    }
}
