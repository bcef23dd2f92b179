//! Model serialization.
//!
//! Binary layout: magic `LAFF`, format version u32 LE, config JSON length
//! u32 LE, the config JSON bytes, then every parameter in canonical
//! declaration order as raw little-endian f64 values. A `<file>.json`
//! sidecar mirrors the config for human inspection.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::params::FusionModel;
use super::ModelConfig;

pub const MODEL_MAGIC: &[u8; 4] = b"LAFF";
pub const MODEL_VERSION: u32 = 1;

fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

/// Write the model and its config sidecar.
pub fn save_model(model: &FusionModel, path: &Path) -> Result<()> {
    let config_json = serde_json::to_vec(&model.config)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&(config_json.len() as u32).to_le_bytes())?;
    w.write_all(&config_json)?;
    let mut io_err = None;
    model.for_each_param(&mut |p| {
        if io_err.is_some() {
            return;
        }
        for &v in p.value.data() {
            if let Err(e) = w.write_all(&v.to_le_bytes()) {
                io_err = Some(e);
                return;
            }
        }
    });
    if let Some(e) = io_err {
        return Err(e.into());
    }
    w.flush()?;

    let pretty = serde_json::to_string_pretty(&model.config)?;
    std::fs::write(sidecar_path(path), pretty + "\n")?;
    Ok(())
}

/// Load a model written by [`save_model`].
pub fn load_model(path: &Path) -> Result<FusionModel> {
    let file = File::open(path).map_err(|e| {
        Error::Config(format!("cannot open model file {}: {e}", path.display()))
    })?;
    let mut r = BufReader::new(file);
    let mut offset = 0u64;

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path, &mut offset, "magic")?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            detail: "not a model file (bad magic)".into(),
        });
    }
    let mut u32buf = [0u8; 4];
    read_exact(&mut r, &mut u32buf, path, &mut offset, "version")?;
    let version = u32::from_le_bytes(u32buf);
    if version != MODEL_VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 4,
            detail: format!("unsupported model version {version}"),
        });
    }
    read_exact(&mut r, &mut u32buf, path, &mut offset, "config length")?;
    let config_len = u32::from_le_bytes(u32buf) as usize;
    let mut config_bytes = vec![0u8; config_len];
    read_exact(&mut r, &mut config_bytes, path, &mut offset, "config JSON")?;
    let config: ModelConfig = serde_json::from_slice(&config_bytes)?;
    config.validate()?;

    // Shape the model, then overwrite every value from the file in the
    // same canonical order the writer used.
    let mut model = FusionModel::init(&config, 0)?;
    let mut fill_err: Option<Error> = None;
    model.for_each_param_mut(&mut |p| {
        if fill_err.is_some() {
            return;
        }
        let mut buf = vec![0u8; p.value.len() * 8];
        if let Err(e) = read_exact(&mut r, &mut buf, path, &mut offset, "parameter values") {
            fill_err = Some(e);
            return;
        }
        for (v, chunk) in p.value.data_mut().iter_mut().zip(buf.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
        }
        if !p.value.is_finite() {
            fill_err = Some(Error::Numeric(format!(
                "model file holds non-finite values in {}",
                p.name
            )));
        }
    });
    if let Some(e) = fill_err {
        return Err(e);
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset,
            detail: "trailing bytes after the declared parameters".into(),
        });
    }
    Ok(model)
}

fn read_exact<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    path: &Path,
    offset: &mut u64,
    what: &str,
) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        offset: *offset,
        detail: format!("truncated {what}: {e}"),
    })?;
    *offset += buf.len() as u64;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::tests::small_config;
    use super::super::FusionBlockKind;
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trip_preserves_every_parameter() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.laff");
        let cfg = small_config(FusionBlockKind::Laff, 2, 8);
        let model = FusionModel::init(&cfg, 77).unwrap();
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.config, model.config);
        let mut orig = Vec::new();
        model.for_each_param(&mut |p| orig.extend_from_slice(p.value.data()));
        let mut back = Vec::new();
        loaded.for_each_param(&mut |p| back.extend_from_slice(p.value.data()));
        assert_eq!(orig, back);
        assert!(path.with_extension("laff.json").exists() || {
            let mut os = path.as_os_str().to_owned();
            os.push(".json");
            std::path::PathBuf::from(os).exists()
        });
    }

    #[test]
    fn save_is_deterministic() {
        let dir = tempdir().unwrap();
        let a = dir.path().join("a.laff");
        let b = dir.path().join("b.laff");
        let cfg = small_config(FusionBlockKind::Mhsa, 2, 8);
        let model = FusionModel::init(&cfg, 5).unwrap();
        save_model(&model, &a).unwrap();
        save_model(&model, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn truncated_model_file_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.laff");
        let cfg = small_config(FusionBlockKind::Laff, 1, 4);
        let model = FusionModel::init(&cfg, 1).unwrap();
        save_model(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        let err = load_model(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bogus.laff");
        std::fs::write(&path, b"NOPE....").unwrap();
        let err = load_model(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
    }
}
