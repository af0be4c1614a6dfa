use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use super::{HarnessError, TrainConfig};
use crate::fsutil::write_atomic;
use crate::mil::{read_params, write_params, MilModelParams};

pub const MODEL_EXTENSION: &str = "abmc";
pub const CONFIG_EXTENSION: &str = "json";

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Writes `<stem>.abmc` (weights) and `<stem>.json` (training config).
pub fn save_model(
    stem: &Path,
    params: &MilModelParams,
    config: &TrainConfig,
) -> Result<(), HarnessError> {
    let mut bytes = Vec::new();
    write_params(&mut bytes, params)?;
    crate::fsutil::write_atomic_bytes(&with_ext(stem, MODEL_EXTENSION), &bytes)?;
    let json = serde_json::to_string_pretty(config)
        .map_err(|e| HarnessError::ConfigFile(e.to_string()))?;
    write_atomic(&with_ext(stem, CONFIG_EXTENSION), |w| {
        w.write_all(json.as_bytes())?;
        w.write_all(b"\n")
    })?;
    Ok(())
}

pub fn load_model(stem: &Path) -> Result<(MilModelParams, TrainConfig), HarnessError> {
    let params = read_params(BufReader::new(File::open(with_ext(stem, MODEL_EXTENSION))?))?;
    let cfg_path = with_ext(stem, CONFIG_EXTENSION);
    let config: TrainConfig = serde_json::from_slice(&std::fs::read(&cfg_path)?)
        .map_err(|e| HarnessError::ConfigFile(format!("{}: {e}", cfg_path.display())))?;
    if params.attention_dim() != config.attention_dim
        || params.instance_classifier.is_some() != config.clam.is_some()
    {
        return Err(HarnessError::ConfigFile(format!(
            "{}: config does not match the stored weights",
            cfg_path.display()
        )));
    }
    Ok((params, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("m");
        let params = MilModelParams::init(5, 16, false, &mut stream(1, &[])).unwrap();
        let cfg = TrainConfig {
            seed: 9,
            ..TrainConfig::default()
        };
        save_model(&stem, &params, &cfg).unwrap();
        assert!(dir.path().join("m.abmc").exists());
        let (p, c) = load_model(&stem).unwrap();
        assert_eq!(p, params);
        assert_eq!(c, cfg);

        let other = TrainConfig {
            attention_dim: 8,
            ..cfg
        };
        save_model(&stem, &params, &other).unwrap();
        assert!(matches!(
            load_model(&stem),
            Err(HarnessError::ConfigFile(_))
        ));
    }
}
