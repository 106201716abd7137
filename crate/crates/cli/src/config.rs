//! Protocol config files (TOML) and command-line overrides.

use std::fs;
use std::path::Path;

use tweedie_lab::harness::ProtocolConfig;
use tweedie_lab::losses::LossKind;
use tweedie_lab::{Error, Result};

pub fn load(path: &Path) -> Result<ProtocolConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    parse(&text, path)
}

pub fn parse(text: &str, path: &Path) -> Result<ProtocolConfig> {
    toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map_or(0, |s| text[..s.start].matches('\n').count() + 1);
        Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: e.message().to_string(),
        }
    })
}

pub fn apply_overrides(
    cfg: &mut ProtocolConfig,
    seed: Option<u64>,
    runs: Option<usize>,
    kinds: Option<&[String]>,
    p: Option<f64>,
) -> Result<()> {
    if let Some(seed) = seed {
        cfg.world.master_seed = seed;
    }
    if let Some(runs) = runs {
        cfg.n_runs = runs;
    }
    if let Some(p) = p {
        for kind in &mut cfg.kinds {
            if let LossKind::TweediePow { p: old } = kind {
                *old = p;
            }
        }
    }
    if let Some(names) = kinds {
        let p = p.unwrap_or(1.5);
        cfg.kinds = names
            .iter()
            .map(|n| LossKind::parse_with_power(n, p))
            .collect::<Result<Vec<_>>>()?;
    }
    Ok(())
}
