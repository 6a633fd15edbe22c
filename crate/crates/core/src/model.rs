//! A tagged union over fitted representations plus a versioned JSON file format.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel_ae::KernelAeModel;
use crate::kpca::KpcaModel;
use crate::simple_contrastive::SimpleContrastiveModel;
use crate::spectral_contrastive::SpectralModel;

pub const FORMAT: &str = "kernrep-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum Representation {
    /// Identity map on the input features.
    Raw,
    Kpca(KpcaModel),
    Simple(SimpleContrastiveModel),
    Spectral(SpectralModel),
    Ae(KernelAeModel),
}

impl Representation {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Raw => "raw",
            Self::Kpca(_) => "kpca",
            Self::Simple(_) => "simple",
            Self::Spectral(_) => "spectral",
            Self::Ae(_) => "ae",
        }
    }

    /// Embeds every column of `x`.
    pub fn embed_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Self::Raw => Ok(x.clone()),
            Self::Kpca(m) => m.embed_batch(x),
            Self::Simple(m) => m.embed_batch(x),
            Self::Spectral(m) => m.embed_batch(x),
            Self::Ae(m) => m.embed_batch(x),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    #[serde(flatten)]
    body: Representation,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

pub fn to_json(rep: &Representation) -> Result<String> {
    let env = Envelope { format: FORMAT.into(), version: VERSION, body: rep.clone() };
    serde_json::to_string(&env).map_err(|e| Error::Model(e.to_string()))
}

pub fn from_json(text: &str) -> Result<Representation> {
    let header: Header = serde_json::from_str(text).map_err(|e| Error::Model(format!("unreadable model file: {e}")))?;
    if header.format != FORMAT {
        return Err(Error::Model(format!("not a model file (format {:?})", header.format)));
    }
    if header.version != VERSION {
        return Err(Error::Model(format!("unsupported model version {} (expected {VERSION})", header.version)));
    }
    let env: Envelope = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
    Ok(env.body)
}

/// Writes atomically: temporary sibling file, then rename.
pub fn save(rep: &Representation, path: &Path) -> Result<()> {
    write_atomic(path, to_json(rep)?.as_bytes())
}

pub fn load(path: &Path) -> Result<Representation> {
    from_json(&fs::read_to_string(path)?)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path.file_name().ok_or_else(|| Error::Input(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate, make_triplets};
    use crate::kernel_ae::{fit_ae, AeConfig};
    use crate::kernels::KernelSpec;
    use crate::kpca::fit_kpca;
    use crate::simple_contrastive::fit_simple;
    use crate::spectral_contrastive::{fit_spectral, SpectralConfig};

    fn round_trip(rep: &Representation, x: &DMatrix<f64>) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save(rep, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.kind(), rep.kind());
        assert_eq!(back.embed_batch(x).unwrap(), rep.embed_batch(x).unwrap());
    }

    #[test]
    fn every_kind_round_trips() {
        let x = generate("moons", 12, 3).unwrap().x;
        let t = make_triplets(&x, 0.1, 4).unwrap();
        let spec = KernelSpec::gaussian(0.8);
        let mut scfg = SpectralConfig::default();
        scfg.descent.max_iters = 20;
        let mut acfg = AeConfig::default();
        acfg.descent.max_iters = 20;
        round_trip(&Representation::Raw, &x);
        round_trip(&Representation::Kpca(fit_kpca(&x, &spec, 2).unwrap()), &x);
        round_trip(&Representation::Simple(fit_simple(&t, &spec, 2, 1e-10).unwrap()), &x);
        round_trip(&Representation::Spectral(fit_spectral(&t, &spec, &scfg, 1).unwrap()), &x);
        round_trip(&Representation::Ae(fit_ae(&x, None, &spec, &spec, &acfg, 1).unwrap()), &x);
    }

    #[test]
    fn rejects_foreign_or_future_files() {
        assert!(matches!(from_json(r#"{"format":"other","version":1,"kind":"raw"}"#), Err(Error::Model(_))));
        assert!(matches!(from_json(r#"{"format":"kernrep-model","version":2,"kind":"raw"}"#), Err(Error::Model(_))));
        assert!(matches!(from_json("not json"), Err(Error::Model(_))));
        assert!(from_json(r#"{"format":"kernrep-model","version":1,"kind":"raw"}"#).is_ok());
    }
}
