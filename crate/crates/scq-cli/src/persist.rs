//! Index persistence: a versioned binary image plus a JSON manifest
//! carrying the build parameters and a checksum of the image.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::index::{BuildParams, BuiltIndex};

const IMAGE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub kind: String,
    pub params: BuildParams,
    pub stored_entries: u64,
    pub sha256: String,
}

fn manifest_path(image: &Path) -> std::path::PathBuf {
    let mut name = image.file_name().unwrap_or_default().to_owned();
    name.push(".manifest.json");
    image.with_file_name(name)
}

pub fn save(index: &BuiltIndex, params: &BuildParams, image: &Path) -> Result<()> {
    let payload = bincode::serialize(index).context("serializing index image")?;
    let mut bytes = IMAGE_VERSION.to_le_bytes().to_vec();
    bytes.extend_from_slice(&payload);
    std::fs::write(image, &bytes).with_context(|| format!("writing {}", image.display()))?;
    let manifest = Manifest {
        version: IMAGE_VERSION,
        kind: params.kind.to_string(),
        params: params.clone(),
        stored_entries: index.stored_entries(),
        sha256: hex(&Sha256::digest(&bytes)),
    };
    let mpath = manifest_path(image);
    std::fs::write(&mpath, serde_json::to_vec_pretty(&manifest)?)
        .with_context(|| format!("writing {}", mpath.display()))?;
    Ok(())
}

pub fn load(image: &Path) -> Result<(BuiltIndex, Manifest)> {
    let bytes =
        std::fs::read(image).with_context(|| format!("reading {}", image.display()))?;
    let mpath = manifest_path(image);
    let manifest: Manifest = serde_json::from_slice(
        &std::fs::read(&mpath).with_context(|| format!("reading {}", mpath.display()))?,
    )?;
    if manifest.sha256 != hex(&Sha256::digest(&bytes)) {
        bail!("checksum mismatch: image {} does not match its manifest", image.display());
    }
    if bytes.len() < 4 || u32::from_le_bytes(bytes[..4].try_into().unwrap()) != IMAGE_VERSION {
        bail!("unsupported image version");
    }
    let index: BuiltIndex = bincode::deserialize(&bytes[4..]).context("decoding index image")?;
    Ok((index, manifest))
}

fn hex(digest: &[u8]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
