//! Key material on disk.
//!
//! A PKI directory holds `root.cert` plus, for each identity (`recorder`,
//! `tsa1`, `tsa2`), `<name>.key` (32-byte Ed25519 seed) and `<name>.chain`
//! (encoded certificate chain, leaf first).

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use sva::envelope::pki::{decode_chain, encode_chain, TestPki};
use sva::envelope::{Certificate, SignerIdentity};

pub const RECORDER: &str = "recorder";
pub const TSA_INITIAL: &str = "tsa1";
pub const TSA_PERIODIC: &str = "tsa2";

pub fn init(dir: &Path) -> Result<()> {
    if dir.join("root.cert").exists() {
        bail!("{} already holds a PKI", dir.display());
    }
    fs::create_dir_all(dir)?;
    let pki = TestPki::generate(&mut rand::thread_rng());
    fs::write(dir.join("root.cert"), pki.root.as_bytes())?;
    for (name, id) in [
        (RECORDER, &pki.recorder),
        (TSA_INITIAL, &pki.tsa_initial),
        (TSA_PERIODIC, &pki.tsa_periodic),
    ] {
        fs::write(dir.join(format!("{name}.key")), id.key_bytes())?;
        fs::write(dir.join(format!("{name}.chain")), encode_chain(id.chain()))?;
    }
    Ok(())
}

pub fn root(dir: &Path) -> Result<Certificate> {
    let path = dir.join("root.cert");
    let raw = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Certificate::from_bytes(&raw)?)
}

fn chain(dir: &Path, name: &str) -> Result<Vec<Certificate>> {
    let path = dir.join(format!("{name}.chain"));
    let raw = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(decode_chain(&raw)?)
}

/// Leaf certificate of an identity; needs no private key.
pub fn leaf(dir: &Path, name: &str) -> Result<Certificate> {
    chain(dir, name)?
        .into_iter()
        .next()
        .with_context(|| format!("{name}.chain is empty"))
}

pub fn identity(dir: &Path, name: &str) -> Result<SignerIdentity> {
    let path = dir.join(format!("{name}.key"));
    let raw = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let key: [u8; 32] = raw
        .try_into()
        .map_err(|_| anyhow::anyhow!("{} is not a 32-byte key", path.display()))?;
    Ok(SignerIdentity::from_key_bytes(key, chain(dir, name)?)?)
}
