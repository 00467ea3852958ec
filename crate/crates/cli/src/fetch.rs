use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use md5::{Digest, Md5};
use serde::{Deserialize, Serialize};

use crate::experiment::MNIST_FILES;
use crate::failure::{CliResult, Failure};
use crate::repro::Reproduction;

pub const DEFAULT_MIRROR: &str = "https://ossci-datasets.s3.amazonaws.com/mnist/";

/// Published MD5 digests of the gzipped MNIST files, in the order of
/// [`MNIST_FILES`].
pub const MNIST_MD5: [&str; 4] = [
    "f68b3c2dcbeaaa9fbdd348bbdeb94873",
    "d53e105ee54ea40749a09fcbcd1e9432",
    "9fb629c4189551a2d022fa330f9573f3",
    "ec29112dd5afa0611ce80d1b7f02629c",
];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FetchedFile {
    pub name: String,
    pub md5: String,
    pub bytes: usize,
    /// `downloaded` or `present`.
    pub status: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FetchReport {
    pub reproduction: Reproduction,
    pub mirror: String,
    pub dir: String,
    pub files: Vec<FetchedFile>,
}

pub fn md5_hex(bytes: &[u8]) -> String {
    Md5::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Checks `bytes` against a published digest.
pub fn verify_digest(name: &str, bytes: &[u8], expected: &str) -> CliResult<String> {
    let got = md5_hex(bytes);
    if got != expected {
        return Err(Failure::Io(format!(
            "{name}: MD5 {got} does not match the published {expected}; the download is \
             corrupt or the mirror serves different files"
        )));
    }
    Ok(got)
}

pub fn gunzip(name: &str, gz: &[u8]) -> CliResult<Vec<u8>> {
    let mut out = Vec::new();
    GzDecoder::new(gz)
        .read_to_end(&mut out)
        .map_err(|e| Failure::Io(format!("{name}: cannot decompress: {e}")))?;
    Ok(out)
}

fn download(url: &str) -> CliResult<Vec<u8>> {
    let response = ureq::get(url)
        .call()
        .map_err(|e| Failure::Io(format!("GET {url}: {e}")))?;
    let mut bytes = Vec::new();
    response
        .into_body()
        .into_reader()
        .read_to_end(&mut bytes)
        .map_err(|e| Failure::Io(format!("GET {url}: {e}")))?;
    Ok(bytes)
}

/// Downloads the four MNIST archives into `dir`, verifies each digest and
/// stores the decompressed IDX files. Files already present are kept unless
/// `force` is set.
pub fn fetch(dir: &Path, mirror: &str, force: bool, repro: Reproduction) -> CliResult<FetchReport> {
    fs::create_dir_all(dir)?;
    let base = mirror.trim_end_matches('/');
    let mut files = Vec::new();
    for (name, md5) in MNIST_FILES.iter().zip(MNIST_MD5) {
        let target = dir.join(name);
        if target.is_file() && !force {
            files.push(FetchedFile {
                name: name.to_string(),
                md5: String::new(),
                bytes: fs::metadata(&target)?.len() as usize,
                status: "present".into(),
            });
            continue;
        }
        let gz_name = format!("{name}.gz");
        let gz = download(&format!("{base}/{gz_name}"))?;
        let digest = verify_digest(&gz_name, &gz, md5)?;
        let raw = gunzip(&gz_name, &gz)?;
        fs::write(&target, &raw)?;
        files.push(FetchedFile {
            name: name.to_string(),
            md5: digest,
            bytes: raw.len(),
            status: "downloaded".into(),
        });
    }
    Ok(FetchReport {
        reproduction: repro,
        mirror: mirror.to_string(),
        dir: dir.display().to_string(),
        files,
    })
}
