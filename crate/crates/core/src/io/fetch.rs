//! Sparse-collection fetch client: resolves `Group/Name` identifiers to
//! download URLs, keeps decompressed `.mtx` files in a local cache, and
//! guards concurrent downloads of the same matrix with a lock file.

use std::fs::{self, File, OpenOptions};
use std::io::{self, ErrorKind, Read};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use flate2::read::GzDecoder;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum FetchError {
    #[error("matrix name '{0}' is not of the form Group/Name")]
    BadName(String),
    #[error("download of {url} failed: {msg}")]
    Download { url: String, msg: String },
    #[error("archive for {name} holds no .mtx entry")]
    NoMatrixInArchive { name: String },
    #[error("{url} has an unsupported archive suffix (expect .tar.gz, .gz, or .mtx)")]
    UnsupportedArchive { url: String },
    #[error("size mismatch for {name}: expected {expected} bytes, got {got}")]
    SizeMismatch {
        name: String,
        expected: u64,
        got: u64,
    },
    #[error("sha256 mismatch for {name}: expected {expected}, got {got}")]
    ChecksumMismatch {
        name: String,
        expected: String,
        got: String,
    },
    #[error("timed out waiting for a concurrent download of {name}")]
    LockTimeout { name: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// The cache root: `SPARSEBENCH_CACHE` if set, else the platform cache
/// directory, else a temp-dir fallback.
pub fn cache_dir() -> PathBuf {
    if let Ok(dir) = std::env::var("SPARSEBENCH_CACHE") {
        return PathBuf::from(dir);
    }
    if let Ok(dir) = std::env::var("XDG_CACHE_HOME") {
        return Path::new(&dir).join("sparsebench");
    }
    if let Ok(home) = std::env::var("HOME") {
        return Path::new(&home).join(".cache").join("sparsebench");
    }
    std::env::temp_dir().join("sparsebench-cache")
}

/// A collection matrix: its identifier, resolved download URL, cache
/// location, and optional integrity metadata for the downloaded archive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixSource {
    name: String,
    url: String,
    local_path: PathBuf,
    expected_size: Option<u64>,
    expected_sha256: Option<String>,
}

impl MatrixSource {
    /// Resolves a `Group/Name` identifier against the default cache root.
    pub fn from_name(name: &str) -> Result<Self, FetchError> {
        Self::from_name_in(name, &cache_dir())
    }

    /// Resolves a `Group/Name` identifier, caching under `cache_root`.
    pub fn from_name_in(name: &str, cache_root: &Path) -> Result<Self, FetchError> {
        let bad = || FetchError::BadName(name.to_string());
        let (group, base) = name.split_once('/').ok_or_else(bad)?;
        let ok = |s: &str| {
            !s.is_empty()
                && s.chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        };
        if !ok(group) || !ok(base) {
            return Err(bad());
        }
        Ok(MatrixSource {
            name: name.to_string(),
            url: format!("https://sparse.tamu.edu/MM/{group}/{base}.tar.gz"),
            local_path: cache_root.join(group).join(format!("{base}.mtx")),
            expected_size: None,
            expected_sha256: None,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn local_path(&self) -> &Path {
        &self.local_path
    }

    /// The matrix's base name, e.g. `shallow_water1` of `MaxPlanck/shallow_water1`.
    fn base(&self) -> &str {
        self.name.rsplit('/').next().unwrap_or(&self.name)
    }

    /// Overrides the download URL (mirrors, test servers).
    pub fn with_url(mut self, url: &str) -> Self {
        self.url = url.to_string();
        self
    }

    /// Requires the downloaded archive to have exactly this size.
    pub fn with_expected_size(mut self, bytes: u64) -> Self {
        self.expected_size = Some(bytes);
        self
    }

    /// Requires the downloaded archive to have this SHA-256 (lowercase hex).
    pub fn with_expected_sha256(mut self, hex: &str) -> Self {
        self.expected_sha256 = Some(hex.to_string());
        self
    }
}

/// Removes the lock file when the holder is done, error paths included.
struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Ensures the matrix is in the cache, downloading and decompressing on a
/// miss, and returns the `.mtx` path. Concurrent fetches of the same matrix
/// coordinate through a lock file; waiters adopt the winner's file.
pub fn fetch_matrix(src: &MatrixSource) -> Result<PathBuf, FetchError> {
    fetch_matrix_with_timeout(src, Duration::from_secs(600))
}

/// [`fetch_matrix`] with an explicit bound on how long to wait for another
/// process's in-flight download.
pub fn fetch_matrix_with_timeout(
    src: &MatrixSource,
    lock_timeout: Duration,
) -> Result<PathBuf, FetchError> {
    if src.local_path.exists() {
        return Ok(src.local_path.clone());
    }
    if let Some(parent) = src.local_path.parent() {
        fs::create_dir_all(parent)?;
    }

    let lock_path = lock_sibling(&src.local_path);
    let start = Instant::now();
    let _guard = loop {
        match OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock_path)
        {
            Ok(_) => break LockGuard { path: lock_path },
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                if src.local_path.exists() {
                    return Ok(src.local_path.clone());
                }
                if start.elapsed() >= lock_timeout {
                    return Err(FetchError::LockTimeout {
                        name: src.name.clone(),
                    });
                }
                std::thread::sleep(Duration::from_millis(100));
            }
            Err(e) => return Err(e.into()),
        }
    };
    // A racer may have finished between our existence check and the lock.
    if src.local_path.exists() {
        return Ok(src.local_path.clone());
    }

    let archive = src.local_path.with_extension("mtx.download");
    let result = (|| {
        download(&src.url, &archive)?;
        validate_archive(&archive, src)?;
        extract_archive(&archive, src)
    })();
    let _ = fs::remove_file(&archive);
    result?;
    Ok(src.local_path.clone())
}

fn lock_sibling(path: &Path) -> PathBuf {
    path.with_extension("mtx.lock")
}

fn download(url: &str, dest: &Path) -> Result<(), FetchError> {
    let fail = |msg: String| FetchError::Download {
        url: url.to_string(),
        msg,
    };
    let response = ureq::get(url).call().map_err(|e| fail(e.to_string()))?;
    let mut reader = response.into_reader();
    let mut file = File::create(dest)?;
    io::copy(&mut reader, &mut file).map_err(|e| fail(e.to_string()))?;
    Ok(())
}

fn validate_archive(archive: &Path, src: &MatrixSource) -> Result<(), FetchError> {
    if let Some(expected) = src.expected_size {
        let got = fs::metadata(archive)?.len();
        if got != expected {
            return Err(FetchError::SizeMismatch {
                name: src.name.clone(),
                expected,
                got,
            });
        }
    }
    if let Some(expected) = &src.expected_sha256 {
        let mut hasher = Sha256::new();
        io::copy(&mut File::open(archive)?, &mut hasher)?;
        let got: String = hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        if !got.eq_ignore_ascii_case(expected) {
            return Err(FetchError::ChecksumMismatch {
                name: src.name.clone(),
                expected: expected.clone(),
                got,
            });
        }
    }
    Ok(())
}

/// Decompresses the downloaded archive and installs the `.mtx` at the cache
/// path via a temp file + rename, so partially extracted files never appear
/// under the final name.
fn extract_archive(archive: &Path, src: &MatrixSource) -> Result<(), FetchError> {
    let tmp = src.local_path.with_extension("mtx.part");
    if src.url.ends_with(".tar.gz") || src.url.ends_with(".tgz") {
        extract_tar_gz(archive, src, &tmp)?;
    } else if src.url.ends_with(".gz") {
        let mut decoder = GzDecoder::new(File::open(archive)?);
        io::copy(&mut decoder, &mut File::create(&tmp)?)?;
    } else if src.url.ends_with(".mtx") {
        fs::copy(archive, &tmp)?;
    } else {
        return Err(FetchError::UnsupportedArchive {
            url: src.url.clone(),
        });
    }
    fs::rename(&tmp, &src.local_path)?;
    Ok(())
}

fn extract_tar_gz(archive: &Path, src: &MatrixSource, dest: &Path) -> Result<(), FetchError> {
    // Pass 1: choose the entry — prefer the canonical "<base>.mtx", fall
    // back to the first .mtx (collection archives hold one matrix plus
    // occasional auxiliary files).
    let wanted = format!("{}.mtx", src.base());
    let mut chosen: Option<PathBuf> = None;
    for entry in tar::Archive::new(GzDecoder::new(File::open(archive)?)).entries()? {
        let entry = entry?;
        let path = entry.path()?.into_owned();
        if path.extension().and_then(|e| e.to_str()) != Some("mtx") {
            continue;
        }
        let exact = path.file_name().and_then(|f| f.to_str()) == Some(wanted.as_str());
        if exact {
            chosen = Some(path);
            break;
        }
        chosen.get_or_insert(path);
    }
    let chosen = chosen.ok_or_else(|| FetchError::NoMatrixInArchive {
        name: src.name.clone(),
    })?;

    // Pass 2: stream that entry out.
    for entry in tar::Archive::new(GzDecoder::new(File::open(archive)?)).entries()? {
        let mut entry = entry?;
        if entry.path()?.as_ref() == chosen {
            io::copy(&mut entry, &mut File::create(dest)?)?;
            return Ok(());
        }
    }
    Err(FetchError::NoMatrixInArchive {
        name: src.name.clone(),
    })
}

/// Reads the whole file; convenience for callers that fetch then parse.
pub fn read_to_string(path: &Path) -> Result<String, FetchError> {
    let mut s = String::new();
    File::open(path)?.read_to_string(&mut s)?;
    Ok(s)
}
