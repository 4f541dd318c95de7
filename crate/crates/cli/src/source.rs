//! `--matrix` resolution: a literal `stencil:s`, a path on disk, or a
//! `Group/Name` pair fetched from the collection (cached under
//! `SPARSEBENCH_CACHE`).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sparsebench::io::{fetch_matrix, read_matrix_market, MatrixSource};
use sparsebench::matrix::{gen_stencil5, CsrMatrix};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatrixRef {
    /// `stencil:s` — the 5-point s x s grid generated in memory.
    Stencil(usize),
    /// A Matrix Market file already on disk.
    File(PathBuf),
    /// A `Group/Name` collection entry, downloaded on first use.
    Collection(String),
}

impl MatrixRef {
    pub fn parse(spec: &str) -> Result<MatrixRef> {
        if let Some(s) = spec.strip_prefix("stencil:") {
            let s: usize = s
                .parse()
                .with_context(|| format!("bad stencil size in {spec:?}"))?;
            return Ok(MatrixRef::Stencil(s));
        }
        if Path::new(spec).exists() {
            return Ok(MatrixRef::File(PathBuf::from(spec)));
        }
        if MatrixSource::from_name(spec).is_ok() {
            return Ok(MatrixRef::Collection(spec.to_string()));
        }
        bail!(
            "matrix {spec:?} is not a stencil:<s> spec, an existing file, \
             or a Group/Name collection entry"
        );
    }

    pub fn load(&self) -> Result<CsrMatrix> {
        match self {
            MatrixRef::Stencil(s) => {
                gen_stencil5(*s).with_context(|| format!("generating stencil:{s}"))
            }
            MatrixRef::File(path) => load_file(path),
            MatrixRef::Collection(name) => {
                let src = MatrixSource::from_name(name)?;
                let path = fetch_matrix(&src).with_context(|| format!("fetching {name}"))?;
                load_file(&path)
            }
        }
    }
}

fn load_file(path: &Path) -> Result<CsrMatrix> {
    let coo = read_matrix_market(path)?;
    CsrMatrix::from_coo(&coo).with_context(|| format!("assembling {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    #[test]
    fn parse_dispatches_on_shape() {
        assert_eq!(MatrixRef::parse("stencil:32").unwrap(), MatrixRef::Stencil(32));
        assert_eq!(
            MatrixRef::parse("HB/bcsstk01").unwrap(),
            MatrixRef::Collection("HB/bcsstk01".to_string())
        );
        assert!(MatrixRef::parse("stencil:not-a-number").is_err());
        assert!(MatrixRef::parse("no/such/shape").is_err());
        assert!(MatrixRef::parse("").is_err());
    }

    #[test]
    fn existing_file_wins_over_collection_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.mtx");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "%%MatrixMarket matrix coordinate real general").unwrap();
        writeln!(f, "2 2 2").unwrap();
        writeln!(f, "1 1 5.0").unwrap();
        writeln!(f, "2 2 7.0").unwrap();
        drop(f);

        let spec = path.to_str().unwrap();
        let r = MatrixRef::parse(spec).unwrap();
        assert!(matches!(r, MatrixRef::File(_)));
        let a = r.load().unwrap();
        assert_eq!((a.nrows(), a.ncols(), a.nnz()), (2, 2, 2));
    }

    #[test]
    fn stencil_loads() {
        let a = MatrixRef::parse("stencil:3").unwrap().load().unwrap();
        assert_eq!(a.nrows(), 9);
        assert_eq!(a.nnz(), 33);
    }
}
