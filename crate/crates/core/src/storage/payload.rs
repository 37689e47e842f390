//! Object byte backends. Simulation keeps metadata only; service mode
//! writes bytes under a root directory.

use std::collections::HashMap;
use std::io;
use std::path::{Component, Path, PathBuf};

pub trait PayloadStore: Send {
    fn write(&mut self, bucket: &str, key: &str, bytes: &[u8]) -> io::Result<()>;
    fn read(&self, bucket: &str, key: &str) -> io::Result<Option<Vec<u8>>>;
}

/// Discards bytes.
#[derive(Debug, Default)]
pub struct MetadataOnly;

impl PayloadStore for MetadataOnly {
    fn write(&mut self, _bucket: &str, _key: &str, _bytes: &[u8]) -> io::Result<()> {
        Ok(())
    }

    fn read(&self, _bucket: &str, _key: &str) -> io::Result<Option<Vec<u8>>> {
        Ok(None)
    }
}

#[derive(Debug, Default)]
pub struct InMemory {
    blobs: HashMap<(String, String), Vec<u8>>,
}

impl PayloadStore for InMemory {
    fn write(&mut self, bucket: &str, key: &str, bytes: &[u8]) -> io::Result<()> {
        self.blobs.insert((bucket.to_owned(), key.to_owned()), bytes.to_vec());
        Ok(())
    }

    fn read(&self, bucket: &str, key: &str) -> io::Result<Option<Vec<u8>>> {
        Ok(self.blobs.get(&(bucket.to_owned(), key.to_owned())).cloned())
    }
}

#[derive(Debug)]
pub struct OnDisk {
    root: PathBuf,
}

impl OnDisk {
    pub fn new(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(OnDisk { root })
    }

    fn path(&self, bucket: &str, key: &str) -> io::Result<PathBuf> {
        let rel = Path::new(bucket).join(key);
        if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "path escapes payload root"));
        }
        Ok(self.root.join(rel))
    }
}

impl PayloadStore for OnDisk {
    fn write(&mut self, bucket: &str, key: &str, bytes: &[u8]) -> io::Result<()> {
        let p = self.path(bucket, key)?;
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(p, bytes)
    }

    fn read(&self, bucket: &str, key: &str) -> io::Result<Option<Vec<u8>>> {
        match std::fs::read(self.path(bucket, key)?) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }
}
