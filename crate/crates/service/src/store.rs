//! Content-addressed PNG store: `images/{content_hash}.png`.

use std::io::Write;
use std::path::{Path, PathBuf};

use lineup_core::imagecore::{content_hash, encode_png, Image};

use crate::error::{Result, ServiceError};

#[derive(Clone, Debug)]
pub struct ImageStore {
    dir: PathBuf,
}

pub fn image_url(hash: &str) -> String {
    format!("/images/{hash}.png")
}

fn is_hash(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

impl ImageStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.png"))
    }

    /// Stores `img` unless an image with the same hash is already present.
    pub fn put(&self, img: &Image) -> Result<String> {
        let hash = content_hash(img);
        let path = self.path_for(&hash);
        if path.exists() {
            return Ok(hash);
        }
        let bytes = encode_png(img)?;
        let tmp = self.dir.join(format!(".{hash}.{}.tmp", uuid::Uuid::new_v4().simple()));
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        drop(f);
        std::fs::rename(&tmp, &path)?;
        Ok(hash)
    }

    pub fn get(&self, hash: &str) -> Result<Vec<u8>> {
        if !is_hash(hash) {
            return Err(ServiceError::NotFound(format!("image {hash}")));
        }
        std::fs::read(self.path_for(hash)).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ServiceError::NotFound(format!("image {hash}")),
            _ => ServiceError::Storage(e),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lineup_core::imagecore::decode_png;

    #[test]
    fn put_is_idempotent_and_content_addressed() {
        let dir = tempfile::tempdir().unwrap();
        let store = ImageStore::open(dir.path().join("images")).unwrap();
        let img = Image::from_fn(3, 2, |x, y, c| (x + y + c) as f64 / 6.0).unwrap();
        let a = store.put(&img).unwrap();
        let b = store.put(&img).unwrap();
        assert_eq!(a, b);
        let bytes = store.get(&a).unwrap();
        assert_eq!(content_hash(&decode_png(&bytes).unwrap()), a);
        assert_eq!(image_url(&a), format!("/images/{a}.png"));
    }

    #[test]
    fn unknown_or_malformed_hashes_are_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let store = ImageStore::open(dir.path()).unwrap();
        assert!(matches!(store.get(&"0".repeat(64)), Err(ServiceError::NotFound(_))));
        assert!(matches!(store.get("../etc/passwd"), Err(ServiceError::NotFound(_))));
    }
}
