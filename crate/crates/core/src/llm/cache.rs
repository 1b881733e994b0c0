//! Content-addressed response cache.
//!
//! One file per request digest at `<dir>/<first two hex chars>/<digest>`,
//! holding the canonical request bytes, a separator line and the response
//! text. Entries are written to a temp file and renamed into place.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use async_trait::async_trait;

use super::retry::{complete_with_retry, RetryPolicy};
use super::{
    canonical_bytes, canonical_digest, CompletionClient, CompletionRequest, CompletionResponse,
    ProviderError,
};

const SEPARATOR: &str = "\n-----8<----- pragmabench response -----8<-----\n";

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheStats {
    pub entries: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ResponseCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entry_path(&self, digest: &str) -> PathBuf {
        self.dir.join(&digest[..2]).join(digest)
    }

    fn entry_prefix(request: &CompletionRequest) -> Vec<u8> {
        let mut prefix = canonical_bytes(request);
        prefix.extend_from_slice(SEPARATOR.as_bytes());
        prefix
    }

    /// Stored response text, or `None` on a miss. Unreadable or mismatched
    /// entries count as misses.
    pub async fn get(&self, request: &CompletionRequest) -> Option<String> {
        let path = self.entry_path(&canonical_digest(request));
        let bytes = match tokio::fs::read(&path).await {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return None,
            Err(e) => {
                tracing::warn!(path = %path.display(), error = %e, "unreadable cache entry");
                return None;
            }
        };
        let prefix = Self::entry_prefix(request);
        let text = bytes
            .strip_prefix(prefix.as_slice())
            .and_then(|rest| String::from_utf8(rest.to_vec()).ok());
        if text.is_none() {
            tracing::warn!(path = %path.display(), "corrupt cache entry, refetching");
        }
        text
    }

    pub async fn put(&self, request: &CompletionRequest, text: &str) -> std::io::Result<()> {
        let digest = canonical_digest(request);
        let path = self.entry_path(&digest);
        let parent = path.parent().expect("entry path has a parent");
        tokio::fs::create_dir_all(parent).await?;

        let mut contents = Self::entry_prefix(request);
        contents.extend_from_slice(text.as_bytes());
        let tmp = parent.join(format!(
            ".{digest}.{}.{}.tmp",
            std::process::id(),
            TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        tokio::fs::write(&tmp, &contents).await?;
        tokio::fs::rename(&tmp, &path).await
    }

    fn entry_files(&self) -> std::io::Result<Vec<PathBuf>> {
        let mut files = Vec::new();
        let top = match std::fs::read_dir(&self.dir) {
            Ok(top) => top,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(files),
            Err(e) => return Err(e),
        };
        for fan in top {
            let fan = fan?;
            let name = fan.file_name();
            let name = name.to_string_lossy();
            if !fan.file_type()?.is_dir() || name.len() != 2 || !name.chars().all(|c| c.is_ascii_hexdigit()) {
                continue;
            }
            for entry in std::fs::read_dir(fan.path())? {
                let entry = entry?;
                let file_name = entry.file_name();
                let file_name = file_name.to_string_lossy();
                if entry.file_type()?.is_file()
                    && file_name.len() == 64
                    && file_name.starts_with(name.as_ref())
                {
                    files.push(entry.path());
                }
            }
        }
        files.sort();
        Ok(files)
    }

    pub fn stats(&self) -> std::io::Result<CacheStats> {
        let files = self.entry_files()?;
        let mut bytes = 0;
        for f in &files {
            bytes += std::fs::metadata(f)?.len();
        }
        Ok(CacheStats {
            entries: files.len() as u64,
            bytes,
        })
    }

    /// Removes every entry; returns how many were removed.
    pub fn clear(&self) -> std::io::Result<u64> {
        let files = self.entry_files()?;
        for f in &files {
            std::fs::remove_file(f)?;
            if let Some(parent) = f.parent() {
                // Only succeeds once the fan-out directory is empty.
                let _ = std::fs::remove_dir(parent);
            }
        }
        Ok(files.len() as u64)
    }
}

pub async fn cached_complete<C: CompletionClient + ?Sized>(
    client: &C,
    request: &CompletionRequest,
    cache: &ResponseCache,
    policy: &RetryPolicy,
) -> Result<CompletionResponse, ProviderError> {
    request.validate()?;
    if let Some(text) = cache.get(request).await {
        return Ok(CompletionResponse {
            text,
            from_cache: true,
            ..Default::default()
        });
    }
    let mut response = complete_with_retry(client, request, policy).await?;
    response.from_cache = false;
    if let Err(e) = cache.put(request, &response.text).await {
        tracing::warn!(dir = %cache.dir().display(), error = %e, "failed to persist cache entry");
    }
    Ok(response)
}

/// Wraps a client with the response cache and a retry policy.
pub struct CachingClient<C> {
    inner: C,
    cache: ResponseCache,
    policy: RetryPolicy,
}

impl<C> CachingClient<C> {
    pub fn new(inner: C, cache: ResponseCache, policy: RetryPolicy) -> Self {
        CachingClient { inner, cache, policy }
    }
}

#[async_trait]
impl<C: CompletionClient> CompletionClient for CachingClient<C> {
    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        cached_complete(&self.inner, request, &self.cache, &self.policy).await
    }

    fn wants_sample_tags(&self) -> bool {
        self.inner.wants_sample_tags()
    }
}
