//! Persisted similarity cache.
//!
//! ```text
//! # nairs-cache v1
//! version = <snapshot version>
//! depth = <K>
//! users = <M>
//! items = <N>
//! u <id> <neighbor>:<similarity> ...     (`u <id> -` when absent)
//! i <id> <neighbor>:<similarity> ...
//! ```
//!
//! Similarities are written in shortest round-trip form, so a loaded cache
//! equals the one that was saved.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nairs_core::dataset::Histories;
use nairs_core::model::{Hyperparams, ModelParams};
use nairs_core::retrieval::{build_cache, SimilarityCache};

use crate::config;
use crate::error::{Error, Result};
use crate::snapshot::write_atomic;

const HEADER: &str = "# nairs-cache v1";

type Lists = Vec<Option<Vec<(u32, f64)>>>;

pub fn encode(cache: &SimilarityCache) -> String {
    let mut out = format!(
        "{HEADER}\nversion = {}\ndepth = {}\nusers = {}\nitems = {}\n",
        cache.version,
        cache.depth,
        cache.users.len(),
        cache.items.len()
    );
    for (tag, lists) in [("u", &cache.users), ("i", &cache.items)] {
        for (id, list) in lists.iter().enumerate() {
            write!(out, "{tag} {id}").expect("write to String");
            match list {
                None => out.push_str(" -"),
                Some(l) => {
                    for (n, s) in l {
                        write!(out, " {n}:{s:?}").expect("write to String");
                    }
                }
            }
            out.push('\n');
        }
    }
    out
}

fn bad(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: "cache".into(),
        line,
        message: msg.into(),
    }
}

pub fn decode(text: &str) -> Result<SimilarityCache> {
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l) != Some(HEADER) {
        return Err(bad(1, "missing `# nairs-cache v1` header"));
    }
    let mut kv = Vec::new();
    for _ in 0..4 {
        let (idx, line) = lines.next().ok_or_else(|| bad(0, "truncated header"))?;
        let mut pairs = config::parse_pairs(line)?;
        kv.push(pairs.pop().ok_or_else(|| bad(idx + 1, "expected `key = value`"))?);
    }
    let get = |key: &str| {
        kv.iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| bad(0, format!("missing `{key}`")))
    };
    let count = |key: &str| -> Result<usize> { get(key)?.parse().map_err(|_| bad(0, format!("bad `{key}`"))) };
    let version = get("version")?;
    let depth = count("depth")?;
    let mut users: Lists = vec![None; count("users")?];
    let mut items: Lists = vec![None; count("items")?];

    for (idx, line) in lines {
        let lineno = idx + 1;
        let mut fields = line.split(' ');
        let lists = match fields.next() {
            Some("u") => &mut users,
            Some("i") => &mut items,
            _ => return Err(bad(lineno, "expected `u` or `i` row")),
        };
        let id: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .filter(|&id| id < lists.len())
            .ok_or_else(|| bad(lineno, "bad id"))?;
        let rest: Vec<&str> = fields.collect();
        if rest == ["-"] {
            continue;
        }
        let list = rest
            .iter()
            .map(|f| {
                let (n, s) = f.split_once(':')?;
                Some((n.parse().ok()?, s.parse().ok()?))
            })
            .collect::<Option<Vec<(u32, f64)>>>()
            .ok_or_else(|| bad(lineno, "bad neighbor entry"))?;
        lists[id] = Some(list);
    }
    Ok(SimilarityCache {
        version,
        depth,
        users,
        items,
    })
}

pub fn save(cache: &SimilarityCache, path: &Path) -> Result<()> {
    write_atomic(path, encode(cache).as_bytes())
}

pub fn load(path: &Path) -> Result<SimilarityCache> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode(&text).map_err(|e| match e {
        Error::Parse { line, message, .. } => Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        },
        other => other,
    })
}

/// Loads the cache at `path` when it matches `version` and `depth`;
/// otherwise rebuilds it and writes it back. Returns the cache and whether it
/// was rebuilt.
pub fn load_or_build(
    path: &Path,
    version: &str,
    depth: usize,
    params: &ModelParams,
    histories: &Histories,
    hp: &Hyperparams,
) -> Result<(SimilarityCache, bool)> {
    match load(path) {
        Ok(c) if c.version == version && c.depth == depth => return Ok((c, false)),
        Ok(c) => tracing::warn!(cached = %c.version, live = %version, "similarity cache is stale; rebuilding"),
        Err(Error::Io { .. }) => tracing::info!(path = %path.display(), "no similarity cache; building"),
        Err(e) => tracing::warn!(error = %e, "unreadable similarity cache; rebuilding"),
    }
    let cache = build_cache(params, histories, hp, depth, version.to_string());
    save(&cache, path)?;
    Ok((cache, true))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let cache = SimilarityCache {
            version: "abc".into(),
            depth: 2,
            users: vec![Some(vec![(1, 1.0 / 3.0), (2, 0.1 + 0.2)]), None, Some(vec![])],
            items: vec![Some(vec![(1, 2.0)]), Some(vec![(0, 2.0)])],
        };
        assert_eq!(decode(&encode(&cache)).unwrap(), cache);
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode("hello").is_err());
        let text = format!("{HEADER}\nversion = v\ndepth = 1\nusers = 1\nitems = 0\nu 5 -\n");
        assert!(decode(&text).is_err());
    }
}
