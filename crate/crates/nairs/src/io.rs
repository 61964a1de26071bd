//! Interaction file parsing and the normalized dataset directory.
//!
//! Input records are `user<sep>item<sep>rating[<sep>timestamp]` where the
//! separator is `::` (MovieLens `.dat`), whitespace (TSV) or `,` (CSV). Every
//! observed rating becomes a positive; raw ids are remapped to dense 0-based
//! ids in order of first appearance.
//!
//! A dataset directory holds three tab-separated text files:
//!
//! ```text
//! interactions.tsv   # nairs-interactions v1 users=<M> items=<N>
//!                    <user>\t<item>\t<timestamp or ->      (dense ids)
//! users.tsv          <dense id>\t<raw id>
//! items.tsv          <dense id>\t<raw id>\t<display name, may be empty>
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nairs_core::dataset::{Interaction, InteractionSet};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    MovielensDat,
    Tsv,
    Csv,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "movielens_dat" | "dat" => Ok(Format::MovielensDat),
            "tsv" => Ok(Format::Tsv),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format `{other}` (expected movielens_dat, tsv or csv)")),
        }
    }
}

impl Format {
    /// Guesses the format from the file extension and first line.
    pub fn detect(path: &Path, first_line: &str) -> Format {
        if first_line.contains("::") || path.extension().is_some_and(|e| e == "dat") {
            Format::MovielensDat
        } else if path.extension().is_some_and(|e| e == "csv") {
            Format::Csv
        } else {
            Format::Tsv
        }
    }

    fn split<'a>(self, line: &'a str) -> Vec<&'a str> {
        match self {
            Format::MovielensDat => line.split("::").map(str::trim).collect(),
            Format::Tsv => line.split_whitespace().collect(),
            Format::Csv => line.split(',').map(str::trim).collect(),
        }
    }
}

/// An interaction set with the raw ids it was remapped from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub interactions: InteractionSet,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    /// Display name per dense item id; empty when unknown.
    pub item_names: Vec<String>,
}

impl Dataset {
    pub fn item_name(&self, item: u32) -> &str {
        match self.item_names.get(item as usize) {
            Some(n) if !n.is_empty() => n,
            _ => self.item_ids.get(item as usize).map(String::as_str).unwrap_or(""),
        }
    }

    pub fn user_index(&self, raw: &str) -> Option<u32> {
        self.user_ids.iter().position(|u| u == raw).map(|i| i as u32)
    }

    /// Attaches display names keyed by raw item id.
    pub fn attach_names(&mut self, names: &HashMap<String, String>) {
        self.item_names = self
            .item_ids
            .iter()
            .map(|raw| names.get(raw).cloned().unwrap_or_default())
            .collect();
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parses an interaction file.
pub fn load_interactions(path: &Path, format: Format) -> Result<Dataset> {
    let text = read(path)?;
    parse_interactions(&text, format, path)
}

pub fn parse_interactions(text: &str, format: Format, path: &Path) -> Result<Dataset> {
    let mut users: HashMap<String, u32> = HashMap::new();
    let mut items: HashMap<String, u32> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut rows = Vec::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        let fields = format.split(line);
        if fields.len() < 3 || fields.len() > 4 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected user, item, rating[, timestamp], found {} fields", fields.len()),
            ));
        }
        if fields[2].parse::<f64>().is_err() {
            // A CSV header line such as `userId,movieId,rating,timestamp`.
            if format == Format::Csv && rows.is_empty() && lineno == 1 {
                continue;
            }
            return Err(parse_err(path, lineno, format!("rating `{}` is not a number", fields[2])));
        }
        let timestamp = match fields.get(3) {
            Some(t) => Some(
                t.parse::<i64>()
                    .or_else(|_| t.parse::<f64>().map(|f| f as i64))
                    .map_err(|_| parse_err(path, lineno, format!("timestamp `{t}` is not an integer")))?,
            ),
            None => None,
        };
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(parse_err(path, lineno, "empty user or item id"));
        }
        let user = intern(&mut users, &mut user_ids, fields[0]);
        let item = intern(&mut items, &mut item_ids, fields[1]);
        rows.push(Interaction { user, item, timestamp });
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }
    let interactions = InteractionSet::with_dims(rows, user_ids.len() as u32, item_ids.len() as u32)?;
    let item_names = vec![String::new(); item_ids.len()];
    Ok(Dataset {
        interactions,
        user_ids,
        item_ids,
        item_names,
    })
}

fn intern(map: &mut HashMap<String, u32>, ids: &mut Vec<String>, raw: &str) -> u32 {
    if let Some(&id) = map.get(raw) {
        return id;
    }
    let id = ids.len() as u32;
    map.insert(raw.to_string(), id);
    ids.push(raw.to_string());
    id
}

/// Reads display names keyed by raw item id. Accepts `id\tname` lines and
/// MovieLens `id::title::genres` lines.
pub fn load_item_names(path: &Path) -> Result<HashMap<String, String>> {
    // MovieLens movie files are Latin-1 in older releases.
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = match String::from_utf8(bytes) {
        Ok(s) => s,
        Err(e) => e.into_bytes().iter().map(|&b| b as char).collect(),
    };
    let mut names = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, name) = if line.contains("::") {
            let mut parts = line.split("::");
            (parts.next(), parts.next())
        } else if let Some((a, b)) = line.split_once('\t') {
            (Some(a), Some(b))
        } else if let Some((a, b)) = line.split_once('|') {
            // ml-100k u.item
            (Some(a), b.split('|').next())
        } else {
            (None, None)
        };
        match (id, name) {
            (Some(id), Some(name)) => {
                names.insert(id.trim().to_string(), name.trim().to_string());
            }
            _ => return Err(parse_err(path, idx + 1, "expected `id<TAB>name`")),
        }
    }
    Ok(names)
}

const INTERACTIONS_FILE: &str = "interactions.tsv";
const USERS_FILE: &str = "users.tsv";
const ITEMS_FILE: &str = "items.tsv";
const HEADER_TAG: &str = "# nairs-interactions v1";

fn write(path: PathBuf, contents: &str) -> Result<()> {
    fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the normalized dataset directory.
pub fn save_dataset_dir(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let set = &dataset.interactions;
    let mut out = format!("{HEADER_TAG} users={} items={}\n", set.num_users(), set.num_items());
    for i in set.interactions() {
        match i.timestamp {
            Some(t) => writeln!(out, "{}\t{}\t{}", i.user, i.item, t),
            None => writeln!(out, "{}\t{}\t-", i.user, i.item),
        }
        .expect("write to String");
    }
    write(dir.join(INTERACTIONS_FILE), &out)?;

    let mut users = String::new();
    for (i, raw) in dataset.user_ids.iter().enumerate() {
        writeln!(users, "{i}\t{raw}").expect("write to String");
    }
    write(dir.join(USERS_FILE), &users)?;

    let mut items = String::new();
    for (i, raw) in dataset.item_ids.iter().enumerate() {
        let name = dataset.item_names.get(i).map(String::as_str).unwrap_or("");
        writeln!(items, "{i}\t{raw}\t{}", name.replace(['\t', '\n'], " ")).expect("write to String");
    }
    write(dir.join(ITEMS_FILE), &items)
}

fn parse_field<T: FromStr>(path: &Path, line: usize, field: Option<&str>, what: &str) -> Result<T> {
    field
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| parse_err(path, line, format!("bad {what}")))
}

/// Reads a directory written by [`save_dataset_dir`].
pub fn load_dataset_dir(dir: &Path) -> Result<Dataset> {
    let path = dir.join(INTERACTIONS_FILE);
    let text = read(&path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::EmptyDataset(path.clone()))?;
    let rest = header
        .strip_prefix(HEADER_TAG)
        .ok_or_else(|| parse_err(&path, 1, "missing `# nairs-interactions v1` header"))?;
    let mut dims = rest.split_whitespace().filter_map(|kv| kv.split_once('='));
    let (num_users, num_items) = match (dims.next(), dims.next()) {
        (Some(("users", u)), Some(("items", i))) => (
            parse_field::<u32>(&path, 1, Some(u), "user count")?,
            parse_field::<u32>(&path, 1, Some(i), "item count")?,
        ),
        _ => return Err(parse_err(&path, 1, "header must carry users=<M> items=<N>")),
    };

    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut f = line.split('\t');
        let user = parse_field(&path, idx + 1, f.next(), "user id")?;
        let item = parse_field(&path, idx + 1, f.next(), "item id")?;
        let timestamp = match f.next() {
            Some("-") | None => None,
            t => Some(parse_field(&path, idx + 1, t, "timestamp")?),
        };
        rows.push(Interaction { user, item, timestamp });
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset(path));
    }
    let interactions = InteractionSet::with_dims(rows, num_users, num_items)?;

    let users_path = dir.join(USERS_FILE);
    let mut user_ids = vec![String::new(); num_users as usize];
    for (idx, line) in read(&users_path)?.lines().enumerate() {
        let mut f = line.splitn(2, '\t');
        let id: usize = parse_field(&users_path, idx + 1, f.next(), "user id")?;
        let slot = user_ids
            .get_mut(id)
            .ok_or_else(|| parse_err(&users_path, idx + 1, "user id out of range"))?;
        *slot = f.next().unwrap_or("").to_string();
    }

    let items_path = dir.join(ITEMS_FILE);
    let mut item_ids = vec![String::new(); num_items as usize];
    let mut item_names = vec![String::new(); num_items as usize];
    for (idx, line) in read(&items_path)?.lines().enumerate() {
        let mut f = line.splitn(3, '\t');
        let id: usize = parse_field(&items_path, idx + 1, f.next(), "item id")?;
        if id >= item_ids.len() {
            return Err(parse_err(&items_path, idx + 1, "item id out of range"));
        }
        item_ids[id] = f.next().unwrap_or("").to_string();
        item_names[id] = f.next().unwrap_or("").to_string();
    }

    let names_for_core = item_ids
        .iter()
        .zip(&item_names)
        .map(|(raw, n)| if n.is_empty() { raw.clone() } else { n.clone() })
        .collect();
    Ok(Dataset {
        interactions: interactions.with_item_names(names_for_core),
        user_ids,
        item_ids,
        item_names,
    })
}

/// Loads either a dataset directory or a raw interaction file.
pub fn load_any(path: &Path, format: Option<Format>) -> Result<Dataset> {
    if path.is_dir() {
        return load_dataset_dir(path);
    }
    let format = match format {
        Some(f) => f,
        None => {
            let text = read(path)?;
            Format::detect(path, text.lines().next().unwrap_or(""))
        }
    };
    load_interactions(path, format)
}
