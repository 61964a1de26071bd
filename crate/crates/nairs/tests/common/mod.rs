#![allow(dead_code)]

use std::path::{Path, PathBuf};

use nairs::io::{save_dataset_dir, Dataset};
use nairs::snapshot::Snapshot;
use nairs_core::dataset::{Interaction, InteractionSet};
use nairs_core::model::Hyperparams;
use nairs_core::training::{fit, Silent};

pub const TOY_NAMES: [&str; 8] = [
    "The Matrix (1999)",
    "Matrix Reloaded (2003)",
    "Toy Story (1995)",
    "Heat (1995)",
    "Alien (1979)",
    "Aliens (1986)",
    "Brazil (1985)",
    "Casablanca (1942)",
];

/// Users 0-2 interact with items 0-3 and users 3-4 with items 4-7. The last
/// timestamp of each user falls on a different item, so leave-one-out holds
/// out 3, 2, 1, 7 and 6.
pub fn toy_interactions() -> InteractionSet {
    let orders: [[u32; 4]; 5] = [[0, 1, 2, 3], [0, 1, 3, 2], [0, 2, 3, 1], [4, 5, 6, 7], [4, 5, 7, 6]];
    let rows = orders
        .iter()
        .enumerate()
        .flat_map(|(u, items)| {
            items
                .iter()
                .enumerate()
                .map(move |(t, &i)| Interaction::at(u as u32, i, 100 * u as i64 + t as i64))
        })
        .collect();
    InteractionSet::with_dims(rows, 5, 8).unwrap()
}

pub fn toy_dataset() -> Dataset {
    Dataset {
        interactions: toy_interactions(),
        user_ids: (0..5).map(|u| format!("u{u}")).collect(),
        item_ids: (0..8).map(|i| format!("m{i}")).collect(),
        item_names: TOY_NAMES.iter().map(|s| s.to_string()).collect(),
    }
}

pub fn toy_hyperparams() -> Hyperparams {
    Hyperparams {
        dim: 8,
        attention_dim: 8,
        epochs: 200,
        learning_rate: 0.01,
        init_std: 0.1,
        batch_size: 32,
        seed: 7,
        ..Default::default()
    }
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub data: PathBuf,
    pub model: PathBuf,
    pub log: PathBuf,
}

/// A dataset directory and a snapshot trained on every toy interaction.
pub fn toy_fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy");
    save_dataset_dir(&toy_dataset(), &data).unwrap();
    let hp = toy_hyperparams();
    let (params, _) = fit(&toy_interactions(), &hp, &mut Silent).unwrap();
    let model = dir.path().join("toy.model");
    Snapshot::new(params, hp).save(&model).unwrap();
    let log = dir.path().join("events.jsonl");
    Fixture { data, model, log, dir }
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}
