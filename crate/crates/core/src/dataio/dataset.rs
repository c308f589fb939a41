//! Labelled collections of clouds and their on-disk directory layout.
//!
//! A dataset directory holds `categories.txt` (one line per category:
//! `<name> <part id>...`) and one `train/`, `val/` or `test/` subdirectory
//! per split containing `.pcdb` or `.pcd` clouds, read in file-name order.

use std::fs;
use std::path::Path;

use super::cloud_io::{read_cloud, write_cloud};
use crate::error::{Error, Result};
use crate::geom::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    clouds: Vec<PointCloud>,
    splits: Vec<Split>,
    category_names: Vec<String>,
    /// Global part ids owned by each category.
    part_table: Vec<Vec<u32>>,
}

impl Dataset {
    pub fn new(
        clouds: Vec<PointCloud>,
        splits: Vec<Split>,
        category_names: Vec<String>,
        part_table: Vec<Vec<u32>>,
    ) -> Result<Self> {
        if clouds.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if splits.len() != clouds.len() {
            return Err(Error::SizeMismatch(format!(
                "{} split tags for {} clouds",
                splits.len(),
                clouds.len()
            )));
        }
        if part_table.len() != category_names.len() {
            return Err(Error::SizeMismatch(format!(
                "{} part-table rows for {} categories",
                part_table.len(),
                category_names.len()
            )));
        }
        for (i, c) in clouds.iter().enumerate() {
            if let Some(cat) = c.category {
                let parts = part_table.get(cat as usize).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "cloud {i} has category {cat} but only {} categories exist",
                        category_names.len()
                    ))
                })?;
                if let Some(labels) = &c.part_labels {
                    if let Some(l) = labels.iter().find(|l| !parts.contains(l)) {
                        return Err(Error::InvalidArgument(format!(
                            "cloud {i}: part {l} does not belong to category {cat}"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            clouds,
            splits,
            category_names,
            part_table,
        })
    }

    /// Unlabelled training set.
    pub fn unlabeled(clouds: Vec<PointCloud>) -> Result<Self> {
        let splits = vec![Split::Train; clouds.len()];
        Self::new(clouds, splits, Vec::new(), Vec::new())
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn clouds(&self) -> &[PointCloud] {
        &self.clouds
    }

    pub fn cloud(&self, i: usize) -> &PointCloud {
        &self.clouds[i]
    }

    pub fn split(&self, i: usize) -> Split {
        self.splits[i]
    }

    pub fn category_names(&self) -> &[String] {
        &self.category_names
    }

    pub fn num_categories(&self) -> usize {
        self.category_names.len()
    }

    pub fn part_table(&self) -> &[Vec<u32>] {
        &self.part_table
    }

    pub fn num_parts(&self) -> usize {
        self.part_table
            .iter()
            .flatten()
            .max()
            .map_or(0, |&m| m as usize + 1)
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// New dataset with the given clouds, keeping the category tables.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            indices.iter().map(|&i| self.clouds[i].clone()).collect(),
            indices.iter().map(|&i| self.splits[i]).collect(),
            self.category_names.clone(),
            self.part_table.clone(),
        )
    }

    /// Category of cloud `i`, or an error naming `use_site`.
    pub fn category_of(&self, i: usize, use_site: &str) -> Result<usize> {
        self.clouds[i]
            .category
            .map(|c| c as usize)
            .ok_or_else(|| Error::MissingLabels(format!("{use_site}: cloud {i} has no category")))
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let table_path = dir.join("categories.txt");
        let (names, table) = if table_path.exists() {
            parse_categories(&fs::read_to_string(&table_path)?)?
        } else {
            (Vec::new(), Vec::new())
        };
        let mut clouds = Vec::new();
        let mut splits = Vec::new();
        for split in Split::ALL {
            let sub = dir.join(split.dir_name());
            if !sub.is_dir() {
                continue;
            }
            let mut files: Vec<_> = fs::read_dir(&sub)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            files.retain(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pcd" | "pcdb")));
            files.sort();
            for f in files {
                clouds.push(read_cloud(&f)?);
                splits.push(split);
            }
        }
        if clouds.is_empty() {
            return Err(Error::InvalidArgument(format!("no clouds found under {}", dir.display())));
        }
        Self::new(clouds, splits, names, table)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut table = String::new();
        for (name, parts) in self.category_names.iter().zip(&self.part_table) {
            table.push_str(name);
            for p in parts {
                table.push_str(&format!(" {p}"));
            }
            table.push('\n');
        }
        fs::write(dir.join("categories.txt"), table)?;
        for (i, (cloud, split)) in self.clouds.iter().zip(&self.splits).enumerate() {
            let sub = dir.join(split.dir_name());
            fs::create_dir_all(&sub)?;
            write_cloud(&sub.join(format!("{i:06}.pcdb")), cloud)?;
        }
        Ok(())
    }
}

fn parse_categories(text: &str) -> Result<(Vec<String>, Vec<Vec<u32>>)> {
    let mut names = Vec::new();
    let mut table = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut fields = line.split_whitespace();
        names.push(fields.next().expect("non-empty line").to_string());
        table.push(
            fields
                .map(|f| {
                    f.parse().map_err(|_| Error::MalformedRow {
                        line: i + 1,
                        reason: format!("bad part id {f:?}"),
                    })
                })
                .collect::<Result<_>>()?,
        );
    }
    Ok((names, table))
}
