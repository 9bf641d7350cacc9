//! N-way K-shot classification episodes: Gaussian clusters and Omniglot.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Batch, LossKind, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotTask {
    pub n_way: usize,
    pub k_shot: usize,
    /// `n_way * k_shot` rows, class-major.
    pub support: Batch,
    pub query: Batch,
    /// Identifier of each episode class, in label order.
    pub classes: Vec<String>,
}

/// Episode shape shared by every few-shot source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeShape {
    pub n_way: usize,
    pub k_shot: usize,
    pub query_per_class: usize,
}

impl EpisodeShape {
    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 {
            return Err(Error::Config(format!(
                "n_way must be >= 2, got {}",
                self.n_way
            )));
        }
        if self.k_shot == 0 || self.query_per_class == 0 {
            return Err(Error::Config(
                "k_shot and query_per_class must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn one_hot(label: usize, n: usize) -> Vec<f64> {
    let mut row = vec![0.0; n];
    row[label] = 1.0;
    row
}

/// Assembles support and query batches from per-class example lists, where the
/// first `k_shot` examples of each class go to the support set.
fn assemble(
    shape: EpisodeShape,
    per_class: Vec<Vec<Vec<f64>>>,
    classes: Vec<String>,
) -> Result<FewShotTask> {
    let mut sx = Vec::new();
    let mut sy = Vec::new();
    let mut qx = Vec::new();
    let mut qy = Vec::new();
    for (label, examples) in per_class.into_iter().enumerate() {
        for (j, x) in examples.into_iter().enumerate() {
            if j < shape.k_shot {
                sx.push(x);
                sy.push(one_hot(label, shape.n_way));
            } else {
                qx.push(x);
                qy.push(one_hot(label, shape.n_way));
            }
        }
    }
    Ok(FewShotTask {
        n_way: shape.n_way,
        k_shot: shape.k_shot,
        support: Batch::new(
            Matrix::from_rows(&sx)?,
            Matrix::from_rows(&sy)?,
            LossKind::CrossEntropy,
        )?,
        query: Batch::new(
            Matrix::from_rows(&qx)?,
            Matrix::from_rows(&qy)?,
            LossKind::CrossEntropy,
        )?,
        classes,
    })
}

/// Synthetic episode family: one unit-variance isotropic Gaussian per class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticFamily {
    pub n_way: usize,
    pub k_shot: usize,
    pub query_per_class: usize,
    pub dim: usize,
    /// Cluster centres are redrawn until pairwise distances reach this value.
    #[serde(default)]
    pub min_center_distance: f64,
}

const CENTER_ATTEMPTS: usize = 10_000;

impl SyntheticFamily {
    pub fn shape(&self) -> EpisodeShape {
        EpisodeShape {
            n_way: self.n_way,
            k_shot: self.k_shot,
            query_per_class: self.query_per_class,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shape().validate()?;
        if self.dim < 2 {
            return Err(Error::Config(format!("dim must be >= 2, got {}", self.dim)));
        }
        if !(self.min_center_distance >= 0.0 && self.min_center_distance.is_finite()) {
            return Err(Error::Config(
                "min_center_distance must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Draws the episode's cluster centres, uniform in `[-5, 5]^dim`.
    pub fn sample_centers<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(self.n_way);
        let min_sq = self.min_center_distance * self.min_center_distance;
        for _ in 0..self.n_way {
            let mut accepted = None;
            for _ in 0..CENTER_ATTEMPTS {
                let c: Vec<f64> = (0..self.dim)
                    .map(|_| rng.random_range(-5.0..=5.0))
                    .collect();
                if centers.iter().all(|o| sq_dist(o, &c) >= min_sq) {
                    accepted = Some(c);
                    break;
                }
            }
            centers.push(accepted.ok_or_else(|| {
                Error::InsufficientData(format!(
                    "could not place {} centres {} apart in [-5,5]^{}",
                    self.n_way, self.min_center_distance, self.dim
                ))
            })?);
        }
        Ok(centers)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<FewShotTask> {
        self.validate()?;
        let centers = self.sample_centers(rng)?;
        let per_class_count = self.k_shot + self.query_per_class;
        let per_class = centers
            .iter()
            .map(|c| {
                (0..per_class_count)
                    .map(|_| {
                        c.iter()
                            .map(|&m| m + rng.sample::<f64, _>(StandardNormal))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let classes = (0..self.n_way).map(|i| format!("cluster-{i}")).collect();
        assemble(self.shape(), per_class, classes)
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn sample_synthetic_classification<R: Rng + ?Sized>(
    n_way: usize,
    k_shot: usize,
    query_per_class: usize,
    dim: usize,
    rng: &mut R,
) -> Result<FewShotTask> {
    SyntheticFamily {
        n_way,
        k_shot,
        query_per_class,
        dim,
        min_center_distance: 0.0,
    }
    .sample(rng)
}

/// Downsampled Omniglot characters keyed by `"alphabet/character"`.
#[derive(Debug, Clone, PartialEq)]
pub struct OmniglotStore {
    pub classes: BTreeMap<String, Vec<Vec<f64>>>,
    pub image_side: usize,
    /// Files that could not be decoded.
    pub skipped: usize,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    out.sort();
    Ok(out)
}

/// Grayscale, bilinear resize to `side x side`, inverted so ink is near 1.
pub fn preprocess_image(path: &Path, side: usize) -> Result<Vec<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?
        .to_luma8();
    let small = imageops::resize(&img, side as u32, side as u32, FilterType::Triangle);
    Ok(small
        .pixels()
        .map(|p| 1.0 - f64::from(p.0[0]) / 255.0)
        .collect())
}

/// Reads an `alphabet/character/*.png` tree.
pub fn load_omniglot(root: impl AsRef<Path>, image_side: usize) -> Result<OmniglotStore> {
    let root = root.as_ref();
    if image_side == 0 {
        return Err(Error::Config("image_side must be positive".into()));
    }
    let mut classes = BTreeMap::new();
    let mut skipped = 0;
    for alphabet in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        for character in sorted_entries(&alphabet)?
            .into_iter()
            .filter(|p| p.is_dir())
        {
            let mut images = Vec::new();
            for file in sorted_entries(&character)? {
                let is_png = file
                    .extension()
                    .is_some_and(|e| e.eq_ignore_ascii_case("png"));
                if !is_png {
                    continue;
                }
                match preprocess_image(&file, image_side) {
                    Ok(img) => images.push(img),
                    Err(e) => {
                        log::warn!("skipping {}: {e}", file.display());
                        skipped += 1;
                    }
                }
            }
            if images.is_empty() {
                continue;
            }
            let id = format!(
                "{}/{}",
                alphabet.file_name().unwrap_or_default().to_string_lossy(),
                character.file_name().unwrap_or_default().to_string_lossy()
            );
            classes.insert(id, images);
        }
    }
    if classes.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no readable Omniglot images under {}",
            root.display()
        )));
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} unreadable image files");
    }
    Ok(OmniglotStore {
        classes,
        image_side,
        skipped,
    })
}

pub fn sample_omniglot_task<R: Rng + ?Sized>(
    store: &OmniglotStore,
    shape: EpisodeShape,
    rng: &mut R,
) -> Result<FewShotTask> {
    shape.validate()?;
    let needed = shape.k_shot + shape.query_per_class;
    let eligible: Vec<(&String, &Vec<Vec<f64>>)> = store
        .classes
        .iter()
        .filter(|(_, imgs)| imgs.len() >= needed)
        .collect();
    if eligible.len() < shape.n_way {
        return Err(Error::InsufficientData(format!(
            "{} classes have >= {needed} images, episode needs {}",
            eligible.len(),
            shape.n_way
        )));
    }
    let mut per_class = Vec::with_capacity(shape.n_way);
    let mut classes = Vec::with_capacity(shape.n_way);
    for ci in index::sample(rng, eligible.len(), shape.n_way) {
        let (id, images) = eligible[ci];
        let picks = index::sample(rng, images.len(), needed);
        per_class.push(picks.iter().map(|i| images[i].clone()).collect());
        classes.push(id.clone());
    }
    assemble(shape, per_class, classes)
}
