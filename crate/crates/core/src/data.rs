//! Datasets: IDX parsing, class-incremental task splits, seeded batching and
//! a synthetic image generator for convolutional runs.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Purpose};
use crate::tensor::{Batch, Matrix};

/// Raw contents of an unsigned-byte IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format { offset, detail: "truncated header".into() })
}

/// Parses an IDX buffer with unsigned-byte payload (magic `0x0000_08NN`, NN = rank).
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let magic = read_be_u32(bytes, 0)?;
    if magic >> 8 != 0x08 || !(1..=4).contains(&(magic & 0xff)) {
        return Err(Error::Format { offset: 0, detail: format!("bad magic 0x{magic:08x}") });
    }
    let rank = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(rank);
    for d in 0..rank {
        dims.push(read_be_u32(bytes, 4 + 4 * d)? as usize);
    }
    let header = 4 + 4 * rank;
    let len: usize = dims.iter().product();
    let payload = &bytes[header.min(bytes.len())..];
    if payload.len() < len {
        return Err(Error::Format {
            offset: bytes.len(),
            detail: format!("payload truncated: expected {len} bytes, found {}", payload.len()),
        });
    }
    if payload.len() > len {
        return Err(Error::Format { offset: header + len, detail: "trailing bytes after payload".into() });
    }
    Ok(IdxArray { dims, data: payload.to_vec() })
}

pub fn write_idx(array: &IdxArray) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * array.dims.len() + array.data.len());
    out.extend_from_slice(&(0x0800u32 | array.dims.len() as u32).to_be_bytes());
    for &d in &array.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxArray> {
    parse_idx(&fs::read(path)?)
}

/// Images (one per row, scaled to [0,1]) with their labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub dim: usize,
    pub images: Vec<f32>,
    pub labels: Vec<u32>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, n: usize) -> &[f32] {
        &self.images[n * self.dim..(n + 1) * self.dim]
    }

    /// Gathers the given samples into a batch.
    pub fn gather(&self, indices: &[usize]) -> Result<Batch> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &n in indices {
            data.extend_from_slice(self.image(n));
            labels.push(self.labels[n]);
        }
        Batch::new(Matrix::from_vec(indices.len(), self.dim, data)?, labels)
    }

    fn select(&self, keep: impl Fn(u32) -> bool) -> Split {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for n in 0..self.len() {
            if keep(self.labels[n]) {
                images.extend_from_slice(self.image(n));
                labels.push(self.labels[n]);
            }
        }
        Split { dim: self.dim, images, labels }
    }
}

/// Input geometry: channels × height × width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub const NORMALIZATION: &str = "divide-by-255";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub shape: ImageShape,
    pub num_classes: usize,
    pub train: Split,
    pub test: Split,
}

fn find_file(dir: &Path, stem: &str, rank: u32) -> Result<std::path::PathBuf> {
    for name in [format!("{stem}-idx{rank}-ubyte"), format!("{stem}.idx{rank}-ubyte")] {
        let p = dir.join(name);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("no {stem} IDX file in {}", dir.display()),
    )))
}

fn to_split(images: IdxArray, labels: IdxArray) -> Result<(Split, ImageShape)> {
    if images.dims.len() != 3 || labels.dims.len() != 1 {
        return Err(Error::Format { offset: 0, detail: "expected rank-3 images and rank-1 labels".into() });
    }
    if images.dims[0] != labels.dims[0] {
        return Err(Error::Format {
            offset: 4,
            detail: format!("{} images but {} labels", images.dims[0], labels.dims[0]),
        });
    }
    let shape = ImageShape { channels: 1, height: images.dims[1], width: images.dims[2] };
    let split = Split {
        dim: shape.len(),
        images: images.data.iter().map(|&b| b as f32 / 255.0).collect(),
        labels: labels.data.iter().map(|&b| b as u32).collect(),
    };
    Ok((split, shape))
}

/// Loads the four standard IDX files (MNIST layout) from a directory.
pub fn load_idx_dataset(dir: impl AsRef<Path>, name: &str) -> Result<Dataset> {
    let dir = dir.as_ref();
    let (train, shape) = to_split(
        load_idx(find_file(dir, "train-images", 3)?)?,
        load_idx(find_file(dir, "train-labels", 1)?)?,
    )?;
    let (test, tshape) = to_split(
        load_idx(find_file(dir, "t10k-images", 3)?)?,
        load_idx(find_file(dir, "t10k-labels", 1)?)?,
    )?;
    if shape != tshape {
        return Err(Error::Format { offset: 8, detail: "train and test image sizes differ".into() });
    }
    let num_classes = train.labels.iter().chain(&test.labels).max().map_or(0, |&m| m as usize + 1);
    Ok(Dataset { name: name.to_string(), shape, num_classes, train, test })
}

/// One task of a class-incremental sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub task_id: usize,
    pub classes: Vec<u32>,
    pub shape: ImageShape,
    pub train: Split,
    pub test: Split,
    pub normalization: String,
}

/// Splits into consecutive-class tasks: task k holds classes `k·c .. k·c+c-1`,
/// in source order.
pub fn split_tasks(dataset: &Dataset, classes_per_task: usize) -> Result<Vec<TaskDataset>> {
    if classes_per_task == 0 || dataset.num_classes % classes_per_task != 0 {
        return Err(Error::config(format!(
            "{} classes cannot be split into tasks of {classes_per_task}",
            dataset.num_classes
        )));
    }
    Ok((0..dataset.num_classes / classes_per_task)
        .map(|k| {
            let lo = (k * classes_per_task) as u32;
            let hi = lo + classes_per_task as u32;
            let inside = |l: u32| (lo..hi).contains(&l);
            TaskDataset {
                task_id: k,
                classes: (lo..hi).collect(),
                shape: dataset.shape,
                train: dataset.train.select(inside),
                test: dataset.test.select(inside),
                normalization: NORMALIZATION.to_string(),
            }
        })
        .collect())
}

/// Minibatches over a split in a seeded per-epoch order. The permutation is
/// drawn from a stream seeded with `seed ^ epoch`; the last batch may be short.
pub struct BatchIter<'a> {
    split: &'a Split,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl<'a> Iterator for BatchIter<'a> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.split.gather(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }
}

pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut seed::rng(seed ^ epoch as u64));
    order
}

pub fn batch_iter(split: &Split, batch_size: usize, seed: u64, epoch: usize) -> Result<BatchIter<'_>> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    Ok(BatchIter { split, order: epoch_order(split.len(), seed, epoch), batch_size, pos: 0 })
}

pub const SYNTHETIC_TRAIN_PER_CLASS: usize = 400;
pub const SYNTHETIC_TEST_PER_CLASS: usize = 100;
/// Number of distinct shape families the generator can draw.
pub const SYNTHETIC_CLASSES: usize = 8;

/// Draws one synthetic image of the given class into `img` (size × size).
///
/// Classes are shape families placed at a random offset with random
/// intensity over faint noise: bars at four orientations, a filled blob, a
/// ring, a plus and an X. Position varies per sample, so no fixed pixel mask
/// separates them; local oriented structure does.
fn draw_shape(class: usize, size: usize, rng: &mut impl Rng, img: &mut [f32]) {
    for v in img.iter_mut() {
        *v = rng.gen_range(0.0..0.15);
    }
    let amp = rng.gen_range(0.7..1.0f32);
    let span = (size / 2).max(3);
    let margin = span / 2 + 1;
    let cy = rng.gen_range(margin..size - margin) as isize;
    let cx = rng.gen_range(margin..size - margin) as isize;
    let half = (span / 2) as isize;
    let mut put = |y: isize, x: isize, v: f32| {
        if (0..size as isize).contains(&y) && (0..size as isize).contains(&x) {
            let p = &mut img[y as usize * size + x as usize];
            *p = p.max(v);
        }
    };
    match class % SYNTHETIC_CLASSES {
        0 => (-half..=half).for_each(|d| put(cy, cx + d, amp)),
        1 => (-half..=half).for_each(|d| put(cy + d, cx, amp)),
        2 => (-half..=half).for_each(|d| put(cy + d, cx + d, amp)),
        3 => (-half..=half).for_each(|d| put(cy + d, cx - d, amp)),
        4 => {
            let s2 = (half as f32 * 0.6).powi(2).max(0.5);
            for dy in -half..=half {
                for dx in -half..=half {
                    let r2 = (dy * dy + dx * dx) as f32;
                    put(cy + dy, cx + dx, amp * (-r2 / (2.0 * s2)).exp());
                }
            }
        }
        5 => {
            for dy in -half..=half {
                for dx in -half..=half {
                    let r = ((dy * dy + dx * dx) as f32).sqrt();
                    if (r - half as f32).abs() < 0.6 {
                        put(cy + dy, cx + dx, amp);
                    }
                }
            }
        }
        6 => (-half..=half).for_each(|d| {
            put(cy, cx + d, amp);
            put(cy + d, cx, amp);
        }),
        _ => (-half..=half).for_each(|d| {
            put(cy + d, cx + d, amp);
            put(cy + d, cx - d, amp);
        }),
    }
}

fn synthetic_split(classes: &[u32], per_class: usize, size: usize, rng: &mut impl Rng) -> Split {
    let dim = size * size;
    let mut images = vec![0.0f32; classes.len() * per_class * dim];
    let mut labels = Vec::with_capacity(classes.len() * per_class);
    let mut n = 0;
    for _ in 0..per_class {
        for &c in classes {
            draw_shape(c as usize, size, rng, &mut images[n * dim..(n + 1) * dim]);
            labels.push(c);
            n += 1;
        }
    }
    Split { dim, images, labels }
}

/// Synthetic single-channel tasks with exactly balanced classes, using the
/// default per-class sample counts.
pub fn make_synthetic_conv_tasks(
    num_tasks: usize,
    classes_per_task: usize,
    image_size: usize,
    seed: u64,
) -> Result<Vec<TaskDataset>> {
    make_synthetic_conv_tasks_sized(
        num_tasks,
        classes_per_task,
        image_size,
        seed,
        SYNTHETIC_TRAIN_PER_CLASS,
        SYNTHETIC_TEST_PER_CLASS,
    )
}

pub fn make_synthetic_conv_tasks_sized(
    num_tasks: usize,
    classes_per_task: usize,
    image_size: usize,
    seed: u64,
    train_per_class: usize,
    test_per_class: usize,
) -> Result<Vec<TaskDataset>> {
    if num_tasks * classes_per_task > SYNTHETIC_CLASSES {
        return Err(Error::config(format!(
            "synthetic generator has {SYNTHETIC_CLASSES} shape classes, {} requested",
            num_tasks * classes_per_task
        )));
    }
    if image_size < 6 {
        return Err(Error::config("synthetic images need at least 6x6 pixels"));
    }
    let shape = ImageShape { channels: 1, height: image_size, width: image_size };
    Ok((0..num_tasks)
        .map(|t| {
            let classes: Vec<u32> =
                ((t * classes_per_task) as u32..((t + 1) * classes_per_task) as u32).collect();
            let mut rng = seed::task_rng(seed, t, Purpose::Data);
            let train = synthetic_split(&classes, train_per_class, image_size, &mut rng);
            let test = synthetic_split(&classes, test_per_class, image_size, &mut rng);
            TaskDataset {
                task_id: t,
                classes,
                shape,
                train,
                test,
                normalization: "synthetic [0,1]".to_string(),
            }
        })
        .collect())
}
