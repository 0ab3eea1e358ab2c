//! Run configuration as a flat `key = value` text file.
//!
//! ```text
//! # split MNIST
//! name = split-mnist
//! dataset = mnist
//! hidden = 400,400
//! epsilon = 0.02
//! sel = 80
//! spec = 40
//! ```
//!
//! `hidden` lists dense widths or conv layers written `c<maps>` (`c<maps>p`
//! adds 2×2 pooling). `sel` and `spec` take one value for every hidden layer
//! or a comma list; `sel = all` selects every free neuron.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::ImageShape;
use crate::engine::{Architecture, HiddenLayer, TaskPlan};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Fashion,
    Synthetic,
}

impl FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetKind::Mnist),
            "fashion" | "fashion-mnist" => Ok(DatasetKind::Fashion),
            "synthetic" => Ok(DatasetKind::Synthetic),
            _ => Err(Error::config(format!("unknown dataset {s:?}"))),
        }
    }
}

impl DatasetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Fashion => "fashion",
            DatasetKind::Synthetic => "synthetic",
        }
    }

    /// Directory name under the data root.
    pub fn dir_name(&self) -> &'static str {
        match self {
            DatasetKind::Fashion => "fashion-mnist",
            other => other.as_str(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: String,
    pub dataset: DatasetKind,
    /// IDX directory; empty means `<root>/mnist` or `<root>/fashion-mnist`, with
    /// `<root>` from `$SPACENET_DATA` or `data`.
    pub data_dir: String,
    pub hidden: Vec<HiddenLayer>,
    pub conv_kernel: usize,
    pub classes_per_task: usize,
    /// Number of tasks to learn; 0 means all the dataset provides.
    pub tasks: usize,
    pub epsilon: f64,
    pub rewire_fraction: f64,
    pub sel: Vec<Option<usize>>,
    pub spec: Vec<usize>,
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub out_dir: String,
    pub synthetic_size: usize,
    pub synthetic_train: usize,
    pub synthetic_test: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "split-mnist".into(),
            dataset: DatasetKind::Mnist,
            data_dir: String::new(),
            hidden: vec![HiddenLayer::Dense { width: 400 }, HiddenLayer::Dense { width: 400 }],
            conv_kernel: 3,
            classes_per_task: 2,
            tasks: 0,
            epsilon: 0.02,
            rewire_fraction: 0.2,
            sel: vec![Some(80), Some(80)],
            spec: vec![40, 40],
            epochs: 4,
            lr: 0.01,
            batch_size: 128,
            seeds: vec![0, 1, 2],
            out_dir: "runs".into(),
            synthetic_size: 12,
            synthetic_train: crate::data::SYNTHETIC_TRAIN_PER_CLASS,
            synthetic_test: crate::data::SYNTHETIC_TEST_PER_CLASS,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(format!("bad value {v:?} for {key}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|p| parse(key, p.trim())).collect()
}

fn parse_hidden(v: &str, kernel: usize) -> Result<Vec<HiddenLayer>> {
    v.split(',')
        .map(str::trim)
        .map(|tok| {
            if let Some(rest) = tok.strip_prefix('c') {
                let (maps, pool) = match rest.strip_suffix('p') {
                    Some(m) => (m, true),
                    None => (rest, false),
                };
                Ok(HiddenLayer::Conv { maps: parse("hidden", maps)?, kernel, pool })
            } else {
                Ok(HiddenLayer::Dense { width: parse("hidden", tok)? })
            }
        })
        .collect()
}

fn hidden_text(layers: &[HiddenLayer]) -> String {
    layers
        .iter()
        .map(|l| match *l {
            HiddenLayer::Dense { width } => width.to_string(),
            HiddenLayer::Conv { maps, pool, .. } => format!("c{maps}{}", if pool { "p" } else { "" }),
        })
        .collect::<Vec<_>>()
        .join(",")
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Expands a one-element list to every hidden layer.
fn broadcast<T: Clone>(key: &str, v: Vec<T>, n: usize) -> Result<Vec<T>> {
    match v.len() {
        1 => Ok(vec![v[0].clone(); n]),
        k if k == n => Ok(v),
        k => Err(Error::config(format!("{key} has {k} entries for {n} hidden layers"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut hidden_raw: Option<String> = None;
        let mut sel_raw: Option<String> = None;
        let mut spec_raw: Option<String> = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "name" => c.name = v.to_string(),
                "dataset" => c.dataset = v.parse()?,
                "data_dir" => c.data_dir = v.to_string(),
                "hidden" => hidden_raw = Some(v.to_string()),
                "conv_kernel" => c.conv_kernel = parse(k, v)?,
                "classes_per_task" => c.classes_per_task = parse(k, v)?,
                "tasks" => c.tasks = parse(k, v)?,
                "epsilon" => c.epsilon = parse(k, v)?,
                "rewire_fraction" => c.rewire_fraction = parse(k, v)?,
                "sel" => sel_raw = Some(v.to_string()),
                "spec" => spec_raw = Some(v.to_string()),
                "epochs" => c.epochs = parse(k, v)?,
                "lr" => c.lr = parse(k, v)?,
                "batch_size" => c.batch_size = parse(k, v)?,
                "seeds" => c.seeds = parse_list(k, v)?,
                "out_dir" => c.out_dir = v.to_string(),
                "synthetic_size" => c.synthetic_size = parse(k, v)?,
                "synthetic_train" => c.synthetic_train = parse(k, v)?,
                "synthetic_test" => c.synthetic_test = parse(k, v)?,
                _ => return Err(Error::config(format!("line {}: unknown key {k:?}", n + 1))),
            }
        }
        if let Some(h) = hidden_raw {
            c.hidden = parse_hidden(&h, c.conv_kernel)?;
        }
        let n = c.hidden.len();
        c.sel = match sel_raw {
            Some(v) => broadcast(
                "sel",
                v.split(',')
                    .map(|p| match p.trim() {
                        "all" => Ok(None),
                        x => parse("sel", x).map(Some),
                    })
                    .collect::<Result<_>>()?,
                n,
            )?,
            None => broadcast("sel", c.sel, n)?,
        };
        c.spec = broadcast("spec", spec_raw.map_or(Ok(c.spec.clone()), |v| parse_list("spec", &v))?, n)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::config("at least one hidden layer is required"));
        }
        if self.sel.len() != self.hidden.len() || self.spec.len() != self.hidden.len() {
            return Err(Error::config("sel and spec need one entry per hidden layer"));
        }
        if self.classes_per_task == 0 || self.batch_size == 0 || self.seeds.is_empty() {
            return Err(Error::config("classes_per_task, batch_size and seeds must be non-empty"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) || !(self.rewire_fraction > 0.0 && self.rewire_fraction < 1.0) {
            return Err(Error::config("epsilon and rewire_fraction must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Canonical text form; parsing it gives back the same config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let sel: Vec<String> = self.sel.iter().map(|v| v.map_or("all".into(), |n| n.to_string())).collect();
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s, "dataset = {}", self.dataset.as_str());
        let _ = writeln!(s, "data_dir = {}", self.data_dir);
        let _ = writeln!(s, "conv_kernel = {}", self.conv_kernel);
        let _ = writeln!(s, "hidden = {}", hidden_text(&self.hidden));
        let _ = writeln!(s, "classes_per_task = {}", self.classes_per_task);
        let _ = writeln!(s, "tasks = {}", self.tasks);
        let _ = writeln!(s, "epsilon = {}", self.epsilon);
        let _ = writeln!(s, "rewire_fraction = {}", self.rewire_fraction);
        let _ = writeln!(s, "sel = {}", sel.join(","));
        let _ = writeln!(s, "spec = {}", join(&self.spec));
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "seeds = {}", join(&self.seeds));
        let _ = writeln!(s, "out_dir = {}", self.out_dir);
        let _ = writeln!(s, "synthetic_size = {}", self.synthetic_size);
        let _ = writeln!(s, "synthetic_train = {}", self.synthetic_train);
        let _ = writeln!(s, "synthetic_test = {}", self.synthetic_test);
        s
    }

    pub fn architecture(&self, input: ImageShape, output_classes: usize) -> Architecture {
        Architecture { input, hidden: self.hidden.clone(), output_classes }
    }

    /// One plan per task for the given master seed.
    pub fn plans(&self, seed: u64, task_classes: &[Vec<u32>], rewire: bool) -> Vec<TaskPlan> {
        task_classes
            .iter()
            .enumerate()
            .map(|(t, classes)| TaskPlan {
                task_id: t,
                classes: classes.clone(),
                epsilon: self.epsilon,
                rewire_fraction: self.rewire_fraction,
                sel: self.sel.clone(),
                spec: self.spec.clone(),
                epochs: self.epochs,
                lr: self.lr,
                batch_size: self.batch_size,
                seed,
                rewire,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_mnist_setup() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.sel, vec![Some(80), Some(80)]);
        assert_eq!(c.epochs, 4);
    }

    #[test]
    fn round_trips_through_text() {
        let c = RunConfig::parse(
            "dataset = synthetic\nhidden = c8p, c16p\nsel = all\nspec = 2,3 # per layer\nseeds=4,5\nlr=0.05",
        )
        .unwrap();
        assert_eq!(c.hidden[1], HiddenLayer::Conv { maps: 16, kernel: 3, pool: true });
        assert_eq!(c.sel, vec![None, None]);
        assert_eq!(c.spec, vec![2, 3]);
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::parse("epochz = 3").is_err());
        assert!(RunConfig::parse("epochs = three").is_err());
        assert!(RunConfig::parse("sel = 1,2,3").is_err());
        assert!(RunConfig::parse("epsilon = 1.5").is_err());
        assert!(RunConfig::parse("just text").is_err());
    }
}
