use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::train::EpochRecord;
use crate::attention::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::graph::Csr;
use crate::sampler::ScoreSet;

/// Output directory of one run.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    /// Creates the directory. An existing non-empty directory is an error
    /// unless `force` is set, in which case it is cleared.
    pub fn create(path: &Path, force: bool) -> Result<Self> {
        if path.exists() {
            let occupied = fs::read_dir(path)
                .map_err(|e| Error::io(path, e))?
                .next()
                .is_some();
            if occupied && !force {
                return Err(Error::Config(format!(
                    "{} already exists; pass --force to overwrite",
                    path.display()
                )));
            }
            if occupied {
                fs::remove_dir_all(path).map_err(|e| Error::io(path, e))?;
            }
        }
        fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
        Ok(RunDir {
            path: path.to_path_buf(),
        })
    }

    pub fn open(path: &Path) -> Result<Self> {
        if !path.is_dir() {
            return Err(Error::Config(format!(
                "{} is not a run directory",
                path.display()
            )));
        }
        Ok(RunDir {
            path: path.to_path_buf(),
        })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let p = self.file(name);
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        fs::write(&p, s).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    pub fn write_text(&self, name: &str, body: &str) -> Result<PathBuf> {
        let p = self.file(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    pub fn write_history(&self, history: &[EpochRecord]) -> Result<PathBuf> {
        let p = self.file("history.csv");
        write_history(&p, history)?;
        Ok(p)
    }

    /// `scores/scores.txt` and `scores/scores.bin`.
    pub fn write_scores(&self, scores: &ScoreSet) -> Result<Vec<PathBuf>> {
        let dir = self.file("scores");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let txt = dir.join("scores.txt");
        scores.save_text(&txt)?;
        let bin = dir.join("scores.bin");
        let f = fs::File::create(&bin).map_err(|e| Error::io(&bin, e))?;
        scores
            .write_binary(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(&bin, e))?;
        Ok(vec![txt, bin])
    }

    pub fn read_scores(&self, graph: &Csr) -> Result<ScoreSet> {
        let bin = self.file("scores/scores.bin");
        let f = fs::File::open(&bin).map_err(|e| Error::io(&bin, e))?;
        ScoreSet::read_binary(std::io::BufReader::new(f), graph)
    }

    /// `ckpt/best.ckpt` plus `ckpt/model.json` describing its shape.
    pub fn write_model(&self, params: &ModelParams<f32>) -> Result<Vec<PathBuf>> {
        let dir = self.file("ckpt");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let ck = dir.join("best.ckpt");
        let f = fs::File::create(&ck).map_err(|e| Error::io(&ck, e))?;
        params
            .write_checkpoint(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(&ck, e))?;
        let js = self.write_json("ckpt/model.json", &params.config)?;
        Ok(vec![ck, js])
    }

    pub fn read_model(&self) -> Result<ModelParams<f32>> {
        let js = self.file("ckpt/model.json");
        let text = fs::read_to_string(&js).map_err(|e| Error::io(&js, e))?;
        let config: ModelConfig = serde_json::from_str(&text)?;
        let ck = self.file("ckpt/best.ckpt");
        let f = fs::File::open(&ck).map_err(|e| Error::io(&ck, e))?;
        ModelParams::read_checkpoint(config, std::io::BufReader::new(f))
    }
}

/// CSV with header `epoch,loss,val_metric,tau`.
pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut s = String::from("epoch,loss,val_metric,tau\n");
    for r in history {
        let _ = writeln!(s, "{},{},{},{}", r.epoch, r.loss, r.val_metric, r.tau);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize| Error::Format {
        path: path.to_path_buf(),
        line,
        msg: "expected `epoch,loss,val_metric,tau`".into(),
    };
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(bad(i + 1));
            }
            Ok(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad(i + 1))?,
                loss: f[1].parse().map_err(|_| bad(i + 1))?,
                val_metric: f[2].parse().map_err(|_| bad(i + 1))?,
                tau: f[3].parse().map_err(|_| bad(i + 1))?,
            })
        })
        .collect()
}
