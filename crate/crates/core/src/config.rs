//! `key = value` run configuration files and per-epoch metrics logs.
//!
//! Recognized keys: `arch` (`single` | `two`), `m`, `m1`, `l`, `m2`,
//! `epochs`, `batch_size`, `learning_rate`, `seed`, `grad_mode`
//! (`exact` | `mcmc`), `mcmc_r`, `mcmc_t`, `checkpoint_every`, `out_dir`.
//! Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::Architecture;
use crate::trainer::{GradientMode, MetricsRecord, TrainConfig};

pub const KEYS: [&str; 14] = [
    "arch",
    "m",
    "m1",
    "l",
    "m2",
    "epochs",
    "batch_size",
    "learning_rate",
    "seed",
    "grad_mode",
    "mcmc_r",
    "mcmc_t",
    "checkpoint_every",
    "out_dir",
];

/// Raw key/value pairs, validated against [`KEYS`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("unknown key `{key}`"),
                });
            }
            if values.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::InvalidConfig(format!("unknown key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.values.remove(key)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::InvalidConfig(format!("invalid value `{v}` for `{key}`")))
            })
            .transpose()
    }

    fn required<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.parsed(key)?
            .ok_or_else(|| Error::InvalidConfig(format!("missing `{key}`")))
    }

    /// Resolves into a training configuration. Keys that do not apply to the
    /// chosen architecture or gradient mode are rejected.
    pub fn to_run_config(&self) -> Result<RunConfig> {
        let arch = self.get("arch").unwrap_or("single");
        let reject = |keys: &[&str], why: &str| -> Result<()> {
            match keys.iter().find(|k| self.values.contains_key(**k)) {
                Some(k) => Err(Error::InvalidConfig(format!("`{k}` is not valid {why}"))),
                None => Ok(()),
            }
        };
        let architecture = match arch {
            "single" => {
                reject(&["m1", "l", "m2"], "with arch = single")?;
                Architecture::Single { m: self.required("m")? }
            }
            "two" => {
                reject(&["m"], "with arch = two")?;
                Architecture::Two {
                    m1: self.required("m1")?,
                    l: self.required("l")?,
                    m2: self.required("m2")?,
                }
            }
            other => return Err(Error::InvalidConfig(format!("unknown arch `{other}`"))),
        };
        let gradient_mode = match self.get("grad_mode").unwrap_or("exact") {
            "exact" => {
                reject(&["mcmc_r", "mcmc_t"], "with grad_mode = exact")?;
                GradientMode::Exact
            }
            "mcmc" => GradientMode::Mcmc {
                rounds: self.parsed("mcmc_r")?.unwrap_or(10),
                steps: self.parsed("mcmc_t")?.unwrap_or(20),
            },
            other => return Err(Error::InvalidConfig(format!("unknown grad_mode `{other}`"))),
        };
        let defaults = TrainConfig::new(architecture);
        let train = TrainConfig {
            architecture,
            epochs: self.parsed("epochs")?.unwrap_or(defaults.epochs),
            batch_size: self.parsed("batch_size")?.unwrap_or(defaults.batch_size),
            learning_rate: self.parsed("learning_rate")?.unwrap_or(defaults.learning_rate),
            seed: self.parsed("seed")?.unwrap_or(defaults.seed),
            gradient_mode,
            checkpoint_every: self.parsed("checkpoint_every")?.unwrap_or(0),
            parallel: false,
        };
        train.validate()?;
        Ok(RunConfig {
            train,
            out_dir: self.get("out_dir").map(PathBuf::from),
        })
    }
}

/// A resolved training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Canonical file form; parsing it back gives the same configuration.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut out = String::new();
        match t.architecture {
            Architecture::Single { m } => out.push_str(&format!("arch = single\nm = {m}\n")),
            Architecture::Two { m1, l, m2 } => out.push_str(&format!("arch = two\nm1 = {m1}\nl = {l}\nm2 = {m2}\n")),
        }
        out.push_str(&format!(
            "epochs = {}\nbatch_size = {}\nlearning_rate = {:?}\nseed = {}\n",
            t.epochs, t.batch_size, t.learning_rate, t.seed
        ));
        match t.gradient_mode {
            GradientMode::Exact => out.push_str("grad_mode = exact\n"),
            GradientMode::Mcmc { rounds, steps } => {
                out.push_str(&format!("grad_mode = mcmc\nmcmc_r = {rounds}\nmcmc_t = {steps}\n"))
            }
        }
        out.push_str(&format!("checkpoint_every = {}\n", t.checkpoint_every));
        if let Some(dir) = &self.out_dir {
            out.push_str(&format!("out_dir = {}\n", dir.display()));
        }
        out
    }
}

/// Line-delimited metrics files, written to hidden temporary paths and
/// renamed into place by [`MetricsLog::finish`].
///
/// The totals file has one `epoch,nll_total,seconds` line per epoch; the
/// optional per-conditional file has `epoch,nll_0,...,nll_{n-1}`.
pub struct MetricsLog {
    totals: Pending,
    per_k: Option<Pending>,
}

struct Pending {
    tmp: PathBuf,
    dest: PathBuf,
    out: BufWriter<File>,
}

impl Pending {
    fn create(dest: &Path, header: &str) -> Result<Self> {
        let name = dest
            .file_name()
            .ok_or_else(|| Error::InvalidArgument(format!("`{}` is not a file path", dest.display())))?;
        let tmp = dest.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
        let mut out = BufWriter::new(File::create(&tmp)?);
        writeln!(out, "{header}")?;
        Ok(Self {
            tmp,
            dest: dest.to_path_buf(),
            out,
        })
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        self.out.get_ref().sync_all()?;
        fs::rename(&self.tmp, &self.dest)?;
        Ok(())
    }
}

impl MetricsLog {
    pub fn create(totals: &Path, per_k: Option<(&Path, usize)>) -> Result<Self> {
        let totals = Pending::create(totals, "epoch,nll_total,seconds")?;
        let per_k = per_k
            .map(|(path, n)| {
                let cols: Vec<String> = (0..n).map(|k| format!("nll_{k}")).collect();
                Pending::create(path, &format!("epoch,{}", cols.join(",")))
            })
            .transpose()?;
        Ok(Self { totals, per_k })
    }

    pub fn append(&mut self, r: &MetricsRecord) -> Result<()> {
        writeln!(self.totals.out, "{},{:?},{:.3}", r.epoch, r.nll_total, r.seconds)?;
        if let Some(p) = &mut self.per_k {
            let vals: Vec<String> = r.per_k.iter().map(|v| format!("{v:?}")).collect();
            writeln!(p.out, "{},{}", r.epoch, vals.join(","))?;
        }
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        self.totals.finish()?;
        if let Some(p) = self.per_k {
            p.finish()?;
        }
        Ok(())
    }
}

impl Drop for Pending {
    fn drop(&mut self) {
        // no-op after a successful rename; otherwise removes the partial file
        let _ = fs::remove_file(&self.tmp);
    }
}

/// Parses a totals file back into `(epoch, nll_total)` pairs.
pub fn read_totals(path: &Path) -> Result<Vec<(usize, f64)>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let bad = || Error::Parse {
                line: i + 1,
                message: format!("bad metrics line `{l}`"),
            };
            let mut parts = l.split(',');
            let epoch = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let nll = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            Ok((epoch, nll))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_two_layer_config() {
        let text = "# desk run\narch = two\nm1 = 2\nl = 8\nm2 = 32\nepochs = 300\n\
                    batch_size = 1000\nlearning_rate = 10\nseed = 7\ngrad_mode = mcmc\n\
                    mcmc_r = 10\nmcmc_t = 20\ncheckpoint_every = 50\nout_dir = runs/a\n";
        let rc = ConfigFile::parse(text).unwrap().to_run_config().unwrap();
        assert_eq!(rc.train.architecture, Architecture::Two { m1: 2, l: 8, m2: 32 });
        assert_eq!(rc.train.gradient_mode, GradientMode::Mcmc { rounds: 10, steps: 20 });
        assert_eq!(rc.train.epochs, 300);
        assert_eq!(rc.train.checkpoint_every, 50);
        assert_eq!(rc.out_dir.as_deref(), Some(Path::new("runs/a")));
        let again = ConfigFile::parse(&rc.to_text()).unwrap().to_run_config().unwrap();
        assert_eq!(again, rc);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(
            ConfigFile::parse("speed = 3"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            ConfigFile::parse("m = 1\nm = 2"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(ConfigFile::parse("no equals sign").is_err());
        let single_with_l = ConfigFile::parse("arch = single\nm = 2\nl = 4").unwrap();
        assert!(matches!(single_with_l.to_run_config(), Err(Error::InvalidConfig(_))));
        let mcmc_single = ConfigFile::parse("arch = single\nm = 2\ngrad_mode = mcmc").unwrap();
        assert!(mcmc_single.to_run_config().is_err());
        let bad_number = ConfigFile::parse("m = two").unwrap();
        assert!(bad_number.to_run_config().is_err());
    }

    #[test]
    fn metrics_files_appear_only_when_finished() {
        let dir = tempfile::tempdir().unwrap();
        let totals = dir.path().join("metrics.csv");
        let per_k = dir.path().join("metrics_per_k.csv");
        let mut log = MetricsLog::create(&totals, Some((&per_k, 2))).unwrap();
        for epoch in 0..3 {
            log.append(&MetricsRecord {
                epoch,
                nll_total: 1.5 - epoch as f64 * 0.25,
                per_k: vec![1.0, 0.5 - epoch as f64 * 0.25],
                seconds: 0.0,
            })
            .unwrap();
        }
        assert!(!totals.exists());
        log.finish().unwrap();
        assert_eq!(read_totals(&totals).unwrap(), vec![(0, 1.5), (1, 1.25), (2, 1.0)]);
        let text = fs::read_to_string(&per_k).unwrap();
        assert_eq!(text.lines().next(), Some("epoch,nll_0,nll_1"));
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);
    }

    #[test]
    fn abandoned_log_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let log = MetricsLog::create(&dir.path().join("m.csv"), None).unwrap();
        drop(log);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
