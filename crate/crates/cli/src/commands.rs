use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use switchnet::config::{ConfigFile, MetricsLog, RunConfig};
use switchnet::data::{
    decode_bits, gen_synthetic, load_mnist_binary, load_wordlist, sample_from_table, words_dataset, write_atomic,
    Dataset, DistributionTable, Provenance, WORD_BITS,
};
use switchnet::diagnostics::{fd_instance, mcmc_study, McmcStudy, FD_EPS, MAX_DIAGNOSTIC_LATENT};
use switchnet::eval::{dictionary_ratio, summary_table, table_metrics, test_nll, EvalReport};
use switchnet::trainer::{train_all, TrainConfig};
use switchnet::{checkpoint, rng, Architecture, Error};

use crate::manifest::RunManifest;
use crate::{ArchKind, Cli, Command, Eval, GenData, GradMode, GradcheckArgs, SampleArgs, SampleFormat, TrainArgs};
use switchnet::pgm;

/// Acceptance bound for analytic against finite-difference gradients.
const FD_TOLERANCE: f64 = 1e-4;
/// Acceptance bound for the averaged MCMC estimate at the largest `r`.
const MCMC_TOLERANCE: f64 = 0.05;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(Error),
    /// A diagnostic ran to completion but its check failed.
    Check(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Check(m) => f.write_str(m),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(Error::Io(e))
    }
}

impl CliError {
    /// 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Check(_) => 3,
            CliError::Lib(e) => match e {
                Error::InvalidArgument(_)
                | Error::InvalidConfig(_)
                | Error::EnumerationBudget { .. }
                | Error::UnsupportedArchitecture => 1,
                Error::Numerical(_) | Error::Diverged { .. } => 3,
                _ => 2,
            },
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

struct Ctx {
    seed: Option<u64>,
    out_dir: PathBuf,
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let config = cli.config.as_deref().map(load_config).transpose()?;
    if config.is_some() && !matches!(cli.command, Command::Train(_)) {
        return Err(CliError::Usage("--config applies to `train` only".into()));
    }
    let out_dir = cli
        .out_dir
        .clone()
        .or_else(|| config.as_ref().and_then(|c| c.get("out_dir")).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir)?;
    let ctx = Ctx {
        seed: cli.seed,
        out_dir,
    };
    match cli.command {
        Command::GenData(g) => gen_data(&ctx, g),
        Command::Train(t) => train(&ctx, config.unwrap_or_default(), t),
        Command::Sample(s) => sample(&ctx, s),
        Command::Eval(e) => eval(&ctx, e),
        Command::Gradcheck(g) => gradcheck(&ctx, g),
    }
}

fn load_config(path: &Path) -> Result<ConfigFile> {
    ConfigFile::load(path).map_err(|e| match e {
        Error::Io(io) => CliError::Usage(format!("cannot read config {}: {io}", path.display())),
        other => CliError::Usage(format!("config {}: {other}", path.display())),
    })
}

/// Runs `body` between a `running` and a final manifest. Output files are
/// only listed when the run succeeds.
fn with_manifest<F>(ctx: &Ctx, command: &str, config: String, inputs: &[&Path], body: F) -> Result<()>
where
    F: FnOnce() -> Result<Vec<PathBuf>>,
{
    let manifest = RunManifest::start(&ctx.out_dir, command, ctx.seed(), config, inputs)?;
    match body() {
        Ok(outputs) => {
            manifest.succeed(&outputs)?;
            Ok(())
        }
        Err(e) => {
            let _ = manifest.fail(&e.to_string());
            Err(e)
        }
    }
}

fn gen_data(ctx: &Ctx, g: GenData) -> Result<()> {
    let seed = ctx.seed();
    match g {
        GenData::Synthetic { n, count, test_count } => {
            let config = format!("n = {n}\ncount = {count}\ntest_count = {test_count}\n");
            with_manifest(ctx, "gen-data", config, &[], || {
                let table = gen_synthetic(n, seed)?;
                let all = sample_from_table(&table, count + test_count, seed)?;
                let mut outputs = vec![ctx.out("table.txt"), ctx.out("dataset.txt")];
                table.save(&outputs[0])?;
                if test_count > 0 {
                    let (train, test) = all.split_tail(test_count)?;
                    train.save(&outputs[1])?;
                    outputs.push(ctx.out("test.txt"));
                    test.save(&outputs[2])?;
                } else {
                    all.save(&outputs[1])?;
                }
                println!("synthetic n={n}: {count} training samples, {test_count} held out");
                Ok(outputs)
            })
        }
        GenData::Mnist {
            images,
            threshold,
            crop,
            limit,
        } => {
            let config = format!("threshold = {threshold}\ncrop = {crop:?}\nlimit = {limit:?}\n");
            with_manifest(ctx, "gen-data", config, &[&images], || {
                let ds = load_mnist_binary(&images, threshold, crop, limit)?;
                let out = ctx.out("dataset.txt");
                ds.save(&out)?;
                println!("mnist: {} images, n={}", ds.len(), ds.n());
                Ok(vec![out])
            })
        }
        GenData::Words { input } => with_manifest(ctx, "gen-data", String::new(), &[&input], || {
            let words = load_wordlist(&input)?;
            let ds = words_dataset(&words, &input.display().to_string())?;
            let out = ctx.out("dataset.txt");
            ds.save(&out)?;
            println!("words: {} entries, n={}", ds.len(), ds.n());
            Ok(vec![out])
        }),
    }
}

/// Applies command-line flags over the configuration file. Choosing an
/// architecture on the command line discards the file's width keys.
fn overlay(mut cfg: ConfigFile, t: &TrainArgs, seed: Option<u64>) -> Result<RunConfig> {
    let m = &t.model;
    if let Some(arch) = m.arch {
        for key in ["arch", "m", "m1", "l", "m2"] {
            cfg.remove(key);
        }
        cfg.set("arch", if arch == ArchKind::Single { "single" } else { "two" })?;
    }
    if t.grad_mode == Some(GradMode::Exact) {
        cfg.remove("mcmc_r");
        cfg.remove("mcmc_t");
    }
    let flags: [(&str, Option<String>); 11] = [
        ("m", m.m.map(|v| v.to_string())),
        ("m1", m.m1.map(|v| v.to_string())),
        ("l", m.l.map(|v| v.to_string())),
        ("m2", m.m2.map(|v| v.to_string())),
        ("epochs", t.epochs.map(|v| v.to_string())),
        ("batch_size", t.batch_size.map(|v| v.to_string())),
        ("learning_rate", t.learning_rate.map(|v| v.to_string())),
        ("seed", seed.map(|v| v.to_string())),
        (
            "grad_mode",
            t.grad_mode
                .map(|g| if g == GradMode::Exact { "exact" } else { "mcmc" }.to_string()),
        ),
        ("mcmc_r", t.r.map(|v| v.to_string())),
        ("mcmc_t", t.t.map(|v| v.to_string())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    if let Some(c) = t.checkpoint_every {
        cfg.set("checkpoint_every", c)?;
    }
    let mut rc = cfg.to_run_config()?;
    rc.train.parallel = t.parallel;
    Ok(rc)
}

fn train(ctx: &Ctx, cfg: ConfigFile, t: TrainArgs) -> Result<()> {
    // the output directory is not part of what makes a run reproducible
    let mut rc = overlay(cfg, &t, ctx.seed)?;
    rc.out_dir = None;
    let dataset = Dataset::load(&t.data)?;
    rc.train.validate_for(&dataset)?;
    let config_text = rc.to_text();
    let ctx = Ctx {
        seed: Some(rc.train.seed),
        out_dir: ctx.out_dir.clone(),
    };
    with_manifest(&ctx, "train", config_text.clone(), &[&t.data], || {
        let tc = &rc.train;
        let config_path = ctx.out("config.txt");
        write_atomic(&config_path, config_text.as_bytes())?;
        let metrics_path = ctx.out("metrics.csv");
        let per_k_path = ctx.out("metrics_per_k.csv");
        let mut log = MetricsLog::create(
            &metrics_path,
            t.per_k_metrics.then_some((per_k_path.as_path(), dataset.n())),
        )?;
        let mut outputs = vec![config_path, metrics_path];
        if t.per_k_metrics {
            outputs.push(per_k_path.clone());
        }
        let stride = (tc.epochs / 20).max(1);
        println!(
            "training {:?} on {} rows (n={}), {} epochs",
            tc.architecture,
            dataset.len(),
            dataset.n(),
            tc.epochs
        );
        let model = train_all(&dataset, tc, |record, trainer| {
            log.append(record)?;
            if record.epoch % stride == 0 || record.epoch == tc.epochs {
                println!(
                    "epoch {:>5}  nll {:.6}  ({:.1}s)",
                    record.epoch, record.nll_total, record.seconds
                );
            }
            if tc.checkpoint_every > 0 && record.epoch > 0 && record.epoch % tc.checkpoint_every == 0 {
                let path = ctx.out(&format!("checkpoint-epoch-{:05}.ckpt", record.epoch));
                checkpoint::save(&trainer.model()?, &path)?;
                outputs.push(path);
            }
            Ok(())
        })?;
        log.finish()?;
        let model_path = ctx.out("model.ckpt");
        checkpoint::save(&model, &model_path)?;
        outputs.push(model_path);
        Ok(outputs)
    })
}

fn sample(ctx: &Ctx, s: SampleArgs) -> Result<()> {
    let model = checkpoint::load(&s.model)?;
    let n = model.n();
    let side =
        match s.format {
            SampleFormat::PgmGrid => Some(pgm::square_side(n).ok_or_else(|| {
                CliError::Usage(format!("pgm-grid needs a square number of variables, model has n={n}"))
            })?),
            SampleFormat::Words if n != WORD_BITS => {
                return Err(CliError::Usage(format!(
                    "words format needs n={WORD_BITS}, model has n={n}"
                )))
            }
            _ => None,
        };
    if s.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let output = s.output.clone().unwrap_or_else(|| {
        ctx.out(match s.format {
            SampleFormat::RawBits => "samples.txt",
            SampleFormat::PgmGrid => "samples.pgm",
            SampleFormat::Words => "samples-words.txt",
        })
    });
    let config = format!("count = {}\nformat = {:?}\n", s.count, s.format);
    with_manifest(ctx, "sample", config, &[&s.model], || {
        let prepared = model.prepare()?;
        let mut r = rng::stream(ctx.seed(), 0);
        let rows: Vec<Vec<u8>> = (0..s.count).map(|_| prepared.sample_vector(&mut r)).collect();
        let bytes = match (s.format, side) {
            (SampleFormat::PgmGrid, Some(side)) => pgm::contact_sheet(&rows, side),
            (SampleFormat::Words, _) => {
                let mut text = String::new();
                for row in &rows {
                    text.push_str(&decode_bits(row)?);
                    text.push('\n');
                }
                text.into_bytes()
            }
            _ => Dataset::new(n, rows, Provenance::Unknown)?.to_text().into_bytes(),
        };
        write_atomic(&output, &bytes)?;
        println!("wrote {} samples to {}", s.count, output.display());
        Ok(vec![output.clone()])
    })
}

fn write_reports(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut text = String::new();
    for r in reports {
        println!("{}", r.to_line());
        text.push_str(&r.to_line());
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn model_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

fn eval(ctx: &Ctx, e: Eval) -> Result<()> {
    match e {
        Eval::TableMetrics { model, table, name } => {
            with_manifest(ctx, "eval-table-metrics", String::new(), &[&model, &table], || {
                let m = checkpoint::load(&model)?;
                let truth = DistributionTable::load(&table)?;
                let label = name.clone().unwrap_or_else(|| model_label(&model));
                let metrics = table_metrics(&m, &truth)?;
                let reports: Vec<EvalReport> = metrics
                    .reports(&label)
                    .into_iter()
                    .map(|r| r.with("n", m.n()))
                    .collect();
                let out = ctx.out("table-metrics.tsv");
                write_reports(&out, &reports)?;
                print!("{}", summary_table(&[(label, 0, metrics)]));
                Ok(vec![out])
            })
        }
        Eval::TestNll { model, data } => with_manifest(ctx, "eval-test-nll", String::new(), &[&model, &data], || {
            let m = checkpoint::load(&model)?;
            let ds = Dataset::load(&data)?;
            let nll = test_nll(&m, &ds)?;
            let report = EvalReport::new(&model_label(&model), "test_nll", nll, "nats")
                .with("rows", ds.len())
                .with("n", ds.n());
            let out = ctx.out("test-nll.tsv");
            write_reports(&out, &[report])?;
            Ok(vec![out])
        }),
        Eval::DictRatio { samples, lexicon } => {
            with_manifest(ctx, "eval-dict-ratio", String::new(), &[&samples, &lexicon], || {
                let lex: HashSet<String> = load_wordlist(&lexicon)?.into_iter().collect();
                let text = fs::read_to_string(&samples)?;
                let words: Vec<&str> = text.lines().map(str::trim).collect();
                let ratio = dictionary_ratio(&words, &lex)?;
                let report = EvalReport::new(&model_label(&samples), "dict_ratio", ratio.value(), "fraction")
                    .with("hits", ratio)
                    .with("lexicon_size", lex.len());
                let out = ctx.out("dict-ratio.tsv");
                write_reports(&out, &[report])?;
                Ok(vec![out])
            })
        }
        Eval::Sweep {
            train,
            test,
            ms,
            epochs,
            batch_size,
            learning_rate,
        } => {
            let config = format!(
                "ms = {ms:?}\nepochs = {epochs}\nbatch_size = {batch_size}\nlearning_rate = {learning_rate:?}\n"
            );
            with_manifest(ctx, "eval-sweep", config, &[&train, &test], || {
                let train_ds = Dataset::load(&train)?;
                let test_ds = Dataset::load(&test)?;
                if train_ds.n() != test_ds.n() {
                    return Err(Error::DimensionMismatch {
                        context: "sweep test set",
                        expected: train_ds.n(),
                        actual: test_ds.n(),
                    }
                    .into());
                }
                let mut csv = String::from("m,epochs,train_nll,test_nll\n");
                for &m in &ms {
                    let tc = TrainConfig {
                        epochs,
                        batch_size,
                        learning_rate,
                        seed: ctx.seed(),
                        ..TrainConfig::new(Architecture::Single { m })
                    };
                    tc.validate_for(&train_ds)?;
                    let model = train_all(&train_ds, &tc, |_, _| Ok(()))?;
                    let (tr, te) = (test_nll(&model, &train_ds)?, test_nll(&model, &test_ds)?);
                    println!("m={m:<3} train {tr:.6}  test {te:.6}");
                    csv.push_str(&format!("{m},{epochs},{tr:?},{te:?}\n"));
                }
                let out = ctx.out("sweep.csv");
                write_atomic(&out, csv.as_bytes())?;
                Ok(vec![out])
            })
        }
    }
}

fn gradcheck(ctx: &Ctx, g: GradcheckArgs) -> Result<()> {
    if g.l > MAX_DIAGNOSTIC_LATENT {
        return Err(CliError::Usage(format!(
            "--l {} is too large: the exact reference gradient enumerates 2^l configurations and \
             gradcheck allows l <= {MAX_DIAGNOSTIC_LATENT}; rerun with a smaller --l",
            g.l
        )));
    }
    let mut rounds = g.r.clone();
    rounds.sort_unstable();
    rounds.dedup();
    let study = McmcStudy {
        k: 16,
        m1: g.m1,
        l: g.l,
        m2: g.m2,
        batch_size: g.batch_size,
        trials: g.trials,
        rounds,
        steps: g.t,
        seed: ctx.seed(),
    };
    let config = format!(
        "instances = {}\nr = {:?}\nt = {}\nm1 = {}\nl = {}\nm2 = {}\nbatch_size = {}\ntrials = {}\n",
        g.instances, study.rounds, g.t, g.m1, g.l, g.m2, g.batch_size, g.trials
    );
    with_manifest(ctx, "gradcheck", config, &[], || {
        let mut fd_csv = String::from("instance,k,architecture,max_rel_error\n");
        let mut worst: f64 = 0.0;
        for i in 0..g.instances {
            let inst = fd_instance(ctx.seed(), i)?;
            worst = worst.max(inst.max_rel_error);
            fd_csv.push_str(&format!(
                "{i},{},{:?},{:e}\n",
                inst.k, inst.architecture, inst.max_rel_error
            ));
        }
        let fd_ok = worst < FD_TOLERANCE;
        println!(
            "{} finite differences: {} instances, eps {FD_EPS:e}, max relative error {worst:.3e} (< {FD_TOLERANCE:e})",
            if fd_ok { "PASS" } else { "FAIL" },
            g.instances
        );

        let (_, rows) = mcmc_study(&study)?;
        let mut mc_csv = String::from("r,t,mean_l2_error,mean_rel_error,mean_estimate_rel_error\n");
        println!(
            "{:>5} {:>4} {:>14} {:>14} {:>14}",
            "r", "t", "mean_l2_err", "mean_rel_err", "avg_est_err"
        );
        for row in &rows {
            println!(
                "{:>5} {:>4} {:>14.6e} {:>14.6} {:>14.6}",
                row.rounds, row.steps, row.mean_l2_error, row.mean_rel_error, row.mean_estimate_rel_error
            );
            mc_csv.push_str(&format!(
                "{},{},{:?},{:?},{:?}\n",
                row.rounds, row.steps, row.mean_l2_error, row.mean_rel_error, row.mean_estimate_rel_error
            ));
        }
        let monotone = rows.windows(2).all(|w| w[1].mean_l2_error < w[0].mean_l2_error);
        let close = rows.last().is_some_and(|r| r.mean_estimate_rel_error < MCMC_TOLERANCE);
        println!(
            "{} mcmc: error decreasing in r: {monotone}; averaged estimate within {MCMC_TOLERANCE} at largest r: {close}",
            if monotone && close { "PASS" } else { "FAIL" }
        );

        let fd_path = ctx.out("gradcheck-fd.csv");
        let mc_path = ctx.out("gradcheck-mcmc.csv");
        write_atomic(&fd_path, fd_csv.as_bytes())?;
        write_atomic(&mc_path, mc_csv.as_bytes())?;
        if !fd_ok {
            return Err(CliError::Check(format!(
                "analytic gradient disagrees with finite differences (max relative error {worst:.3e})"
            )));
        }
        if !(monotone && close) {
            return Err(CliError::Check("mcmc estimator check failed".into()));
        }
        Ok(vec![fd_path, mc_path])
    })
}
