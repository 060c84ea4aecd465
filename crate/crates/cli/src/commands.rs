use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use esfw::data::{generate_dataset, read_pair, DatasetManifest, GenParams, PairMode, PairSample, Split};
use esfw::harness::svg::{line_chart, Series};
use esfw::harness::{
    ablation_sweep, evaluate, format_epoch_line, model_gradcheck, train, write_ablation_csv, write_curves_csv,
    ModelGradCheck, TrainConfig, LOG_HEADER,
};
use esfw::model::Esfw;
use esfw::weaving::{predict_matches, WeavingConfig};
use esfw::{Error, Result};

use crate::{
    AblateArgs, Command, EvalArgs, GenDataArgs, GradcheckArgs, MatchArgs, ModelArgs, Monitor, OptimArgs, PlotArgs,
    SplitArg, TrainArgs,
};

pub const LOG_FILE: &str = "train.log";
pub const CURVES_CSV: &str = "curves.csv";
pub const CURVES_SVG: &str = "curves.svg";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_SVG: &str = "ablation.svg";

pub fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval_cmd(&a),
        Command::Match(a) => match_cmd(&a),
        Command::Gradcheck(a) => gradcheck_cmd(&a),
        Command::Ablate(a) => ablate_cmd(&a),
        Command::Plot(a) => plot_cmd(&a),
    }
    .map(|()| ExitCode::SUCCESS)
    .or_else(|e| match e {
        Failure::Error(e) => Err(e),
        Failure::Exit(code) => Ok(code),
    })
}

/// A subcommand either fails with an error or finishes with a non-zero
/// verdict of its own.
enum Failure {
    Error(Error),
    Exit(ExitCode),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Error(e.into())
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Echoes every flag, defaults included, to standard error.
fn print_header(subcommand: &str, fields: &[(&str, String)]) {
    eprintln!("# esfw {subcommand}");
    for (key, value) in fields {
        eprintln!("#   {key} = {value}");
    }
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn path(p: &Path) -> String {
    p.display().to_string()
}

impl ModelArgs {
    fn config(&self) -> WeavingConfig {
        let mut c = WeavingConfig::new(self.k, self.layers, self.dg, self.df);
        c.merge = self.merge_semantics;
        c.residual = !self.no_residual;
        c.similarity_grad = !self.detach_similarity;
        c
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("k", self.k.to_string()),
            ("layers", self.layers.to_string()),
            ("dg", self.dg.to_string()),
            ("df", self.df.to_string()),
            ("merge-semantics", self.merge_semantics.to_string()),
            ("no-residual", self.no_residual.to_string()),
            ("detach-similarity", self.detach_similarity.to_string()),
        ]
    }
}

impl OptimArgs {
    fn config(&self, weaving: WeavingConfig) -> TrainConfig {
        let mut c = TrainConfig::new(weaving);
        c.learning_rate = self.lr;
        c.batch_size = self.batch;
        c.epochs = self.epochs;
        c.seed = self.seed;
        c.symmetric_loss = !self.row_loss;
        c
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lr", self.lr.to_string()),
            ("batch", self.batch.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("row-loss", self.row_loss.to_string()),
        ]
    }
}

fn gen_data(a: &GenDataArgs) -> CmdResult {
    print_header(
        "gen-data",
        &[
            ("kind", join(&a.kind)),
            ("n", a.n.to_string()),
            ("pairs", a.pairs.to_string()),
            ("test-pairs", a.test_pairs.to_string()),
            ("seed", a.seed.to_string()),
            ("noise", a.noise.to_string()),
            ("deform-kernels", a.deform_kernels.to_string()),
            ("deform-magnitude", a.deform_magnitude.to_string()),
            ("out", path(&a.out)),
        ],
    );
    let mode = if a.deform_kernels > 0 {
        PairMode::Deformed {
            num_kernels: a.deform_kernels,
            magnitude: a.deform_magnitude,
        }
    } else {
        PairMode::Rigid { noise_sigma: a.noise }
    };
    let params = GenParams {
        n: a.n,
        kinds: a.kind.clone(),
        mode,
    };
    let manifest = generate_dataset(&a.out, params, a.pairs, a.test_pairs, a.seed)?;
    println!("wrote {} pairs to {}", manifest.entries.len(), a.out.display());
    Ok(())
}

fn load_split(manifest: &DatasetManifest, split: Split) -> Result<Vec<PairSample>> {
    let pairs = manifest.load_split(split)?;
    log::info!("loaded {} {split} pairs from {}", pairs.len(), manifest.root.display());
    Ok(pairs)
}

fn train_cmd(a: &TrainArgs) -> CmdResult {
    let mut fields = vec![("data", path(&a.data))];
    fields.extend(a.model.fields());
    fields.extend(a.optim.fields());
    fields.push(("monitor", format!("{:?}", a.monitor).to_lowercase()));
    fields.push(("out", path(&a.out)));
    print_header("train", &fields);

    let config = a.optim.config(a.model.config());
    let manifest = DatasetManifest::read(&a.data)?;
    let train_pairs = load_split(&manifest, Split::Train)?;
    let test_pairs = load_split(&manifest, Split::Test)?;
    let monitor = match a.monitor {
        Monitor::Train => &train_pairs,
        Monitor::Test => &test_pairs,
        Monitor::Auto if test_pairs.is_empty() => &train_pairs,
        Monitor::Auto => &test_pairs,
    };

    fs::create_dir_all(&a.out)?;
    let mut log = BufWriter::new(File::create(a.out.join(LOG_FILE))?);
    writeln!(log, "{LOG_HEADER}")?;
    let mut write_error = None;
    let outcome = train(&config, &train_pairs, monitor, |record| {
        if write_error.is_none() {
            if let Err(e) = writeln!(log, "{}", format_epoch_line(record)).and_then(|()| log.flush()) {
                write_error = Some(e);
            }
        }
    })?;
    if let Some(e) = write_error {
        return Err(e.into());
    }
    outcome.model.save(&a.out)?;
    if let Some(last) = outcome.log.last() {
        println!("epoch {}: loss {}, corr@0 {}", last.epoch, last.loss, last.corr0);
    }
    println!("checkpoint written to {}", a.out.display());
    Ok(())
}

fn eval_cmd(a: &EvalArgs) -> CmdResult {
    print_header(
        "eval",
        &[
            ("checkpoint", path(&a.checkpoint)),
            ("data", path(&a.data)),
            ("split", format!("{:?}", a.split).to_lowercase()),
            ("radii", join(&a.radii)),
            ("out", path(&a.out)),
        ],
    );
    let mut model = Esfw::load(&a.checkpoint)?;
    let manifest = DatasetManifest::read(&a.data)?;
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let pairs = load_split(&manifest, split)?;
    let curves = evaluate(&mut model, &pairs, &a.radii)?;
    fs::create_dir_all(&a.out)?;
    write_curves_csv(&a.out.join(CURVES_CSV), &a.out.join(CURVES_SVG), &curves)?;
    println!("method,{}", join(&a.radii));
    for c in &curves {
        println!("{},{}", c.method, join(&c.corr));
    }
    Ok(())
}

fn match_cmd(a: &MatchArgs) -> CmdResult {
    print_header("match", &[("checkpoint", path(&a.checkpoint)), ("pair", path(&a.pair))]);
    let mut model = Esfw::load(&a.checkpoint)?;
    let pair = read_pair(&a.pair)?;
    let scores = model.score_pair(&pair.cloud_a, &pair.cloud_b)?;
    let mut out = std::io::stdout().lock();
    for (n, m) in predict_matches(&scores).into_iter().enumerate() {
        if let Some(m) = m {
            writeln!(out, "{n},{m},{}", scores.get(n, m))?;
        }
    }
    Ok(())
}

fn gradcheck_cmd(a: &GradcheckArgs) -> CmdResult {
    print_header(
        "gradcheck",
        &[
            ("n", a.n.to_string()),
            ("k", a.k.to_string()),
            ("layers", a.layers.to_string()),
            ("dg", a.dg.to_string()),
            ("df", a.df.to_string()),
            ("merge-semantics", a.merge_semantics.to_string()),
            ("eps", a.eps.to_string()),
            ("tolerance", a.tolerance.to_string()),
            ("seed", a.seed.to_string()),
        ],
    );
    let mut weaving = WeavingConfig::new(a.k, a.layers, a.dg, a.df);
    weaving.merge = a.merge_semantics;
    let mut setup = ModelGradCheck::new(a.n, weaving);
    setup.eps = a.eps;
    setup.seed = a.seed;
    let report = model_gradcheck(&setup)?;
    println!("max relative error: {:e}", report.max_rel_error);
    println!("compared: {}, skipped at kinks: {}", report.compared, report.skipped);
    if let Some(worst) = &report.worst {
        println!(
            "worst: {worst} (analytic {:e}, numeric {:e})",
            report.analytic_at_worst, report.numeric_at_worst
        );
    }
    if report.max_rel_error < a.tolerance {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(Failure::Exit(ExitCode::from(crate::EXIT_RUNTIME)))
    }
}

fn ablate_cmd(a: &AblateArgs) -> CmdResult {
    let mut fields = vec![
        ("data", path(&a.data)),
        ("axis", a.axis.to_string()),
        ("values", join(&a.values)),
    ];
    fields.extend(a.model.fields());
    fields.extend(a.optim.fields());
    fields.push(("out", path(&a.out)));
    print_header("ablate", &fields);

    let base = a.optim.config(a.model.config());
    let manifest = DatasetManifest::read(&a.data)?;
    let train_pairs = load_split(&manifest, Split::Train)?;
    let mut test_pairs = load_split(&manifest, Split::Test)?;
    if test_pairs.is_empty() {
        log::warn!("dataset has no test split; scoring on the training pairs");
        test_pairs = train_pairs.clone();
    }
    let rows = ablation_sweep(&base, a.axis, &a.values, &train_pairs, &test_pairs)?;
    fs::create_dir_all(&a.out)?;
    write_ablation_csv(&a.out.join(ABLATION_CSV), &a.out.join(ABLATION_SVG), a.axis, &rows)?;
    println!("axis_value,method,corr@0");
    for r in &rows {
        println!("{},{},{}", r.axis_value, r.method, r.corr0);
    }
    Ok(())
}

fn parse_error(p: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Config(format!("{}:{line}: {}", p.display(), message.into()))
}

fn plot_cmd(a: &PlotArgs) -> CmdResult {
    print_header(
        "plot",
        &[
            ("csv", path(&a.csv)),
            ("out", path(&a.out)),
            ("title", a.title.clone().unwrap_or_default()),
        ],
    );
    let text = fs::read_to_string(&a.csv)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| parse_error(&a.csv, 1, "empty file"))?;
    let (default_title, x_label, y_label) = match header.trim() {
        "radius,method,corr" => ("Corr under tolerant error", "tolerant error (fraction of dist_max)", "Corr"),
        "axis_value,method,corr@0" => ("Exact Corr per ablation value", "axis value", "Corr (r = 0)"),
        h if h == LOG_HEADER => ("Training progress", "epoch", "Corr (r = 0)"),
        other => return Err(parse_error(&a.csv, 1, format!("unrecognized header {other:?}")).into()),
    };
    let is_log = header.trim() == LOG_HEADER;
    let mut series: Vec<Series> = Vec::new();
    for (i, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(parse_error(&a.csv, i + 2, "expected 3 columns").into());
        }
        let number = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| parse_error(&a.csv, i + 2, format!("bad number {s:?}")))
        };
        let (name, x, y) = if is_log {
            ("corr@0", number(cols[0])?, number(cols[2])?)
        } else {
            (cols[1], number(cols[0])?, number(cols[2])?)
        };
        match series.iter_mut().find(|s| s.name == name) {
            Some(s) => s.points.push((x, y)),
            None => series.push(Series {
                name: name.to_string(),
                points: vec![(x, y)],
            }),
        }
    }
    let title = a.title.as_deref().unwrap_or(default_title);
    fs::write(&a.out, line_chart(title, x_label, y_label, &series))?;
    println!("wrote {}", a.out.display());
    Ok(())
}
