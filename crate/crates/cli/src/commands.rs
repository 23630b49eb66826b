use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use traj2user_core::eval::{run_group_experiment, run_mrr_experiment};
use traj2user_core::schema::{load_corpus_file, write_segments};
use traj2user_core::synth::generate_corpus;
use traj2user_core::{
    neural, EmbeddingMethod, Error, LabelSchema, Method, MethodKind, SynthConfig, TrainConfig,
    UserCorpus,
};

use crate::manifest::{manifest_path, with_suffix, Manifest};
use crate::{
    Command, CommonArgs, EmbedArgs, EvalGroupsArgs, EvalMrrArgs, MethodArgs, ReplayArgs, SynthArgs,
    UsageError,
};

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Synth(args) => synth(args, command),
        Command::Embed(args) => embed(args, command),
        Command::EvalMrr(args) => eval_mrr(args, command),
        Command::EvalGroups(args) => eval_groups(args, command),
        Command::Replay(args) => replay(args),
    }
}

/// Files created by a command. Unless `commit` is called they are removed
/// when this is dropped, so a failed run leaves no partial outputs behind.
struct Outputs {
    paths: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    fn new() -> Self {
        Outputs {
            paths: Vec::new(),
            committed: false,
        }
    }

    fn write(
        &mut self,
        path: &Path,
        body: impl FnOnce(&mut BufWriter<File>) -> traj2user_core::Result<()>,
    ) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        self.paths.push(path.to_path_buf());
        let mut sink = BufWriter::new(file);
        body(&mut sink).map_err(core_error)?;
        sink.flush()
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    /// Writes the manifest last and keeps everything.
    fn commit(mut self, run: &Command, out: &Path) -> Result<()> {
        let manifest = Manifest::new(run.clone(), self.paths.clone());
        let path = manifest_path(out);
        self.write(&path, |w| {
            w.write_all(manifest.to_json().as_bytes())
                .map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })
        })?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.paths {
                let _ = std::fs::remove_file(p);
            }
        }
    }
}

/// Configuration mistakes are reported as usage errors.
fn core_error(err: Error) -> anyhow::Error {
    match err {
        Error::InvalidCombination(_) | Error::InvalidConfig(_) => {
            UsageError(err.to_string()).into()
        }
        other => other.into(),
    }
}

fn load_schema(common: &CommonArgs) -> Result<LabelSchema> {
    match &common.schema {
        None => Ok(LabelSchema::tagmyday()),
        Some(path) if !path.exists() => {
            Err(UsageError(format!("schema not found: {}", path.display())).into())
        }
        Some(path) => LabelSchema::load(path).map_err(core_error),
    }
}

fn load_corpus(path: &Path, schema: &LabelSchema) -> Result<UserCorpus> {
    if !path.exists() {
        return Err(UsageError(format!("corpus not found: {}", path.display())).into());
    }
    load_corpus_file(path, schema).map_err(core_error)
}

fn train_config(args: &MethodArgs, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: args.train.epochs as usize,
        learning_rate: args.train.lr,
        seed,
        factor: args.factor,
        init_scale: args.train.init_scale,
    }
}

fn build_method(args: &MethodArgs, seed: u64) -> Result<Method> {
    let method =
        Method::new(args.method, args.factor, train_config(args, seed)).map_err(core_error)?;
    if let Method::Traj2User(cfg) = &method {
        cfg.validate().map_err(core_error)?;
    }
    Ok(method)
}

fn synth(args: &SynthArgs, run: &Command) -> Result<()> {
    let schema = load_schema(&args.common)?;
    let config = SynthConfig {
        n_users: args.users as usize,
        max_segments: args.max_segments,
        min_segments: args.min_segments,
        decay_rate: args.decay_rate,
        concentration: args.concentration,
        seed: args.common.seed,
    };
    config.validate().map_err(core_error)?;
    let generated = generate_corpus(&schema, &config).map_err(core_error)?;

    let out = &args.common.out;
    let mut outputs = Outputs::new();
    outputs.write(out, |w| write_segments(w, &schema, &generated.segments))?;
    outputs.write(&with_suffix(out, ".preferences.json"), |w| {
        generated.write_preferences(w, &schema)
    })?;
    outputs.commit(run, out)?;
    println!(
        "{} users, {} segments",
        generated.users.len(),
        generated.segments.len()
    );
    Ok(())
}

fn embed(args: &EmbedArgs, run: &Command) -> Result<()> {
    let schema = load_schema(&args.common)?;
    let method = build_method(&args.method, args.common.seed)?;
    if args.checkpoint.is_some() && args.method.method != MethodKind::Traj2user {
        return Err(UsageError(format!(
            "--checkpoint needs method traj2user, not {}",
            args.method.method
        ))
        .into());
    }
    let corpus = load_corpus(&args.corpus, &schema)?;

    let mut outputs = Outputs::new();
    let embeddings = match (&method, &args.checkpoint) {
        (Method::Traj2User(cfg), Some(checkpoint)) => {
            let model = neural::train::<f64>(&corpus, cfg).map_err(core_error)?;
            outputs.write(checkpoint, |w| model.write_checkpoint(w))?;
            model.embeddings()
        }
        _ => {
            EmbeddingMethod::<f64>::embed(&method, &corpus, args.common.seed).map_err(core_error)?
        }
    };
    outputs.write(&args.common.out, |w| embeddings.write_csv(w))?;
    outputs.commit(run, &args.common.out)?;
    println!(
        "{} users x {} dims ({})",
        embeddings.n_users(),
        embeddings.dim(),
        embeddings.method_tag()
    );
    Ok(())
}

fn eval_mrr(args: &EvalMrrArgs, run: &Command) -> Result<()> {
    let schema = load_schema(&args.common)?;
    let method = build_method(&args.method, args.common.seed)?;
    let corpus = load_corpus(&args.corpus, &schema)?;
    let report = run_mrr_experiment::<f64, _>(
        &corpus,
        &method,
        args.pairs as usize,
        args.common.seed,
        args.jobs as usize,
    )
    .map_err(core_error)?;

    let mut outputs = Outputs::new();
    outputs.write(&args.common.out, |w| report.write_csv(w))?;
    outputs.commit(run, &args.common.out)?;
    println!("MRR {}", report.mrr);
    Ok(())
}

fn eval_groups(args: &EvalGroupsArgs, run: &Command) -> Result<()> {
    let schema = load_schema(&args.common)?;
    let method = build_method(&args.method, args.common.seed)?;
    let corpus = load_corpus(&args.corpus, &schema)?;
    let sim = run_group_experiment::<f64, _>(
        &corpus,
        args.groups as usize,
        args.group_size as usize,
        &method,
        args.common.seed,
    )
    .map_err(core_error)?;

    let prefix = &args.common.out;
    let mut outputs = Outputs::new();
    outputs.write(&with_suffix(prefix, ".csv"), |w| sim.write_csv(w))?;
    outputs.write(&with_suffix(prefix, ".pgm"), |w| sim.write_pgm(w))?;
    outputs.commit(run, prefix)?;
    let (within, between) = sim.within_between_means();
    println!("within {within} between {between}");
    Ok(())
}

fn replay(args: &ReplayArgs) -> Result<()> {
    if !args.manifest.exists() {
        return Err(UsageError(format!("manifest not found: {}", args.manifest.display())).into());
    }
    let mut run = Manifest::load(&args.manifest)?.run;
    if let Some(out) = &args.out {
        let common = match &mut run {
            Command::Synth(a) => &mut a.common,
            Command::Embed(a) => &mut a.common,
            Command::EvalMrr(a) => &mut a.common,
            Command::EvalGroups(a) => &mut a.common,
            Command::Replay(_) => unreachable!("replay is never recorded"),
        };
        common.out = out.clone();
    }
    execute(&run)
}
