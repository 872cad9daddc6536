//! Subcommand implementations. Artifacts live at fixed names under the
//! configured directories; checkpoints and pair files carry the seed.

use crate::config::RunConfig;
use crate::report::{f, mean_pm, Report};
use crate::{Cli, Command};
use anyhow::{bail, Context, Result};
use crest_core::agreement::{fit_agreement, prepare_pairs, AgreementConfig};
use crest_core::beam::BeamConfig;
use crest_core::corpus::{
    build_vocab, encode_examples, gen_nli_corpus, gen_sentiment_corpus, read_examples, read_pairs, split_of,
    write_examples, write_pairs, CounterfactualPair, Example, Split, Task, Vocab,
};
use crest_core::editor::{Editor, EditorConfig};
use crest_core::generation::{
    budget_sweep, editor_training_data, oracle_validity, rationale_edit_simulability, summarize, validity_filter,
    Generator, SweepRow,
};
use crest_core::metrics::{forward_simulability, plausibility_auc, validity, LinearStudent, NgramLM, SimulationExample};
use crest_core::rationalizer::{accuracy, fit, Rationalizer, RationalizerConfig, TrainConfig, TrainReport};
use std::path::{Path, PathBuf};

pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = cli.seed {
        cfg.set("seed", &v.to_string())?;
    }
    if let Some(v) = cli.budget {
        cfg.set("budget", &v.to_string())?;
    }
    if let Some(v) = cli.alpha {
        cfg.set("alpha", &v.to_string())?;
    }
    if let Some(v) = cli.lambda {
        cfg.set("lambda", &v.to_string())?;
    }
    if let Some(v) = cli.beam_size {
        cfg.set("beam_size", &v.to_string())?;
    }
    if let Some(v) = &cli.out {
        cfg.set("report_dir", &v.display().to_string())?;
    }
    Ok(cfg)
}

pub fn run(cmd: Command, cfg: &RunConfig) -> Result<()> {
    let ctx = Ctx { cfg, cmd };
    match cmd {
        Command::GenData => gen_data(&ctx),
        Command::TrainMasker => train_masker(&ctx),
        Command::TrainEditor => train_editor(&ctx),
        Command::Generate => generate(&ctx),
        Command::Filter => filter(&ctx),
        Command::Augment => augment(&ctx),
        Command::TrainAgreement => train_agreement(&ctx),
        Command::EvalMetrics => eval_metrics(&ctx),
        Command::Simulate => simulate(&ctx),
        Command::SweepBudget => sweep_budget(&ctx),
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    cmd: Command,
}

struct Data {
    task: Task,
    vocab: Vocab,
    train: Vec<Example>,
    dev: Vec<Example>,
    test: Vec<Example>,
}

impl Ctx<'_> {
    fn seed(&self) -> Result<u64> {
        self.cfg.seed()
    }

    fn report(&self, columns: &[&str]) -> Result<Report> {
        Ok(Report::new(self.cmd.name(), self.seed()?, self.cfg.hash(), columns))
    }

    fn write(&self, report: &Report) -> Result<()> {
        let name = format!("{}-s{}", self.cmd.name(), self.seed()?);
        let path = report.write(&self.cfg.path("report_dir"), &name)?;
        log::info!("wrote {}", path.display());
        Ok(())
    }

    fn corpus_path(&self) -> PathBuf {
        self.cfg.path("data_dir").join("corpus.jsonl")
    }

    fn vocab_path(&self) -> PathBuf {
        self.cfg.path("data_dir").join("vocab.txt")
    }

    fn checkpoint(&self, family: &str, seed: u64) -> PathBuf {
        self.cfg.path("checkpoint_dir").join(format!("{family}-s{seed}.ckpt"))
    }

    fn pairs_path(&self, split: &str, filtered: bool) -> Result<PathBuf> {
        let suffix = if filtered { ".filtered" } else { "" };
        Ok(self.cfg.path("data_dir").join(format!("pairs-{split}-s{}{suffix}.jsonl", self.seed()?)))
    }

    fn data(&self) -> Result<Data> {
        let task = self.cfg.task()?;
        let path = self.corpus_path();
        require(&path, "corpus (run gen-data first)")?;
        let all = read_examples(&path, task)?;
        let vocab = Vocab::load(&self.vocab_path()).with_context(|| format!("loading {}", self.vocab_path().display()))?;
        Ok(Data {
            task,
            vocab,
            train: split_of(&all, Split::Train),
            dev: split_of(&all, Split::Dev),
            test: split_of(&all, Split::Test),
        })
    }

    fn rationalizer_config(&self, task: Task, budget: f64) -> Result<RationalizerConfig> {
        Ok(RationalizerConfig {
            d: self.cfg.get("d")?,
            ffn_hidden: self.cfg.get("ffn_hidden")?,
            max_len: self.cfg.get("max_len")?,
            num_classes: task.num_classes(),
            budget,
            transition_penalty: self.cfg.get("transition_penalty")?,
            freeze_premise: self.cfg.get("freeze_premise")?,
            ..RationalizerConfig::default()
        })
    }

    fn train_config(&self, seed: u64, epochs_key: &str) -> Result<TrainConfig> {
        Ok(TrainConfig {
            epochs: self.cfg.get(epochs_key)?,
            batch_size: self.cfg.get("batch_size")?,
            lr: self.cfg.get("lr")?,
            weight_decay: self.cfg.get("weight_decay")?,
            seed,
            patience: self.cfg.get("patience")?,
        })
    }

    fn beam(&self) -> Result<BeamConfig> {
        Ok(BeamConfig {
            size: self.cfg.get("beam_size")?,
            ..BeamConfig::default()
        })
    }

    fn load_rationalizer(&self, family: &str, seed: u64, vocab: &Vocab) -> Result<Rationalizer> {
        let p = self.checkpoint(family, seed);
        require(&p, &format!("{family} checkpoint"))?;
        Rationalizer::load(&p, vocab).with_context(|| format!("loading {}", p.display()))
    }

    fn load_editor(&self, seed: u64, vocab: &Vocab) -> Result<Editor> {
        let p = self.checkpoint("editor", seed);
        require(&p, "editor checkpoint (run train-editor first)")?;
        Editor::load(&p, vocab).with_context(|| format!("loading {}", p.display()))
    }

    fn save_rationalizer(&self, family: &str, model: &Rationalizer, vocab: &Vocab) -> Result<()> {
        let p = self.checkpoint(family, self.seed()?);
        std::fs::create_dir_all(p.parent().unwrap())?;
        model.save(&p, vocab)?;
        log::info!("wrote {}", p.display());
        Ok(())
    }

    fn load_pairs(&self, task: Task, split: &str, filtered: bool) -> Result<Vec<CounterfactualPair>> {
        let p = self.pairs_path(split, filtered)?;
        require(&p, "pair file (run generate first)")?;
        Ok(read_pairs(&p, task)?)
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!("missing {what}: {}", path.display());
    }
    Ok(())
}

fn gen_data(ctx: &Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let task = cfg.task()?;
    let seed: u64 = cfg.get("corpus_seed")?;
    let size: usize = cfg.get("corpus_size")?;
    if size == 0 {
        bail!("corpus_size must be positive");
    }
    let all = match task {
        Task::Sentiment => gen_sentiment_corpus(seed, size, (cfg.get("min_tokens")?, cfg.get("max_tokens")?), cfg.get("distractor_rate")?),
        Task::Nli => gen_nli_corpus(seed, size),
    };
    let dir = cfg.path("data_dir");
    std::fs::create_dir_all(&dir)?;
    write_examples(&ctx.corpus_path(), task, &all)?;
    build_vocab(&all).save(&ctx.vocab_path())?;
    log::info!("wrote {} and {}", ctx.corpus_path().display(), ctx.vocab_path().display());

    let mut columns = vec!["split", "examples"];
    let names: Vec<String> = task.label_names().iter().map(|n| format!("share_{n}")).collect();
    columns.extend(names.iter().map(String::as_str));
    let mut r = ctx.report(&columns)?;
    for (name, split) in [("train", Split::Train), ("dev", Split::Dev), ("test", Split::Test)] {
        let part = split_of(&all, split);
        let mut row = vec![name.to_string(), part.len().to_string()];
        for label in 0..task.num_classes() {
            let share = part.iter().filter(|e| e.label == label).count() as f64 / part.len().max(1) as f64;
            row.push(f(share));
        }
        r.row(row);
    }
    ctx.write(&r)
}

fn mean_plausibility(model: &Rationalizer, vocab: &Vocab, examples: &[Example]) -> Result<Option<f64>> {
    let mut scores = Vec::new();
    for e in examples {
        let Some(gold) = &e.rationale else { continue };
        let out = model.forward(&vocab.encode(&e.tokens), None)?;
        if let Ok(a) = plausibility_auc(&out.mu, gold) {
            scores.push(a);
        }
    }
    Ok((!scores.is_empty()).then(|| crest_core::metrics::mean_std(&scores).0))
}

const TRAINING_COLUMNS: [&str; 5] = ["split", "epoch", "loss", "accuracy", "plausibility_auc"];

/// Per-epoch rows (mean training loss, dev accuracy) and a test row.
fn training_report(ctx: &Ctx, data: &Data, model: &Rationalizer, rep: &TrainReport, steps_per_epoch: usize) -> Result<Report> {
    let mut r = ctx.report(&TRAINING_COLUMNS)?;
    for (epoch, chunk) in rep.losses.chunks(steps_per_epoch.max(1)).enumerate() {
        let loss = chunk.iter().sum::<f64>() / chunk.len() as f64;
        let dev = rep.dev_accuracy.get(epoch).map_or(String::new(), |a| f(*a));
        r.row(vec!["dev".into(), epoch.to_string(), f(loss), dev, String::new()]);
    }
    let test = encode_examples(&data.vocab, &data.test);
    let acc = accuracy(model, &test)?;
    let auc = mean_plausibility(model, &data.vocab, &data.test)?.map_or(String::new(), f);
    r.row(vec!["test".into(), rep.best_epoch.to_string(), String::new(), f(acc), auc]);
    Ok(r)
}

fn train_rationalizer(ctx: &Ctx, data: &Data, train: &[(Vec<usize>, usize)]) -> Result<(Rationalizer, Report)> {
    let seed = ctx.seed()?;
    let mcfg = ctx.rationalizer_config(data.task, ctx.cfg.get("budget")?)?;
    let mut model = Rationalizer::new(mcfg, data.vocab.len(), seed)?;
    let tcfg = ctx.train_config(seed, "epochs")?;
    let rep = fit(&mut model, train, &encode_examples(&data.vocab, &data.dev), &tcfg)?;
    let steps = train.len().div_ceil(tcfg.batch_size.max(1));
    let r = training_report(ctx, data, &model, &rep, steps)?;
    Ok((model, r))
}

fn train_masker(ctx: &Ctx) -> Result<()> {
    let data = ctx.data()?;
    let train = encode_examples(&data.vocab, &data.train);
    let (model, r) = train_rationalizer(ctx, &data, &train)?;
    ctx.save_rationalizer("masker", &model, &data.vocab)?;
    ctx.write(&r)
}

fn train_editor(ctx: &Ctx) -> Result<()> {
    let data = ctx.data()?;
    let seed = ctx.seed()?;
    let masker = ctx.load_rationalizer("masker", seed, &data.vocab)?;
    let examples = editor_training_data(&masker, &data.vocab, data.task, &data.train)?;
    let ecfg = EditorConfig {
        d: ctx.cfg.get("d")?,
        ffn_hidden: ctx.cfg.get("ffn_hidden")?,
        max_len: ctx.cfg.get("max_len")?,
    };
    let mut editor = Editor::new(ecfg, data.vocab.len(), seed)?;
    let tcfg = ctx.train_config(seed, "editor_epochs")?;
    let losses = editor.fit(&examples, &tcfg)?;
    let p = ctx.checkpoint("editor", seed);
    std::fs::create_dir_all(p.parent().unwrap())?;
    editor.save(&p, &data.vocab)?;
    log::info!("wrote {}", p.display());

    let mut r = ctx.report(&["epoch", "loss"])?;
    let steps = examples.len().div_ceil(tcfg.batch_size.max(1)).max(1);
    for (epoch, chunk) in losses.chunks(steps).enumerate() {
        r.row(vec![epoch.to_string(), f(chunk.iter().sum::<f64>() / chunk.len() as f64)]);
    }
    r.notes.push(format!("{} training examples", examples.len()));
    ctx.write(&r)
}

const PAIR_COLUMNS: [&str; 9] = ["split", "pairs", "skipped", "validity", "fluency", "diversity_x100", "closeness", "tokens", "malformed"];

fn pair_row(split: &str, row: &SweepRow, malformed: usize) -> Vec<String> {
    vec![
        split.to_string(),
        row.pairs.to_string(),
        row.skipped.to_string(),
        f(row.validity),
        f(row.fluency),
        f(row.diversity * 100.0),
        f(row.closeness),
        f(row.mean_tokens),
        malformed.to_string(),
    ]
}

fn language_model(data: &Data) -> NgramLM {
    NgramLM::train(&data.train.iter().map(|e| e.tokens.clone()).collect::<Vec<_>>())
}

fn generate(ctx: &Ctx) -> Result<()> {
    let data = ctx.data()?;
    let seed = ctx.seed()?;
    let masker = ctx.load_rationalizer("masker", seed, &data.vocab)?;
    let editor = ctx.load_editor(seed, &data.vocab)?;
    let gen = Generator {
        masker: &masker,
        editor: &editor,
        vocab: &data.vocab,
        task: data.task,
        beam: ctx.beam()?,
    };
    let lm = language_model(&data);
    let mut r = ctx.report(&PAIR_COLUMNS)?;
    for (name, examples) in [("train", &data.train), ("test", &data.test)] {
        let (done, skipped) = gen.generate_all(examples, true);
        let malformed = done.iter().filter(|o| o.malformed).count();
        let pairs: Vec<CounterfactualPair> = done.into_iter().map(|o| o.pair).collect();
        let p = ctx.pairs_path(name, false)?;
        write_pairs(&p, data.task, &pairs)?;
        log::info!("wrote {} ({} pairs, {} skipped)", p.display(), pairs.len(), skipped.len());
        if pairs.is_empty() {
            bail!("no pairs generated for the {name} split");
        }
        let row = summarize(ctx.cfg.get("budget")?, &pairs, skipped.len(), data.task, &lm)?;
        r.row(pair_row(name, &row, malformed));
    }
    ctx.write(&r)
}

fn filter(ctx: &Ctx) -> Result<()> {
    let data = ctx.data()?;
    let seed = ctx.seed()?;
    let masker = ctx.load_rationalizer("masker", seed, &data.vocab)?;
    let mut r = ctx.report(&["split", "pairs", "kept", "oracle_validity_before", "oracle_validity_after", "predictor_validity_after"])?;
    for split in ["train", "test"] {
        let pairs = ctx.load_pairs(data.task, split, false)?;
        let before = oracle_validity(&pairs, data.task)?;
        let total = pairs.len();
        let (kept, _) = validity_filter(pairs, &masker, &data.vocab)?;
        let p = ctx.pairs_path(split, true)?;
        write_pairs(&p, data.task, &kept)?;
        log::info!("wrote {}", p.display());
        let (after, pred) = if kept.is_empty() {
            (String::new(), String::new())
        } else {
            let pred = validity(&kept, |p| Ok(Some(masker.classify(&data.vocab.encode(&p.x_cf))?)))?;
            (f(oracle_validity(&kept, data.task)?), f(pred))
        };
        r.row(vec![split.into(), total.to_string(), kept.len().to_string(), f(before), after, pred]);
    }
    ctx.write(&r)
}

fn augment(ctx: &Ctx) -> Result<()> {
    let data = ctx.data()?;
    let filtered = ctx.pairs_path("train", true)?;
    let pairs = ctx.load_pairs(data.task, "train", filtered.exists())?;
    let max_len: usize = ctx.cfg.get("max_len")?;
    let mut train = encode_examples(&data.vocab, &data.train);
    let factual = train.len();
    train.extend(
        pairs
            .iter()
            .map(|p| (data.vocab.encode(&p.x_cf), p.y_c))
            .filter(|(x, _)| !x.is_empty() && x.len() <= max_len),
    );
    let (model, mut r) = train_rationalizer(ctx, &data, &train)?;
    r.notes.push(format!("{factual} factual + {} counterfactual examples", train.len() - factual));
    ctx.save_rationalizer("augmented", &model, &data.vocab)?;
    ctx.write(&r)
}

fn train_agreement(ctx: &Ctx) -> Result<()> {
    let data = ctx.data()?;
    let seed = ctx.seed()?;
    let pairs = ctx.load_pairs(data.task, "train", false)?;
    let mcfg = ctx.rationalizer_config(data.task, ctx.cfg.get("budget")?)?;
    let mut model = Rationalizer::new(mcfg, data.vocab.len(), seed)?;
    let prepared = prepare_pairs(&pairs, &data.vocab, &model);
    if prepared.is_empty() {
        bail!("no usable pairs");
    }
    let acfg = AgreementConfig {
        alpha: ctx.cfg.weight("alpha")?,
        lambda: ctx.cfg.weight("lambda")?,
    };
    let tcfg = ctx.train_config(seed, "epochs")?;
    let (rep, epochs) = fit_agreement(&mut model, &prepared, &encode_examples(&data.vocab, &data.dev), &acfg, &tcfg)?;
    ctx.save_rationalizer("agreement", &model, &data.vocab)?;

    let steps = prepared.len().div_ceil(tcfg.batch_size.max(1));
    let mut r = training_report(ctx, &data, &model, &rep, steps)?;
    r.notes.push(format!("alpha {} lambda {}; {} pairs", acfg.alpha, acfg.lambda, prepared.len()));
    ctx.write(&r)?;

    let mut e = ctx.report(&["epoch", "loss_f", "loss_c", "omega", "acc_f", "acc_c"])?;
    for s in &epochs {
        e.row(vec![s.epoch.to_string(), f(s.loss_f), f(s.loss_c), f(s.omega), f(s.acc_f), f(s.acc_c)]);
    }
    let name = format!("{}-epochs-s{}", ctx.cmd.name(), seed);
    e.write(&ctx.cfg.path("report_dir"), &name)?;
    Ok(())
}

fn seeds(ctx: &Ctx) -> Result<Vec<u64>> {
    let base = ctx.seed()?;
    let n: u64 = ctx.cfg.get("seeds")?;
    if n == 0 {
        bail!("seeds must be positive");
    }
    Ok((base..base + n).collect())
}

fn eval_family(ctx: &Ctx) -> Result<String> {
    let family: String = ctx.cfg.get("eval_model")?;
    if !["masker", "augmented", "agreement"].contains(&family.as_str()) {
        bail!("eval_model must be masker, augmented or agreement, got {family:?}");
    }
    Ok(family)
}

fn eval_metrics(ctx: &Ctx) -> Result<()> {
    let data = ctx.data()?;
    let family = eval_family(ctx)?;
    let lm = language_model(&data);
    let cols = ["model_seed", "accuracy", "plausibility_auc", "validity", "fluency", "diversity_x100", "closeness", "tokens"];
    let mut r = ctx.report(&cols)?;
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); cols.len() - 1];
    let test = encode_examples(&data.vocab, &data.test);
    for s in seeds(ctx)? {
        let model = ctx.load_rationalizer(&family, s, &data.vocab)?;
        let mut vals = vec![accuracy(&model, &test)?, mean_plausibility(&model, &data.vocab, &data.test)?.unwrap_or(f64::NAN)];
        let pair_file = ctx.cfg.path("data_dir").join(format!("pairs-test-s{s}.jsonl"));
        if pair_file.exists() {
            let pairs = read_pairs(&pair_file, data.task)?;
            let row = summarize(ctx.cfg.get("budget")?, &pairs, 0, data.task, &lm)?;
            vals.extend([row.validity, row.fluency, row.diversity * 100.0, row.closeness, row.mean_tokens]);
        } else {
            vals.extend([f64::NAN; 5]);
        }
        let mut cells = vec![s.to_string()];
        for (i, v) in vals.iter().enumerate() {
            cells.push(if v.is_nan() { String::new() } else { f(*v) });
            if !v.is_nan() {
                columns[i].push(*v);
            }
        }
        r.row(cells);
    }
    let mut summary = vec!["mean ± std".to_string()];
    summary.extend(columns.iter().map(|c| if c.is_empty() { String::new() } else { mean_pm(c) }));
    r.row(summary);
    r.notes.push(format!("model family: {family}"));
    ctx.write(&r)
}

fn simulate(ctx: &Ctx) -> Result<()> {
    let data = ctx.data()?;
    let family = eval_family(ctx)?;
    let editor = ctx.load_editor(ctx.seed()?, &data.vocab)?;
    let beam = ctx.beam()?;
    let mut r = ctx.report(&["model_seed", "forward_simulability", "counterfactual_simulability", "evaluated", "failed"])?;
    let (mut fwd, mut cf) = (Vec::new(), Vec::new());
    let sim_data = |model: &Rationalizer, examples: &[Example]| -> Result<Vec<SimulationExample>> {
        examples
            .iter()
            .map(|e| {
                let tokens = data.vocab.encode(&e.tokens);
                let out = model.forward(&tokens, None)?;
                Ok(SimulationExample { teacher: out.prediction(), rationale: out.z, tokens })
            })
            .collect()
    };
    let inputs: Vec<Vec<usize>> = data.test.iter().map(|e| data.vocab.encode(&e.tokens)).collect();
    for s in seeds(ctx)? {
        let model = ctx.load_rationalizer(&family, s, &data.vocab)?;
        let student = LinearStudent::fit(&sim_data(&model, &data.train)?, data.vocab.len(), data.task.num_classes(), 200, 1.0);
        let fs = forward_simulability(&student, &sim_data(&model, &data.test)?)?;
        let cs = rationale_edit_simulability(&model, &editor, &data.vocab, data.task, &inputs, &beam)?;
        fwd.push(fs);
        cf.push(cs.rate);
        r.row(vec![s.to_string(), f(fs), f(cs.rate), cs.evaluated.to_string(), cs.failed.to_string()]);
    }
    r.row(vec!["mean ± std".into(), mean_pm(&fwd), mean_pm(&cf), String::new(), String::new()]);
    r.notes.push(format!("model family: {family}; editor seed {}", ctx.seed()?));
    ctx.write(&r)
}

fn sweep_budget(ctx: &Ctx) -> Result<()> {
    let data = ctx.data()?;
    let seed = ctx.seed()?;
    let lm = language_model(&data);
    let train = encode_examples(&data.vocab, &data.train);
    let dev = encode_examples(&data.vocab, &data.dev);
    let rows = budget_sweep(&data.test, &ctx.cfg.budgets()?, data.task, &data.vocab, &lm, ctx.beam()?, |b| {
        let mut m = Rationalizer::new(ctx.rationalizer_config(data.task, b).map_err(to_core)?, data.vocab.len(), seed)?;
        fit(&mut m, &train, &dev, &ctx.train_config(seed, "epochs").map_err(to_core)?)?;
        let examples = editor_training_data(&m, &data.vocab, data.task, &data.train)?;
        let ecfg = EditorConfig {
            d: ctx.cfg.get("d").map_err(to_core)?,
            ffn_hidden: ctx.cfg.get("ffn_hidden").map_err(to_core)?,
            max_len: ctx.cfg.get("max_len").map_err(to_core)?,
        };
        let mut e = Editor::new(ecfg, data.vocab.len(), seed)?;
        e.fit(&examples, &ctx.train_config(seed, "editor_epochs").map_err(to_core)?)?;
        Ok((m, e))
    })?;
    let mut r = ctx.report(&["budget", "validity", "fluency", "diversity_x100", "closeness", "tokens", "pairs", "skipped"])?;
    for row in rows {
        r.row(vec![
            row.budget.to_string(),
            f(row.validity),
            f(row.fluency),
            f(row.diversity * 100.0),
            f(row.closeness),
            f(row.mean_tokens),
            row.pairs.to_string(),
            row.skipped.to_string(),
        ]);
    }
    ctx.write(&r)
}

fn to_core(e: anyhow::Error) -> crest_core::CoreError {
    crest_core::CoreError::Config(format!("{e:#}"))
}
