use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use super::manifest::ManifestBuilder;
use super::{
    AnalyzeMode, AugmentArgs, Command, EstimatorArgs, FinalArgs, GenArgs, OutArgs, PredictArgs,
    ScoreInput,
};
use crate::analysis::{self, num, Table};
use crate::datasets::{generate, write_dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::graph::{
    augment, build_expander, load_graph_dir, AttentionPattern, Graph, GraphFiles, Split,
};
use crate::pipeline::{
    edge_percent, predict_probs, sampler_config, train_estimator, train_final, Ablation, Phase,
    RunDir, Task, TrainConfig,
};
use crate::rng;
use crate::sampler::ScoreSet;

pub fn dispatch(cmd: Command, args: &[String], threads: usize) -> Result<String> {
    match cmd {
        Command::Gen(a) => gen(a, args, threads),
        Command::Augment(a) => augment_cmd(a, args, threads),
        Command::TrainEstimator(a) => estimator(a, args, threads),
        Command::TrainFinal(a) => final_cmd(a, args, threads),
        Command::Predict(a) => predict(a, args, threads),
        Command::Analyze(a) => analyze(a.mode, args, threads),
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{} does not exist", path.display())))
    }
}

fn open_out(out: &OutArgs, inputs: &[&Path]) -> Result<RunDir> {
    for p in inputs {
        require(p)?;
    }
    RunDir::create(&out.out, out.force)
}

fn load_data(dir: &Path, mb: &mut ManifestBuilder) -> Result<Graph> {
    require(dir)?;
    let files = GraphFiles::in_dir(dir);
    let g = load_graph_dir(dir, true)?;
    for p in [
        Some(&files.edges),
        Some(&files.features),
        Some(&files.labels),
        files.split.as_ref(),
    ]
    .into_iter()
    .flatten()
    {
        mb.input(p)?;
    }
    mb.manifest.data_dir = Some(dir.display().to_string());
    Ok(g)
}

fn pattern_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("pattern.txt")
    } else {
        path.to_path_buf()
    }
}

fn load_pattern(path: &Path, mb: &mut ManifestBuilder) -> Result<AttentionPattern> {
    let p = pattern_file(path);
    require(&p)?;
    mb.input(&p)?;
    AttentionPattern::load(&p)
}

fn load_scores(path: &Path, g: &Graph, mb: &mut ManifestBuilder) -> Result<ScoreSet> {
    require(path)?;
    let file = if path.is_dir() {
        path.join("scores/scores.bin")
    } else {
        path.to_path_buf()
    };
    require(&file)?;
    mb.input(&file)?;
    if file.extension().is_some_and(|e| e == "bin") {
        let f = fs::File::open(&file).map_err(|e| Error::io(&file, e))?;
        ScoreSet::read_binary(std::io::BufReader::new(f), &g.adjacency)
    } else {
        ScoreSet::load_text(&file, &g.adjacency)
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

/// Defaults overlaid by a JSON config file.
fn layered(
    defaults: &TrainConfig,
    file: Option<&Path>,
    mb: &mut ManifestBuilder,
) -> Result<TrainConfig> {
    let Some(path) = file else {
        return Ok(defaults.clone());
    };
    require(path)?;
    mb.input(path)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let over: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut base = serde_json::to_value(defaults)?;
    merge(&mut base, over);
    serde_json::from_value(base).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn parse_list(s: &str, what: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("{what}: `{t}` is not a nonnegative integer")))
        })
        .collect()
}

fn write_metrics(
    rd: &RunDir,
    mb: &mut ManifestBuilder,
    metrics: &Map<String, Value>,
) -> Result<()> {
    let p = rd.write_json("metrics.json", metrics)?;
    mb.artifact(&rd.path, &p);
    Ok(())
}

fn gen(a: GenArgs, args: &[String], threads: usize) -> Result<String> {
    let mut mb = ManifestBuilder::new("gen", args, threads);
    let rd = open_out(&a.out, &[&a.spec])?;
    mb.input(&a.spec)?;
    let text = fs::read_to_string(&a.spec).map_err(|e| Error::io(&a.spec, e))?;
    let spec: SyntheticSpec = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", a.spec.display())))?;
    let g = generate(&spec)?;
    write_dataset(&g, &spec, &rd.path)?;
    for f in [
        "edges.tsv",
        "features.csv",
        "labels.csv",
        "split.csv",
        "spec.json",
    ] {
        if rd.file(f).exists() {
            mb.artifact(&rd.path, &rd.file(f));
        }
    }
    mb.config(&spec)?;
    mb.manifest.seed = Some(spec.seed);
    mb.finish(&rd.path)?;
    Ok(format!(
        "wrote {} nodes, {} edges to {}",
        g.n(),
        g.adjacency.nnz(),
        rd.path.display()
    ))
}

fn augment_cmd(a: AugmentArgs, args: &[String], threads: usize) -> Result<String> {
    let mut mb = ManifestBuilder::new("augment", args, threads);
    require(&a.data)?;
    if a.layers == 0 || a.cycles == 0 {
        return Err(Error::Config(
            "--layers and --cycles must be positive".into(),
        ));
    }
    let rd = open_out(&a.out, &[])?;
    let g = load_data(&a.data, &mut mb)?;
    let x = build_expander(g.n(), a.cycles, a.min_gap, a.max_retries, a.seed)?;
    let p = augment(&g, &x, a.layers)?;
    let xp = rd.file("expander.json");
    x.save(&xp)?;
    let pp = rd.file("pattern.txt");
    p.save(&pp)?;
    mb.artifact(&rd.path, &xp);
    mb.artifact(&rd.path, &pp);
    let summary = json!({
        "cycles": a.cycles,
        "min_gap": a.min_gap,
        "max_retries": a.max_retries,
        "layers": a.layers,
        "seed": a.seed,
        "gap": x.gap,
        "m_aug": p.m_aug(),
    });
    mb.config(&summary)?;
    mb.manifest.seed = Some(a.seed);
    mb.finish(&rd.path)?;
    Ok(format!(
        "expander gap {:.4}, {} attention edges per layer",
        x.gap,
        p.m_aug()
    ))
}

fn estimator(a: EstimatorArgs, args: &[String], threads: usize) -> Result<String> {
    let mut mb = ManifestBuilder::new("train-estimator", args, threads);
    require(&a.data)?;
    require(&pattern_file(&a.pattern))?;
    let mut cfg = layered(&TrainConfig::estimator(), a.config.as_deref(), &mut mb)?;
    cfg.phase = Phase::Estimator;
    if let Some(w) = &a.width {
        cfg.width = w.parse().expect("restricted by clap");
    }
    if let Some(v) = a.layers {
        cfg.layers = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.weight_decay {
        cfg.weight_decay = v;
    }
    if let Some(v) = a.lambda {
        cfg.temperature.lambda = v;
    }
    if let Some(v) = a.gamma {
        cfg.temperature.gamma = v;
    }
    if let Some(v) = a.floor {
        cfg.temperature.floor = v;
    }
    if let Some(v) = &a.ablation {
        cfg.ablation = Ablation::parse(v)?;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    crate::attention::TemperatureSchedule::new(
        cfg.temperature.lambda,
        cfg.temperature.gamma,
        cfg.temperature.floor,
    )?;
    cfg.validate()?;
    let rd = open_out(&a.out, &[])?;
    let g = load_data(&a.data, &mut mb)?;
    let pattern = load_pattern(&a.pattern, &mut mb)?;
    mb.config(&cfg)?;
    mb.manifest.seed = Some(cfg.seed);
    let run = train_estimator(&g, &pattern, &cfg)?;
    let mut written = vec![
        rd.write_json("config.json", &cfg)?,
        rd.write_history(&run.history)?,
    ];
    written.extend(rd.write_scores(&run.scores)?);
    written.extend(rd.write_model(&run.params)?);
    for p in &written {
        mb.artifact(&rd.path, p);
    }
    let task = Task::of(&g.labels);
    let mut m = Map::new();
    m.insert("metric".into(), json!(task.metric_name()));
    m.insert(format!("val_{}", task.metric_name()), json!(run.best_val));
    m.insert("best_epoch".into(), json!(run.best_epoch));
    m.insert(
        "final_loss".into(),
        json!(run.history.last().map(|r| r.loss)),
    );
    m.insert(
        "entropy".into(),
        json!(analysis::attention_entropy(&run.scores)),
    );
    write_metrics(&rd, &mut mb, &m)?;
    mb.finish(&rd.path)?;
    Ok(format!(
        "best validation {} {:.4} at epoch {}; scores in {}",
        task.metric_name(),
        run.best_val,
        run.best_epoch,
        rd.file("scores").display()
    ))
}

fn final_cmd(a: FinalArgs, args: &[String], threads: usize) -> Result<String> {
    let mut mb = ManifestBuilder::new("train-final", args, threads);
    require(&a.data)?;
    require(&a.scores)?;
    let degs = a
        .degs
        .as_deref()
        .map(|s| parse_list(s, "--degs"))
        .transpose()?;
    // layers stays 0 unless a flag or the config file sets it; the scores decide then
    let mut cfg = layered(
        &TrainConfig::final_net(Vec::new()),
        a.config.as_deref(),
        &mut mb,
    )?;
    cfg.phase = Phase::Final;
    if let Some(d) = degs {
        cfg.degs = d;
    }
    if cfg.degs.is_empty() {
        return Err(Error::Config(
            "--degs is required (one degree per layer)".into(),
        ));
    }
    if let Some(v) = a.layers {
        cfg.layers = v;
    }
    if let Some(v) = a.width {
        cfg.width = v;
    }
    if let Some(v) = a.heads {
        cfg.heads = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.weight_decay {
        cfg.weight_decay = v;
    }
    if let Some(v) = a.dropout {
        cfg.dropout = v;
    }
    if let Some(v) = &a.ablation {
        cfg.ablation = Ablation::parse(v)?;
    }
    if let Some(v) = a.eval_samples {
        cfg.eval_samples = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    let rd = open_out(&a.out, &[])?;
    let g = load_data(&a.data, &mut mb)?;
    let scores = load_scores(&a.scores, &g, &mut mb)?;
    if cfg.layers == 0 {
        cfg.layers = scores.num_layers();
    }
    cfg.validate()?;
    mb.config(&cfg)?;
    mb.manifest.seed = Some(cfg.seed);
    let run = train_final(&g, &scores, &cfg)?;
    let mut written = vec![
        rd.write_json("config.json", &cfg)?,
        rd.write_history(&run.history)?,
    ];
    written.extend(rd.write_scores(&scores)?);
    written.extend(rd.write_model(&run.params)?);
    for p in &written {
        mb.artifact(&rd.path, p);
    }
    let task = Task::of(&g.labels);
    let test = g.nodes_in(Split::Test);
    let eff = crate::pipeline::effective_scores(&scores, &cfg)?;
    let probs = predict_probs(
        &run.params,
        &g,
        &eff,
        &cfg.degs,
        &test,
        cfg.eval_samples,
        cfg.batch_size,
        &sampler_config(&cfg),
        rng::derive_seed(cfg.seed, &[0x7e57]),
    )?;
    let test_metric = task.metric(&probs, &g.labels, &test);
    let pattern = scores.pattern();
    let mut m = Map::new();
    m.insert("metric".into(), json!(task.metric_name()));
    m.insert(task.metric_name().into(), json!(test_metric));
    m.insert(format!("val_{}", task.metric_name()), json!(run.best_val));
    m.insert("best_epoch".into(), json!(run.best_epoch));
    m.insert("test_nodes".into(), json!(test.len()));
    m.insert(
        "edge_percent".into(),
        json!(edge_percent(&scores, &cfg.degs, pattern.m_aug())?),
    );
    m.insert("ablation".into(), json!(cfg.ablation.name()));
    write_metrics(&rd, &mut mb, &m)?;
    mb.finish(&rd.path)?;
    Ok(format!(
        "test {} {:.4} (validation {:.4} at epoch {})",
        task.metric_name(),
        test_metric,
        run.best_val,
        run.best_epoch
    ))
}

fn read_node_file(path: &Path, n: usize) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let v: usize = t.parse().map_err(|_| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("bad node id `{t}`"),
        })?;
        if v >= n {
            return Err(Error::Config(format!(
                "node id {v} out of range for n = {n}"
            )));
        }
        out.push(v);
    }
    Ok(out)
}

fn predict(a: PredictArgs, args: &[String], threads: usize) -> Result<String> {
    let mut mb = ManifestBuilder::new("predict", args, threads);
    require(&a.run)?;
    let run = RunDir::open(&a.run)?;
    let manifest_path = run.file("manifest.json");
    require(&manifest_path)?;
    let manifest: Value = serde_json::from_str(
        &fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?,
    )?;
    if manifest["command"] != "train-final" {
        return Err(Error::Config(format!(
            "{} is not a train-final run",
            a.run.display()
        )));
    }
    let data = manifest["data_dir"]
        .as_str()
        .map(PathBuf::from)
        .ok_or_else(|| Error::Config("run manifest lacks its dataset directory".into()))?;
    let cfg_path = run.file("config.json");
    mb.input(&cfg_path)?;
    let cfg: TrainConfig =
        serde_json::from_str(&fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?)?;
    let rd = open_out(&a.out, &[])?;
    let g = load_data(&data, &mut mb)?;
    mb.input(&run.file("ckpt/best.ckpt"))?;
    let params = run.read_model()?;
    let scores = load_scores(&a.run, &g, &mut mb)?;
    let eff = crate::pipeline::effective_scores(&scores, &cfg)?;
    let nodes = if a.nodes == "all-test" {
        g.nodes_in(Split::Test)
    } else {
        let p = PathBuf::from(&a.nodes);
        require(&p)?;
        mb.input(&p)?;
        read_node_file(&p, g.n())?
    };
    let probs = predict_probs(
        &params,
        &g,
        &eff,
        &cfg.degs,
        &nodes,
        a.samples,
        a.batch_size,
        &sampler_config(&cfg),
        a.seed,
    )?;
    let task = Task::of(&g.labels);
    let cols = probs.row_len();
    let mut header = vec!["node".to_string()];
    header.extend((0..cols).map(|c| format!("p{c}")));
    if !matches!(task, Task::MultiLabel(_)) {
        header.push("predicted".into());
    }
    let mut t = Table::new(header);
    for (r, &v) in nodes.iter().enumerate() {
        let row = probs.row(r);
        let mut cells = vec![v.to_string()];
        cells.extend(row.iter().map(|&p| num(p)));
        if !matches!(task, Task::MultiLabel(_)) {
            let best = (0..cols).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            cells.push(best.to_string());
        }
        t.push(cells);
    }
    let out = rd.file("predictions.csv");
    t.write(&out)?;
    mb.artifact(&rd.path, &out);
    let metric = task.metric(&probs, &g.labels, &nodes);
    let mut m = Map::new();
    m.insert("metric".into(), json!(task.metric_name()));
    m.insert(task.metric_name().into(), json!(metric));
    m.insert("nodes".into(), json!(nodes.len()));
    m.insert("samples".into(), json!(a.samples));
    write_metrics(&rd, &mut mb, &m)?;
    mb.config(&json!({"batch_size": a.batch_size, "samples": a.samples, "nodes": a.nodes, "seed": a.seed}))?;
    mb.manifest.seed = Some(a.seed);
    mb.finish(&rd.path)?;
    Ok(format!(
        "{} predictions, {} {:.4}",
        nodes.len(),
        task.metric_name(),
        metric
    ))
}

fn score_input(input: &ScoreInput, mb: &mut ManifestBuilder) -> Result<(Graph, ScoreSet)> {
    let g = load_data(&input.data, mb)?;
    let s = load_scores(&input.scores, &g, mb)?;
    Ok((g, s))
}

fn write_table(rd: &RunDir, mb: &mut ManifestBuilder, name: &str, t: &Table) -> Result<()> {
    let p = rd.file(name);
    t.write(&p)?;
    mb.artifact(&rd.path, &p);
    Ok(())
}

fn write_summary(rd: &RunDir, mb: &mut ManifestBuilder, v: &Value) -> Result<()> {
    let p = rd.write_json("summary.json", v)?;
    mb.artifact(&rd.path, &p);
    Ok(())
}

fn analyze(mode: AnalyzeMode, args: &[String], threads: usize) -> Result<String> {
    let mut mb = ManifestBuilder::new("analyze", args, threads);
    match mode {
        AnalyzeMode::Consistency {
            data,
            pattern,
            widths,
            runs,
            reference,
            epochs,
            seed,
            out,
        } => {
            require(&data)?;
            require(&pattern_file(&pattern))?;
            let mut base = TrainConfig::estimator();
            if let Some(e) = epochs {
                base.epochs = e;
            }
            let cfg = analysis::ConsistencyConfig {
                widths: parse_list(&widths, "--widths")?,
                runs_per_width: runs,
                reference_width: reference,
                base,
                seed,
                threads,
            };
            if !cfg.widths.contains(&reference) {
                return Err(Error::Config(format!(
                    "--reference {reference} must be one of --widths"
                )));
            }
            let rd = open_out(&out, &[])?;
            let g = load_data(&data, &mut mb)?;
            let p = load_pattern(&pattern, &mut mb)?;
            mb.config(&cfg)?;
            mb.manifest.seed = Some(seed);
            let rep = analysis::consistency_study(&g, &p, &cfg)?;
            let labels = rep.labels();
            let mut cells = Table::new(
                ["layer", "node"]
                    .into_iter()
                    .map(String::from)
                    .chain(labels.clone()),
            );
            for c in &rep.cells {
                let mut row = vec![c.layer.to_string(), c.node.to_string()];
                row.extend(c.by_width.iter().map(|&d| num(d)));
                row.push(num(c.uniform));
                row.push(num(c.random));
                cells.push(row);
            }
            write_table(&rd, &mut mb, "consistency_cells.csv", &cells)?;
            let mut means = Table::new(std::iter::once("layer".to_string()).chain(labels.clone()));
            for (l, row) in rep.per_layer.iter().enumerate() {
                means.push(
                    std::iter::once((l + 1).to_string())
                        .chain(row.iter().map(|&d| num(d)))
                        .collect(),
                );
            }
            means.push(
                std::iter::once("pooled".to_string())
                    .chain(rep.pooled.iter().map(|&d| num(d)))
                    .collect(),
            );
            write_table(&rd, &mut mb, "consistency_means.csv", &means)?;
            let beats: Map<String, Value> = rep
                .widths
                .iter()
                .map(|&w| (w.to_string(), json!(rep.fraction_beating_baselines(w))))
                .collect();
            write_summary(
                &rd,
                &mut mb,
                &json!({"labels": labels, "pooled": rep.pooled, "per_layer": rep.per_layer, "fraction_beating_baselines": beats}),
            )?;
            mb.finish(&rd.path)?;
            Ok(format!(
                "pooled energy distances {:?} for {:?}",
                rep.pooled, labels
            ))
        }
        AnalyzeMode::Entropy { input, out } => {
            let rd = open_out(&out, &[&input.data, &input.scores])?;
            let (_, s) = score_input(&input, &mut mb)?;
            let ent = analysis::attention_entropy(&s);
            let mut t = Table::new(["layer", "mean_entropy"]);
            for (l, e) in ent.iter().enumerate() {
                t.push(vec![(l + 1).to_string(), num(*e)]);
            }
            write_table(&rd, &mut mb, "entropy.csv", &t)?;
            write_summary(&rd, &mut mb, &json!({"mean_entropy": ent}))?;
            mb.finish(&rd.path)?;
            Ok(format!("mean entropy per layer {ent:?}"))
        }
        AnalyzeMode::Topk { input, k_max, out } => {
            if k_max == 0 {
                return Err(Error::Config("--k-max must be positive".into()));
            }
            let rd = open_out(&out, &[&input.data, &input.scores])?;
            let (_, s) = score_input(&input, &mut mb)?;
            let stats = analysis::topk_mass(&s, k_max);
            let mut t = Table::new(["layer", "k", "mean", "median", "q1", "q3", "iqr"]);
            for st in &stats {
                t.push(vec![
                    st.layer.to_string(),
                    st.k.to_string(),
                    num(st.mean),
                    num(st.median),
                    num(st.q1),
                    num(st.q3),
                    num(st.iqr()),
                ]);
            }
            write_table(&rd, &mut mb, "topk.csv", &t)?;
            write_summary(&rd, &mut mb, &json!({"k_max": k_max, "rows": stats}))?;
            mb.finish(&rd.path)?;
            Ok(format!(
                "top-k mass for k = 1..{k_max} over {} layers",
                s.num_layers()
            ))
        }
        AnalyzeMode::EdgeTypes {
            input,
            pattern,
            out,
        } => {
            let rd = open_out(&out, &[&input.data, &input.scores])?;
            let (_, s) = score_input(&input, &mut mb)?;
            let p = match &pattern {
                Some(path) => load_pattern(path, &mut mb)?,
                None => s.pattern(),
            };
            let m = analysis::edge_type_attribution(&s, &p, None)?;
            let names = analysis::edge_type_names();
            let mut t = Table::new(std::iter::once("layer").chain(names));
            for (l, row) in m.per_layer.iter().enumerate() {
                t.push(
                    std::iter::once((l + 1).to_string())
                        .chain(row.iter().map(|&x| num(x)))
                        .collect(),
                );
            }
            t.push(
                std::iter::once("mean".to_string())
                    .chain(m.overall.iter().map(|&x| num(x)))
                    .collect(),
            );
            write_table(&rd, &mut mb, "edge_types.csv", &t)?;
            write_summary(
                &rd,
                &mut mb,
                &json!({"types": names, "per_layer": m.per_layer, "overall": m.overall}),
            )?;
            mb.finish(&rd.path)?;
            Ok(format!("edge-type mass {:?} for {:?}", m.overall, names))
        }
        AnalyzeMode::Jlt {
            n,
            dim,
            dims,
            trials,
            seed,
            out,
        } => {
            let ds = parse_list(&dims, "--dims")?;
            if n == 0 || trials == 0 || ds.iter().any(|&d| d == 0 || d >= dim) {
                return Err(Error::Config(format!(
                    "need n, trials > 0 and every target dimension in [1, {dim})"
                )));
            }
            let rd = open_out(&out, &[])?;
            let mut r = rng::stream(seed, &[0x71]);
            let q = analysis::random_unit_rows(n, dim, &mut r);
            let k = analysis::random_unit_rows(n, dim, &mut r);
            let layer = crate::graph::PatternLayer::complete(n);
            let mut t = Table::new(["d", "trial", "max_deviation"]);
            let mut medians = Map::new();
            for &d in &ds {
                let devs = analysis::jlt_compress_check(
                    &q,
                    &k,
                    &layer,
                    d,
                    trials,
                    rng::derive_seed(seed, &[d as u64]),
                )?;
                for (i, v) in devs.iter().enumerate() {
                    t.push(vec![d.to_string(), i.to_string(), num(*v)]);
                }
                medians.insert(d.to_string(), json!(analysis::median(&devs)));
            }
            write_table(&rd, &mut mb, "jlt.csv", &t)?;
            write_summary(
                &rd,
                &mut mb,
                &json!({"n": n, "dim": dim, "trials": trials, "median_deviation": medians}),
            )?;
            mb.config(&json!({"n": n, "dim": dim, "dims": ds, "trials": trials, "seed": seed}))?;
            mb.manifest.seed = Some(seed);
            mb.finish(&rd.path)?;
            Ok(format!(
                "median max deviation by d: {}",
                Value::Object(medians)
            ))
        }
        AnalyzeMode::Spectral {
            n,
            deg,
            sharpness,
            min_exp,
            max_exp,
            seeds,
            seed,
            out,
        } => {
            if n == 0 || deg == 0 || seeds == 0 || min_exp > max_exp || max_exp > 30 {
                return Err(Error::Config(
                    "need n, deg, seeds > 0 and min-exp <= max-exp <= 30".into(),
                ));
            }
            let rd = open_out(&out, &[])?;
            let a = analysis::SparseMatrix::random_stochastic(
                n,
                deg,
                sharpness,
                &mut rng::stream(seed, &[0x5e]),
            );
            let mut t = Table::new(["s", "seed", "rel_error", "support_ok"]);
            let (mut xs, mut ys) = (vec![], vec![]);
            let mut support_ok = true;
            for e in min_exp..=max_exp {
                let s = 1usize << e;
                let mut errs = Vec::new();
                for k in 0..seeds {
                    let c = analysis::spectral_sample_check(
                        &a,
                        s,
                        &mut rng::stream(seed, &[e as u64, k]),
                    )?;
                    support_ok &= c.support_ok;
                    t.push(vec![
                        s.to_string(),
                        k.to_string(),
                        num(c.rel_error),
                        c.support_ok.to_string(),
                    ]);
                    errs.push(c.rel_error);
                }
                xs.push((s as f64).ln());
                ys.push(analysis::median(&errs).ln());
            }
            let slope = if xs.len() > 1 {
                analysis::slope(&xs, &ys)
            } else {
                f64::NAN
            };
            write_table(&rd, &mut mb, "spectral.csv", &t)?;
            let medians: Vec<f64> = ys.iter().map(|y| y.exp()).collect();
            write_summary(
                &rd,
                &mut mb,
                &json!({"n": n, "deg": deg, "sharpness": sharpness, "median_error": medians, "loglog_slope": slope, "support_ok": support_ok}),
            )?;
            mb.config(&json!({"n": n, "deg": deg, "sharpness": sharpness, "min_exp": min_exp, "max_exp": max_exp, "seeds": seeds, "seed": seed}))?;
            mb.manifest.seed = Some(seed);
            mb.finish(&rd.path)?;
            Ok(format!(
                "log-log slope {slope:.3}; support preserved: {support_ok}"
            ))
        }
    }
}
