use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde_json::{json, Value};
use tablegraph_core::autodiff::GradCheckConfig;
use tablegraph_core::baseline::{evaluate_baseline, train_baseline};
use tablegraph_core::data::{
    examples, load_dataset, make_splits, positives_rate, synth_generate, write_dataset, DatasetRecord, SplitSpec,
};
use tablegraph_core::doc::ClassSchema;
use tablegraph_core::geometry::{assign_reading_order, build_neighbor_graph, Edge, GraphConfig, LINE_OVERLAP_THRESHOLD};
use tablegraph_core::metrics::{EvalReport, Split};
use tablegraph_core::network::check::layer_grad_checks;
use tablegraph_core::network::{evaluate, predict, train_with, Example, Model};

use crate::config::{ExperimentConfig, Overrides};
use crate::failure::Failure;
use crate::manifest::RunManifest;

/// Prints to stdout, ignoring a closed pipe (e.g. output piped into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

/// Batch size for inference; results do not depend on it.
const EVAL_BATCH: usize = 8;

fn prepare_out(out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out).map_err(|e| Failure::data(format!("cannot create {}: {e}", out.display())))
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<Vec<u8>, Failure> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Failure::data(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn config_json(cfg: &impl serde::Serialize) -> Result<Value, Failure> {
    serde_json::to_value(cfg).map_err(|e| Failure::data(e.to_string()))
}

fn load(path: &Path) -> Result<Vec<DatasetRecord>, Failure> {
    let records = load_dataset(path)?;
    if records.is_empty() {
        return Err(Failure::data(format!("{}: dataset is empty", path.display())));
    }
    Ok(records)
}

fn split_examples(
    records: &[DatasetRecord],
    ids: &[String],
    schema: &ClassSchema,
    n_neighbors: usize,
) -> Result<Vec<Example>, Failure> {
    let selected: Vec<DatasetRecord> = SplitSpec::select(records, ids).into_iter().cloned().collect();
    Ok(examples(&selected, schema, n_neighbors)?)
}

fn score_summary(r: &EvalReport) -> Value {
    json!({
        "documents": r.documents,
        "boxes": r.boxes,
        "body_f1": r.body_f1.map(|s| s.value),
        "header_f1": r.header_f1.map(|s| s.value),
        "others_micro_f1": r.others_micro_f1.map(|s| s.value),
    })
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Adaptation => "adaptation",
        Split::Generalization => "generalization",
    }
}

/// Writes `report_<split>.json` and `.txt`, prints the table.
fn write_report(m: &mut RunManifest, out: &Path, r: &EvalReport) -> Result<(), Failure> {
    let name = split_name(r.split);
    m.artifact(&format!("report_{name}"), out, &format!("report_{name}.json"), &to_json(r)?)?;
    let table = r.to_table();
    m.artifact(&format!("report_{name}_table"), out, &format!("report_{name}.txt"), table.as_bytes())?;
    say!("{table}");
    Ok(())
}

fn finish(mut m: RunManifest, out: &Path, started: Instant) -> Result<(), Failure> {
    m.wall_clock_seconds = started.elapsed().as_secs_f64();
    m.write(out)
}

pub fn synth(o: &Overrides, out: &Path) -> Result<(), Failure> {
    let started = Instant::now();
    let cfg = o.resolve()?;
    let records = synth_generate(&cfg.synth)?;
    let schema = cfg.synth.schema()?;
    prepare_out(out)?;
    let mut buf = Vec::new();
    write_dataset(&records, &mut buf).map_err(|e| Failure::data(e.to_string()))?;
    let mut m = RunManifest::new("synth", out);
    m.config = config_json(&cfg.synth)?;
    m.seeds.insert("synth".into(), cfg.synth.seed);
    m.artifact("dataset", out, "dataset.jsonl", &buf)?;
    let boxes: usize = records.iter().map(DatasetRecord::box_count).sum();
    let rate = positives_rate(&records, &schema)?;
    m.scores = json!({
        "documents": records.len(),
        "boxes": boxes,
        "class_count": schema.class_count(),
        "positives_rate": rate,
    });
    say!(
        "wrote {} documents ({boxes} boxes, positives rate {rate:.4}) to {}",
        records.len(),
        out.join("dataset.jsonl").display()
    );
    finish(m, out, started)
}

struct Prepared {
    records: Vec<DatasetRecord>,
    schema: ClassSchema,
    splits: SplitSpec,
}

fn prepare(dataset: &Path, cfg: &ExperimentConfig, min_classes: usize) -> Result<Prepared, Failure> {
    let records = load(dataset)?;
    let schema = cfg.schema(&records, min_classes)?;
    let splits = make_splits(&records, cfg.split_seed())?;
    Ok(Prepared {
        records,
        schema,
        splits,
    })
}

pub fn train(o: &Overrides, dataset: &Path, out: &Path) -> Result<(), Failure> {
    let started = Instant::now();
    let mut cfg = o.resolve()?;
    let p = prepare(dataset, &cfg, 2)?;
    cfg.model.class_count = p.schema.class_count();
    let n = cfg.model.n_neighbors;
    let train_set = split_examples(&p.records, &p.splits.train, &p.schema, n)?;
    let val_set = split_examples(&p.records, &p.splits.validation, &p.schema, n)?;
    let gen_set = split_examples(&p.records, &p.splits.generalization, &p.schema, n)?;
    prepare_out(out)?;

    let outcome = train_with(&train_set, &val_set, &cfg.model, &cfg.train, &p.schema, |r| {
        eprintln!(
            "epoch {:>3}  train {:.6}  val {:.6}  val body F1 {}{}",
            r.epoch,
            r.train_loss,
            r.val_loss,
            r.val_body_f1.map_or("-".to_string(), |f| format!("{f:.4}")),
            if r.improved { "  *" } else { "" }
        );
    })?;

    let mut m = RunManifest::new("train", out);
    m.config = config_json(&cfg)?;
    m.seeds.insert("train".into(), cfg.train.seed);
    m.seeds.insert("split".into(), cfg.split_seed());
    m.input("dataset", dataset)?;
    m.artifact("checkpoint", out, "model.tgck", &outcome.model.to_bytes())?;
    let mut history = String::from("epoch\ttrain_loss\tval_loss\tval_body_f1\timproved\n");
    for r in &outcome.history {
        let f1 = r.val_body_f1.map_or(String::new(), |f| f.to_string());
        writeln!(history, "{}\t{}\t{}\t{f1}\t{}", r.epoch, r.train_loss, r.val_loss, r.improved)
            .expect("writing to a String");
    }
    m.artifact("history", out, "history.tsv", history.as_bytes())?;
    m.artifact("splits", out, "splits.json", &to_json(&p.splits)?)?;

    let active = cfg.train.targets.active(&p.schema);
    let mut scores = json!({
        "best_epoch": outcome.best_epoch,
        "best_val_loss": outcome.best_val_loss,
        "epochs_run": outcome.history.len(),
        "class_weights": outcome.weights.class_weights,
    });
    for (set, split) in [(&val_set, Split::Adaptation), (&gen_set, Split::Generalization)] {
        if set.is_empty() {
            continue;
        }
        let r = evaluate(&outcome.model, set, &p.schema, &active, split, EVAL_BATCH)?;
        write_report(&mut m, out, &r)?;
        scores[split_name(split)] = score_summary(&r);
    }
    m.scores = scores;
    finish(m, out, started)
}

pub fn eval(
    o: &Overrides,
    checkpoint: &Path,
    dataset: &Path,
    splits_file: Option<&Path>,
    only: Option<Split>,
    out: &Path,
) -> Result<(), Failure> {
    let started = Instant::now();
    let cfg = o.resolve()?;
    let model = Model::load(checkpoint)?;
    let records = load(dataset)?;
    let schema = cfg.schema(&records, model.config.class_count)?;
    if schema.class_count() != model.config.class_count {
        return Err(Failure::data(format!(
            "checkpoint predicts {} classes, dataset schema has {}",
            model.config.class_count,
            schema.class_count()
        )));
    }
    let splits = match splits_file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?
        }
        None => make_splits(&records, cfg.split_seed())?,
    };
    prepare_out(out)?;
    let mut m = RunManifest::new("eval", out);
    m.config = config_json(&cfg)?;
    m.seeds.insert("split".into(), cfg.split_seed());
    m.input("checkpoint", checkpoint)?;
    m.input("dataset", dataset)?;
    if let Some(path) = splits_file {
        m.input("splits", path)?;
    }
    let active = cfg.train.targets.active(&schema);
    let wanted = match only {
        Some(s) => vec![s],
        None => vec![Split::Adaptation, Split::Generalization],
    };
    let mut scores = json!({});
    for split in wanted {
        let ids = match split {
            Split::Train => &splits.train,
            Split::Adaptation => &splits.validation,
            Split::Generalization => &splits.generalization,
        };
        let set = split_examples(&records, ids, &schema, model.config.n_neighbors)?;
        let r = evaluate(&model, &set, &schema, &active, split, EVAL_BATCH)?;
        write_report(&mut m, out, &r)?;
        scores[split_name(split)] = score_summary(&r);
    }
    m.scores = scores;
    finish(m, out, started)
}

pub fn predict_cmd(checkpoint: &Path, dataset: &Path, out: &Path) -> Result<(), Failure> {
    let started = Instant::now();
    let model = Model::load(checkpoint)?;
    let records = load(dataset)?;
    let mut keys = Vec::new();
    let mut set = Vec::new();
    for r in &records {
        for (pi, page) in r.pages.iter().enumerate() {
            set.push(Example::from_page(&page.to_page()?, None, model.config.n_neighbors)?);
            keys.push((r.id.as_str(), pi));
        }
    }
    let probs = predict(&model, &set, EVAL_BATCH)?;
    let c = model.config.class_count;
    let mut text = String::new();
    let mut boxes = 0usize;
    for ((id, pi), (ex, p)) in keys.iter().zip(set.iter().zip(&probs)) {
        let page_order = ex.to_page_order(p, c);
        for (b, row) in page_order.chunks(c).enumerate() {
            let line = json!({"id": id, "page": pi, "box": b, "probs": row});
            writeln!(text, "{line}").expect("writing to a String");
            boxes += 1;
        }
    }
    prepare_out(out)?;
    let mut m = RunManifest::new("predict", out);
    m.config = config_json(&model.config)?;
    m.input("checkpoint", checkpoint)?;
    m.input("dataset", dataset)?;
    m.artifact("predictions", out, "predictions.jsonl", text.as_bytes())?;
    m.scores = json!({"documents": records.len(), "boxes": boxes});
    say!("wrote probabilities for {boxes} boxes to {}", out.join("predictions.jsonl").display());
    finish(m, out, started)
}

pub fn graph(o: &Overrides, dataset: &Path, doc: &str, page_index: usize, out: &Path) -> Result<(), Failure> {
    let started = Instant::now();
    let records = load(dataset)?;
    let record = records
        .iter()
        .find(|r| r.id == doc)
        .ok_or_else(|| Failure::data(format!("no document `{doc}` in {}", dataset.display())))?;
    let page_rec = record
        .pages
        .get(page_index)
        .ok_or_else(|| Failure::data(format!("document `{doc}` has {} pages", record.pages.len())))?;
    let page = page_rec.to_page()?;
    let n = o.neighbors.unwrap_or(1);
    let graph = build_neighbor_graph(&page, GraphConfig { n_neighbors: n });
    let order = assign_reading_order(&page, LINE_OVERLAP_THRESHOLD);
    let sequence = order.sequence();

    let boxes: Vec<Value> = page
        .wordboxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let o = order.boxes[i];
            json!({
                "box": i,
                "bbox": b.bbox.as_array(),
                "text": b.text,
                "line": o.line,
                "order_in_line": o.order_in_line,
                "rot_line": o.rot_line,
                "rot_order_in_line": o.rot_order_in_line,
            })
        })
        .collect();
    let mut edges = Vec::new();
    let mut plot = String::from("kind\tx0\ty0\tx1\ty1\tlabel\n");
    for (i, b) in page.wordboxes.iter().enumerate() {
        let r = b.bbox;
        writeln!(plot, "box\t{}\t{}\t{}\t{}\t{i}", r.left, r.top, r.right, r.bottom).expect("writing to a String");
    }
    for i in 0..page.len() {
        for edge in Edge::ALL {
            for (rank, slot) in graph.neighbors(i, edge).iter().enumerate() {
                if let Some(j) = *slot {
                    edges.push(json!({"from": i, "to": j, "edge": edge, "rank": rank}));
                    let (a, b) = (page.wordboxes[i].bbox.center(), page.wordboxes[j].bbox.center());
                    writeln!(plot, "edge\t{}\t{}\t{}\t{}\t{edge:?}", a.0, a.1, b.0, b.1).expect("writing to a String");
                }
            }
        }
    }
    let dump = json!({
        "id": doc,
        "page": page_index,
        "n_neighbors": n,
        "boxes": boxes,
        "edges": edges,
        "sequence": sequence,
    });
    prepare_out(out)?;
    let mut m = RunManifest::new("graph", out);
    m.config = json!({"doc": doc, "page": page_index, "n_neighbors": n});
    m.input("dataset", dataset)?;
    m.artifact("graph", out, "graph.json", &to_json(&dump)?)?;
    m.artifact("plot", out, "plot.tsv", plot.as_bytes())?;
    m.scores = json!({"boxes": page.len(), "edges": edges.len(), "lines": order.boxes.iter().map(|b| b.line + 1).max().unwrap_or(0)});
    say!("{} boxes, {} edges, written to {}", page.len(), edges.len(), out.display());
    finish(m, out, started)
}

pub fn gradcheck(seed: u64, fault: f64, out: Option<&Path>) -> Result<(), Failure> {
    let started = Instant::now();
    let cfg = GradCheckConfig {
        fault,
        ..GradCheckConfig::default()
    };
    let checks = layer_grad_checks(cfg, seed)?;
    say!("{:<12} {:>14} {:>8}  status", "layer", "max rel error", "checked");
    for c in &checks {
        say!(
            "{:<12} {:>14.3e} {:>8}  {}",
            c.layer,
            c.max_rel_error,
            c.checked,
            if c.passed { "PASS" } else { "FAIL" }
        );
    }
    if let Some(out) = out {
        prepare_out(out)?;
        let mut m = RunManifest::new("gradcheck", out);
        m.config = json!({"step": cfg.step, "tol": cfg.tol, "fault": fault});
        m.seeds.insert("gradcheck".into(), seed);
        m.artifact("report", out, "gradcheck.json", &to_json(&checks)?)?;
        m.scores = json!({"passed": checks.iter().all(|c| c.passed)});
        finish(m, out, started)?;
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.layer.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::numeric(format!(
            "gradient check failed (tolerance {:e}): {}",
            cfg.tol,
            failed.join(", ")
        )))
    }
}

pub fn baseline(o: &Overrides, dataset: &Path, out: &Path) -> Result<(), Failure> {
    let started = Instant::now();
    let cfg = o.resolve()?;
    let p = prepare(dataset, &cfg, 2)?;
    let k = cfg.baseline.k_neighbors;
    let train_set = split_examples(&p.records, &p.splits.train, &p.schema, k)?;
    let val_set = split_examples(&p.records, &p.splits.validation, &p.schema, k)?;
    let gen_set = split_examples(&p.records, &p.splits.generalization, &p.schema, k)?;
    let model = train_baseline(&train_set, p.schema.class_count(), &cfg.baseline)?;
    prepare_out(out)?;
    let mut m = RunManifest::new("baseline", out);
    m.config = config_json(&json!({"baseline": cfg.baseline, "split_seed": cfg.split_seed(), "targets": cfg.train.targets}))?;
    m.seeds.insert("baseline".into(), cfg.baseline.seed);
    m.seeds.insert("split".into(), cfg.split_seed());
    m.input("dataset", dataset)?;
    m.artifact("model", out, "baseline.json", &to_json(&model)?)?;
    m.artifact("splits", out, "splits.json", &to_json(&p.splits)?)?;
    let active = cfg.train.targets.active(&p.schema);
    let mut scores = json!({"k_neighbors": k, "epochs_run": model.epochs_run});
    for (set, split) in [(&val_set, Split::Adaptation), (&gen_set, Split::Generalization)] {
        if set.is_empty() {
            continue;
        }
        let r = evaluate_baseline(&model, set, &p.schema, &active, split)?;
        write_report(&mut m, out, &r)?;
        scores[split_name(split)] = score_summary(&r);
    }
    m.scores = scores;
    finish(m, out, started)
}
