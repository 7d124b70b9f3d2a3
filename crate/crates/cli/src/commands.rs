use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use purs_core::data::{
    parse_interactions, prepare, subset_by_users, write_events, InteractionEvent, ParseReport,
    PreparedData,
};
use purs_core::engine::{
    evaluate as run_eval, load_checkpoint, recommend_topk, save_checkpoint, train as run_train,
    Histories, Model, Scorer, Variant,
};
use purs_core::metrics::{comparison_table, MetricsReport};
use serde::Serialize;
use serde_json::json;

use crate::config::{self, Overrides, RunConfig};
use crate::{CliError, Common, OUT_DIR_ENV};

pub fn resolve(common: &Common) -> Result<RunConfig, CliError> {
    let overrides = Overrides {
        seed: common.seed,
        variant: common.variant,
        k: common.k,
        epochs: common.epochs,
        out: common.out.clone(),
        env_out: std::env::var_os(OUT_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from),
    };
    config::load(common.config.as_deref())?.resolve(&overrides)
}

fn out_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config.toml"), cfg.to_toml())?;
    Ok(&cfg.out_dir)
}

fn load_events(cfg: &RunConfig) -> Result<ParseReport, CliError> {
    let mut report = parse_interactions(&cfg.data.path, &cfg.data.schema)?;
    if let Some(n) = cfg.data.subset_events {
        report.events = subset_by_users(&report.events, n);
    }
    if report.events.is_empty() {
        return Err(CliError::Config(format!(
            "{} holds no usable events",
            cfg.data.path.display()
        )));
    }
    Ok(report)
}

fn prepared(cfg: &RunConfig) -> Result<PreparedData, CliError> {
    let r = load_events(cfg)?;
    Ok(prepare(
        &r.events,
        &cfg.data.split,
        &r.user_features,
        &r.item_features,
    )?)
}

fn checkpoint_path(cfg: &RunConfig, given: Option<PathBuf>) -> PathBuf {
    given.unwrap_or_else(|| cfg.out_dir.join("model.ckpt"))
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    if !path.exists() {
        return Err(CliError::State(format!(
            "checkpoint not found: {}",
            path.display()
        )));
    }
    Ok(load_checkpoint(path)?)
}

fn print_json_line(value: &impl Serialize) {
    println!(
        "{}",
        serde_json::to_string(value).expect("serializable output")
    );
}

pub fn ingest(cfg: &RunConfig) -> Result<(), CliError> {
    let report = load_events(cfg)?;
    let out = out_dir(cfg)?;
    write_events(&out.join("events.csv"), &report.events)?;
    let users = report
        .events
        .iter()
        .map(|e| &e.user_id)
        .collect::<std::collections::HashSet<_>>()
        .len();
    let items = report
        .events
        .iter()
        .map(|e| &e.item_id)
        .collect::<std::collections::HashSet<_>>()
        .len();
    let stats = json!({
        "events": report.events.len(),
        "clicks": report.events.iter().filter(|e| e.is_click()).count(),
        "users": users,
        "items": items,
        "malformed": report.malformed,
        "malformed_lines": report.malformed_lines,
    });
    fs::write(
        out.join("ingest_stats.json"),
        serde_json::to_string_pretty(&stats).expect("json"),
    )?;
    print_json_line(&stats);
    Ok(())
}

fn train_one(
    cfg: &RunConfig,
    data: &PreparedData,
    variant: Variant,
    log: &mut impl Write,
) -> Result<Model, CliError> {
    let mut tc = cfg.train.clone();
    tc.variant = variant;
    let outcome = run_train(
        &data.dataset,
        &data.user_features,
        &data.item_features,
        &data.train,
        &tc,
    )?;
    for line in &outcome.log {
        writeln!(log, "{}", line.to_json_line())?;
    }
    Ok(outcome.model)
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let data = prepared(cfg)?;
    let out = out_dir(cfg)?;
    let mut log = Vec::new();
    let model = train_one(cfg, &data, cfg.train.variant, &mut log)?;
    fs::write(out.join("train_log.jsonl"), &log)?;
    save_checkpoint(&model, &out.join("model.ckpt"))?;
    std::io::stdout().write_all(&log)?;
    Ok(())
}

pub fn evaluate(cfg: &RunConfig, checkpoint: Option<PathBuf>, table: bool) -> Result<(), CliError> {
    let model = load_model(&checkpoint_path(cfg, checkpoint))?;
    let data = prepared(cfg)?;
    if data.dataset != model.dataset {
        return Err(CliError::State(
            "checkpoint vocabularies differ from the configured dataset".into(),
        ));
    }
    let report = run_eval(&model, &data.train, &data.test, &cfg.eval)?;
    let out = out_dir(cfg)?;
    fs::write(out.join("metrics.json"), report.to_json())?;
    fs::write(out.join("metrics.txt"), report.to_table())?;
    if table {
        print!("{}", report.to_table());
    } else {
        println!("{}", report.to_json());
    }
    Ok(())
}

pub fn ablate(cfg: &RunConfig) -> Result<(), CliError> {
    let data = prepared(cfg)?;
    let out = out_dir(cfg)?;
    let mut rows: Vec<(String, MetricsReport)> = Vec::new();
    for variant in Variant::ALL {
        let mut log = Vec::new();
        let model = train_one(cfg, &data, variant, &mut log)?;
        fs::write(
            out.join(format!("train_log_{}.jsonl", variant.name())),
            &log,
        )?;
        let report = run_eval(&model, &data.train, &data.test, &cfg.eval)?;
        eprintln!("{variant}: auc {:.4}", report.auc);
        rows.push((variant.name().to_string(), report));
    }
    let table = comparison_table(&rows);
    let by_name: serde_json::Map<String, serde_json::Value> = rows
        .iter()
        .map(|(n, r)| (n.clone(), serde_json::to_value(r).expect("json")))
        .collect();
    fs::write(
        out.join("ablation.json"),
        serde_json::to_string_pretty(&by_name).expect("json"),
    )?;
    fs::write(out.join("ablation.txt"), &table)?;
    print!("{table}");
    Ok(())
}

/// Every known event of the configured log, indexed with the model's
/// vocabularies; events with keys the model never saw are dropped.
fn model_history(cfg: &RunConfig, model: &Model) -> Result<Histories, CliError> {
    let events: Vec<InteractionEvent> = load_events(cfg)?
        .events
        .into_iter()
        .filter(|e| {
            model.user_index(&e.user_id).is_some() && model.item_index(&e.item_id).is_some()
        })
        .collect();
    let indexed = model.dataset.index(&events)?;
    Ok(Histories::from_interactions(
        model.params.n_users(),
        &indexed,
    ))
}

pub fn recommend(cfg: &RunConfig, checkpoint: Option<PathBuf>, user: &str) -> Result<(), CliError> {
    let model = load_model(&checkpoint_path(cfg, checkpoint))?;
    let u = model
        .user_index(user)
        .ok_or_else(|| CliError::State(format!("unknown user `{user}`")))?;
    let hist = model_history(cfg, &model)?;
    let scorer = Scorer::new(&model);
    let ctx = scorer.contexts(&[u], &hist)?.remove(0);
    let seen: std::collections::HashSet<usize> = hist.items(u).iter().copied().collect();
    let candidates: Vec<usize> = (0..model.params.n_items())
        .filter(|i| !seen.contains(i))
        .collect();
    let k = cfg.eval.k.min(candidates.len());
    for (rank, (item, _)) in recommend_topk(&scorer, &ctx, &candidates, k)?
        .into_iter()
        .enumerate()
    {
        let s = scorer
            .score(&ctx, item)
            .map_err(purs_core::engine::EngineError::from)?;
        print_json_line(&json!({
            "user": user,
            "rank": rank + 1,
            "item": model.item_key(item),
            "utility": s.utility,
            "ctr": s.ctr,
            "unexpectedness": s.unexpectedness,
            "factor": s.factor,
        }));
    }
    Ok(())
}

pub fn clusters(
    cfg: &RunConfig,
    checkpoint: Option<PathBuf>,
    user: Option<&str>,
) -> Result<(), CliError> {
    let model = load_model(&checkpoint_path(cfg, checkpoint))?;
    let users: Vec<usize> = match user {
        Some(key) => vec![model
            .user_index(key)
            .ok_or_else(|| CliError::State(format!("unknown user `{key}`")))?],
        None => (0..model.params.n_users()).collect(),
    };
    let hist = model_history(cfg, &model)?;
    let scorer = Scorer::new(&model);
    for ctx in scorer.contexts(&users, &hist)? {
        let user_key = model.dataset.users.key(ctx.user as u32);
        for (c, cl) in ctx.clusters.clusters.iter().enumerate() {
            let members: Vec<&str> = cl
                .member_indices
                .iter()
                .map(|&m| model.item_key(ctx.clusters.items[m]))
                .collect();
            print_json_line(&json!({
                "user": user_key,
                "cluster": c,
                "size": cl.size,
                "centroid": cl.centroid,
                "members": members,
            }));
        }
    }
    Ok(())
}
