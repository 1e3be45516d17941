use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use statelink::dataset_io::{
    load_dialogues, read_predictions, write_jsonl, write_predictions, write_report, AnnotatedDialogue,
    PredictionRecord,
};
use statelink::link_eval::{
    cross_validate, evaluate_split, evaluate_validation, rank_with_embeddings, CandidateRecord, CvReport, LinkScores,
};
use statelink::llm_backend::{Backend, HttpBackend, ReplayStore, RuleMock};
use statelink::metrics::{to_deltas, EvalReport, StateMode, TurnPair};
use statelink::prompt_engine::{load_exemplars, PromptSpec, PromptTemplates};
use statelink::state_graph::{dialogue_node_set, split_edges, StateGraph};
use statelink::state_parser::{classify_errors, parse_state, DiagnosticKind, ErrorReport};
use statelink::vgae::{train, Checkpoint, TrainingData, VgaeParams};
use statelink::{DialogueContext, DialogueState, Turn};

use crate::config::{BackendChoice, GraphSource, RunConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
const MAX_ERROR_SAMPLES: usize = 20;
const NODES_FILE: &str = "nodes.jsonl";
const EDGES_FILE: &str = "edges.txt";

pub struct Run {
    pub cfg: RunConfig,
    pub command: &'static str,
    pub jobs: usize,
}

impl Run {
    fn provenance(&self) -> Value {
        json!({
            "tool": "statelink",
            "version": VERSION,
            "command": self.command,
            "config": self.cfg,
        })
    }
}

// ---------------------------------------------------------------- shared

pub struct Prompter {
    templates: PromptTemplates,
    spec: PromptSpec,
}

impl Prompter {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let templates = match &cfg.templates {
            Some(p) => PromptTemplates::load(p).with_context(|| format!("loading templates {}", p.display()))?,
            None => PromptTemplates::default(),
        };
        let mut exemplars = match &cfg.exemplars {
            Some(p) => load_exemplars(p).with_context(|| format!("loading exemplars {}", p.display()))?,
            None => Vec::new(),
        };
        if let Some(n) = cfg.shots {
            if n > exemplars.len() {
                bail!("shots = {n} but only {} exemplars are available", exemplars.len());
            }
            exemplars.truncate(n);
        }
        let mut spec = PromptSpec::new(cfg.strategy, String::new());
        spec.instruction = templates.instruction.clone();
        spec.anti_hallucination = cfg.anti_hallucination;
        spec.exemplars = exemplars;
        if !spec.has_standard_shot_count() {
            log::warn!("{} exemplars: the usual settings are 0, 2, 3 or 4", spec.exemplars.len());
        }
        Ok(Self { templates, spec })
    }

    pub fn render(&self, context: &DialogueContext) -> Result<String> {
        let spec = PromptSpec {
            input_text: context.serialize(),
            ..self.spec.clone()
        };
        Ok(self.templates.render(&spec)?)
    }
}

pub fn build_backend(cfg: &RunConfig) -> Result<Backend> {
    Ok(match cfg.backend {
        BackendChoice::RuleMock => {
            let path = cfg.require(&cfg.keywords, "keywords")?;
            Backend::RuleMock(RuleMock::load(path).with_context(|| format!("loading keyword table {}", path.display()))?)
        }
        BackendChoice::Replay => {
            let path = cfg.require(&cfg.replay, "replay")?;
            if !path.exists() {
                bail!("replay store {} does not exist", path.display());
            }
            Backend::Replay(ReplayStore::open(path)?)
        }
        BackendChoice::Http => {
            let url = cfg.require(&cfg.endpoint, "endpoint")?;
            Backend::Http(
                HttpBackend::new(url)?
                    .with_token_env(&cfg.token_env)
                    .with_max_in_flight(cfg.max_in_flight),
            )
        }
    })
}

/// Applies `f` to every item on up to `jobs` threads; results keep item order.
fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every slot filled")).collect()
}

fn load_sorted_corpus(cfg: &RunConfig) -> Result<Vec<AnnotatedDialogue>> {
    let path = cfg.require(&cfg.corpus, "corpus")?;
    let corpus = load_dialogues(path, cfg.format)?;
    if corpus.skipped > 0 {
        eprintln!("warning: skipped {} malformed records in {}", corpus.skipped, path.display());
    }
    let mut dialogues = corpus.dialogues;
    dialogues.sort_by(|a, b| a.dialogue_id.cmp(&b.dialogue_id));
    Ok(dialogues)
}

fn read_graph(dir: &Path) -> Result<StateGraph> {
    let open = |name: &str| {
        let p = dir.join(name);
        fs::File::open(&p)
            .map(BufReader::new)
            .with_context(|| format!("opening {}", p.display()))
    };
    Ok(StateGraph::read(open(NODES_FILE)?, open(EDGES_FILE)?)?)
}

/// Final predicted (or gold) state of each dialogue, keyed by id.
fn final_states(run: &Run) -> Result<BTreeMap<String, DialogueState>> {
    let cfg = &run.cfg;
    let mut out = BTreeMap::new();
    match (&cfg.predictions, cfg.graph_source) {
        (Some(p), GraphSource::Predictions) => {
            let (_, records) = read_predictions(p)?;
            for r in records {
                let e = out.entry(r.dialogue_id).or_insert((0, DialogueState::new()));
                if r.turn >= e.0 {
                    *e = (r.turn, r.predicted_state);
                }
            }
            Ok(out.into_iter().map(|(k, (_, s))| (k, s)).collect())
        }
        _ => {
            let mut states = BTreeMap::new();
            for d in load_sorted_corpus(cfg)? {
                let gold = d
                    .gold_states
                    .with_context(|| format!("dialogue {} has no gold states", d.dialogue_id))?;
                states.insert(d.dialogue_id, gold.last().cloned().unwrap_or_default());
            }
            Ok(states)
        }
    }
}

// ---------------------------------------------------------------- extract

struct DialogueRun {
    records: Vec<PredictionRecord>,
    exchanges: Vec<(String, String)>,
    failure: Option<(usize, anyhow::Error)>,
}

fn extract_dialogue(d: &AnnotatedDialogue, backend: &Backend, prompter: &Prompter, cfg: &RunConfig) -> DialogueRun {
    let mut run = DialogueRun { records: Vec::new(), exchanges: Vec::new(), failure: None };
    let mut state = DialogueState::new();
    for k in 0..d.user_turn_count() {
        let prompt = match prompter.render(&d.context_through_user_turn(k)) {
            Ok(p) => p,
            Err(e) => {
                run.failure = Some((k, e));
                break;
            }
        };
        let completion = match backend.complete(&prompt, &cfg.generation) {
            Ok(c) => c,
            Err(e) => {
                run.failure = Some((k, e.into()));
                break;
            }
        };
        let outcome = parse_state(&completion);
        state = state.accumulate(&outcome.triples());
        run.records.push(PredictionRecord {
            dialogue_id: d.dialogue_id.clone(),
            turn: k,
            predicted_state: state.clone(),
            diagnostics: outcome.diagnostics,
        });
        run.exchanges.push((prompt, completion));
    }
    run
}

pub fn extract(run: &Run) -> Result<()> {
    let cfg = &run.cfg;
    let out = cfg.require(&cfg.out, "out")?;
    let dialogues = load_sorted_corpus(cfg)?;
    let backend = build_backend(cfg)?;
    let prompter = Prompter::new(cfg)?;
    if !cfg.generation.is_reproducible() {
        log::warn!("temperature > 0 or no model name: this run is not reproducible");
    }

    let runs = par_map(&dialogues, run.jobs, |d| extract_dialogue(d, &backend, &prompter, cfg));

    // keep everything up to the first failure so output does not depend on --jobs
    let mut records = Vec::new();
    let mut exchanges = Vec::new();
    let mut failure = None;
    for (d, r) in dialogues.iter().zip(runs) {
        records.extend(r.records);
        exchanges.extend(r.exchanges);
        if let Some((turn, e)) = r.failure {
            failure = Some((d.dialogue_id.clone(), turn, e));
            break;
        }
    }
    write_predictions(out, Some(&run.provenance()), &records)?;
    if let Some(path) = &cfg.record_replay {
        let mut store = ReplayStore::open(path)?;
        for (p, c) in &exchanges {
            store.store(p, c)?;
        }
    }

    let parse_failures = records
        .iter()
        .filter(|r| r.diagnostics.iter().any(|d| d.kind == DiagnosticKind::ParseFailure))
        .count();
    if let Some((id, turn, e)) = failure {
        return Err(e.context(format!(
            "extraction stopped at dialogue {id}, user turn {turn}; {} completed turns written to {}",
            records.len(),
            out.display()
        )));
    }
    eprintln!(
        "extract: {} dialogues, {} turns, {} parse failures -> {}",
        dialogues.len(),
        records.len(),
        parse_failures,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- evaluate

pub fn evaluate(run: &Run) -> Result<EvalReport> {
    let cfg = &run.cfg;
    let pred_path = cfg.require(&cfg.predictions, "predictions")?;
    let out = cfg.require(&cfg.out, "out")?;
    let (_, preds) = read_predictions(pred_path)?;
    let dialogues = load_sorted_corpus(cfg)?;

    let mut by_key: BTreeMap<(String, usize), PredictionRecord> = BTreeMap::new();
    for r in preds {
        let key = (r.dialogue_id.clone(), r.turn);
        if by_key.insert(key, r).is_some() {
            bail!("duplicate prediction records in {}", pred_path.display());
        }
    }

    let mut pairs = Vec::new();
    let mut parse_failures = 0;
    let mut errors = ErrorReport::default();
    for d in &dialogues {
        let gold = d
            .gold_states
            .as_ref()
            .with_context(|| format!("dialogue {} has no gold states", d.dialogue_id))?;
        let mut predicted = Vec::with_capacity(gold.len());
        for k in 0..gold.len() {
            let r = by_key
                .remove(&(d.dialogue_id.clone(), k))
                .with_context(|| format!("no prediction for dialogue {} turn {k}", d.dialogue_id))?;
            if r.diagnostics.iter().any(|x| x.kind == DiagnosticKind::ParseFailure) {
                parse_failures += 1;
            }
            predicted.push(r.predicted_state);
        }
        let (predicted, gold) = match cfg.state_mode {
            StateMode::Cumulative => (predicted, gold.clone()),
            StateMode::Delta => (to_deltas(&predicted), to_deltas(gold)),
        };
        for (k, (p, g)) in predicted.into_iter().zip(gold).enumerate() {
            let ctx = d.context_through_user_turn(k);
            errors.merge(classify_errors(&p, &g, Some(ctx.turns())), MAX_ERROR_SAMPLES);
            pairs.push(TurnPair::new(p, g));
        }
    }
    if let Some(((id, turn), _)) = by_key.into_iter().next() {
        bail!("prediction for dialogue {id} turn {turn} has no gold counterpart");
    }

    let report = EvalReport::compute(&pairs, cfg.state_mode, parse_failures, errors)?;
    write_report(out, &report, Some(&run.provenance()))?;
    println!(
        "jga {:.4}  slot_f1 {:.4}  slot_accuracy {}  turns {}",
        report.jga,
        report.slot_f1,
        report.slot_accuracy.map_or("n/a".into(), |a| format!("{a:.4}")),
        report.turn_count
    );
    Ok(report)
}

// ---------------------------------------------------------------- graph

pub fn graph(run: &Run) -> Result<StateGraph> {
    let cfg = &run.cfg;
    let dir = cfg.require(&cfg.graph_dir, "graph_dir")?;
    let states: Vec<DialogueState> = match cfg.graph_source {
        GraphSource::Predictions => {
            let p = cfg.require(&cfg.predictions, "predictions")?;
            let (_, mut records) = read_predictions(p)?;
            records.sort_by(|a, b| (&a.dialogue_id, a.turn).cmp(&(&b.dialogue_id, b.turn)));
            records.into_iter().map(|r| r.predicted_state).collect()
        }
        GraphSource::Gold => load_sorted_corpus(cfg)?
            .into_iter()
            .flat_map(|d| d.gold_states.unwrap_or_default())
            .collect(),
    };
    let g = StateGraph::build(&states);
    if g.edges().is_empty() {
        bail!("no triples to build a graph from");
    }

    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let prov = run.provenance();
    let mut nodes = Vec::new();
    writeln!(nodes, "{}", json!({ "provenance": prov }))?;
    g.write_node_table(&mut nodes)?;
    fs::write(dir.join(NODES_FILE), nodes)?;
    let mut edges = Vec::new();
    writeln!(edges, "# provenance {prov}")?;
    g.write_edge_list(&mut edges)?;
    fs::write(dir.join(EDGES_FILE), edges)?;
    eprintln!(
        "graph: {} nodes, {} edges -> {}",
        g.node_count(),
        g.edges().len(),
        dir.display()
    );
    Ok(g)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Serialize)]
pub struct TrainMetrics {
    pub nodes: usize,
    pub edges: usize,
    pub train_edges: usize,
    pub val_edges: usize,
    pub test_edges: usize,
    pub epochs: usize,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub test: LinkScores,
    pub val: LinkScores,
    pub untrained_test: LinkScores,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_validation: Option<CvReport>,
}

pub fn train_cmd(run: &Run) -> Result<TrainMetrics> {
    let cfg = &run.cfg;
    let dir = cfg.require(&cfg.graph_dir, "graph_dir")?;
    let ckpt_path = cfg.require(&cfg.checkpoint, "checkpoint")?;
    let g = read_graph(dir)?;
    let split = split_edges(&g, cfg.train_frac, cfg.test_frac, cfg.val_frac, cfg.split_seed)?;
    let (params, history) = train(&g, &split, &cfg.train)?;

    let zero = VgaeParams::zeros(g.node_count(), cfg.train.hidden_dim, cfg.train.latent_dim);
    let cross_validation = match cfg.cv_folds {
        0 => None,
        k => Some(cross_validate(&g, k, &cfg.train)?),
    };
    let metrics = TrainMetrics {
        nodes: g.node_count(),
        edges: g.edges().len(),
        train_edges: split.train.len(),
        val_edges: split.val.len(),
        test_edges: split.test.len(),
        epochs: history.len(),
        initial_loss: history.first().map(|h| h.total),
        final_loss: history.last().map(|h| h.total),
        test: evaluate_split(&params, &g, &split)?,
        val: evaluate_validation(&params, &g, &split)?,
        untrained_test: evaluate_split(&zero, &g, &split)?,
        cross_validation,
    };

    let prov = run.provenance();
    let mut ckpt = Checkpoint::new(&params, &cfg.train);
    ckpt.provenance = Some(prov.clone());
    ckpt.save(ckpt_path)?;
    if let Some(h) = &cfg.history {
        write_jsonl(h, Some(&prov), &history)?;
    }
    if let Some(out) = &cfg.out {
        write_report(out, &metrics, Some(&prov))?;
    }
    println!(
        "test auc {:.4}  ap {:.4}  (untrained auc {:.4})  val auc {:.4}",
        metrics.test.auc, metrics.test.ap, metrics.untrained_test.auc, metrics.val.auc
    );
    Ok(metrics)
}

// ---------------------------------------------------------------- predict

pub struct Model {
    pub graph: StateGraph,
    pub z: statelink::vgae::Matrix,
}

pub fn load_model(cfg: &RunConfig) -> Result<Model> {
    let dir = cfg.require(&cfg.graph_dir, "graph_dir")?;
    let ckpt_path = cfg.require(&cfg.checkpoint, "checkpoint")?;
    let graph = read_graph(dir)?;
    let params = Checkpoint::load(ckpt_path)
        .with_context(|| format!("loading checkpoint {}", ckpt_path.display()))?
        .params()?;
    if params.n_features() != graph.node_count() {
        bail!(
            "checkpoint expects {} nodes but the graph in {} has {}",
            params.n_features(),
            dir.display(),
            graph.node_count()
        );
    }
    let z = TrainingData::new(&graph, graph.edges())?.embed(&params);
    Ok(Model { graph, z })
}

pub fn predict(run: &Run) -> Result<Vec<CandidateRecord>> {
    let cfg = &run.cfg;
    let out = cfg.require(&cfg.out, "out")?;
    if cfg.top_k == 0 {
        bail!("top_k must be positive");
    }
    let model = load_model(cfg)?;
    let mut records = Vec::new();
    for (id, state) in final_states(run)? {
        let lookup = dialogue_node_set(&model.graph, [&state]);
        if lookup.nodes.is_empty() {
            log::warn!("dialogue {id}: no state in the graph, skipped");
            continue;
        }
        let ranked = rank_with_embeddings(&model.z, &model.graph, &lookup.nodes, cfg.top_k);
        records.extend(CandidateRecord::from_ranked(&id, &ranked));
    }
    write_jsonl(out, Some(&run.provenance()), &records)?;
    eprintln!("predict: {} candidates -> {}", records.len(), out.display());
    Ok(records)
}

// ---------------------------------------------------------------- repl

pub fn repl(run: &Run, input: impl BufRead, mut output: impl Write) -> Result<()> {
    let cfg = &run.cfg;
    let backend = build_backend(cfg)?;
    let prompter = Prompter::new(cfg)?;
    let model = match (&cfg.graph_dir, &cfg.checkpoint) {
        (Some(_), Some(_)) => Some(load_model(cfg)?),
        _ => None,
    };

    let mut context = DialogueContext::new("repl");
    let mut state = DialogueState::new();
    for line in input.lines() {
        let line = line?;
        let text = line.trim();
        match text {
            "" => continue,
            ":quit" | ":q" => break,
            ":reset" => {
                context = DialogueContext::new("repl");
                state = DialogueState::new();
                writeln!(output, "(state cleared)")?;
                continue;
            }
            _ => {}
        }
        context = context.append_turn(Turn::user(text)?)?;
        let prompt = prompter.render(&context)?;
        let completion = match backend.complete(&prompt, &cfg.generation) {
            Ok(c) => c,
            Err(e) => {
                writeln!(output, "! backend: {e}")?;
                continue;
            }
        };
        let outcome = parse_state(&completion);
        for d in &outcome.diagnostics {
            writeln!(output, "! {}: {}", serde_json::to_value(d.kind)?.as_str().unwrap_or("?"), d.detail)?;
        }
        state = state.accumulate(&outcome.triples());
        for t in state.triples() {
            writeln!(output, "{t}")?;
        }
        if let Some(m) = &model {
            let lookup = dialogue_node_set(&m.graph, [&state]);
            if !lookup.nodes.is_empty() {
                for c in rank_with_embeddings(&m.z, &m.graph, &lookup.nodes, cfg.top_k) {
                    writeln!(output, "  {c}")?;
                }
            }
        }
        output.flush()?;
    }
    Ok(())
}
