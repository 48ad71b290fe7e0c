use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::constraints::ContactHistory;
use crate::graph::{Day, GraphSnapshot, KnowledgeGraph};
use crate::ingest::{read_behavior, read_profiles, write_behavior, write_profiles, BehaviorHistory};
use crate::personalize::{ingest_engagement, read_events, write_events, FunnelState};
use crate::ranker::{LossTrace, RankedNudgeList, RankerModel, ScoredNudge};

use super::{Config, PipelineError, PipelineState, Resources};

/// On-disk pipeline state used by the CLI subcommands:
/// `graph.tsv`, `profiles.tsv`, `behavior.tsv`, `events.tsv`, `model.txt`,
/// `loss.tsv`, `ranked/<day>.tsv` and the delivery log `outbox.tsv`.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Data(format!("{}: {e}", path.display()))
}

fn open(path: &Path) -> Result<Option<BufReader<fs::File>>, PipelineError> {
    match fs::File::open(path) {
        Ok(f) => Ok(Some(BufReader::new(f))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(data_err(path, e)),
    }
}

fn create(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| data_err(dir, e))?;
    }
    // write then rename, so a failed write never leaves a torn file
    let tmp = path.with_extension("tmp");
    let file = fs::File::create(&tmp).map_err(|e| data_err(&tmp, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| data_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| data_err(path, e))
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn ranked_path(&self, day: Day) -> PathBuf {
        self.root.join("ranked").join(format!("{day}.tsv"))
    }

    pub fn outbox(&self) -> PathBuf {
        self.path("outbox.tsv")
    }

    /// Loads whatever exists; a fresh directory gives an empty state with
    /// the library in the graph.
    pub fn load(&self, config: &Config, resources: &Resources, day: Day) -> Result<PipelineState, PipelineError> {
        let mut state = PipelineState::new(config, resources, Vec::new(), day);
        let graph_path = self.path("graph.tsv");
        if graph_path.exists() {
            let snapshot = GraphSnapshot::read_from(&graph_path).map_err(|e| data_err(&graph_path, e))?;
            state.graph = KnowledgeGraph::from_snapshot(&snapshot);
        }
        let p = self.path("profiles.tsv");
        if let Some(r) = open(&p)? {
            let profiles = read_profiles(r).map_err(|e| data_err(&p, e))?;
            state.add_profiles(resources, profiles, day);
        }
        let p = self.path("behavior.tsv");
        if let Some(r) = open(&p)? {
            state.history = BehaviorHistory::from_records(read_behavior(r).map_err(|e| data_err(&p, e))?)
                .map_err(|e| data_err(&p, e))?;
        }
        let p = self.path("events.tsv");
        if let Some(r) = open(&p)? {
            let events = read_events(r).map_err(|e| data_err(&p, e))?;
            state.contacts = ContactHistory::from_events(events.iter().filter(|e| e.is_ok()));
            let mut funnel = FunnelState::with_horizon(config.attribution_horizon());
            ingest_engagement(&events, &state.graph, &mut funnel);
            state.funnel = funnel;
            state.events = events;
        }
        let p = self.path("model.txt");
        if p.exists() {
            state.model = Some(RankerModel::read_from(&p).map_err(|e| data_err(&p, e))?);
        }
        Ok(state)
    }

    pub fn save(&self, state: &PipelineState, day: Day) -> Result<(), PipelineError> {
        fs::create_dir_all(&self.root).map_err(|e| data_err(&self.root, e))?;
        create(&self.path("graph.tsv"), |w| w.write_all(state.graph.snapshot(day).to_text().as_bytes()))?;
        create(&self.path("profiles.tsv"), |w| write_profiles(w, state.profiles.values()))?;
        create(&self.path("behavior.tsv"), |w| write_behavior(w, state.history.records()))?;
        create(&self.path("events.tsv"), |w| write_events(w, &state.events))?;
        if let Some(m) = &state.model {
            create(&self.path("model.txt"), |w| w.write_all(m.to_text().as_bytes()))?;
        }
        if let Some(l) = &state.loss {
            write_loss(&self.path("loss.tsv"), l)?;
        }
        Ok(())
    }

    pub fn write_ranked(&self, day: Day, lists: &[RankedNudgeList]) -> Result<(), PipelineError> {
        create(&self.ranked_path(day), |w| {
            for l in lists {
                for (i, item) in l.items.iter().enumerate() {
                    writeln!(w, "{}\t{}\t{}\t{}\t{:?}", l.participant, l.day, i + 1, item.nudge, item.score)?;
                }
            }
            Ok(())
        })
    }

    /// Reads a ranked file back; rows of one participant must be contiguous
    /// and in rank order.
    pub fn read_ranked(&self, day: Day) -> Result<Vec<RankedNudgeList>, PipelineError> {
        let path = self.ranked_path(day);
        let Some(r) = open(&path)? else {
            return Err(PipelineError::Data(format!("{}: no ranked list; run `rank` first", path.display())));
        };
        let mut out: Vec<RankedNudgeList> = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| data_err(&path, e))?;
            let bad = |m: &str| PipelineError::Data(format!("{}:{}: {m}", path.display(), i + 1));
            let f: Vec<&str> = line.split('\t').collect();
            let [p, d, rank, nudge, score] = f[..] else {
                return Err(bad("expected 5 fields"));
            };
            let d: Day = d.parse().map_err(|_| bad("bad day"))?;
            if d != day {
                return Err(bad("day does not match the file"));
            }
            let score: f64 = score.parse().map_err(|_| bad("bad score"))?;
            let rank: usize = rank.parse().map_err(|_| bad("bad rank"))?;
            if out.last().map_or(true, |l| l.participant != p) {
                out.push(RankedNudgeList { participant: p.to_string(), day, items: Vec::new() });
            }
            let list = out.last_mut().expect("just pushed");
            if rank != list.items.len() + 1 {
                return Err(bad("ranks must be contiguous per participant"));
            }
            list.items.push(ScoredNudge { nudge: nudge.to_string(), score });
        }
        Ok(out)
    }
}

fn write_loss(path: &Path, loss: &LossTrace) -> Result<(), PipelineError> {
    create(path, |w| w.write_all(loss.to_text().as_bytes()))
}
