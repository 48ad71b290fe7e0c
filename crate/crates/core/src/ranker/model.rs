use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{NodeId, NodeKind};

use super::dataset::{EntityIndex, PositiveSignal, NUM_RELATIONS};
use super::matrix::Matrix;
use super::{Hyperparams, Optimizer, RankerError};

const MODEL_FORMAT: &str = "nudgerank-model";
const FORMAT_VERSION: u32 = 1;

/// All trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// n_entities × d
    pub entity: Matrix,
    /// n_relations × k
    pub relation: Matrix,
    /// per relation, k × d
    pub projection: Vec<Matrix>,
    /// per layer, d_out × d_in
    pub w1: Vec<Matrix>,
    pub w2: Vec<Matrix>,
}

fn xavier(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-a..a))
}

impl Params {
    pub fn init(n_entities: usize, hp: &Hyperparams, rng: &mut ChaCha8Rng) -> Self {
        let (d, k) = (hp.embedding_dim, hp.relation_dim);
        let entity = xavier(n_entities, d, d, k, rng);
        let relation = xavier(NUM_RELATIONS, k, d, k, rng);
        let projection = (0..NUM_RELATIONS).map(|_| xavier(k, d, d, k, rng)).collect();
        let mut w1 = Vec::new();
        let mut w2 = Vec::new();
        let mut d_in = d;
        for &d_out in &hp.layer_dims {
            w1.push(xavier(d_out, d_in, d_in, d_out, rng));
            w2.push(xavier(d_out, d_in, d_in, d_out, rng));
            d_in = d_out;
        }
        Self { entity, relation, projection, w1, w2 }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows, m.cols);
        Self {
            entity: z(&self.entity),
            relation: z(&self.relation),
            projection: self.projection.iter().map(z).collect(),
            w1: self.w1.iter().map(z).collect(),
            w2: self.w2.iter().map(z).collect(),
        }
    }

    /// Named tensors in a fixed order.
    pub fn blocks(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![("entity".to_string(), &self.entity), ("relation".to_string(), &self.relation)];
        out.extend(self.projection.iter().enumerate().map(|(r, m)| (format!("projection.{r}"), m)));
        out.extend(self.w1.iter().enumerate().map(|(l, m)| (format!("w1.{l}"), m)));
        out.extend(self.w2.iter().enumerate().map(|(l, m)| (format!("w2.{l}"), m)));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.entity, &mut self.relation];
        out.extend(self.projection.iter_mut());
        out.extend(self.w1.iter_mut());
        out.extend(self.w2.iter_mut());
        out
    }

    pub fn sq_norm(&self) -> f64 {
        self.blocks().iter().map(|(_, m)| m.sq_norm()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, m)| m.is_finite())
    }

    /// grad += 2λ Θ
    pub fn add_l2_grad(&self, l2: f64, grad: &mut Params) {
        for ((_, p), g) in self.blocks().into_iter().zip(grad.blocks_mut()) {
            for (gi, pi) in g.data.iter_mut().zip(&p.data) {
                *gi += 2.0 * l2 * pi;
            }
        }
    }
}

/// A trained ranker: hyperparameters, entity index and tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct RankerModel {
    pub hyper: Hyperparams,
    pub entities: EntityIndex,
    pub params: Params,
    /// Graph version the model was last trained on.
    pub graph_version: u64,
    pub epochs_trained: usize,
}

impl RankerModel {
    /// Width of the concatenated final representation.
    pub fn output_dim(&self) -> usize {
        self.hyper.embedding_dim + self.hyper.layer_dims.iter().sum::<usize>()
    }

    /// Verifies tensor shapes against the hyperparameters and entity index.
    pub fn check_shapes(&self) -> Result<(), RankerError> {
        let hp = &self.hyper;
        let (d, k) = (hp.embedding_dim, hp.relation_dim);
        let p = &self.params;
        let bad = |what: &str, m: &Matrix, r: usize, c: usize| {
            RankerError::DimensionMismatch(format!("{what} is {}x{}, expected {r}x{c}", m.rows, m.cols))
        };
        if p.entity.rows != self.entities.len() || p.entity.cols != d {
            return Err(bad("entity", &p.entity, self.entities.len(), d));
        }
        if p.relation.rows != NUM_RELATIONS || p.relation.cols != k {
            return Err(bad("relation", &p.relation, NUM_RELATIONS, k));
        }
        if p.projection.len() != NUM_RELATIONS {
            return Err(RankerError::DimensionMismatch(format!("{} projections", p.projection.len())));
        }
        for m in &p.projection {
            if m.rows != k || m.cols != d {
                return Err(bad("projection", m, k, d));
            }
        }
        if p.w1.len() != hp.layer_dims.len() || p.w2.len() != hp.layer_dims.len() {
            return Err(RankerError::DimensionMismatch(format!(
                "{} layers of weights for {} layer dims",
                p.w1.len(),
                hp.layer_dims.len()
            )));
        }
        let mut d_in = d;
        for (l, &d_out) in hp.layer_dims.iter().enumerate() {
            for m in [&p.w1[l], &p.w2[l]] {
                if m.rows != d_out || m.cols != d_in {
                    return Err(bad(&format!("layer {l} weight"), m, d_out, d_in));
                }
            }
            d_in = d_out;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let hp = &self.hyper;
        let mut s = format!("{MODEL_FORMAT}\t{FORMAT_VERSION}\n");
        let dims: Vec<String> = hp.layer_dims.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(s, "embedding_dim\t{}", hp.embedding_dim);
        let _ = writeln!(s, "relation_dim\t{}", hp.relation_dim);
        let _ = writeln!(s, "layer_dims\t{}", dims.join(" "));
        let _ = writeln!(s, "leaky_slope\t{:?}", hp.leaky_slope);
        let _ = writeln!(s, "learning_rate\t{:?}", hp.learning_rate);
        let _ = writeln!(s, "l2\t{:?}", hp.l2);
        let _ = writeln!(s, "negatives\t{}", hp.negatives);
        let _ = writeln!(s, "epochs\t{}", hp.epochs);
        let _ = writeln!(s, "cf_batch_size\t{}", hp.cf_batch_size);
        let _ = writeln!(s, "kg_batch_size\t{}", hp.kg_batch_size);
        let _ = writeln!(s, "optimizer\t{}", hp.optimizer.as_str());
        let _ = writeln!(s, "positive_signal\t{}", signal_str(hp.positive_signal));
        let _ = writeln!(s, "seed\t{}", hp.seed);
        let _ = writeln!(s, "graph_version\t{}", self.graph_version);
        let _ = writeln!(s, "epochs_trained\t{}", self.epochs_trained);
        let _ = writeln!(s, "entities\t{}", self.entities.len());
        for id in self.entities.ids() {
            let _ = writeln!(s, "{}\t{}", id.kind, id.key);
        }
        for (name, m) in self.params.blocks() {
            let _ = writeln!(s, "tensor\t{name}\t{}\t{}", m.rows, m.cols);
            for i in 0..m.rows {
                let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(s, "{}", row.join(" "));
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, RankerError> {
        let mut r = Reader { lines: text.lines().enumerate() };
        let (n, head) = r.next("header")?;
        if head != format!("{MODEL_FORMAT}\t{FORMAT_VERSION}") {
            return Err(fail(n, format!("unsupported header `{head}`")));
        }
        let embedding_dim = r.num("embedding_dim")?;
        let relation_dim = r.num("relation_dim")?;
        let (ln, dims) = r.field("layer_dims")?;
        let layer_dims = dims.split_whitespace().map(|d| parse_num(ln, d)).collect::<Result<Vec<usize>, _>>()?;
        let leaky_slope = r.num("leaky_slope")?;
        let learning_rate = r.num("learning_rate")?;
        let l2 = r.num("l2")?;
        let negatives = r.num("negatives")?;
        let epochs = r.num("epochs")?;
        let cf_batch_size = r.num("cf_batch_size")?;
        let kg_batch_size = r.num("kg_batch_size")?;
        let (ln, opt) = r.field("optimizer")?;
        let optimizer = Optimizer::parse(opt).ok_or_else(|| fail(ln, format!("unknown optimizer `{opt}`")))?;
        let (ln, sig) = r.field("positive_signal")?;
        let positive_signal = parse_signal(sig).ok_or_else(|| fail(ln, format!("unknown positive signal `{sig}`")))?;
        let seed = r.num("seed")?;
        let graph_version = r.num("graph_version")?;
        let epochs_trained = r.num("epochs_trained")?;
        let n_entities: usize = r.num("entities")?;
        let mut ids = Vec::with_capacity(n_entities);
        for _ in 0..n_entities {
            let (n, l) = r.next("entity")?;
            let (kind, key) = l.split_once('\t').ok_or_else(|| fail(n, format!("malformed entity `{l}`")))?;
            let kind: NodeKind = kind.parse().map_err(|e: String| fail(n, e))?;
            ids.push(NodeId::new(kind, key));
        }
        let entities = EntityIndex::new(ids);
        if entities.len() != n_entities {
            return Err(fail(0, "duplicate or topic entities in index".into()));
        }
        let hyper = Hyperparams {
            embedding_dim,
            relation_dim,
            layer_dims,
            leaky_slope,
            learning_rate,
            l2,
            negatives,
            epochs,
            cf_batch_size,
            kg_batch_size,
            optimizer,
            positive_signal,
            seed,
        };
        hyper.validate()?;
        let entity = r.tensor("entity")?;
        let relation = r.tensor("relation")?;
        let projection = (0..NUM_RELATIONS).map(|i| r.tensor(&format!("projection.{i}"))).collect::<Result<_, _>>()?;
        let w1 = (0..hyper.layer_dims.len()).map(|l| r.tensor(&format!("w1.{l}"))).collect::<Result<_, _>>()?;
        let w2 = (0..hyper.layer_dims.len()).map(|l| r.tensor(&format!("w2.{l}"))).collect::<Result<_, _>>()?;
        let model = RankerModel {
            hyper,
            entities,
            params: Params { entity, relation, projection, w1, w2 },
            graph_version,
            epochs_trained,
        };
        model.check_shapes()?;
        Ok(model)
    }

    pub fn write_to(&self, path: &Path) -> Result<(), RankerError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self, RankerError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

fn signal_str(s: PositiveSignal) -> &'static str {
    match s {
        PositiveSignal::OpenedOrUseful => "opened_or_useful",
        PositiveSignal::UsefulOnly => "useful_only",
        PositiveSignal::OpenedOnly => "opened_only",
    }
}

fn parse_signal(s: &str) -> Option<PositiveSignal> {
    [PositiveSignal::OpenedOrUseful, PositiveSignal::UsefulOnly, PositiveSignal::OpenedOnly]
        .into_iter()
        .find(|v| signal_str(*v) == s)
}

fn fail(line: usize, reason: String) -> RankerError {
    RankerError::ModelFormat { line, reason }
}

fn parse_num<T: std::str::FromStr>(line: usize, v: &str) -> Result<T, RankerError> {
    v.parse().map_err(|_| fail(line, format!("bad number `{v}`")))
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Reader<'a> {
    fn next(&mut self, want: &str) -> Result<(usize, &'a str), RankerError> {
        self.lines
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| fail(0, format!("unexpected end of file, expected {want}")))
    }

    fn field(&mut self, name: &str) -> Result<(usize, &'a str), RankerError> {
        let (n, l) = self.next(name)?;
        match l.split_once('\t') {
            Some((k, v)) if k == name => Ok((n, v)),
            _ => Err(fail(n, format!("expected `{name}`, found `{l}`"))),
        }
    }

    fn num<T: std::str::FromStr>(&mut self, name: &str) -> Result<T, RankerError> {
        let (n, v) = self.field(name)?;
        parse_num(n, v)
    }

    fn tensor(&mut self, want: &str) -> Result<Matrix, RankerError> {
        let (n, l) = self.next("tensor")?;
        let parts: Vec<&str> = l.split('\t').collect();
        if parts.len() != 4 || parts[0] != "tensor" || parts[1] != want {
            return Err(fail(n, format!("expected tensor `{want}`, found `{l}`")));
        }
        let rows: usize = parse_num(n, parts[2])?;
        let cols: usize = parse_num(n, parts[3])?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (n, l) = self.next("tensor row")?;
            let before = data.len();
            for v in l.split_whitespace() {
                data.push(parse_num::<f64>(n, v)?);
            }
            if data.len() - before != cols {
                return Err(fail(n, format!("row has {} values, expected {cols}", data.len() - before)));
            }
        }
        Ok(Matrix { rows, cols, data })
    }
}
