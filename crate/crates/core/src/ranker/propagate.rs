use super::dataset::Adjacency;
use super::matrix::{axpy, dot, Matrix};
use super::model::Params;

#[inline]
fn lrelu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
fn lrelu_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

struct LayerCache {
    input: Matrix,
    neigh: Matrix,
    z1: Matrix,
    z2: Matrix,
}

/// Forward pass state kept for backpropagation.
pub struct Forward {
    /// W_r e_x for each projection slot, slots × k
    proj: Matrix,
    /// tanh(W_r e_h + e_r) per edge, edges × k
    tanh_a: Matrix,
    /// attention weight per edge
    pub alpha: Vec<f64>,
    layers: Vec<LayerCache>,
    /// concatenated representations, n × (d + Σ d_l)
    pub output: Matrix,
}

/// Raw attention scores π(h, r, t) = (W_r e_t)ᵀ tanh(W_r e_h + e_r).
fn attention_scores(params: &Params, adj: &Adjacency) -> (Matrix, Matrix, Vec<f64>) {
    let k = params.relation.cols;
    let mut proj = Matrix::zeros(adj.proj_keys.len(), k);
    for (s, &(r, x)) in adj.proj_keys.iter().enumerate() {
        params.projection[r].mul_vec(params.entity.row(x), proj.row_mut(s));
    }
    let mut tanh_a = Matrix::zeros(adj.n_edges(), k);
    let mut pi = vec![0.0; adj.n_edges()];
    for j in 0..adj.n_edges() {
        let a = tanh_a.row_mut(j);
        a.copy_from_slice(proj.row(adj.head_proj[j]));
        axpy(1.0, params.relation.row(adj.rel[j]), a);
        for v in a.iter_mut() {
            *v = v.tanh();
        }
        pi[j] = dot(proj.row(adj.tail_proj[j]), tanh_a.row(j));
    }
    (proj, tanh_a, pi)
}

/// Softmax over each head's neighborhood, with max subtraction.
fn softmax_per_head(adj: &Adjacency, pi: &[f64]) -> Vec<f64> {
    let mut alpha = vec![0.0; pi.len()];
    for h in 0..adj.n_entities() {
        let range = adj.edges_of(h);
        if range.is_empty() {
            continue;
        }
        let max = pi[range.clone()].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for j in range.clone() {
            alpha[j] = (pi[j] - max).exp();
            sum += alpha[j];
        }
        for j in range {
            alpha[j] /= sum;
        }
    }
    alpha
}

/// Normalized attention weights for every edge of `adj`.
pub fn attention_weights(params: &Params, adj: &Adjacency) -> Vec<f64> {
    let (_, _, pi) = attention_scores(params, adj);
    softmax_per_head(adj, &pi)
}

pub fn forward(params: &Params, adj: &Adjacency, slope: f64) -> Forward {
    let n = adj.n_entities();
    let (proj, tanh_a, pi) = attention_scores(params, adj);
    let alpha = softmax_per_head(adj, &pi);

    let d0 = params.entity.cols;
    let total: usize = d0 + params.w1.iter().map(|w| w.rows).sum::<usize>();
    let mut output = Matrix::zeros(n, total);
    for h in 0..n {
        output.row_mut(h)[..d0].copy_from_slice(params.entity.row(h));
    }
    let mut layers = Vec::with_capacity(params.w1.len());
    let mut input = params.entity.clone();
    let mut offset = d0;
    for (w1, w2) in params.w1.iter().zip(&params.w2) {
        let (d_in, d_out) = (w1.cols, w1.rows);
        let mut neigh = Matrix::zeros(n, d_in);
        let mut z1 = Matrix::zeros(n, d_out);
        let mut z2 = Matrix::zeros(n, d_out);
        let mut next = Matrix::zeros(n, d_out);
        let mut s = vec![0.0; d_in];
        let mut p = vec![0.0; d_in];
        for h in 0..n {
            let eh = input.row(h);
            let en = neigh.row_mut(h);
            for j in adj.edges_of(h) {
                axpy(alpha[j], input.row(adj.tail[j]), en);
            }
            for i in 0..d_in {
                s[i] = eh[i] + en[i];
                p[i] = eh[i] * en[i];
            }
            w1.mul_vec(&s, z1.row_mut(h));
            w2.mul_vec(&p, z2.row_mut(h));
            let out = next.row_mut(h);
            for i in 0..d_out {
                out[i] = lrelu(z1.get(h, i), slope) + lrelu(z2.get(h, i), slope);
            }
            output.row_mut(h)[offset..offset + d_out].copy_from_slice(out);
        }
        offset += d_out;
        layers.push(LayerCache { input, neigh, z1, z2 });
        input = next;
    }
    Forward { proj, tanh_a, alpha, layers, output }
}

/// Accumulates into `grad` the gradient of a loss whose derivative with
/// respect to the concatenated output is `d_out`.
pub fn backward(params: &Params, adj: &Adjacency, slope: f64, fwd: &Forward, d_out: &Matrix, grad: &mut Params) {
    let n = adj.n_entities();
    let d0 = params.entity.cols;
    let widths: Vec<usize> = std::iter::once(d0).chain(params.w1.iter().map(|w| w.rows)).collect();
    let offsets: Vec<usize> = widths
        .iter()
        .scan(0, |acc, w| {
            let o = *acc;
            *acc += w;
            Some(o)
        })
        .collect();
    let block = |l: usize| {
        let (o, w) = (offsets[l], widths[l]);
        let mut m = Matrix::zeros(n, w);
        for h in 0..n {
            m.row_mut(h).copy_from_slice(&d_out.row(h)[o..o + w]);
        }
        m
    };

    let n_layers = params.w1.len();
    let mut d_alpha = vec![0.0; adj.n_edges()];
    let mut d_cur = block(n_layers);
    for l in (0..n_layers).rev() {
        let cache = &fwd.layers[l];
        let (w1, w2) = (&params.w1[l], &params.w2[l]);
        let (d_in, d_o) = (w1.cols, w1.rows);
        let mut d_in_m = block(l);
        let mut dz1 = vec![0.0; d_o];
        let mut dz2 = vec![0.0; d_o];
        let mut s = vec![0.0; d_in];
        let mut p = vec![0.0; d_in];
        let mut ds = vec![0.0; d_in];
        let mut dp = vec![0.0; d_in];
        let mut d_neigh = vec![0.0; d_in];
        for h in 0..n {
            let g = d_cur.row(h);
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            for i in 0..d_o {
                dz1[i] = g[i] * lrelu_grad(cache.z1.get(h, i), slope);
                dz2[i] = g[i] * lrelu_grad(cache.z2.get(h, i), slope);
            }
            let eh = cache.input.row(h);
            let en = cache.neigh.row(h);
            for i in 0..d_in {
                s[i] = eh[i] + en[i];
                p[i] = eh[i] * en[i];
            }
            grad.w1[l].add_outer(1.0, &dz1, &s);
            grad.w2[l].add_outer(1.0, &dz2, &p);
            ds.iter_mut().for_each(|v| *v = 0.0);
            dp.iter_mut().for_each(|v| *v = 0.0);
            w1.mul_t_vec_add(&dz1, &mut ds);
            w2.mul_t_vec_add(&dz2, &mut dp);
            let row = d_in_m.row_mut(h);
            for i in 0..d_in {
                row[i] += ds[i] + dp[i] * en[i];
                d_neigh[i] = ds[i] + dp[i] * eh[i];
            }
            for j in adj.edges_of(h) {
                let t = adj.tail[j];
                d_alpha[j] += dot(&d_neigh, cache.input.row(t));
                axpy(fwd.alpha[j], &d_neigh, d_in_m.row_mut(t));
            }
        }
        d_cur = d_in_m;
    }
    // d_cur is now the gradient on the base embeddings through the layers
    axpy(1.0, &d_cur.data, &mut grad.entity.data);

    // softmax, then the attention score
    let k = params.relation.cols;
    let mut d_proj = Matrix::zeros(adj.proj_keys.len(), k);
    let mut da = vec![0.0; k];
    for h in 0..n {
        let range = adj.edges_of(h);
        if range.is_empty() {
            continue;
        }
        let mean: f64 = range.clone().map(|j| fwd.alpha[j] * d_alpha[j]).sum();
        for j in range {
            let d_pi = fwd.alpha[j] * (d_alpha[j] - mean);
            if d_pi == 0.0 {
                continue;
            }
            let th = fwd.tanh_a.row(j);
            axpy(d_pi, th, d_proj.row_mut(adj.tail_proj[j]));
            let pt = fwd.proj.row(adj.tail_proj[j]);
            for i in 0..k {
                da[i] = d_pi * pt[i] * (1.0 - th[i] * th[i]);
            }
            axpy(1.0, &da, d_proj.row_mut(adj.head_proj[j]));
            axpy(1.0, &da, grad.relation.row_mut(adj.rel[j]));
        }
    }
    for (slot, &(r, x)) in adj.proj_keys.iter().enumerate() {
        let g = d_proj.row(slot);
        if g.iter().all(|v| *v == 0.0) {
            continue;
        }
        grad.projection[r].add_outer(1.0, g, params.entity.row(x));
        params.projection[r].mul_t_vec_add(g, grad.entity.row_mut(x));
    }
}
