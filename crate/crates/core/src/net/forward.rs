use crate::diff::{self, Graph, Objective, Var};
use crate::error::{Error, Result};
use crate::params::{Entry, ParamStore};
use crate::tensor::Tensor;

use super::spec::{param_name, LayerSpec, NetworkSpec};

/// RMS normalization offset inside the square root.
pub const RMS_EPS: f64 = 1e-6;

/// Network input. Feature rows and token ids are grouped into consecutive
/// sequences of `seq_len` rows for attention layers.
#[derive(Clone, Debug, PartialEq)]
pub enum Input {
    Features { x: Tensor, seq_len: usize },
    Tokens { ids: Vec<usize>, seq_len: usize },
}

impl Input {
    /// Independent feature rows (sequence length 1).
    pub fn features(x: Tensor) -> Self {
        Input::Features { x, seq_len: 1 }
    }

    pub fn tokens(ids: Vec<usize>, seq_len: usize) -> Self {
        Input::Tokens { ids, seq_len }
    }

    pub fn rows(&self) -> usize {
        match self {
            Input::Features { x, .. } => x.dims2().map_or(0, |d| d.0),
            Input::Tokens { ids, .. } => ids.len(),
        }
    }

    pub fn seq_len(&self) -> usize {
        match self {
            Input::Features { seq_len, .. } | Input::Tokens { seq_len, .. } => *seq_len,
        }
    }

    /// Keeps whole sequences `seqs` (indices of sequences, not rows).
    pub fn select(&self, seqs: &[usize]) -> Self {
        let t = self.seq_len();
        match self {
            Input::Features { x, seq_len } => {
                let cols = x.dims2().expect("features are rank 2").1;
                let mut data = Vec::with_capacity(seqs.len() * t * cols);
                for &s in seqs {
                    data.extend_from_slice(&x.data()[s * t * cols..(s + 1) * t * cols]);
                }
                Input::Features { x: Tensor::matrix(seqs.len() * t, cols, data).unwrap(), seq_len: *seq_len }
            }
            Input::Tokens { ids, seq_len } => Input::Tokens {
                ids: seqs.iter().flat_map(|&s| ids[s * t..(s + 1) * t].iter().copied()).collect(),
                seq_len: *seq_len,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// Real-valued rows, scored with mean squared error.
    Regression(Tensor),
    /// One class id per row, scored with softmax cross-entropy.
    Classes(Vec<usize>),
}

impl Target {
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        match self {
            Target::Regression(y) => {
                let cols = y.dims2().expect("targets are rank 2").1;
                let mut data = Vec::with_capacity(rows.len() * cols);
                for &r in rows {
                    data.extend_from_slice(&y.data()[r * cols..(r + 1) * cols]);
                }
                Target::Regression(Tensor::matrix(rows.len(), cols, data).unwrap())
            }
            Target::Classes(c) => Target::Classes(rows.iter().map(|&r| c[r]).collect()),
        }
    }
}

/// Inputs with matching targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub input: Input,
    pub target: Target,
}

impl Batch {
    pub fn regression(x: Tensor, y: Tensor) -> Self {
        Batch { input: Input::features(x), target: Target::Regression(y) }
    }

    pub fn sequences(&self) -> usize {
        self.input.rows() / self.input.seq_len().max(1)
    }

    pub fn select(&self, seqs: &[usize]) -> Self {
        let t = self.input.seq_len();
        let rows: Vec<usize> = seqs.iter().flat_map(|&s| s * t..(s + 1) * t).collect();
        Batch { input: self.input.select(seqs), target: self.target.select_rows(&rows) }
    }
}

/// Looks up parameter nodes by entry name.
pub struct BoundParams<'a> {
    entries: &'a [Entry],
    vars: Vec<Var>,
}

impl<'a> BoundParams<'a> {
    pub fn bind(g: &mut Graph, w: Var, entries: &'a [Entry]) -> Result<Self> {
        let vars = g.bind_entries(w, entries)?;
        Ok(Self { entries, vars })
    }

    pub fn from_vars(entries: &'a [Entry], vars: Vec<Var>) -> Self {
        Self { entries, vars }
    }

    pub fn get(&self, layer: usize, suffix: &str) -> Result<Var> {
        let name = param_name(layer, suffix);
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(|i| self.vars[i])
            .ok_or(Error::Layer { layer, message: format!("missing parameter `{name}`") })
    }
}

/// Records the forward pass. Returns the activation at every point
/// `a_0 … a_r`; `a_0` is `None` for token inputs.
pub fn build_forward(
    g: &mut Graph,
    net: &NetworkSpec,
    params: &BoundParams<'_>,
    input: &Input,
) -> Result<Vec<Option<Var>>> {
    let seq_len = input.seq_len().max(1);
    if !input.rows().is_multiple_of(seq_len) {
        return Err(Error::Shape(format!("{} rows do not split into sequences of {seq_len}", input.rows())));
    }
    let mut points: Vec<Option<Var>> = Vec::with_capacity(net.layers.len() + 1);
    let mut current = match input {
        Input::Features { x, .. } => {
            if net.takes_tokens() {
                return Err(Error::Layer { layer: 0, message: "expects token ids, got features".into() });
            }
            let (_, cols) = x.dims2()?;
            let expected = net.input_dim().unwrap_or(0);
            if x.rank() != 2 || cols != expected {
                return Err(Error::Layer { layer: 0, message: format!("expects input width {expected}, got {cols}") });
            }
            let xv = g.constant(x.clone());
            let tiled = if net.input_copies > 1 { g.concat_cols(&vec![xv; net.input_copies])? } else { xv };
            Some(tiled)
        }
        Input::Tokens { .. } => {
            if !net.takes_tokens() {
                return Err(Error::Layer { layer: 0, message: "expects features, got token ids".into() });
            }
            None
        }
    };
    points.push(current);
    for (k, layer) in net.layers.iter().enumerate() {
        let wrap = |e: Error| match e {
            Error::Layer { .. } => e,
            other => Error::Layer { layer: k, message: other.to_string() },
        };
        let mut out = layer_forward(g, k, layer, params, current, input, seq_len).map_err(wrap)?;
        for &(from, to) in &net.residual_links {
            if to == k + 1 {
                let src = points[from].ok_or(Error::Layer { layer: k, message: "residual from token input".into() })?;
                out = g.add(out, src).map_err(wrap)?;
            }
        }
        current = Some(out);
        points.push(current);
    }
    Ok(points)
}

fn layer_forward(
    g: &mut Graph,
    k: usize,
    layer: &LayerSpec,
    params: &BoundParams<'_>,
    current: Option<Var>,
    input: &Input,
    seq_len: usize,
) -> Result<Var> {
    if let LayerSpec::Embedding { dim, segments, .. } = layer {
        let Input::Tokens { ids, .. } = input else {
            return Err(Error::Layer { layer: k, message: "embedding needs token ids".into() });
        };
        let table = params.get(k, "embedding")?;
        let e = g.gather_rows(table, ids)?;
        let pe = g.constant(positional_encoding(ids.len(), seq_len, &LayerSpec::segment_widths(segments, *dim)));
        return g.add(e, pe);
    }
    let x = current.ok_or(Error::Layer { layer: k, message: "no input activation".into() })?;
    let width = g.value(x).dims2()?.1;
    let expected = layer.in_width().unwrap_or(0);
    if width != expected {
        return Err(Error::Layer { layer: k, message: format!("expects width {expected}, got {width}") });
    }
    match layer {
        LayerSpec::Dense { activation, .. } => {
            let w = params.get(k, "kernel")?;
            let b = params.get(k, "bias")?;
            let z = g.matmul(x, w)?;
            let z = g.add_row(z, b)?;
            Ok(g.unary(z, activation.unary()))
        }
        LayerSpec::RmsNormScale { dim, segments } => {
            let scale = params.get(k, "scale")?;
            let normed = normalize_segments(g, x, &LayerSpec::segment_widths(segments, *dim))?;
            g.mul_row(normed, scale)
        }
        LayerSpec::MultiHeadAttention { heads, head_dim, causal, .. } => {
            let p = AttentionParams {
                query: params.get(k, "query")?,
                key: params.get(k, "key")?,
                value: params.get(k, "value")?,
                output: params.get(k, "output")?,
            };
            build_attention(g, x, p, *heads, *head_dim, seq_len, *causal)
        }
        LayerSpec::AvgHead { in_dim, groups } => {
            let k = in_dim / groups;
            let mut acc = g.slice_cols(x, 0, k)?;
            for i in 1..*groups {
                let part = g.slice_cols(x, i * k, k)?;
                acc = g.add(acc, part)?;
            }
            Ok(if *groups > 1 { g.scale(acc, 1.0 / *groups as f64) } else { acc })
        }
        LayerSpec::Embedding { .. } => unreachable!(),
    }
}

fn normalize_segments(g: &mut Graph, x: Var, widths: &[usize]) -> Result<Var> {
    if widths.len() == 1 {
        return g.rms_norm(x, RMS_EPS);
    }
    let mut parts = Vec::with_capacity(widths.len());
    let mut off = 0;
    for &w in widths {
        let s = g.slice_cols(x, off, w)?;
        parts.push(g.rms_norm(s, RMS_EPS)?);
        off += w;
    }
    g.concat_cols(&parts)
}

/// Sinusoidal encoding restarted inside each feature segment, so that
/// concatenated embeddings carry concatenated encodings.
pub fn positional_encoding(rows: usize, seq_len: usize, widths: &[usize]) -> Tensor {
    let dim: usize = widths.iter().sum();
    let mut data = vec![0.0; rows * dim];
    for r in 0..rows {
        let pos = (r % seq_len) as f64;
        let mut off = 0;
        for &w in widths {
            for i in 0..w {
                let freq = (10000f64).powf((2 * (i / 2)) as f64 / w as f64);
                let angle = pos / freq;
                data[r * dim + off + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            }
            off += w;
        }
    }
    Tensor::matrix(rows, dim, data).expect("encoding shape")
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub query: Var,
    pub key: Var,
    pub value: Var,
    pub output: Var,
}

/// Per head: `softmax(Q Kᵀ / √head_dim) V` within each sequence; heads are
/// concatenated and passed through the output projection.
pub fn build_attention(
    g: &mut Graph,
    x: Var,
    p: AttentionParams,
    heads: usize,
    head_dim: usize,
    seq_len: usize,
    causal: bool,
) -> Result<Var> {
    let rows = g.value(x).dims2()?.0;
    let inner = g.value(p.query).dims2()?.1;
    if inner != heads * head_dim {
        return Err(Error::Shape(format!("projection width {inner} != {heads}×{head_dim}")));
    }
    let q = g.matmul(x, p.query)?;
    let kk = g.matmul(x, p.key)?;
    let v = g.matmul(x, p.value)?;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut head_outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * head_dim, head_dim)?;
        let kh = g.slice_cols(kk, h * head_dim, head_dim)?;
        let vh = g.slice_cols(v, h * head_dim, head_dim)?;
        let mut seqs = Vec::with_capacity(rows / seq_len);
        for s in 0..rows / seq_len {
            let qs = g.slice_rows(qh, s * seq_len, seq_len)?;
            let ks = g.slice_rows(kh, s * seq_len, seq_len)?;
            let vs = g.slice_rows(vh, s * seq_len, seq_len)?;
            let scores = g.matmul_nt(qs, ks)?;
            let scores = g.scale(scores, scale);
            let probs = g.softmax(scores, causal)?;
            seqs.push(g.matmul(probs, vs)?);
        }
        head_outputs.push(g.concat_rows(&seqs)?);
    }
    let joined = g.concat_cols(&head_outputs)?;
    g.matmul(joined, p.output)
}

fn bind_store(g: &mut Graph, params: &ParamStore) -> Result<(Var, Vec<Var>)> {
    let w = g.input(Tensor::vector(params.flat().to_vec()));
    let vars = g.bind_entries(w, params.entries())?;
    Ok((w, vars))
}

/// Output of `net` on `x`.
pub fn forward(net: &NetworkSpec, params: &ParamStore, x: &Input) -> Result<Tensor> {
    let trace = forward_trace(net, params, x)?;
    Ok(trace.into_iter().last().flatten().expect("at least one layer"))
}

/// Every activation point; `a_0` is `None` for token inputs.
pub fn forward_trace(net: &NetworkSpec, params: &ParamStore, x: &Input) -> Result<Vec<Option<Tensor>>> {
    net.validate()?;
    net.check_params(params)?;
    let mut g = Graph::new();
    let (_, vars) = bind_store(&mut g, params)?;
    let bound = BoundParams::from_vars(params.entries(), vars);
    let points = build_forward(&mut g, net, &bound, x)?;
    let out: Vec<Option<Tensor>> = points.into_iter().map(|p| p.map(|v| g.value(v).clone())).collect();
    if let Some(Some(last)) = out.last() {
        if !last.is_finite() {
            return Err(Error::NonFinite("network output".into()));
        }
    }
    Ok(out)
}

/// `y = scale ⊙ x / rms(x)` row-wise, with [`RMS_EPS`] inside the root.
pub fn rmsnorm_scale(x: &Tensor, scale: &Tensor) -> Result<Tensor> {
    let cols = x.dims2()?.1;
    if scale.len() != cols {
        return Err(Error::Shape(format!("scale has {} entries for width {cols}", scale.len())));
    }
    let mut g = Graph::new();
    let xv = g.constant(x.clone().reshape(vec![x.len() / cols, cols])?);
    let sv = g.constant(scale.clone());
    let n = g.rms_norm(xv, RMS_EPS)?;
    let y = g.mul_row(n, sv)?;
    Ok(g.value(y).clone())
}

/// Multi-head attention on concrete tensors, see [`build_attention`].
#[allow(clippy::too_many_arguments)]
pub fn attention(
    x: &Tensor,
    query: &Tensor,
    key: &Tensor,
    value: &Tensor,
    output: &Tensor,
    heads: usize,
    seq_len: usize,
    causal: bool,
) -> Result<Tensor> {
    let inner = query.dims2()?.1;
    if heads == 0 || inner % heads != 0 {
        return Err(Error::Shape(format!("{inner} projection columns do not split into {heads} heads")));
    }
    let rows = x.dims2()?.0;
    if seq_len == 0 || rows % seq_len != 0 {
        return Err(Error::Shape(format!("{rows} rows do not split into sequences of {seq_len}")));
    }
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let p = AttentionParams {
        query: g.constant(query.clone()),
        key: g.constant(key.clone()),
        value: g.constant(value.clone()),
        output: g.constant(output.clone()),
    };
    let y = build_attention(&mut g, xv, p, heads, inner / heads, seq_len, causal)?;
    Ok(g.value(y).clone())
}

/// Records the loss of `pred` against `target`.
pub fn build_loss(g: &mut Graph, pred: Var, target: &Target) -> Result<Var> {
    match target {
        Target::Regression(y) => {
            let t = g.constant(y.clone());
            g.mse(pred, t)
        }
        Target::Classes(c) => g.softmax_xent(pred, c),
    }
}

/// `loss(forward(net, w), batch)` as a differentiable objective of the flat
/// parameter vector laid out like `layout`.
pub struct NetLoss<'a> {
    pub net: &'a NetworkSpec,
    pub layout: &'a [Entry],
    pub batch: &'a Batch,
}

impl<'a> NetLoss<'a> {
    pub fn new(net: &'a NetworkSpec, params: &'a ParamStore, batch: &'a Batch) -> Self {
        Self { net, layout: params.entries(), batch }
    }
}

impl Objective for NetLoss<'_> {
    fn build(&self, g: &mut Graph, w: Var) -> Result<Var> {
        let bound = BoundParams::bind(g, w, self.layout)?;
        let points = build_forward(g, self.net, &bound, &self.batch.input)?;
        let out = points.last().copied().flatten().expect("at least one layer");
        build_loss(g, out, &self.batch.target)
    }
}

/// Loss of `net` with `params` on `batch`.
pub fn batch_loss(net: &NetworkSpec, params: &ParamStore, batch: &Batch) -> Result<f64> {
    diff::value(&NetLoss::new(net, params, batch), params.flat())
}

/// Fraction of rows whose arg-max logit equals the class target; `None`
/// for regression targets.
pub fn accuracy(pred: &Tensor, target: &Target) -> Option<f64> {
    let Target::Classes(classes) = target else { return None };
    let (rows, cols) = pred.dims2().ok()?;
    if rows == 0 {
        return None;
    }
    let hits = (0..rows)
        .filter(|&r| {
            let row = &pred.data()[r * cols..(r + 1) * cols];
            let best = (0..cols).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            best == classes[r]
        })
        .count();
    Some(hits as f64 / rows as f64)
}
