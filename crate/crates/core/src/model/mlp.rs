use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FeatureVector, Logits, ModelError, NUM_CLASSES};

/// Stream ids below this are first-layer rows; head `h` draws from
/// `HEAD_STREAM + h`.
const HEAD_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// `hidden x 2`, row-major: `w2[j * 2 + c]`.
    pub w2: Vec<f64>,
    pub b2: [f64; NUM_CLASSES],
}

impl HeadParams {
    fn zeros(hidden: usize) -> Self {
        HeadParams {
            w2: vec![0.0; hidden * NUM_CLASSES],
            b2: [0.0; NUM_CLASSES],
        }
    }
}

/// Parameters of the shared hidden layer plus per-head output layers.
///
/// The `dim x hidden` first-layer matrix is stored sparsely: a row exists in
/// memory only once a gradient has touched it. Every other row is the
/// seeded Glorot draw for that row times `lazy_scale`, the accumulated
/// weight-decay factor, so it never has to be allocated.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub(super) dim: usize,
    pub(super) hidden: usize,
    pub(super) seed: u64,
    pub(super) init_scale: f64,
    pub(super) lazy_scale: f64,
    pub(super) rows: HashMap<u32, Vec<f64>>,
    pub(super) b1: Vec<f64>,
    pub(super) heads: Vec<HeadParams>,
    pub(super) version: u64,
}

/// Address of a single scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRef {
    W1 { row: u32, col: usize },
    B1(usize),
    W2 { head: usize, row: usize, class: usize },
    B2 { head: usize, class: usize },
}

fn glorot(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Glorot-uniform weights in `[-s, s]`, zero biases, deterministic in `seed`.
pub fn init_params(dim: usize, hidden: usize, head_count: usize, seed: u64) -> Result<ModelParams, ModelError> {
    if dim == 0 || hidden == 0 || head_count == 0 {
        return Err(ModelError::Contract(format!(
            "dimensions must be positive (dim={dim}, hidden={hidden}, heads={head_count})"
        )));
    }
    if dim > u32::MAX as usize + 1 {
        return Err(ModelError::Contract(format!("feature dimension {dim} exceeds 2^32")));
    }
    let s2 = glorot(hidden, NUM_CLASSES);
    let heads = (0..head_count)
        .map(|h| {
            let mut rng = stream_rng(seed, HEAD_STREAM + h as u64);
            HeadParams {
                w2: (0..hidden * NUM_CLASSES)
                    .map(|_| s2 * (2.0 * rng.random::<f64>() - 1.0))
                    .collect(),
                b2: [0.0; NUM_CLASSES],
            }
        })
        .collect();
    Ok(ModelParams {
        dim,
        hidden,
        seed,
        init_scale: glorot(dim, hidden),
        lazy_scale: 1.0,
        rows: HashMap::new(),
        b1: vec![0.0; hidden],
        heads,
        version: 0,
    })
}

impl ModelParams {
    /// All-zero parameters.
    pub fn zeros(dim: usize, hidden: usize, head_count: usize) -> ModelParams {
        ModelParams {
            dim,
            hidden,
            seed: 0,
            init_scale: 0.0,
            lazy_scale: 1.0,
            rows: HashMap::new(),
            b1: vec![0.0; hidden],
            heads: (0..head_count).map(|_| HeadParams::zeros(hidden)).collect(),
            version: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Incremented by every [`sgd_step`].
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn head(&self, h: usize) -> &HeadParams {
        &self.heads[h]
    }

    pub fn b1(&self) -> &[f64] {
        &self.b1
    }

    pub fn materialized_rows(&self) -> usize {
        self.rows.len()
    }

    fn lazy_row(&self, row: u32) -> Vec<f64> {
        let mut rng = stream_rng(self.seed, u64::from(row));
        (0..self.hidden)
            .map(|_| self.init_scale * (2.0 * rng.random::<f64>() - 1.0) * self.lazy_scale)
            .collect()
    }

    /// First-layer weights feeding out of input feature `row`.
    pub fn w1_row(&self, row: u32) -> Cow<'_, [f64]> {
        match self.rows.get(&row) {
            Some(r) => Cow::Borrowed(r),
            None => Cow::Owned(self.lazy_row(row)),
        }
    }

    fn w1_row_mut(&mut self, row: u32) -> &mut Vec<f64> {
        if !self.rows.contains_key(&row) {
            let r = self.lazy_row(row);
            self.rows.insert(row, r);
        }
        self.rows.get_mut(&row).unwrap()
    }

    pub fn get(&self, p: ParamRef) -> f64 {
        match p {
            ParamRef::W1 { row, col } => self.w1_row(row)[col],
            ParamRef::B1(j) => self.b1[j],
            ParamRef::W2 { head, row, class } => self.heads[head].w2[row * NUM_CLASSES + class],
            ParamRef::B2 { head, class } => self.heads[head].b2[class],
        }
    }

    pub fn set(&mut self, p: ParamRef, value: f64) {
        match p {
            ParamRef::W1 { row, col } => self.w1_row_mut(row)[col] = value,
            ParamRef::B1(j) => self.b1[j] = value,
            ParamRef::W2 { head, row, class } => self.heads[head].w2[row * NUM_CLASSES + class] = value,
            ParamRef::B2 { head, class } => self.heads[head].b2[class] = value,
        }
    }

    /// Every non-first-layer coordinate plus the first-layer rows listed.
    pub fn coordinates(&self, w1_rows: &[u32]) -> Vec<ParamRef> {
        let mut out = Vec::new();
        for &row in w1_rows {
            out.extend((0..self.hidden).map(|col| ParamRef::W1 { row, col }));
        }
        out.extend((0..self.hidden).map(ParamRef::B1));
        for head in 0..self.heads.len() {
            for row in 0..self.hidden {
                for class in 0..NUM_CLASSES {
                    out.push(ParamRef::W2 { head, row, class });
                }
            }
            for class in 0..NUM_CLASSES {
                out.push(ParamRef::B2 { head, class });
            }
        }
        out
    }

    fn hidden_pre(&self, x: &FeatureVector) -> Vec<f64> {
        let mut pre = self.b1.clone();
        for (i, xi) in x.iter() {
            let row = self.w1_row(i);
            for (p, w) in pre.iter_mut().zip(row.iter()) {
                *p += xi * w;
            }
        }
        pre
    }

    fn head_logits(&self, hidden: &[f64]) -> Vec<Logits> {
        self.heads
            .iter()
            .map(|head| {
                let mut z = head.b2;
                for (j, h) in hidden.iter().enumerate() {
                    for (c, zc) in z.iter_mut().enumerate() {
                        *zc += head.w2[j * NUM_CLASSES + c] * h;
                    }
                }
                Logits(z)
            })
            .collect()
    }

    fn check_input(&self, x: &FeatureVector) -> Result<(), ModelError> {
        if x.dim != self.dim {
            return Err(ModelError::Contract(format!(
                "feature dimension {} does not match model dimension {}",
                x.dim, self.dim
            )));
        }
        Ok(())
    }

    /// Per-head logits without keeping a trace.
    pub fn logits(&self, x: &FeatureVector) -> Result<Vec<Logits>, ModelError> {
        self.check_input(x)?;
        let hidden: Vec<f64> = self.hidden_pre(x).into_iter().map(|v| v.max(0.0)).collect();
        Ok(self.head_logits(&hidden))
    }
}

/// Activations kept from [`forward`] for the matching [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub x: FeatureVector,
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    version: u64,
    head_count: usize,
}

/// `h = relu(W1^T x + b1)`, `z_k = W2_k^T h + b2_k` for every head `k`.
pub fn forward(params: &ModelParams, x: &FeatureVector) -> Result<(Vec<Logits>, ForwardTrace), ModelError> {
    params.check_input(x)?;
    let pre = params.hidden_pre(x);
    let hidden: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
    let logits = params.head_logits(&hidden);
    let trace = ForwardTrace {
        x: x.clone(),
        pre,
        hidden,
        version: params.version,
        head_count: params.heads.len(),
    };
    Ok((logits, trace))
}

/// Gradients with the same shape as [`ModelParams`]; first-layer rows are
/// present only where the gradient can be nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    hidden: usize,
    pub rows: BTreeMap<u32, Vec<f64>>,
    pub b1: Vec<f64>,
    pub heads: Vec<HeadParams>,
}

impl GradientSet {
    pub fn zeros(params: &ModelParams) -> GradientSet {
        GradientSet {
            hidden: params.hidden,
            rows: BTreeMap::new(),
            b1: vec![0.0; params.hidden],
            heads: (0..params.heads.len())
                .map(|_| HeadParams::zeros(params.hidden))
                .collect(),
        }
    }

    pub fn get(&self, p: ParamRef) -> f64 {
        match p {
            ParamRef::W1 { row, col } => self.rows.get(&row).map_or(0.0, |r| r[col]),
            ParamRef::B1(j) => self.b1[j],
            ParamRef::W2 { head, row, class } => self.heads[head].w2[row * NUM_CLASSES + class],
            ParamRef::B2 { head, class } => self.heads[head].b2[class],
        }
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows
            .values()
            .flatten()
            .chain(&self.b1)
            .chain(self.heads.iter().flat_map(|h| h.w2.iter().chain(&h.b2)))
            .copied()
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|v| v == 0.0)
    }

    pub fn all_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    /// Adds the gradient of `sum_k upstream[k] . z_k` for the example behind
    /// `trace`, where `upstream[k]` is dLoss/dz for head `k`.
    pub fn accumulate(
        &mut self,
        params: &ModelParams,
        trace: &ForwardTrace,
        upstream: &[[f64; NUM_CLASSES]],
    ) -> Result<(), ModelError> {
        if trace.version != params.version {
            return Err(ModelError::Contract(format!(
                "stale trace: recorded at parameter version {}, model is at {}",
                trace.version, params.version
            )));
        }
        if trace.head_count != params.heads.len()
            || upstream.len() != params.heads.len()
            || trace.hidden.len() != params.hidden
            || self.hidden != params.hidden
            || self.heads.len() != params.heads.len()
        {
            return Err(ModelError::Contract(
                "trace, upstream gradient and model shapes differ".into(),
            ));
        }
        let hidden = params.hidden;
        let mut d_hidden = vec![0.0; hidden];
        for ((grad, head), dz) in self.heads.iter_mut().zip(&params.heads).zip(upstream) {
            for (g, d) in grad.b2.iter_mut().zip(dz) {
                *g += d;
            }
            let rows = grad
                .w2
                .chunks_exact_mut(NUM_CLASSES)
                .zip(head.w2.chunks_exact(NUM_CLASSES));
            for ((g_row, w_row), (a, dh)) in rows.zip(trace.hidden.iter().zip(d_hidden.iter_mut())) {
                for ((g, w), d) in g_row.iter_mut().zip(w_row).zip(dz) {
                    *g += a * d;
                    *dh += w * d;
                }
            }
        }
        let d_pre: Vec<f64> = d_hidden
            .iter()
            .zip(&trace.pre)
            .map(|(d, &p)| if p > 0.0 { *d } else { 0.0 })
            .collect();
        for (g, d) in self.b1.iter_mut().zip(&d_pre) {
            *g += d;
        }
        if d_pre.iter().any(|&d| d != 0.0) {
            for (i, xi) in trace.x.iter() {
                let row = self.rows.entry(i).or_insert_with(|| vec![0.0; hidden]);
                for (g, d) in row.iter_mut().zip(&d_pre) {
                    *g += xi * d;
                }
            }
        }
        Ok(())
    }
}

/// Exact gradient of the loss whose per-head logit gradients are `upstream`.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    upstream: &[[f64; NUM_CLASSES]],
) -> Result<GradientSet, ModelError> {
    let mut grads = GradientSet::zeros(params);
    grads.accumulate(params, trace, upstream)?;
    Ok(grads)
}

/// `p <- p - lr * (g + wd * p)` for every parameter.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &GradientSet,
    learning_rate: f64,
    weight_decay: f64,
) -> Result<(), ModelError> {
    if !(learning_rate >= 0.0 && learning_rate.is_finite()) || !(weight_decay >= 0.0 && weight_decay.is_finite()) {
        return Err(ModelError::Contract(format!(
            "invalid step size (lr={learning_rate}, wd={weight_decay})"
        )));
    }
    if grads.hidden != params.hidden || grads.heads.len() != params.heads.len() {
        return Err(ModelError::Contract("gradient shape does not match parameters".into()));
    }
    if !grads.all_finite() {
        return Err(ModelError::NonFinite("gradient"));
    }
    let (lr, wd) = (learning_rate, weight_decay);
    let update = |p: &mut f64, g: f64| *p -= lr * (g + wd * *p);

    for (&i, g) in &grads.rows {
        let row = params.w1_row_mut(i);
        for (p, &gv) in row.iter_mut().zip(g) {
            update(p, gv);
        }
    }
    if wd != 0.0 {
        for (i, row) in params.rows.iter_mut() {
            if !grads.rows.contains_key(i) {
                for p in row.iter_mut() {
                    update(p, 0.0);
                }
            }
        }
        params.lazy_scale *= 1.0 - lr * wd;
    }
    for (p, &g) in params.b1.iter_mut().zip(&grads.b1) {
        update(p, g);
    }
    for (head, g) in params.heads.iter_mut().zip(&grads.heads) {
        for (p, &gv) in head.w2.iter_mut().zip(&g.w2) {
            update(p, gv);
        }
        for (p, &gv) in head.b2.iter_mut().zip(&g.b2) {
            update(p, gv);
        }
    }
    params.version += 1;
    Ok(())
}
