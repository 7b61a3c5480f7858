use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::models::{Dataset, KinkPolicy};

/// Contiguous run of weights forming one separable sub-network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub offset: usize,
    pub len: usize,
}

impl Block {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Frozen dense layer, row-major `rows × cols`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
}

/// Architecture of a two-homogeneous network. The activation is always the
/// leaky family `σ(s) = max(s, αs)`: `α = 0` is ReLU, `α = -1` is `|s|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelKind {
    /// `Σⱼ vⱼ σ(uⱼᵀx)`; block `j` is `[vⱼ, uⱼ]`.
    TwoLayerLeakyRelu { alpha: f64, hidden: usize },
    /// `Σⱼ pⱼ σ(uⱼᵀx)²` with `pⱼ ∈ {−1, +1}`; block `j` is `uⱼ`.
    SquaredRelu {
        #[serde(default)]
        alpha: f64,
        signs: Vec<f64>,
    },
    /// `Σᵢ xᵢ aᵢ σ(bᵢ) |bᵢ|^(L−2)`; block `i` is `[aᵢ, bᵢ]`.
    ///
    /// With one input, `x = 1` and `α = −1` this is `f(a, b) = a|b|`.
    /// Degrees above two exist only for scaling probes.
    DiagonalTwoHomogeneous {
        alpha: f64,
        #[serde(default = "two")]
        degree: u32,
    },
    /// `cᵀ σ(F_m ⋯ σ(F_1 σ(W₂ σ(W₁ x))))` with trainable `W₁` (`first × d`),
    /// `W₂` (`second × first`) and frozen `F_k`, `c`.
    FixedOuterDeepRelu {
        alpha: f64,
        first: usize,
        second: usize,
        frozen: Vec<DenseLayer>,
        output: Vec<f64>,
    },
}

fn two() -> u32 {
    2
}

/// A validated model together with its parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    kind: ModelKind,
    input_dim: usize,
    param_dim: usize,
    blocks: Vec<Block>,
}

#[inline]
fn act(alpha: f64, s: f64) -> f64 {
    s.max(alpha * s)
}

#[inline]
fn act_slope(alpha: f64, s: f64, at_zero: f64) -> f64 {
    if s > 0.0 {
        alpha.max(1.0)
    } else if s < 0.0 {
        alpha.min(1.0)
    } else {
        at_zero
    }
}

/// Kink slope together with a relative snapping tolerance: pre-activations
/// with `|s| ≤ snap·scale` are treated as sitting on the kink.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Slope {
    pub at_zero: f64,
    pub snap: f64,
}

impl Slope {
    pub(crate) fn exact(at_zero: f64) -> Self {
        Slope { at_zero, snap: 0.0 }
    }

    #[inline]
    fn of(&self, alpha: f64, s: f64, scale: impl FnOnce() -> f64) -> f64 {
        if self.snap > 0.0 && s != 0.0 && s.abs() <= self.snap * scale() {
            self.at_zero
        } else {
            act_slope(alpha, s, self.at_zero)
        }
    }
}

fn uniform_blocks(count: usize, len: usize) -> Vec<Block> {
    (0..count)
        .map(|j| Block {
            offset: j * len,
            len,
        })
        .collect()
}

impl NetworkModel {
    pub fn new(kind: ModelKind, input_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::dim("input dimension must be at least 1"));
        }
        let d = input_dim;
        let check_alpha = |a: f64| {
            if a.is_finite() {
                Ok(())
            } else {
                Err(Error::domain("alpha must be finite"))
            }
        };
        let (param_dim, blocks) = match &kind {
            ModelKind::TwoLayerLeakyRelu { alpha, hidden } => {
                check_alpha(*alpha)?;
                if *hidden == 0 {
                    return Err(Error::dim("two-layer model needs at least one neuron"));
                }
                (hidden * (1 + d), uniform_blocks(*hidden, 1 + d))
            }
            ModelKind::SquaredRelu { alpha, signs } => {
                check_alpha(*alpha)?;
                if signs.is_empty() {
                    return Err(Error::dim("squared-ReLU model needs at least one neuron"));
                }
                if signs.iter().any(|p| p.abs() != 1.0) {
                    return Err(Error::domain("output signs must be +1 or -1"));
                }
                (signs.len() * d, uniform_blocks(signs.len(), d))
            }
            ModelKind::DiagonalTwoHomogeneous { alpha, degree } => {
                check_alpha(*alpha)?;
                if *degree < 2 {
                    return Err(Error::domain("diagonal model degree must be at least 2"));
                }
                (2 * d, uniform_blocks(d, 2))
            }
            ModelKind::FixedOuterDeepRelu {
                alpha,
                first,
                second,
                frozen,
                output,
            } => {
                check_alpha(*alpha)?;
                if *first == 0 || *second == 0 {
                    return Err(Error::dim("trainable layers must be non-empty"));
                }
                let mut width = *second;
                for (k, layer) in frozen.iter().enumerate() {
                    if layer.cols != width || layer.weights.len() != layer.rows * layer.cols {
                        return Err(Error::dim(format!("frozen layer {k} has inconsistent shape")));
                    }
                    if !linalg::all_finite(&layer.weights) {
                        return Err(Error::domain("frozen weights must be finite"));
                    }
                    width = layer.rows;
                }
                if output.len() != width {
                    return Err(Error::dim(format!(
                        "output vector has {} entries, last layer has width {width}",
                        output.len()
                    )));
                }
                let k = first * d + second * first;
                (k, vec![Block { offset: 0, len: k }])
            }
        };
        Ok(NetworkModel {
            kind,
            input_dim,
            param_dim,
            blocks,
        })
    }

    pub fn squared_relu(hidden: usize, input_dim: usize) -> Self {
        Self::new(
            ModelKind::SquaredRelu {
                alpha: 0.0,
                signs: vec![1.0; hidden],
            },
            input_dim,
        )
        .expect("valid squared-ReLU model")
    }

    pub fn two_layer(alpha: f64, hidden: usize, input_dim: usize) -> Self {
        Self::new(ModelKind::TwoLayerLeakyRelu { alpha, hidden }, input_dim)
            .expect("valid two-layer model")
    }

    /// `f(a, b) = a|b|` on a single unit input.
    pub fn u1_abs_u2() -> Self {
        Self::new(
            ModelKind::DiagonalTwoHomogeneous {
                alpha: -1.0,
                degree: 2,
            },
            1,
        )
        .expect("valid diagonal model")
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn alpha(&self) -> f64 {
        match &self.kind {
            ModelKind::TwoLayerLeakyRelu { alpha, .. }
            | ModelKind::SquaredRelu { alpha, .. }
            | ModelKind::DiagonalTwoHomogeneous { alpha, .. }
            | ModelKind::FixedOuterDeepRelu { alpha, .. } => *alpha,
        }
    }

    /// Homogeneity degree in the weights; 2 for every in-scope model.
    pub fn degree(&self) -> u32 {
        match &self.kind {
            ModelKind::DiagonalTwoHomogeneous { degree, .. } => *degree,
            _ => 2,
        }
    }

    /// Whether the activation has a non-differentiable point that matters for
    /// subgradient selection. Squared activations are C¹.
    pub fn has_kinks(&self) -> bool {
        !matches!(self.kind, ModelKind::SquaredRelu { .. }) && self.alpha() != 1.0
    }

    /// The sub-network acting on block `i` alone, with weights of length
    /// `blocks()[i].len`.
    pub fn block_model(&self, i: usize) -> Result<(NetworkModel, Option<usize>)> {
        if i >= self.blocks.len() {
            return Err(Error::dim(format!("block {i} out of range")));
        }
        match &self.kind {
            ModelKind::TwoLayerLeakyRelu { alpha, .. } => Ok((
                Self::new(
                    ModelKind::TwoLayerLeakyRelu {
                        alpha: *alpha,
                        hidden: 1,
                    },
                    self.input_dim,
                )?,
                None,
            )),
            ModelKind::SquaredRelu { alpha, signs } => Ok((
                Self::new(
                    ModelKind::SquaredRelu {
                        alpha: *alpha,
                        signs: vec![signs[i]],
                    },
                    self.input_dim,
                )?,
                None,
            )),
            // Block i of the diagonal model only sees input coordinate i.
            ModelKind::DiagonalTwoHomogeneous { alpha, degree } => Ok((
                Self::new(
                    ModelKind::DiagonalTwoHomogeneous {
                        alpha: *alpha,
                        degree: *degree,
                    },
                    1,
                )?,
                Some(i),
            )),
            ModelKind::FixedOuterDeepRelu { .. } => Ok((self.clone(), None)),
        }
    }

    /// The network made of the listed blocks, in order. Only defined for
    /// architectures whose output is a sum over blocks of the same input.
    pub fn sub_model(&self, blocks: &[usize]) -> Result<NetworkModel> {
        if let Some(&i) = blocks.iter().find(|&&i| i >= self.blocks.len()) {
            return Err(Error::dim(format!("block {i} out of range")));
        }
        if blocks.is_empty() {
            return Err(Error::domain("sub-network needs at least one block"));
        }
        let kind = match &self.kind {
            ModelKind::TwoLayerLeakyRelu { alpha, .. } => ModelKind::TwoLayerLeakyRelu {
                alpha: *alpha,
                hidden: blocks.len(),
            },
            ModelKind::SquaredRelu { alpha, signs } => ModelKind::SquaredRelu {
                alpha: *alpha,
                signs: blocks.iter().map(|&i| signs[i]).collect(),
            },
            _ => {
                return Err(Error::Inapplicable(
                    "sub-networks need a two-layer or squared-ReLU model".into(),
                ))
            }
        };
        Self::new(kind, self.input_dim)
    }

    pub fn check_weights(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.param_dim {
            return Err(Error::dim(format!(
                "{} weights for a model with {} parameters",
                w.len(),
                self.param_dim
            )));
        }
        Ok(())
    }

    pub fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.dim() != self.input_dim {
            return Err(Error::dim(format!(
                "data dimension {} does not match model input dimension {}",
                data.dim(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn check_sample(&self, x: &[f64], w: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::dim(format!(
                "sample of length {} for input dimension {}",
                x.len(),
                self.input_dim
            )));
        }
        self.check_weights(w)
    }

    /// `H(x; w)` for one sample.
    pub fn eval_sample(&self, x: &[f64], w: &[f64]) -> Result<f64> {
        self.check_sample(x, w)?;
        Ok(self.eval_unchecked(x, w))
    }

    /// `H(X; w) = [H(x₁; w), …, H(xₙ; w)]`.
    pub fn eval(&self, data: &Dataset, w: &[f64]) -> Result<Vec<f64>> {
        self.check_data(data)?;
        self.check_weights(w)?;
        Ok(data.inputs().map(|x| self.eval_unchecked(x, w)).collect())
    }

    /// One element of `∂H(x; w)`, selected by `policy` at exact kinks.
    pub fn subgrad_sample(&self, x: &[f64], w: &[f64], policy: &KinkPolicy) -> Result<Vec<f64>> {
        self.check_sample(x, w)?;
        let mut out = vec![0.0; self.param_dim];
        let slope = Slope::exact(policy.slope_at_zero(self.alpha()));
        self.accumulate_subgrad(x, w, 1.0, slope, &mut out);
        Ok(out)
    }

    /// `Σᵢ cᵢ sᵢ` with `sᵢ ∈ ∂H(xᵢ; w)` selected by `policy`.
    pub fn weighted_subgrad(
        &self,
        data: &Dataset,
        w: &[f64],
        coeffs: &[f64],
        policy: &KinkPolicy,
    ) -> Result<Vec<f64>> {
        self.check_data(data)?;
        self.check_weights(w)?;
        if coeffs.len() != data.len() {
            return Err(Error::dim("one coefficient per sample required"));
        }
        let mut out = vec![0.0; self.param_dim];
        self.weighted_subgrad_into(data, w, coeffs, policy, &mut out);
        Ok(out)
    }

    /// Unchecked form of [`NetworkModel::weighted_subgrad`] writing into `out`.
    pub(crate) fn weighted_subgrad_into(
        &self,
        data: &Dataset,
        w: &[f64],
        coeffs: &[f64],
        policy: &KinkPolicy,
        out: &mut [f64],
    ) {
        let slope = Slope::exact(policy.slope_at_zero(self.alpha()));
        self.weighted_subgrad_slope(data, w, coeffs, slope, out);
    }

    pub(crate) fn weighted_subgrad_slope(
        &self,
        data: &Dataset,
        w: &[f64],
        coeffs: &[f64],
        slope: Slope,
        out: &mut [f64],
    ) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (x, &c) in data.inputs().zip(coeffs) {
            if c != 0.0 {
                self.accumulate_subgrad(x, w, c, slope, out);
            }
        }
    }

    pub(crate) fn eval_into(&self, data: &Dataset, w: &[f64], out: &mut [f64]) {
        for (o, x) in out.iter_mut().zip(data.inputs()) {
            *o = self.eval_unchecked(x, w);
        }
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], w: &[f64]) -> f64 {
        let d = self.input_dim;
        match &self.kind {
            ModelKind::TwoLayerLeakyRelu { alpha, .. } => w
                .chunks_exact(1 + d)
                .map(|b| b[0] * act(*alpha, linalg::dot(&b[1..], x)))
                .sum(),
            ModelKind::SquaredRelu { alpha, signs } => w
                .chunks_exact(d)
                .zip(signs)
                .map(|(u, p)| {
                    let a = act(*alpha, linalg::dot(u, x));
                    p * a * a
                })
                .sum(),
            ModelKind::DiagonalTwoHomogeneous { alpha, degree } => w
                .chunks_exact(2)
                .zip(x)
                .map(|(ab, xi)| xi * ab[0] * diag_factor(*alpha, *degree, ab[1]))
                .sum(),
            ModelKind::FixedOuterDeepRelu { .. } => self.deep_forward(x, w).output,
        }
    }

    /// `out += coeff · s` for the selected `s ∈ ∂H(x; w)`.
    pub(crate) fn accumulate_subgrad(
        &self,
        x: &[f64],
        w: &[f64],
        coeff: f64,
        slope: Slope,
        out: &mut [f64],
    ) {
        let d = self.input_dim;
        let slope0 = slope.at_zero;
        match &self.kind {
            ModelKind::TwoLayerLeakyRelu { alpha, .. } => {
                for (b, g) in w.chunks_exact(1 + d).zip(out.chunks_exact_mut(1 + d)) {
                    let s = linalg::dot(&b[1..], x);
                    g[0] += coeff * act(*alpha, s);
                    let k = coeff
                        * b[0]
                        * slope.of(*alpha, s, || linalg::norm(&b[1..]) * linalg::norm(x));
                    if k != 0.0 {
                        linalg::axpy(k, x, &mut g[1..]);
                    }
                }
            }
            ModelKind::SquaredRelu { alpha, signs } => {
                for ((u, g), p) in w.chunks_exact(d).zip(out.chunks_exact_mut(d)).zip(signs) {
                    let s = linalg::dot(u, x);
                    // d/ds σ(s)² = 2σ(s)σ'(s), and σ(s)σ'(s) = α²s for s < 0
                    let k = coeff * p * 2.0 * act(*alpha, s) * act_slope(*alpha, s, slope0);
                    if k != 0.0 {
                        linalg::axpy(k, x, g);
                    }
                }
            }
            ModelKind::DiagonalTwoHomogeneous { alpha, degree } => {
                for ((ab, g), xi) in w.chunks_exact(2).zip(out.chunks_exact_mut(2)).zip(x) {
                    let (a, b) = (ab[0], ab[1]);
                    g[0] += coeff * xi * diag_factor(*alpha, *degree, b);
                    let on_kink = slope.snap > 0.0 && b.abs() <= slope.snap * a.hypot(b);
                    let b_eff = if on_kink { 0.0 } else { b };
                    g[1] += coeff * xi * a * diag_factor_slope(*alpha, *degree, b_eff, slope0);
                }
            }
            ModelKind::FixedOuterDeepRelu { .. } => self.deep_backward(x, w, coeff, slope, out),
        }
    }

    /// True if some pre-activation of a non-smooth activation lies within
    /// `tau` (relative to the neuron's weight and input norms) of its kink.
    pub fn kink_near(&self, x: &[f64], w: &[f64], tau: f64) -> bool {
        if !self.has_kinks() {
            return false;
        }
        let d = self.input_dim;
        let xn = linalg::norm(x);
        let near = |s: f64, scale: f64| scale > 0.0 && s.abs() <= tau * scale;
        match &self.kind {
            ModelKind::TwoLayerLeakyRelu { .. } => w.chunks_exact(1 + d).any(|b| {
                let u = &b[1..];
                near(linalg::dot(u, x), linalg::norm(u) * xn)
            }),
            ModelKind::SquaredRelu { .. } => false,
            ModelKind::DiagonalTwoHomogeneous { .. } => w
                .chunks_exact(2)
                .zip(x)
                .any(|(ab, xi)| *xi != 0.0 && near(ab[1], ab[0].hypot(ab[1]))),
            ModelKind::FixedOuterDeepRelu { .. } => {
                let fw = self.deep_forward(x, w);
                fw.layers.iter().any(|l| {
                    l.pre
                        .iter()
                        .zip(&l.row_norms)
                        .any(|(s, rn)| near(*s, rn * l.input_norm))
                })
            }
        }
    }

    /// [`NetworkModel::kink_near`] over every sample.
    pub fn kink_near_any(&self, data: &Dataset, w: &[f64], tau: f64) -> bool {
        self.has_kinks() && data.inputs().any(|x| self.kink_near(x, w, tau))
    }

    fn deep_layers<'a>(&'a self, w: &'a [f64]) -> DeepView<'a> {
        let ModelKind::FixedOuterDeepRelu {
            alpha,
            first,
            frozen,
            output,
            ..
        } = &self.kind
        else {
            unreachable!("deep view of a non-deep model")
        };
        let d = self.input_dim;
        let (w1, w2) = w.split_at(first * d);
        DeepView {
            alpha: *alpha,
            w1,
            w2,
            first: *first,
            frozen,
            output,
        }
    }

    fn deep_forward(&self, x: &[f64], w: &[f64]) -> DeepForward {
        let v = self.deep_layers(w);
        let d = self.input_dim;
        let mut layers = Vec::with_capacity(2 + v.frozen.len());
        let mut push = |rows: &mut dyn Iterator<Item = &[f64]>, input: &[f64]| -> Vec<f64> {
            let mut pre = Vec::new();
            let mut row_norms = Vec::new();
            for row in rows {
                pre.push(linalg::dot(row, input));
                row_norms.push(linalg::norm(row));
            }
            let post: Vec<f64> = pre.iter().map(|&s| act(v.alpha, s)).collect();
            layers.push(DeepLayer {
                pre,
                row_norms,
                input: input.to_vec(),
                input_norm: linalg::norm(input),
            });
            post
        };
        let mut h = push(&mut v.w1.chunks_exact(d), x);
        h = push(&mut v.w2.chunks_exact(v.first), &h);
        for f in v.frozen {
            h = push(&mut f.weights.chunks_exact(f.cols), &h);
        }
        debug_assert_eq!(h.len(), v.output.len());
        let output = linalg::dot(v.output, &h);
        DeepForward { layers, output }
    }

    fn deep_backward(&self, x: &[f64], w: &[f64], coeff: f64, slope: Slope, out: &mut [f64]) {
        let fw = self.deep_forward(x, w);
        let v = self.deep_layers(w);
        let d = self.input_dim;
        let mut grad_h: Vec<f64> = v.output.iter().map(|c| coeff * c).collect();
        for (k, f) in v.frozen.iter().enumerate().rev() {
            let layer = &fw.layers[2 + k];
            let g_pre: Vec<f64> = grad_h
                .iter()
                .zip(layer.pre.iter().zip(&layer.row_norms))
                .map(|(g, (&s, rn))| g * slope.of(v.alpha, s, || rn * layer.input_norm))
                .collect();
            let mut prev = vec![0.0; f.cols];
            for (row, gp) in f.weights.chunks_exact(f.cols).zip(&g_pre) {
                linalg::axpy(*gp, row, &mut prev);
            }
            grad_h = prev;
        }
        let (g1, g2) = out.split_at_mut(v.first * d);
        // second trainable layer
        let l2 = &fw.layers[1];
        let g_pre2: Vec<f64> = grad_h
            .iter()
            .zip(l2.pre.iter().zip(&l2.row_norms))
            .map(|(g, (&s, rn))| g * slope.of(v.alpha, s, || rn * l2.input_norm))
            .collect();
        let mut grad_h1 = vec![0.0; v.first];
        for ((row, grow), gp) in v
            .w2
            .chunks_exact(v.first)
            .zip(g2.chunks_exact_mut(v.first))
            .zip(&g_pre2)
        {
            if *gp != 0.0 {
                linalg::axpy(*gp, &l2.input, grow);
                linalg::axpy(*gp, row, &mut grad_h1);
            }
        }
        // first trainable layer
        let l1 = &fw.layers[0];
        for ((grow, gh), (&s, rn)) in g1
            .chunks_exact_mut(d)
            .zip(&grad_h1)
            .zip(l1.pre.iter().zip(&l1.row_norms))
        {
            let gp = gh * slope.of(v.alpha, s, || rn * l1.input_norm);
            if gp != 0.0 {
                linalg::axpy(gp, x, grow);
            }
        }
    }
}

struct DeepView<'a> {
    alpha: f64,
    w1: &'a [f64],
    w2: &'a [f64],
    first: usize,
    frozen: &'a [DenseLayer],
    output: &'a [f64],
}

struct DeepLayer {
    pre: Vec<f64>,
    row_norms: Vec<f64>,
    input: Vec<f64>,
    input_norm: f64,
}

struct DeepForward {
    layers: Vec<DeepLayer>,
    output: f64,
}

/// `σ(b)|b|^(L−2)`
#[inline]
fn diag_factor(alpha: f64, degree: u32, b: f64) -> f64 {
    let base = act(alpha, b);
    if degree == 2 {
        base
    } else {
        base * b.abs().powi(degree as i32 - 2)
    }
}

/// Derivative of `σ(b)|b|^(L−2)` with the kink slope applied at `b = 0`.
#[inline]
fn diag_factor_slope(alpha: f64, degree: u32, b: f64, slope0: f64) -> f64 {
    let s = act_slope(alpha, b, slope0);
    if degree == 2 {
        s
    } else {
        // σ(b) = σ'(b)·b off the kink, so the product rule collapses
        let p = degree as i32 - 2;
        (p as f64 + 1.0) * s * b.abs().powi(p)
    }
}

impl DenseLayer {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != rows * cols {
            return Err(Error::dim("dense layer weights do not match its shape"));
        }
        Ok(DenseLayer {
            rows,
            cols,
            weights,
        })
    }
}
