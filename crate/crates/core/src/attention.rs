//! Latent channel attention.
//!
//! The building block is a channel-weight function: global average pooling
//! condenses a latent tensor to one descriptor per channel, a two-layer
//! gating network (squeeze to `C/r`, rectify, excite back to `C`, sigmoid)
//! turns the descriptor into per-channel weights in `(0, 1)`.
//!
//! Self-attention scales a latent's channels by its own weights;
//! cross-attention scales one latent's channels by weights computed from a
//! *different* conditioning latent. Deblurred latents combine self-attention
//! on a frame with cross-attention from a window of neighbours; interpolated
//! latents combine both directions of an adjacent pair.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::network::layers::{global_avg_pool, global_avg_pool_backward_into, kaiming_std, randn};
use crate::scalar::Scalar;

/// Which attention terms contribute, mirroring the ablation sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    SelfOnly,
    CrossOnly,
    Both,
}

impl AttentionMode {
    pub fn all() -> [AttentionMode; 3] {
        [AttentionMode::SelfOnly, AttentionMode::CrossOnly, AttentionMode::Both]
    }

    pub fn name(&self) -> &'static str {
        match self {
            AttentionMode::SelfOnly => "self_only",
            AttentionMode::CrossOnly => "cross_only",
            AttentionMode::Both => "both",
        }
    }
}

impl std::str::FromStr for AttentionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self_only" => Ok(AttentionMode::SelfOnly),
            "cross_only" => Ok(AttentionMode::CrossOnly),
            "both" => Ok(AttentionMode::Both),
            _ => Err(Error::config(format!("unknown attention mode `{s}`"))),
        }
    }
}

/// Largest divisor of `channels` not exceeding 16; the default squeeze
/// ratio. Hits 16 whenever 16 divides the channel count.
pub fn default_reduction(channels: usize) -> usize {
    (1..=16.min(channels)).rev().find(|r| channels % r == 0).unwrap_or(1)
}

/// Weights of one channel-gating network.
#[derive(Debug, Clone)]
pub struct AttentionParams<T> {
    /// squeeze: `(C/r, C)`
    pub w_down: Array2<T>,
    pub b_down: Array1<T>,
    /// excite: `(C, C/r)`
    pub w_up: Array2<T>,
    pub b_up: Array1<T>,
}

impl<T: Scalar> AttentionParams<T> {
    pub fn init(channels: usize, reduction: usize, rng: &mut impl Rng) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(Error::config(format!(
                "reduction {reduction} must divide the channel count {channels}"
            )));
        }
        let hidden = channels / reduction;
        let sd = kaiming_std(channels, 0.0);
        let su = kaiming_std(hidden, 0.0);
        Ok(AttentionParams {
            w_down: Array2::from_shape_fn((hidden, channels), |_| T::from_f64(randn(rng) * sd)),
            b_down: Array1::zeros(hidden),
            w_up: Array2::from_shape_fn((channels, hidden), |_| T::from_f64(randn(rng) * su)),
            b_up: Array1::zeros(channels),
        })
    }

    pub fn zeros(channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(Error::config(format!(
                "reduction {reduction} must divide the channel count {channels}"
            )));
        }
        let hidden = channels / reduction;
        Ok(AttentionParams {
            w_down: Array2::zeros((hidden, channels)),
            b_down: Array1::zeros(hidden),
            w_up: Array2::zeros((channels, hidden)),
            b_up: Array1::zeros(channels),
        })
    }

    pub fn zeros_like(&self) -> Self {
        AttentionParams {
            w_down: Array2::zeros(self.w_down.raw_dim()),
            b_down: Array1::zeros(self.b_down.raw_dim()),
            w_up: Array2::zeros(self.w_up.raw_dim()),
            b_up: Array1::zeros(self.b_up.raw_dim()),
        }
    }

    pub fn channels(&self) -> usize {
        self.w_down.dim().1
    }
}

/// The attention parameterization used by a model. Self- and cross-attention
/// share one gating network by default; `shared = false` gives cross its own.
#[derive(Debug, Clone)]
pub struct AttentionParamSet<T> {
    pub self_params: AttentionParams<T>,
    /// `None` means cross-attention reuses `self_params`.
    pub cross_params: Option<AttentionParams<T>>,
    /// Divide the cross-attention sum of a deblurred latent by the
    /// neighbour count (off by default: the sum is unnormalized).
    pub normalize_deblur_sum: bool,
}

impl<T: Scalar> AttentionParamSet<T> {
    pub fn init(
        channels: usize,
        reduction: usize,
        shared: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(AttentionParamSet {
            self_params: AttentionParams::init(channels, reduction, rng)?,
            cross_params: if shared {
                None
            } else {
                Some(AttentionParams::init(channels, reduction, rng)?)
            },
            normalize_deblur_sum: false,
        })
    }

    pub fn zeros_like(&self) -> Self {
        AttentionParamSet {
            self_params: self.self_params.zeros_like(),
            cross_params: self.cross_params.as_ref().map(|p| p.zeros_like()),
            normalize_deblur_sum: self.normalize_deblur_sum,
        }
    }

    pub fn cross(&self) -> &AttentionParams<T> {
        self.cross_params.as_ref().unwrap_or(&self.self_params)
    }

    fn cross_grad<'a>(grads: &'a mut AttentionParamSet<T>) -> &'a mut AttentionParams<T> {
        match grads.cross_params {
            Some(ref mut p) => p,
            None => &mut grads.self_params,
        }
    }

    pub fn channels(&self) -> usize {
        self.self_params.channels()
    }
}

fn check_latent<T: Scalar>(x: &Array3<T>, params: &AttentionParams<T>) -> Result<()> {
    let (c, h, w) = x.dim();
    if c != params.channels() {
        return Err(Error::shape(format!(
            "latent has {c} channels, gating network expects {}",
            params.channels()
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::shape(format!("latent dimensions must be positive, got {h}x{w}")));
    }
    Ok(())
}

fn check_same_shape<T: Scalar>(a: &Array3<T>, b: &Array3<T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!(
            "latent shapes differ: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Intermediates of one channel-weight evaluation, kept for backward.
#[derive(Debug, Clone)]
struct WeightCache<T> {
    descriptor: Array1<T>,
    hidden: Array1<T>,
    weights: Array1<T>,
}

fn channel_weights_cached<T: Scalar>(
    x: &Array3<T>,
    params: &AttentionParams<T>,
) -> WeightCache<T> {
    let descriptor = global_avg_pool(x);
    let mut hidden = params.w_down.dot(&descriptor) + &params.b_down;
    hidden.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
    let pre = params.w_up.dot(&hidden) + &params.b_up;
    let weights = pre.mapv(|v| T::one() / (T::one() + (-v).exp()));
    WeightCache { descriptor, hidden, weights }
}

/// Backward through the gating network given `d loss / d weights`;
/// accumulates into the conditioning latent's gradient and the parameter
/// gradients.
fn channel_weights_backward<T: Scalar>(
    cache: &WeightCache<T>,
    g_weights: &Array1<T>,
    params: &AttentionParams<T>,
    g_x: &mut Array3<T>,
    grads: &mut AttentionParams<T>,
) {
    let mut g_pre = g_weights.clone();
    g_pre.zip_mut_with(&cache.weights, |g, &w| *g = *g * w * (T::one() - w));
    // excite layer
    for (mut row, &g) in grads.w_up.rows_mut().into_iter().zip(g_pre.iter()) {
        row.zip_mut_with(&cache.hidden, |acc, &h| *acc += g * h);
    }
    grads.b_up += &g_pre;
    let mut g_hidden = params.w_up.t().dot(&g_pre);
    g_hidden.zip_mut_with(&cache.hidden, |g, &h| {
        if h <= T::zero() {
            *g = T::zero();
        }
    });
    // squeeze layer
    for (mut row, &g) in grads.w_down.rows_mut().into_iter().zip(g_hidden.iter()) {
        row.zip_mut_with(&cache.descriptor, |acc, &d| *acc += g * d);
    }
    grads.b_down += &g_hidden;
    let g_descriptor = params.w_down.t().dot(&g_hidden);
    global_avg_pool_backward_into(&g_descriptor, g_x);
}

/// Per-channel gating weights for a latent tensor: global average pooling
/// followed by the squeeze/excite transform, every component in `(0, 1)`.
pub fn channel_weights<T: Scalar>(
    x: &Array3<T>,
    params: &AttentionParams<T>,
) -> Result<Array1<T>> {
    check_latent(x, params)?;
    Ok(channel_weights_cached(x, params).weights)
}

fn scale_channels<T: Scalar>(x: &Array3<T>, w: &Array1<T>) -> Array3<T> {
    let mut out = x.clone();
    for (mut plane, &wc) in out.axis_iter_mut(Axis(0)).zip(w.iter()) {
        plane.mapv_inplace(|v| v * wc);
    }
    out
}

/// Self-attention: scale each channel of `x` by `x`'s own gating weights.
pub fn self_attention<T: Scalar>(x: &Array3<T>, params: &AttentionParams<T>) -> Result<Array3<T>> {
    check_latent(x, params)?;
    let cache = channel_weights_cached(x, params);
    Ok(scale_channels(x, &cache.weights))
}

/// Cross-attention: scale each channel of the content latent `x_j` by
/// weights computed from the conditioning latent `x_i`.
pub fn cross_attention<T: Scalar>(
    x_j: &Array3<T>,
    x_i: &Array3<T>,
    params: &AttentionParams<T>,
) -> Result<Array3<T>> {
    check_latent(x_i, params)?;
    check_same_shape(x_j, x_i)?;
    let cache = channel_weights_cached(x_i, params);
    Ok(scale_channels(x_j, &cache.weights))
}

// ---------------------------------------------------------------------------
// Compositions
// ---------------------------------------------------------------------------

/// One attention term inside a composed latent: content index, conditioning
/// index, whether it is a self term, plus the cached gating intermediates.
#[derive(Debug, Clone)]
struct TermCache<T> {
    content: usize,
    cond: usize,
    is_self: bool,
    scale: T,
    weights: WeightCache<T>,
}

/// Cache of one composed latent (deblur or interp).
#[derive(Debug, Clone)]
pub struct ComposeCache<T> {
    terms: Vec<TermCache<T>>,
}

/// Neighbour window of frame `i`: integers in `[i - W/2, i) ∪ (i, i + W/2]`
/// clipped to the stack bounds.
pub fn neighbour_indices(i: usize, len: usize, window: usize) -> Vec<usize> {
    let half = window / 2;
    let lo = i.saturating_sub(half);
    let hi = (i + half).min(len - 1);
    (lo..=hi).filter(|&j| j != i).collect()
}

fn validate_window(window: usize) -> Result<()> {
    if window < 2 || window % 2 != 0 {
        return Err(Error::config(format!("attention window {window} must be even and >= 2")));
    }
    Ok(())
}

fn validate_stack<T: Scalar>(stack: &[Array3<T>], set: &AttentionParamSet<T>) -> Result<()> {
    for x in stack {
        check_latent(x, &set.self_params)?;
        check_same_shape(x, &stack[0])?;
    }
    Ok(())
}

fn compose<T: Scalar>(
    stack: &[Array3<T>],
    terms: &[(usize, usize, bool, T)],
    set: &AttentionParamSet<T>,
) -> (Array3<T>, ComposeCache<T>) {
    let mut out: Option<Array3<T>> = None;
    let mut cache = ComposeCache { terms: Vec::with_capacity(terms.len()) };
    for &(content, cond, is_self, scale) in terms {
        let params = if is_self { &set.self_params } else { set.cross() };
        let weights = channel_weights_cached(&stack[cond], params);
        let mut term = scale_channels(&stack[content], &weights.weights);
        if scale != T::one() {
            term.mapv_inplace(|v| v * scale);
        }
        out = Some(match out {
            None => term,
            Some(mut acc) => {
                acc += &term;
                acc
            }
        });
        cache.terms.push(TermCache { content, cond, is_self, scale, weights });
    }
    (out.expect("composition has at least one term"), cache)
}

fn compose_backward<T: Scalar>(
    stack: &[Array3<T>],
    cache: &ComposeCache<T>,
    g_out: &Array3<T>,
    set: &AttentionParamSet<T>,
    g_stack: &mut [Array3<T>],
    grads: &mut AttentionParamSet<T>,
) {
    for term in &cache.terms {
        let params = if term.is_self { &set.self_params } else { set.cross() };
        // content path: g_content += scale * g_out ⊙ w
        let (c, _, _) = g_out.dim();
        let mut g_w = Array1::<T>::zeros(c);
        {
            let content = &stack[term.content];
            let g_content = &mut g_stack[term.content];
            for ci in 0..c {
                let wc = term.weights.weights[ci] * term.scale;
                let g_plane = g_out.index_axis(Axis(0), ci);
                let x_plane = content.index_axis(Axis(0), ci);
                let mut acc = T::zero();
                let mut out_plane = g_content.index_axis_mut(Axis(0), ci);
                ndarray::Zip::from(&mut out_plane).and(&g_plane).and(&x_plane).for_each(
                    |o, &g, &x| {
                        *o += g * wc;
                        acc += g * x;
                    },
                );
                g_w[ci] = acc * term.scale;
            }
        }
        // weight path through the conditioning latent
        let param_grads = if term.is_self {
            &mut grads.self_params
        } else {
            AttentionParamSet::cross_grad(grads)
        };
        channel_weights_backward(
            &term.weights,
            &g_w,
            params,
            &mut g_stack[term.cond],
            param_grads,
        );
    }
}

fn deblur_terms<T: Scalar>(
    i: usize,
    len: usize,
    window: usize,
    mode: AttentionMode,
    normalize: bool,
) -> Vec<(usize, usize, bool, T)> {
    let neighbours = neighbour_indices(i, len, window);
    let cross_scale = if normalize && !neighbours.is_empty() {
        T::from_f64(1.0 / neighbours.len() as f64)
    } else {
        T::one()
    };
    let mut terms = Vec::new();
    if mode != AttentionMode::CrossOnly {
        terms.push((i, i, true, T::one()));
    }
    if mode != AttentionMode::SelfOnly {
        // accumulate in neighbour index order
        for j in neighbours {
            terms.push((j, i, false, cross_scale));
        }
    }
    terms
}

/// Optimized latent for deblurring frame `i`: self-attention on `x_i` plus
/// cross-attention of each windowed neighbour `x_j` conditioned on `x_i`.
pub fn deblur_latent<T: Scalar>(
    stack: &[Array3<T>],
    i: usize,
    window: usize,
    mode: AttentionMode,
    set: &AttentionParamSet<T>,
) -> Result<Array3<T>> {
    Ok(deblur_latent_cached(stack, i, window, mode, set)?.0)
}

fn deblur_latent_cached<T: Scalar>(
    stack: &[Array3<T>],
    i: usize,
    window: usize,
    mode: AttentionMode,
    set: &AttentionParamSet<T>,
) -> Result<(Array3<T>, ComposeCache<T>)> {
    validate_window(window)?;
    validate_stack(stack, set)?;
    if i >= stack.len() {
        return Err(Error::index(format!("frame {i} of a {}-latent stack", stack.len())));
    }
    let terms = deblur_terms(i, stack.len(), window, mode, set.normalize_deblur_sum);
    Ok(compose(stack, &terms, set))
}

fn interp_terms<T: Scalar>(mode: AttentionMode) -> Vec<(usize, usize, bool, T)> {
    // Terms grouped per operand — (self(a) + cross(a|b)) + (self(b) +
    // cross(b|a)) — so swapping the pair only commutes the outer addition
    // and the result is bit-identical.
    let mut terms = Vec::new();
    for (a, b) in [(0usize, 1usize), (1, 0)] {
        if mode != AttentionMode::CrossOnly {
            terms.push((a, a, true, T::one()));
        }
        if mode != AttentionMode::SelfOnly {
            terms.push((a, b, false, T::one()));
        }
    }
    terms
}

/// Optimized latent for the frame interpolated between `x_i` and `x_next`:
/// self-attention on each plus cross-attention of each conditioned on the
/// other. Symmetric in its arguments, bit for bit.
pub fn interp_latent<T: Scalar>(
    x_i: &Array3<T>,
    x_next: &Array3<T>,
    mode: AttentionMode,
    set: &AttentionParamSet<T>,
) -> Result<Array3<T>> {
    check_latent(x_i, &set.self_params)?;
    check_same_shape(x_i, x_next)?;
    let stack = [x_i.clone(), x_next.clone()];
    let (halves, _) = interp_halves(&stack, mode, set);
    Ok(halves)
}

/// Forward of the interpolation composition with the per-operand grouping
/// that makes the symmetry exact.
fn interp_halves<T: Scalar>(
    stack: &[Array3<T>],
    mode: AttentionMode,
    set: &AttentionParamSet<T>,
) -> (Array3<T>, ComposeCache<T>) {
    let terms = interp_terms::<T>(mode);
    let per_operand = terms.len() / 2;
    let (first, cache_a) = compose(stack, &terms[..per_operand], set);
    let (second, cache_b) = compose(stack, &terms[per_operand..], set);
    let mut out = first;
    out += &second;
    let mut terms = cache_a.terms;
    terms.extend(cache_b.terms);
    (out, ComposeCache { terms })
}

/// Deblur latent per input frame, interp latent per adjacent pair.
#[derive(Debug, Clone)]
pub struct OptimizedLatents<T> {
    pub deblur: Vec<Array3<T>>,
    pub interp: Vec<Array3<T>>,
}

impl<T: Scalar> OptimizedLatents<T> {
    /// Interleaved view `[z_0, ẑ_0, z_1, ẑ_1, …, z_{L-1}]` of length
    /// `2L - 1`: even positions deblur, odd positions interpolate.
    pub fn interleaved(&self) -> Vec<&Array3<T>> {
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.deblur.len() {
            out.push(&self.deblur[i]);
            if i < self.interp.len() {
                out.push(&self.interp[i]);
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.deblur.len() + self.interp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deblur.is_empty()
    }
}

/// Caches for a whole attended sequence, in interleaved output order.
pub struct AttendCache<T> {
    composes: Vec<ComposeCache<T>>,
}

/// Compose the optimized latent stack for a full input sequence.
pub fn attend_sequence<T: Scalar>(
    stack: &[Array3<T>],
    window: usize,
    mode: AttentionMode,
    set: &AttentionParamSet<T>,
) -> Result<OptimizedLatents<T>> {
    Ok(attend_sequence_cached(stack, window, mode, set)?.0)
}

pub fn attend_sequence_cached<T: Scalar>(
    stack: &[Array3<T>],
    window: usize,
    mode: AttentionMode,
    set: &AttentionParamSet<T>,
) -> Result<(OptimizedLatents<T>, AttendCache<T>)> {
    if stack.len() < 2 {
        return Err(Error::SequenceTooShort(format!(
            "attention needs at least 2 frames, got {}",
            stack.len()
        )));
    }
    validate_window(window)?;
    validate_stack(stack, set)?;
    let len = stack.len();
    let mut latents = OptimizedLatents { deblur: Vec::with_capacity(len), interp: Vec::with_capacity(len - 1) };
    let mut cache = AttendCache { composes: Vec::with_capacity(2 * len - 1) };
    for i in 0..len {
        let (z, c) = deblur_latent_cached(stack, i, window, mode, set)?;
        latents.deblur.push(z);
        cache.composes.push(c);
        if i + 1 < len {
            let (zh, ch) = interp_halves(&stack[i..=i + 1], mode, set);
            // caches index into the local pair; rebase onto the stack
            let mut ch = ch;
            for t in &mut ch.terms {
                t.content += i;
                t.cond += i;
            }
            latents.interp.push(zh);
            cache.composes.push(ch);
        }
    }
    Ok((latents, cache))
}

/// Backward through [`attend_sequence_cached`]: takes one gradient per
/// interleaved output latent, returns gradients per input latent and
/// accumulates parameter gradients.
pub fn attend_sequence_backward<T: Scalar>(
    stack: &[Array3<T>],
    cache: &AttendCache<T>,
    g_outputs: &[Array3<T>],
    set: &AttentionParamSet<T>,
    grads: &mut AttentionParamSet<T>,
) -> Result<Vec<Array3<T>>> {
    if g_outputs.len() != cache.composes.len() {
        return Err(Error::shape(format!(
            "{} output gradients for {} composed latents",
            g_outputs.len(),
            cache.composes.len()
        )));
    }
    let mut g_stack: Vec<Array3<T>> =
        stack.iter().map(|x| Array3::zeros(x.raw_dim())).collect();
    for (compose, g) in cache.composes.iter().zip(g_outputs) {
        compose_backward(stack, compose, g, set, &mut g_stack, grads);
    }
    Ok(g_stack)
}
