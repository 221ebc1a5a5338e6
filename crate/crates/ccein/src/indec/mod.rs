//! InDec: a tiny convolutional patch classifier and gradient-based
//! explanation heatmaps.
//!
//! The perception model is deliberately minimal — two 3x3 same-padded ReLU
//! convolutions (8 then 16 channels), global average pooling and a linear
//! head over four classes (`Victim`, `Obstacle`, `Supply`, `Clear`) — all in
//! one flat `f64` parameter vector with hand-written backprop.
//!
//! Explanations follow the classic gradient-weighted activation mapping
//! recipe against the second (last) convolution layer:
//!
//! ```text
//! alpha_k = spatial_mean( d logit_c / d A^k )        (A^k: conv2 activations)
//! raw     = ReLU( sum_k alpha_k * A^k )
//! heatmap = max_normalize( bilinear_resize(raw, patch_side) )
//! ```
//!
//! All-zero maps stay all-zero, so heatmap values always lie in [0, 1].
//! Bilinear resizing aligns the *corners* of source and destination grids
//! (a destination pixel `i` samples source coordinate
//! `i * (src-1) / (dst-1)`), which makes equal-size resizing exact — with
//! same-padded convolutions the activation grid already matches the patch,
//! so in practice the resize is the identity and exists for generality.

use rand_chacha::ChaCha12Rng;

use crate::nn::{self, Adam};
use crate::rng::{child_seed, stream};
use crate::scenario::{
    generate, render_patch, CellKind, Coord, ScenarioConfig, ScenePatch, DEFAULT_PATCH_RADIUS,
};

/// Number of output classes.
pub const CLASS_COUNT: usize = 4;

/// What the classifier believes sits at the center of a patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClassLabel {
    Victim,
    Obstacle,
    Supply,
    Clear,
}

pub const CLASS_LABELS: [ClassLabel; CLASS_COUNT] =
    [ClassLabel::Victim, ClassLabel::Obstacle, ClassLabel::Supply, ClassLabel::Clear];

impl ClassLabel {
    pub fn index(self) -> usize {
        match self {
            ClassLabel::Victim => 0,
            ClassLabel::Obstacle => 1,
            ClassLabel::Supply => 2,
            ClassLabel::Clear => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        CLASS_LABELS.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Victim => "Victim",
            ClassLabel::Obstacle => "Obstacle",
            ClassLabel::Supply => "Supply",
            ClassLabel::Clear => "Clear",
        }
    }

    pub fn from_str(s: &str) -> Option<Self> {
        CLASS_LABELS.iter().copied().find(|c| c.as_str() == s)
    }
}

/// Ground-truth label for a patch centered on this cell kind. Rubble counts
/// as obstacle; drop zones render like open ground and label as clear.
pub fn class_of_cell(kind: CellKind) -> ClassLabel {
    match kind {
        CellKind::Victim => ClassLabel::Victim,
        CellKind::Obstacle | CellKind::CollapsedBuilding => ClassLabel::Obstacle,
        CellKind::SupplyDepot => ClassLabel::Supply,
        CellKind::Free | CellKind::DropZone => ClassLabel::Clear,
    }
}

// -------------------------------------------------------------------- arch

const KERNEL: usize = 3;
const KERNEL_AREA: usize = KERNEL * KERNEL;

/// Channel widths of the network. The deployed shape is
/// [`CnnArch::standard`]; tests shrink it for finite-difference sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CnnArch {
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub classes: usize,
}

impl CnnArch {
    pub fn standard() -> Self {
        CnnArch { conv1_channels: 8, conv2_channels: 16, classes: CLASS_COUNT }
    }

    fn conv1_w(&self) -> std::ops::Range<usize> {
        0..self.conv1_channels * KERNEL_AREA
    }
    fn conv1_b(&self) -> std::ops::Range<usize> {
        let s = self.conv1_w().end;
        s..s + self.conv1_channels
    }
    fn conv2_w(&self) -> std::ops::Range<usize> {
        let s = self.conv1_b().end;
        s..s + self.conv2_channels * self.conv1_channels * KERNEL_AREA
    }
    fn conv2_b(&self) -> std::ops::Range<usize> {
        let s = self.conv2_w().end;
        s..s + self.conv2_channels
    }
    fn fc_w(&self) -> std::ops::Range<usize> {
        let s = self.conv2_b().end;
        s..s + self.classes * self.conv2_channels
    }
    fn fc_b(&self) -> std::ops::Range<usize> {
        let s = self.fc_w().end;
        s..s + self.classes
    }

    pub fn param_count(&self) -> usize {
        self.fc_b().end
    }
}

/// The classifier: patch in, four logits out.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyCnn {
    pub arch: CnnArch,
    pub params: Vec<f64>,
}

/// Forward-pass record: pre-activations for backprop, activations for
/// explanation.
#[derive(Debug, Clone)]
pub struct CnnCache {
    pub side: usize,
    input: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    /// conv2 activations `A^k` — the Grad-CAM target.
    pub a2: Vec<f64>,
    pub gap: Vec<f64>,
    pub logits: Vec<f64>,
}

/// 3x3 same-padded convolution; returns pre-activations.
fn conv_same(
    input: &[f64],
    in_channels: usize,
    side: usize,
    weights: &[f64],
    biases: &[f64],
    out_channels: usize,
) -> Vec<f64> {
    let s2 = side * side;
    let mut out = vec![0.0; out_channels * s2];
    for o in 0..out_channels {
        for i in 0..side {
            for j in 0..side {
                let mut acc = biases[o];
                for c in 0..in_channels {
                    let w_base = (o * in_channels + c) * KERNEL_AREA;
                    for u in 0..KERNEL {
                        let ii = i as i64 + u as i64 - 1;
                        if ii < 0 || ii >= side as i64 {
                            continue;
                        }
                        for v in 0..KERNEL {
                            let jj = j as i64 + v as i64 - 1;
                            if jj < 0 || jj >= side as i64 {
                                continue;
                            }
                            acc += weights[w_base + u * KERNEL + v]
                                * input[c * s2 + ii as usize * side + jj as usize];
                        }
                    }
                }
                out[o * s2 + i * side + j] = acc;
            }
        }
    }
    out
}

impl TinyCnn {
    pub fn new_zeros(arch: CnnArch) -> Self {
        TinyCnn { params: vec![0.0; arch.param_count()], arch }
    }

    /// Orthogonal init (gain sqrt(2) on the ReLU conv layers, 1 on the
    /// head), zero biases.
    pub fn new_seeded(arch: CnnArch, seed: u64) -> Self {
        let mut rng = stream(seed, "indec-init");
        let mut params = vec![0.0; arch.param_count()];
        let g = 2.0f64.sqrt();
        let w1 = nn::orthogonal_init(arch.conv1_channels, KERNEL_AREA, g, &mut rng);
        params[arch.conv1_w()].copy_from_slice(&w1);
        let w2 = nn::orthogonal_init(
            arch.conv2_channels,
            arch.conv1_channels * KERNEL_AREA,
            g,
            &mut rng,
        );
        params[arch.conv2_w()].copy_from_slice(&w2);
        let wf = nn::orthogonal_init(arch.classes, arch.conv2_channels, 1.0, &mut rng);
        params[arch.fc_w()].copy_from_slice(&wf);
        TinyCnn { arch, params }
    }

    /// Deterministic forward pass. Patches must be at least 8x8.
    pub fn forward(&self, patch: &ScenePatch) -> CnnCache {
        let side = patch.side();
        assert!(side >= 8, "patch side must be at least 8, got {side}");
        let s2 = side * side;
        let a = &self.arch;
        let p = &self.params;

        let input = patch.values().to_vec();
        let z1 = conv_same(&input, 1, side, &p[a.conv1_w()], &p[a.conv1_b()], a.conv1_channels);
        let a1: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
        let z2 =
            conv_same(&a1, a.conv1_channels, side, &p[a.conv2_w()], &p[a.conv2_b()], a.conv2_channels);
        let a2: Vec<f64> = z2.iter().map(|&z| z.max(0.0)).collect();

        let gap: Vec<f64> =
            (0..a.conv2_channels).map(|k| a2[k * s2..(k + 1) * s2].iter().sum::<f64>() / s2 as f64).collect();

        let fc_w = &p[a.fc_w()];
        let fc_b = &p[a.fc_b()];
        let logits: Vec<f64> = (0..a.classes)
            .map(|m| {
                fc_b[m]
                    + gap
                        .iter()
                        .enumerate()
                        .map(|(k, g)| fc_w[m * a.conv2_channels + k] * g)
                        .sum::<f64>()
            })
            .collect();

        CnnCache { side, input, z1, a1, z2, a2, gap, logits }
    }

    /// Accumulates `d loss / d params` into `grad`, given `d loss / d
    /// logits`. The transposed-convolution passes mirror [`conv_same`].
    pub fn backward(&self, cache: &CnnCache, dlogits: &[f64], grad: &mut [f64]) {
        let a = &self.arch;
        assert_eq!(dlogits.len(), a.classes);
        assert_eq!(grad.len(), self.params.len());
        let side = cache.side;
        let s2 = side * side;
        let p = &self.params;

        // Head.
        let fc_w = &p[a.fc_w()];
        let mut dgap = vec![0.0; a.conv2_channels];
        for m in 0..a.classes {
            let dl = dlogits[m];
            grad[a.fc_b().start + m] += dl;
            for k in 0..a.conv2_channels {
                grad[a.fc_w().start + m * a.conv2_channels + k] += dl * cache.gap[k];
                dgap[k] += dl * fc_w[m * a.conv2_channels + k];
            }
        }

        // Pool + conv2 ReLU.
        let mut dz2 = vec![0.0; a.conv2_channels * s2];
        for k in 0..a.conv2_channels {
            let d = dgap[k] / s2 as f64;
            for ij in 0..s2 {
                if cache.z2[k * s2 + ij] > 0.0 {
                    dz2[k * s2 + ij] = d;
                }
            }
        }

        let mut da1 = vec![0.0; a.conv1_channels * s2];
        self.conv_backward(
            &cache.a1,
            a.conv1_channels,
            side,
            a.conv2_w(),
            a.conv2_b(),
            a.conv2_channels,
            &dz2,
            grad,
            Some(&mut da1),
        );

        // conv1 ReLU.
        let mut dz1 = vec![0.0; a.conv1_channels * s2];
        for idx in 0..dz1.len() {
            if cache.z1[idx] > 0.0 {
                dz1[idx] = da1[idx];
            }
        }
        self.conv_backward(&cache.input, 1, side, a.conv1_w(), a.conv1_b(), a.conv1_channels, &dz1, grad, None);
    }

    /// Shared transposed pass: weight/bias grads plus (optionally) the
    /// gradient flowing to the layer input.
    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        input: &[f64],
        in_channels: usize,
        side: usize,
        w_range: std::ops::Range<usize>,
        b_range: std::ops::Range<usize>,
        out_channels: usize,
        dout: &[f64],
        grad: &mut [f64],
        mut dinput: Option<&mut Vec<f64>>,
    ) {
        let s2 = side * side;
        let weights = self.params[w_range.clone()].to_vec();
        for o in 0..out_channels {
            let mut db = 0.0;
            for i in 0..side {
                for j in 0..side {
                    let d = dout[o * s2 + i * side + j];
                    if d == 0.0 {
                        continue;
                    }
                    db += d;
                    for c in 0..in_channels {
                        let w_base = (o * in_channels + c) * KERNEL_AREA;
                        for u in 0..KERNEL {
                            let ii = i as i64 + u as i64 - 1;
                            if ii < 0 || ii >= side as i64 {
                                continue;
                            }
                            for v in 0..KERNEL {
                                let jj = j as i64 + v as i64 - 1;
                                if jj < 0 || jj >= side as i64 {
                                    continue;
                                }
                                let in_idx = c * s2 + ii as usize * side + jj as usize;
                                grad[w_range.start + w_base + u * KERNEL + v] += d * input[in_idx];
                                if let Some(di) = dinput.as_deref_mut() {
                                    di[in_idx] += d * weights[w_base + u * KERNEL + v];
                                }
                            }
                        }
                    }
                }
            }
            grad[b_range.start + o] += db;
        }
    }

    /// `d logit_class / d A^k` for every conv2 activation. With global
    /// average pooling this is spatially constant per channel, but it is
    /// computed as a real backward step (and finite-difference checked) so
    /// the explanation does not silently depend on the pooling choice.
    pub fn activation_gradient(&self, cache: &CnnCache, class: usize) -> Vec<f64> {
        let a = &self.arch;
        assert!(class < a.classes, "class {class} out of range");
        let s2 = cache.side * cache.side;
        let fc_w = &self.params[a.fc_w()];
        let mut dact = vec![0.0; a.conv2_channels * s2];
        for k in 0..a.conv2_channels {
            let d = fc_w[class * a.conv2_channels + k] / s2 as f64;
            for ij in 0..s2 {
                dact[k * s2 + ij] = d;
            }
        }
        dact
    }
}

// ----------------------------------------------------------------- heatmap

/// Normalized explanation map, same spatial size as the input patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    side: usize,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.side + c]
    }

    /// Sum of values inside the square window anchored at `(r0, c0)`.
    pub fn window_mass(&self, r0: usize, c0: usize, win: usize) -> f64 {
        let mut sum = 0.0;
        for r in r0..r0 + win {
            for c in c0..c0 + win {
                sum += self.get(r, c);
            }
        }
        sum
    }
}

/// Corner-aligned bilinear resize of a square grid. Equal sizes copy
/// exactly; a 1-pixel destination samples the source origin.
pub fn bilinear_resize(src: &[f64], src_side: usize, dst_side: usize) -> Vec<f64> {
    assert_eq!(src.len(), src_side * src_side);
    if src_side == dst_side {
        return src.to_vec();
    }
    let scale = if dst_side > 1 {
        (src_side - 1) as f64 / (dst_side - 1) as f64
    } else {
        0.0
    };
    let mut out = vec![0.0; dst_side * dst_side];
    for i in 0..dst_side {
        let y = i as f64 * scale;
        let y0 = (y.floor() as usize).min(src_side - 1);
        let y1 = (y0 + 1).min(src_side - 1);
        let fy = y - y0 as f64;
        for j in 0..dst_side {
            let x = j as f64 * scale;
            let x0 = (x.floor() as usize).min(src_side - 1);
            let x1 = (x0 + 1).min(src_side - 1);
            let fx = x - x0 as f64;
            let top = src[y0 * src_side + x0] * (1.0 - fx) + src[y0 * src_side + x1] * fx;
            let bot = src[y1 * src_side + x0] * (1.0 - fx) + src[y1 * src_side + x1] * fx;
            out[i * dst_side + j] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

/// The combined channel map *before* the ReLU/normalize steps, exposed so
/// tests can pin the filtering invariant.
pub fn grad_cam_raw(net: &TinyCnn, cache: &CnnCache, class: usize) -> Vec<f64> {
    let s2 = cache.side * cache.side;
    let k_ch = net.arch.conv2_channels;
    let dact = net.activation_gradient(cache, class);
    // alpha_k: spatial mean of the activation gradient.
    let alphas: Vec<f64> =
        (0..k_ch).map(|k| dact[k * s2..(k + 1) * s2].iter().sum::<f64>() / s2 as f64).collect();
    let mut raw = vec![0.0; s2];
    for k in 0..k_ch {
        let alpha = alphas[k];
        for ij in 0..s2 {
            raw[ij] += alpha * cache.a2[k * s2 + ij];
        }
    }
    raw
}

/// Gradient-weighted class activation map for `class`, upsampled to the
/// patch size and max-normalized into [0, 1] (all-zero maps stay zero).
pub fn grad_cam(net: &TinyCnn, patch: &ScenePatch, class: usize) -> Heatmap {
    let cache = net.forward(patch);
    let mut raw = grad_cam_raw(net, &cache, class);
    for v in &mut raw {
        *v = v.max(0.0);
    }
    let mut values = bilinear_resize(&raw, cache.side, patch.side());
    let max = values.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        for v in &mut values {
            *v /= max;
        }
    }
    Heatmap { side: patch.side(), values }
}

// ----------------------------------------------------------------- overlay

fn to_u8(x: f64) -> u32 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u32
}

fn pgm(side: usize, pixel: impl Fn(usize, usize) -> u32) -> String {
    let mut out = format!("P2\n{side} {side}\n255\n");
    for r in 0..side {
        let row: Vec<String> = (0..side).map(|c| pixel(r, c).to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Renders the explanation as two plain-text graymaps (PGM "P2"): the bare
/// patch, and the patch brightened toward white where the heatmap is hot
/// (`blend = base + round(h * (255 - base))`). Byte-deterministic.
pub fn overlay(heatmap: &Heatmap, patch: &ScenePatch) -> (String, String) {
    assert_eq!(heatmap.side(), patch.side(), "heatmap/patch size mismatch");
    let base = pgm(patch.side(), |r, c| to_u8(patch.get(r, c)));
    let blend = pgm(patch.side(), |r, c| {
        let b = to_u8(patch.get(r, c));
        let h = heatmap.get(r, c).clamp(0.0, 1.0);
        b + (h * (255 - b) as f64).round() as u32
    });
    (base, blend)
}

/// Per-cell heatmap values as CSV (`row,col,value`).
pub fn heatmap_csv(heatmap: &Heatmap) -> String {
    let mut out = String::from("row,col,value\n");
    for r in 0..heatmap.side() {
        for c in 0..heatmap.side() {
            out.push_str(&format!("{r},{c},{}\n", heatmap.get(r, c)));
        }
    }
    out
}

// ------------------------------------------------------------- persistence

pub const CHECKPOINT_FORMAT_VERSION: &str = "ccein-indec v1";

/// A classifier checkpoint failed to load.
#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("unsupported classifier checkpoint version: '{0}'")]
    Version(String),
    #[error("malformed classifier checkpoint: {0}")]
    Format(String),
}

/// Everything needed to reload a trained classifier: shape, provenance and
/// the flat parameter vector. Plain text, one value per line; floats use
/// Rust's shortest-round-trip formatting, so save/load is bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnCheckpoint {
    pub arch: CnnArch,
    /// Seed the training corpus and init were derived from.
    pub seed: u64,
    /// Full-dataset accuracy at save time, recorded for provenance.
    pub accuracy: f64,
    pub params: Vec<f64>,
}

impl CnnCheckpoint {
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(out, "{CHECKPOINT_FORMAT_VERSION}").unwrap();
        writeln!(
            out,
            "arch {} {} {}",
            self.arch.conv1_channels, self.arch.conv2_channels, self.arch.classes
        )
        .unwrap();
        writeln!(out, "seed {}", self.seed).unwrap();
        writeln!(out, "accuracy {}", self.accuracy).unwrap();
        writeln!(out, "params {}", self.params.len()).unwrap();
        for p in &self.params {
            writeln!(out, "{p}").unwrap();
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self, CheckpointError> {
        let mut lines = text.lines();
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| CheckpointError::Format(format!("missing {what} line")))
        };

        let version = next("version")?;
        if version != CHECKPOINT_FORMAT_VERSION {
            return Err(CheckpointError::Version(version.to_string()));
        }

        fn field<'a>(line: &'a str, key: &str) -> Result<&'a str, CheckpointError> {
            line.strip_prefix(key).and_then(|rest| rest.strip_prefix(' ')).ok_or_else(|| {
                CheckpointError::Format(format!("expected '{key} ...', got '{line}'"))
            })
        }
        fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, CheckpointError> {
            s.parse().map_err(|_| CheckpointError::Format(format!("bad {what}: '{s}'")))
        }

        let arch_line = next("arch")?;
        let dims: Vec<usize> = field(arch_line, "arch")?
            .split_whitespace()
            .map(|s| num(s, "arch dimension"))
            .collect::<Result<_, _>>()?;
        let [conv1, conv2, classes] = dims[..] else {
            return Err(CheckpointError::Format(format!(
                "arch wants 3 dimensions, got {}",
                dims.len()
            )));
        };
        if conv1 == 0 || conv2 == 0 || classes == 0 {
            return Err(CheckpointError::Format("arch dimensions must be positive".into()));
        }
        let arch = CnnArch { conv1_channels: conv1, conv2_channels: conv2, classes };

        let seed = num(field(next("seed")?, "seed")?, "seed")?;
        let accuracy: f64 = num(field(next("accuracy")?, "accuracy")?, "accuracy")?;
        let count: usize = num(field(next("params")?, "params")?, "parameter count")?;
        if count != arch.param_count() {
            return Err(CheckpointError::Format(format!(
                "arch wants {} parameters, header says {count}",
                arch.param_count()
            )));
        }

        let mut params = Vec::with_capacity(count);
        for i in 0..count {
            let line = next("parameter")?;
            let p: f64 = num(line, &format!("parameter {i}"))?;
            if !p.is_finite() {
                return Err(CheckpointError::Format(format!("parameter {i} is not finite: '{line}'")));
            }
            params.push(p);
        }
        if next("end")? != "end" {
            return Err(CheckpointError::Format("missing end marker".into()));
        }

        Ok(CnnCheckpoint { arch, seed, accuracy, params })
    }

    pub fn network(&self) -> TinyCnn {
        TinyCnn { arch: self.arch, params: self.params.clone() }
    }
}

impl TinyCnn {
    pub fn checkpoint(&self, seed: u64, accuracy: f64) -> CnnCheckpoint {
        CnnCheckpoint { arch: self.arch, seed, accuracy, params: self.params.clone() }
    }
}

// ---------------------------------------------------------------- training

/// Knobs of [`train_tiny`].
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Stop early once full-dataset accuracy reaches this (checked every
    /// `eval_interval` steps); set above 1.0 to disable.
    pub target_accuracy: f64,
    pub eval_interval: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-3,
            batch_size: 32,
            max_steps: 2000,
            target_accuracy: 0.98,
            eval_interval: 50,
            seed: 0,
        }
    }
}

/// What a training run did.
#[derive(Debug, Clone, Copy)]
pub struct TrainReport {
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_accuracy: f64,
}

/// Mean cross-entropy loss and its gradient over a batch; also counts
/// correct argmax predictions.
pub fn cross_entropy_grad(
    net: &TinyCnn,
    batch: &[&(ScenePatch, ClassLabel)],
    grad: &mut [f64],
) -> (f64, usize) {
    grad.fill(0.0);
    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut correct = 0;
    for (patch, label) in batch {
        let cache = net.forward(patch);
        let probs = nn::softmax(&cache.logits);
        let y = label.index();
        loss -= probs[y].max(f64::MIN_POSITIVE).ln() * inv;
        if nn::argmax(&cache.logits) == y {
            correct += 1;
        }
        let mut dlogits = probs;
        dlogits[y] -= 1.0;
        for d in &mut dlogits {
            *d *= inv;
        }
        net.backward(&cache, &dlogits, grad);
    }
    (loss, correct)
}

/// Fraction of the dataset the net classifies correctly.
pub fn accuracy(net: &TinyCnn, data: &[(ScenePatch, ClassLabel)]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let correct = data
        .iter()
        .filter(|(patch, label)| nn::argmax(&net.forward(patch).logits) == label.index())
        .count();
    correct as f64 / data.len() as f64
}

/// Minimizes cross-entropy with Adam over shuffled minibatches (the same
/// optimizer the transmission controller trains with). Deterministic for a
/// given `(net, data, config)`.
pub fn train_tiny(net: &mut TinyCnn, data: &[(ScenePatch, ClassLabel)], config: &TrainConfig) -> TrainReport {
    assert!(!data.is_empty(), "cannot train on an empty dataset");
    let mut opt = Adam::new(net.params.len(), config.learning_rate);
    let mut rng = stream(config.seed, "indec-train");
    let mut grad = vec![0.0; net.params.len()];

    let all: Vec<&(ScenePatch, ClassLabel)> = data.iter().collect();
    let (initial_loss, _) = cross_entropy_grad(net, &all, &mut grad);

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = data.len(); // force a shuffle on the first step
    let mut steps = 0;
    for step in 1..=config.max_steps {
        use rand::seq::SliceRandom;
        if cursor + config.batch_size > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let batch: Vec<&(ScenePatch, ClassLabel)> =
            order[cursor..cursor + config.batch_size.min(order.len())]
                .iter()
                .map(|&i| &data[i])
                .collect();
        cursor += batch.len();

        cross_entropy_grad(net, &batch, &mut grad);
        opt.step(&mut net.params, &grad);
        steps = step;

        if step % config.eval_interval == 0 && accuracy(net, data) >= config.target_accuracy {
            break;
        }
    }

    let (final_loss, _) = cross_entropy_grad(net, &all, &mut grad);
    TrainReport { steps, initial_loss, final_loss, final_accuracy: accuracy(net, data) }
}

// ----------------------------------------------------------------- dataset

/// The most salient class visible anywhere in a patch, by render value:
/// victims outshine supplies outshine rubble outshines clear ground.
fn dominant_content(patch: &ScenePatch) -> ClassLabel {
    let mut dominant = ClassLabel::Clear;
    for &v in patch.values() {
        if v >= 1.0 {
            return ClassLabel::Victim;
        } else if v >= 0.8 {
            dominant = ClassLabel::Supply;
        } else if v >= 0.5 && dominant == ClassLabel::Clear {
            dominant = ClassLabel::Obstacle;
        }
    }
    dominant
}

/// Builds a class-balanced labeled patch set by rendering generated worlds
/// around cells of each kind. Deterministic in `seed`; patches use
/// `2 * radius + 1` sides.
///
/// Global average pooling makes the classifier position-blind in the patch
/// interior, so a center label is only recoverable when the center object is
/// also the most salient thing in view. The corpus therefore consists of
/// clean exemplars: worlds are kept sparse and a candidate cell is accepted
/// only if [`dominant_content`] of its patch agrees with the center label —
/// victim patches show one victim, clear patches show empty ground, and so
/// on, mirroring curated training crops.
pub fn synthetic_dataset(
    seed: u64,
    per_class: usize,
    radius: usize,
) -> Vec<(ScenePatch, ClassLabel)> {
    let mut buckets: [Vec<(ScenePatch, ClassLabel)>; CLASS_COUNT] = Default::default();
    let per_world_cap = (per_class / 4).clamp(4, 32);

    let mut world_idx = 0u64;
    while buckets.iter().any(|b| b.len() < per_class) {
        let config = ScenarioConfig {
            seed: child_seed(seed, &format!("dataset-world-{world_idx}")),
            width: 48,
            height: 48,
            victims: 6,
            obstacles: 15,
            collapsed: 5,
            supplies: 5,
            drop_zones: 2,
            kb_obstacle_targets: 5,
            ..ScenarioConfig::default()
        };
        let world = generate(&config).expect("dataset scenario config is valid");

        let mut taken = [0usize; CLASS_COUNT];
        let mut cells: Vec<Coord> = (0..config.height)
            .flat_map(|y| (0..config.width).map(move |x| Coord::new(x, y)))
            .collect();
        // Mild shuffle so "Clear" patches aren't all from the top-left rows.
        use rand::seq::SliceRandom;
        let mut cell_rng: ChaCha12Rng = stream(config.seed, "dataset-cells");
        cells.shuffle(&mut cell_rng);

        for cell in cells {
            let label = class_of_cell(world.map.get(cell));
            let slot = label.index();
            if buckets[slot].len() >= per_class || taken[slot] >= per_world_cap {
                continue;
            }
            let patch = render_patch(&world.map, cell, radius);
            if dominant_content(&patch) != label {
                continue;
            }
            buckets[slot].push((patch, label));
            taken[slot] += 1;
        }
        world_idx += 1;
        assert!(world_idx < 1000, "dataset generation failed to fill classes");
    }

    // Interleave classes so any batch is roughly balanced.
    let mut data = Vec::with_capacity(per_class * CLASS_COUNT);
    for i in 0..per_class {
        for bucket in &buckets {
            data.push(bucket[i].clone());
        }
    }
    data
}

/// Convenience: the default 15x15 patch side used by the explanation tools.
pub fn default_patch_side() -> usize {
    2 * DEFAULT_PATCH_RADIUS + 1
}

// -------------------------------------------------------------------- tests
