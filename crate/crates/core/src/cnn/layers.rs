//! Forward and backward passes over a batch of palette-indexed patches.

use std::borrow::Cow;

use super::{Adam, CnnError, CnnModel, Tensor4, HIDDEN1, HIDDEN2, TAPS};

/// `C = op(A)·op(B) + beta·C` with `op(A)` of shape m×k and `op(B)` k×n,
/// all row-major; `at`/`bt` select the transposed storage.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], at: bool, b: &[f64], bt: bool, c: &mut [f64], beta: f64) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if at { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if bt { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover the strided extents checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Patches addressed through a palette of `channels`-long feature vectors.
#[derive(Clone, Debug)]
pub struct PatchBatch<'a> {
    palette: Cow<'a, [f64]>,
    channels: usize,
    patch: usize,
    indices: Vec<u32>,
}

impl<'a> PatchBatch<'a> {
    /// `indices` holds `patch²` palette indices per sample, row-major.
    pub fn from_palette(
        palette: &'a [f64],
        channels: usize,
        patch: usize,
        indices: Vec<u32>,
    ) -> Result<Self, CnnError> {
        Self::build(Cow::Borrowed(palette), channels, patch, indices)
    }

    fn build(palette: Cow<'a, [f64]>, channels: usize, patch: usize, indices: Vec<u32>) -> Result<Self, CnnError> {
        if patch < 7 {
            return Err(CnnError::ShapeMismatch(format!("patch size {patch} < 7")));
        }
        if channels == 0 || palette.len() % channels != 0 || indices.len() % (patch * patch) != 0 {
            return Err(CnnError::ShapeMismatch("inconsistent palette or index length".into()));
        }
        let entries = palette.len() / channels;
        if indices.iter().any(|&i| i as usize >= entries) {
            return Err(CnnError::ShapeMismatch("palette index out of range".into()));
        }
        Ok(Self {
            palette,
            channels,
            patch,
            indices,
        })
    }

    /// Dense (B, N, p, p) input; every pixel becomes its own palette entry.
    pub fn from_tensor(t: &Tensor4) -> Result<PatchBatch<'static>, CnnError> {
        let [b, n, h, w] = t.shape();
        if h != w {
            return Err(CnnError::ShapeMismatch(format!("non-square patch {h}x{w}")));
        }
        let mut palette = Vec::with_capacity(b * h * w * n);
        for s in 0..b {
            for y in 0..h {
                for x in 0..w {
                    for c in 0..n {
                        palette.push(t.get(s, c, y, x));
                    }
                }
            }
        }
        PatchBatch::build(Cow::Owned(palette), n, h, (0..(b * h * w) as u32).collect())
    }

    pub fn len(&self) -> usize {
        self.indices.len() / (self.patch * self.patch)
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
}

struct Cache {
    batch: usize,
    o1: usize,
    o2: usize,
    o3: usize,
    /// Distinct feature vectors used by the batch, U×N.
    local: Vec<f64>,
    /// Per-sample patch indices into `local`.
    local_idx: Vec<u32>,
    a1: Vec<f64>,
    x2: Vec<f64>,
    a2: Vec<f64>,
    x3: Vec<f64>,
    probs: Vec<f64>,
    logits: Vec<f64>,
}

fn check(model: &CnnModel, batch: &PatchBatch) -> Result<(), CnnError> {
    if batch.channels != model.inputs {
        return Err(CnnError::ShapeMismatch(format!(
            "input has {} channels, model expects {}",
            batch.channels, model.inputs
        )));
    }
    Ok(())
}

fn run_forward(model: &CnnModel, batch: &PatchBatch) -> Cache {
    let n = model.inputs;
    let c = model.classes;
    let p = batch.patch;
    let bsz = batch.len();
    let (o1, o2, o3) = (p - 2, p - 4, p - 6);

    let entries = batch.palette.len() / n;
    let mut remap = vec![u32::MAX; entries];
    let mut local = Vec::new();
    let mut local_idx = Vec::with_capacity(batch.indices.len());
    let mut used = 0u32;
    for &i in &batch.indices {
        let slot = &mut remap[i as usize];
        if *slot == u32::MAX {
            *slot = used;
            used += 1;
            local.extend_from_slice(&batch.palette[i as usize * n..(i as usize + 1) * n]);
        }
        local_idx.push(*slot);
    }
    let u = used as usize;

    // first convolution: per distinct vector and tap, then gathered
    let mut t = vec![0.0; u * TAPS * HIDDEN1];
    gemm(u, n, TAPS * HIDDEN1, &local, false, &model.w1, false, &mut t, 0.0);
    let mut a1 = vec![0.0; bsz * o1 * o1 * HIDDEN1];
    for s in 0..bsz {
        let idx = &local_idx[s * p * p..(s + 1) * p * p];
        for oy in 0..o1 {
            for ox in 0..o1 {
                let out = &mut a1[((s * o1 + oy) * o1 + ox) * HIDDEN1..][..HIDDEN1];
                out.copy_from_slice(&model.b1);
                for ky in 0..3 {
                    for kx in 0..3 {
                        let e = idx[(oy + ky) * p + ox + kx] as usize;
                        let tap = ky * 3 + kx;
                        let src = &t[(e * TAPS + tap) * HIDDEN1..][..HIDDEN1];
                        for (o, v) in out.iter_mut().zip(src) {
                            *o += v;
                        }
                    }
                }
                for o in out.iter_mut() {
                    *o = o.max(0.0);
                }
            }
        }
    }

    let x2 = im2col(&a1, bsz, o1, o2, HIDDEN1);
    let rows2 = bsz * o2 * o2;
    let mut a2 = bias_rows(&model.b2, rows2);
    gemm(rows2, TAPS * HIDDEN1, HIDDEN2, &x2, false, &model.w2, false, &mut a2, 1.0);
    for v in a2.iter_mut() {
        *v = v.max(0.0);
    }

    let x3 = im2col(&a2, bsz, o2, o3, HIDDEN2);
    let rows3 = bsz * o3 * o3;
    let mut z3 = bias_rows(&model.b3, rows3);
    gemm(rows3, TAPS * HIDDEN2, c, &x3, false, &model.w3, false, &mut z3, 1.0);

    let pool = (o3 * o3) as f64;
    let mut logits = vec![0.0; bsz * c];
    for s in 0..bsz {
        for pos in 0..o3 * o3 {
            for k in 0..c {
                logits[s * c + k] += z3[(s * o3 * o3 + pos) * c + k] / pool;
            }
        }
    }
    let mut probs = logits.clone();
    for row in probs.chunks_mut(c) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }

    Cache {
        batch: bsz,
        o1,
        o2,
        o3,
        local,
        local_idx,
        a1,
        x2,
        a2,
        x3,
        probs,
        logits,
    }
}

fn bias_rows(bias: &[f64], rows: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * bias.len());
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    out
}

/// Unfolds `(B, size_in, size_in, ch)` activations into rows of 3×3
/// neighbourhoods, one row per output position, columns `tap·ch + ci`.
fn im2col(act: &[f64], bsz: usize, size_in: usize, size_out: usize, ch: usize) -> Vec<f64> {
    let mut out = vec![0.0; bsz * size_out * size_out * TAPS * ch];
    let mut row = 0;
    for s in 0..bsz {
        for oy in 0..size_out {
            for ox in 0..size_out {
                let dst = &mut out[row * TAPS * ch..(row + 1) * TAPS * ch];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let src = ((s * size_in + oy + ky) * size_in + ox + kx) * ch;
                        let tap = ky * 3 + kx;
                        dst[tap * ch..(tap + 1) * ch].copy_from_slice(&act[src..src + ch]);
                    }
                }
                row += 1;
            }
        }
    }
    out
}

/// Adjoint of [`im2col`].
fn col2im(cols: &[f64], bsz: usize, size_in: usize, size_out: usize, ch: usize) -> Vec<f64> {
    let mut out = vec![0.0; bsz * size_in * size_in * ch];
    let mut row = 0;
    for s in 0..bsz {
        for oy in 0..size_out {
            for ox in 0..size_out {
                let src = &cols[row * TAPS * ch..(row + 1) * TAPS * ch];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let dst = ((s * size_in + oy + ky) * size_in + ox + kx) * ch;
                        let tap = ky * 3 + kx;
                        for (o, v) in out[dst..dst + ch].iter_mut().zip(&src[tap * ch..(tap + 1) * ch]) {
                            *o += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    out
}

/// Class probabilities, `B × C` row-major.
pub fn forward(model: &CnnModel, batch: &PatchBatch) -> Result<Vec<f64>, CnnError> {
    check(model, batch)?;
    Ok(run_forward(model, batch).probs)
}

/// Parameter gradients in the layout of [`CnnModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

impl Gradients {
    pub fn tensors(&self) -> [&Vec<f64>; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }
}

fn cross_entropy(cache: &Cache, targets: &[usize], c: usize) -> f64 {
    let mut loss = 0.0;
    for (s, &t) in targets.iter().enumerate() {
        let row = &cache.logits[s * c..(s + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[t];
    }
    loss / targets.len() as f64
}

/// Mean cross-entropy of `targets` (class indices `0..C`) and its
/// gradient with respect to every parameter.
pub fn gradients(model: &CnnModel, batch: &PatchBatch, targets: &[usize]) -> Result<(f64, Gradients), CnnError> {
    check(model, batch)?;
    if targets.len() != batch.len() || batch.is_empty() {
        return Err(CnnError::ShapeMismatch(format!(
            "{} targets for {} samples",
            targets.len(),
            batch.len()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= model.classes) {
        return Err(CnnError::ShapeMismatch(format!("target {t} outside {} classes", model.classes)));
    }
    let c = model.classes;
    let n = model.inputs;
    let p = batch.patch;
    let cache = run_forward(model, batch);
    let loss = cross_entropy(&cache, targets, c);
    let Cache {
        batch: bsz,
        o1,
        o2,
        o3,
        ..
    } = cache;

    let pool = (o3 * o3) as f64;
    let rows3 = bsz * o3 * o3;
    let mut dz3 = vec![0.0; rows3 * c];
    let mut b3 = vec![0.0; c];
    for s in 0..bsz {
        for k in 0..c {
            let mut g = cache.probs[s * c + k];
            if k == targets[s] {
                g -= 1.0;
            }
            g /= bsz as f64;
            b3[k] += g;
            for pos in 0..o3 * o3 {
                dz3[(s * o3 * o3 + pos) * c + k] = g / pool;
            }
        }
    }
    let mut w3 = vec![0.0; TAPS * HIDDEN2 * c];
    gemm(TAPS * HIDDEN2, rows3, c, &cache.x3, true, &dz3, false, &mut w3, 0.0);
    let mut dx3 = vec![0.0; rows3 * TAPS * HIDDEN2];
    gemm(rows3, c, TAPS * HIDDEN2, &dz3, false, &model.w3, true, &mut dx3, 0.0);
    let mut dz2 = col2im(&dx3, bsz, o2, o3, HIDDEN2);
    for (g, a) in dz2.iter_mut().zip(&cache.a2) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }

    let rows2 = bsz * o2 * o2;
    let mut w2 = vec![0.0; TAPS * HIDDEN1 * HIDDEN2];
    gemm(TAPS * HIDDEN1, rows2, HIDDEN2, &cache.x2, true, &dz2, false, &mut w2, 0.0);
    let mut b2 = vec![0.0; HIDDEN2];
    for row in dz2.chunks(HIDDEN2) {
        for (b, g) in b2.iter_mut().zip(row) {
            *b += g;
        }
    }
    let mut dx2 = vec![0.0; rows2 * TAPS * HIDDEN1];
    gemm(rows2, HIDDEN2, TAPS * HIDDEN1, &dz2, false, &model.w2, true, &mut dx2, 0.0);
    let mut dz1 = col2im(&dx2, bsz, o1, o2, HIDDEN1);
    for (g, a) in dz1.iter_mut().zip(&cache.a1) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }

    // scatter first-layer deltas back onto the distinct input vectors
    let u = cache.local.len() / n;
    let mut acc = vec![0.0; u * TAPS * HIDDEN1];
    let mut b1 = vec![0.0; HIDDEN1];
    for s in 0..bsz {
        let idx = &cache.local_idx[s * p * p..(s + 1) * p * p];
        for oy in 0..o1 {
            for ox in 0..o1 {
                let g = &dz1[((s * o1 + oy) * o1 + ox) * HIDDEN1..][..HIDDEN1];
                for (b, v) in b1.iter_mut().zip(g) {
                    *b += v;
                }
                for ky in 0..3 {
                    for kx in 0..3 {
                        let e = idx[(oy + ky) * p + ox + kx] as usize;
                        let tap = ky * 3 + kx;
                        let dst = &mut acc[(e * TAPS + tap) * HIDDEN1..][..HIDDEN1];
                        for (d, v) in dst.iter_mut().zip(g) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
    let mut w1 = vec![0.0; n * TAPS * HIDDEN1];
    gemm(n, u, TAPS * HIDDEN1, &cache.local, true, &acc, false, &mut w1, 0.0);

    Ok((
        loss,
        Gradients {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
        },
    ))
}

/// One Adam step on the batch; returns the loss before the step.
pub fn backward_and_step(
    model: &mut CnnModel,
    adam: &mut Adam,
    batch: &PatchBatch,
    targets: &[usize],
) -> Result<f64, CnnError> {
    let (loss, grads) = gradients(model, batch, targets)?;
    adam.apply(model, &grads);
    Ok(loss)
}
