use std::hash::Hasher;

use fnv::FnvHasher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::real::{gemm, gemm_strided, Real, View};
use super::NetError;
use crate::corpus::tokenize;

pub const LATENT_DIM: usize = 768;
pub const DEFAULT_BUCKETS: usize = 8192;
pub const KERNEL: usize = 4;
const TAPS: usize = KERNEL * KERNEL * KERNEL;

/// Layer geometry. Every transposed convolution uses kernel 4, stride 2 and
/// padding 1, so each one doubles the grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub latent_dim: usize,
    /// Grid the fully connected layer is reshaped onto.
    pub base_grid: [usize; 3],
    /// Channels after the fully connected layer and after each transposed
    /// convolution; a final 1x1x1 convolution maps the last entry to one.
    pub channels: Vec<usize>,
}

impl Default for Arch {
    fn default() -> Self {
        Arch {
            latent_dim: LATENT_DIM,
            base_grid: [5, 6, 5],
            channels: vec![64, 32, 16, 8],
        }
    }
}

impl Arch {
    /// A few thousand parameters on an 8x8x8 output, for gradient checks.
    pub fn tiny() -> Self {
        Arch {
            latent_dim: 8,
            base_grid: [1, 1, 1],
            channels: vec![4, 3, 2, 2],
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.latent_dim == 0
            || self.base_grid.contains(&0)
            || self.channels.is_empty()
            || self.channels.contains(&0)
        {
            return Err(NetError::InvalidArch(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn deconv_count(&self) -> usize {
        self.channels.len() - 1
    }

    /// Grid after `layer` transposed convolutions.
    pub fn grid_at(&self, layer: usize) -> [usize; 3] {
        self.base_grid.map(|n| n << layer)
    }

    pub fn output_dims(&self) -> [usize; 3] {
        self.grid_at(self.deconv_count())
    }

    pub fn output_len(&self) -> usize {
        self.output_dims().iter().product()
    }

    pub fn fc_out(&self) -> usize {
        self.base_grid.iter().product::<usize>() * self.channels[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    /// Token hashing into a learnable embedding table, averaged.
    BaselineHashing,
    /// Latents supplied from outside, keyed by study id.
    ExternalVectors,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub buckets: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::BaselineHashing,
            buckets: DEFAULT_BUCKETS,
        }
    }
}

/// FNV-1a (64-bit) of the token's UTF-8 bytes, reduced modulo `buckets`.
pub fn token_bucket(token: &str, buckets: usize) -> usize {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    (h.finish() % buckets as u64) as usize
}

pub fn text_buckets(text: &str, buckets: usize) -> Vec<usize> {
    tokenize(text).iter().map(|t| token_bucket(t, buckets)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<R> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<R>,
}

/// What the encoder sees for one sample.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a, R> {
    Buckets(&'a [usize]),
    Latent(&'a [R]),
}

/// Encoder table plus generator weights. Parameter order: encoder table,
/// fc weight and bias, each transposed convolution's weight and bias, head
/// weight and bias. Activations are channel-last over an x-fastest grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<R> {
    pub arch: Arch,
    pub encoder: EncoderConfig,
    pub params: Vec<Tensor<R>>,
}

pub(crate) const TABLE: usize = 0;
const FC_W: usize = 1;
const FC_B: usize = 2;
const fn deconv_w(l: usize) -> usize {
    3 + 2 * l
}
const fn deconv_b(l: usize) -> usize {
    4 + 2 * l
}

/// Forward activations kept for the backward pass. `post[0]` is the rectified
/// fc output, `post[l + 1]` the rectified output of transposed convolution `l`.
pub(crate) struct Cache<R> {
    pub latent: Vec<R>,
    pub post: Vec<Vec<R>>,
    pub out: Vec<R>,
}

/// Per-axis (input index, kernel offset, output index) triples for stride 2,
/// padding 1.
fn taps(n: usize) -> Vec<Vec<(usize, usize)>> {
    (0..n)
        .map(|i| {
            (0..KERNEL)
                .filter_map(|k| {
                    let o = (2 * i + k).checked_sub(1)?;
                    (o < 2 * n).then_some((k, o))
                })
                .collect()
        })
        .collect()
}

fn axpy<R: Real>(a: R, x: &[R], y: &mut [R]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    // eight partial sums so the loop vectorizes
    let mut acc = [R::ZERO; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = R::ZERO;
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    acc.iter().fold(s, |t, &v| t + v)
}

/// `dst += src` for one channel vector.
#[inline(always)]
fn add_channels<R: Real>(dst: &mut [R], src: &[R]) {
    if dst.len() == 8 && src.len() == 8 {
        for i in 0..8 {
            dst[i] += src[i];
        }
    } else {
        for (d, &s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    }
}

fn relu_in_place<R: Real>(v: &mut [R]) {
    for x in v {
        if !(*x > R::ZERO) {
            *x = R::ZERO;
        }
    }
}

impl<R: Real> Model<R> {
    fn shapes(arch: &Arch, encoder: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
        let buckets = match encoder.kind {
            EncoderKind::BaselineHashing => encoder.buckets,
            EncoderKind::ExternalVectors => 0,
        };
        let mut s = vec![
            ("encoder.table".to_string(), vec![buckets, arch.latent_dim]),
            ("fc.weight".to_string(), vec![arch.latent_dim, arch.fc_out()]),
            ("fc.bias".to_string(), vec![arch.fc_out()]),
        ];
        for l in 0..arch.deconv_count() {
            let (cin, cout) = (arch.channels[l], arch.channels[l + 1]);
            s.push((format!("deconv{}.weight", l + 1), vec![cin, KERNEL, KERNEL, KERNEL, cout]));
            s.push((format!("deconv{}.bias", l + 1), vec![cout]));
        }
        s.push(("head.weight".to_string(), vec![*arch.channels.last().unwrap()]));
        s.push(("head.bias".to_string(), vec![1]));
        s
    }

    pub fn zeros(arch: Arch, encoder: EncoderConfig) -> Result<Self, NetError> {
        arch.validate()?;
        if encoder.kind == EncoderKind::BaselineHashing && encoder.buckets == 0 {
            return Err(NetError::InvalidArch("hash buckets must be positive".into()));
        }
        let params = Self::shapes(&arch, &encoder)
            .into_iter()
            .map(|(name, shape)| Tensor {
                data: vec![R::ZERO; shape.iter().product()],
                name,
                shape,
            })
            .collect();
        Ok(Model { arch, encoder, params })
    }

    /// Uniform(±√3) table, He-uniform weights, zero biases.
    pub fn init(arch: Arch, encoder: EncoderConfig, seed: u64) -> Result<Self, NetError> {
        let mut m = Self::zeros(arch, encoder)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = &m.arch;
        let mut bounds = vec![3f64.sqrt(), (6.0 / a.latent_dim as f64).sqrt(), 0.0];
        for l in 0..a.deconv_count() {
            // each output voxel receives 2x2x2 taps per input channel
            bounds.push((6.0 / (a.channels[l] * 8) as f64).sqrt());
            bounds.push(0.0);
        }
        bounds.push((3.0 / *a.channels.last().unwrap() as f64).sqrt());
        bounds.push(0.0);
        for (t, b) in m.params.iter_mut().zip(bounds) {
            if b > 0.0 {
                for v in &mut t.data {
                    *v = R::from_f64(rng.random_range(-b..b));
                }
            }
        }
        Ok(m)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|t| t.data.len()).sum()
    }

    /// Whether parameter tensor `i` belongs to the encoder.
    pub fn is_encoder_param(i: usize) -> bool {
        i == TABLE
    }

    pub fn buckets_for(&self, text: &str) -> Vec<usize> {
        text_buckets(text, self.encoder.buckets.max(1))
    }

    /// Mean of the embedding rows of the tokens; zeros for no tokens.
    pub fn encode_buckets(&self, buckets: &[usize]) -> Vec<R> {
        let l = self.arch.latent_dim;
        let mut z = vec![R::ZERO; l];
        let table = &self.params[TABLE].data;
        if buckets.is_empty() || table.is_empty() {
            return z;
        }
        for &b in buckets {
            for (zi, &t) in z.iter_mut().zip(&table[b * l..(b + 1) * l]) {
                *zi += t;
            }
        }
        let inv = R::ONE / R::from_f64(buckets.len() as f64);
        z.iter_mut().for_each(|v| *v *= inv);
        z
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<R> {
        let b: Vec<usize> = tokens
            .iter()
            .map(|t| token_bucket(t, self.encoder.buckets.max(1)))
            .collect();
        self.encode_buckets(&b)
    }

    pub fn latent(&self, input: Input<R>) -> Result<Vec<R>, NetError> {
        match input {
            Input::Buckets(b) => {
                if self.encoder.kind == EncoderKind::ExternalVectors {
                    return Err(NetError::EncoderKind(
                        "this model takes external latents, not text".into(),
                    ));
                }
                Ok(self.encode_buckets(b))
            }
            Input::Latent(z) => {
                if z.len() != self.arch.latent_dim {
                    return Err(NetError::LatentLength {
                        expected: self.arch.latent_dim,
                        found: z.len(),
                    });
                }
                Ok(z.to_vec())
            }
        }
    }

    pub(crate) fn forward(&self, latent: Vec<R>) -> Result<Cache<R>, NetError> {
        let a = &self.arch;
        if latent.len() != a.latent_dim {
            return Err(NetError::LatentLength {
                expected: a.latent_dim,
                found: latent.len(),
            });
        }
        let f = a.fc_out();
        let mut h = self.params[FC_B].data.clone();
        for (&z, row) in latent.iter().zip(self.params[FC_W].data.chunks_exact(f)) {
            if z != R::ZERO {
                axpy(z, row, &mut h);
            }
        }
        relu_in_place(&mut h);
        let mut post = vec![h];
        let mut col = Vec::new();
        for l in 0..a.deconv_count() {
            let mut y = deconv_forward(
                post.last().unwrap(),
                a.grid_at(l),
                a.channels[l],
                &self.params[deconv_w(l)].data,
                &self.params[deconv_b(l)].data,
                a.channels[l + 1],
                &mut col,
            );
            relu_in_place(&mut y);
            post.push(y);
        }
        let c = *a.channels.last().unwrap();
        let hw = &self.params[self.params.len() - 2].data;
        let hb = self.params[self.params.len() - 1].data[0];
        let out = post
            .last()
            .unwrap()
            .chunks_exact(c)
            .map(|px| px.iter().zip(hw).fold(hb, |acc, (&x, &w)| acc + x * w))
            .collect();
        Ok(Cache { latent, post, out })
    }

    /// Raw output volume, x-fastest, for a latent.
    pub fn generate(&self, latent: &[R]) -> Result<Vec<R>, NetError> {
        Ok(self.forward(latent.to_vec())?.out)
    }

    pub fn predict(&self, input: Input<R>) -> Result<Vec<R>, NetError> {
        Ok(self.forward(self.latent(input)?)?.out)
    }

    /// Accumulates `d loss / d params` into `grads` given `dy = d loss / d out`.
    pub(crate) fn backward(&self, cache: &Cache<R>, input: Input<R>, dy: &[R], grads: &mut Grads<R>) {
        let a = &self.arch;
        let n = self.params.len();
        let c = *a.channels.last().unwrap();
        let last = cache.post.last().unwrap();
        let hw = &self.params[n - 2].data;
        {
            let (gw, gb) = grads.pair(n - 2);
            let mut bsum = R::ZERO;
            for (px, &d) in last.chunks_exact(c).zip(dy) {
                for (g, &x) in gw.iter_mut().zip(px) {
                    *g += x * d;
                }
                bsum += d;
            }
            gb[0] += bsum;
        }
        let mut d: Vec<R> = Vec::with_capacity(last.len());
        for (px, &g) in last.chunks_exact(c).zip(dy) {
            for (&x, &w) in px.iter().zip(hw) {
                d.push(if x > R::ZERO { g * w } else { R::ZERO });
            }
        }

        let mut col = Vec::new();
        for l in (0..a.deconv_count()).rev() {
            let x = &cache.post[l];
            let (cin, cout) = (a.channels[l], a.channels[l + 1]);
            let (gw, gb) = grads.pair(deconv_w(l));
            let mut dx = deconv_backward(
                x,
                a.grid_at(l),
                cin,
                &self.params[deconv_w(l)].data,
                cout,
                &d,
                gw,
                gb,
                &mut col,
            );
            for (g, &xv) in dx.iter_mut().zip(x) {
                if !(xv > R::ZERO) {
                    *g = R::ZERO;
                }
            }
            d = dx;
        }

        let (ld, f) = (a.latent_dim, a.fc_out());
        {
            let (gw, gb) = grads.pair(FC_W);
            for (g, &v) in gb.iter_mut().zip(&d) {
                *g += v;
            }
            for (&z, row) in cache.latent.iter().zip(gw.chunks_exact_mut(f)) {
                if z != R::ZERO {
                    axpy(z, &d, row);
                }
            }
        }
        if let Input::Buckets(buckets) = input {
            if buckets.is_empty() || self.params[TABLE].data.is_empty() {
                return;
            }
            let mut dz: Vec<R> = self.params[FC_W]
                .data
                .chunks_exact(f)
                .map(|row| dot(row, &d))
                .collect();
            let inv = R::ONE / R::from_f64(buckets.len() as f64);
            dz.iter_mut().for_each(|v| *v *= inv);
            for &b in buckets {
                grads.touch_row(b);
                let table = &mut grads.tensors[TABLE];
                for (g, &v) in table[b * ld..(b + 1) * ld].iter_mut().zip(&dz) {
                    *g += v;
                }
            }
        }
    }

    /// Fingerprint of which rectifiers are active for an input.
    pub fn activation_pattern(&self, input: Input<R>) -> Result<u64, NetError> {
        let cache = self.forward(self.latent(input)?)?;
        let mut h = FnvHasher::default();
        for layer in &cache.post {
            for chunk in layer.chunks(64) {
                let mut bits = 0u64;
                for (i, &v) in chunk.iter().enumerate() {
                    if v > R::ZERO {
                        bits |= 1 << i;
                    }
                }
                h.write_u64(bits);
            }
        }
        Ok(h.finish())
    }

    /// Mean batch MSE and its gradient. Samples are accumulated in order, so
    /// the result is deterministic.
    pub fn loss_and_grad(&self, batch: &[(Input<R>, &[R])]) -> Result<(f64, Grads<R>), NetError> {
        let mut grads = Grads::zeros_like(self);
        let loss = self.accumulate(batch, &mut grads)?;
        Ok((loss, grads))
    }

    /// As [`Model::loss_and_grad`] but adds into an existing buffer.
    pub fn accumulate(&self, batch: &[(Input<R>, &[R])], grads: &mut Grads<R>) -> Result<f64, NetError> {
        if batch.is_empty() {
            return Err(NetError::EmptyTrainingSet);
        }
        let len = self.arch.output_len();
        let scale = 2.0 / (len as f64 * batch.len() as f64);
        let mut total = 0.0;
        for (input, target) in batch {
            if target.len() != len {
                return Err(NetError::DimMismatch {
                    expected: len,
                    found: target.len(),
                });
            }
            let cache = self.forward(self.latent(*input)?)?;
            total += mse(&cache.out, target);
            let dy: Vec<R> = cache
                .out
                .iter()
                .zip(target.iter())
                .map(|(&y, &t)| R::from_f64(scale) * (y - t))
                .collect();
            self.backward(&cache, *input, &dy, grads);
        }
        Ok(total / batch.len() as f64)
    }

    pub fn loss(&self, batch: &[(Input<R>, &[R])]) -> Result<f64, NetError> {
        if batch.is_empty() {
            return Err(NetError::EmptyTrainingSet);
        }
        let mut total = 0.0;
        for (input, target) in batch {
            let out = self.predict(*input)?;
            if target.len() != out.len() {
                return Err(NetError::DimMismatch {
                    expected: out.len(),
                    found: target.len(),
                });
            }
            total += mse(&out, target);
        }
        Ok(total / batch.len() as f64)
    }

    pub fn cast<S: Real>(&self) -> Model<S> {
        Model {
            arch: self.arch.clone(),
            encoder: self.encoder,
            params: self
                .params
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| S::from_f64(v.to_f64())).collect(),
                })
                .collect(),
        }
    }
}

/// Mean squared difference, accumulated in f64.
pub(crate) fn mse<R: Real>(pred: &[R], target: &[R]) -> f64 {
    let s: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p.to_f64() - t.to_f64();
            d * d
        })
        .sum();
    s / pred.len().max(1) as f64
}

/// Gradient buffers shaped like the model's parameters.
/// The embedding table gradient is sparse in practice, so the rows written
/// since the last reset are tracked and only those are cleared.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<R> {
    tensors: Vec<Vec<R>>,
    /// Table rows that may hold non-zero gradient, ascending.
    touched_rows: Vec<usize>,
    row_len: usize,
}

impl<R: Real> Grads<R> {
    pub fn zeros_like(model: &Model<R>) -> Self {
        Grads {
            tensors: model.params.iter().map(|t| vec![R::ZERO; t.data.len()]).collect(),
            touched_rows: Vec::new(),
            row_len: model.arch.latent_dim,
        }
    }

    pub fn zero(&mut self) {
        for (i, t) in self.tensors.iter_mut().enumerate() {
            if i == TABLE {
                for &r in &self.touched_rows {
                    t[r * self.row_len..(r + 1) * self.row_len].fill(R::ZERO);
                }
            } else {
                t.fill(R::ZERO);
            }
        }
        self.touched_rows.clear();
    }

    /// Wraps explicit gradient tensors; every table row counts as touched.
    pub fn from_tensors(tensors: Vec<Vec<R>>, row_len: usize) -> Self {
        let rows = if row_len == 0 { 0 } else { tensors.first().map_or(0, |t| t.len() / row_len) };
        Grads {
            tensors,
            touched_rows: (0..rows).collect(),
            row_len,
        }
    }

    pub fn tensors(&self) -> &[Vec<R>] {
        &self.tensors
    }

    pub fn into_tensors(self) -> Vec<Vec<R>> {
        self.tensors
    }

    fn touch_row(&mut self, row: usize) {
        if let Err(pos) = self.touched_rows.binary_search(&row) {
            self.touched_rows.insert(pos, row);
        }
    }

    /// Table rows whose gradient may be non-zero.
    pub fn touched_rows(&self) -> &[usize] {
        &self.touched_rows
    }

    pub fn row_len(&self) -> usize {
        self.row_len
    }

    fn pair(&mut self, i: usize) -> (&mut Vec<R>, &mut Vec<R>) {
        let (a, b) = self.tensors.split_at_mut(i + 1);
        (&mut a[i], &mut b[0])
    }
}

fn deconv_forward<R: Real>(
    x: &[R],
    dims: [usize; 3],
    cin: usize,
    w: &[R],
    b: &[R],
    cout: usize,
    col: &mut Vec<R>,
) -> Vec<R> {
    let [nx, ny, nz] = dims;
    let s_in = nx * ny * nz;
    let kc = TAPS * cout;
    col.clear();
    col.resize(s_in * kc, R::ZERO);
    gemm(s_in, cin, kc, R::ONE, View::rows(x, cin), View::rows(w, kc), R::ZERO, col);

    let (ox, oy) = (2 * nx, 2 * ny);
    let mut out = Vec::with_capacity(ox * oy * 2 * nz * cout);
    for _ in 0..ox * oy * 2 * nz {
        out.extend_from_slice(b);
    }
    let (tx, ty, tz) = (taps(nx), taps(ny), taps(nz));
    for z in 0..nz {
        for &(kz, oz) in &tz[z] {
            for y in 0..ny {
                for &(ky, oy_) in &ty[y] {
                    let row_in = nx * (y + ny * z);
                    let row_out = ox * (oy_ + oy * oz);
                    for x in 0..nx {
                        let base = (row_in + x) * kc + (kz * KERNEL + ky) * KERNEL * cout;
                        for &(kx, ox_) in &tx[x] {
                            let src = &col[base + kx * cout..base + (kx + 1) * cout];
                            add_channels(&mut out[(row_out + ox_) * cout..(row_out + ox_ + 1) * cout], src);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Given `d` = gradient w.r.t. the (pre-rectifier) output, accumulates weight
/// and bias gradients and returns the gradient w.r.t. the input.
#[allow(clippy::too_many_arguments)]
fn deconv_backward<R: Real>(
    x: &[R],
    dims: [usize; 3],
    cin: usize,
    w: &[R],
    cout: usize,
    d: &[R],
    gw: &mut [R],
    gb: &mut [R],
    col: &mut Vec<R>,
) -> Vec<R> {
    let [nx, ny, nz] = dims;
    let s_in = nx * ny * nz;
    let kc = TAPS * cout;
    for px in d.chunks_exact(cout) {
        for (g, &v) in gb.iter_mut().zip(px) {
            *g += v;
        }
    }
    col.clear();
    col.resize(s_in * kc, R::ZERO);
    let (ox, oy) = (2 * nx, 2 * ny);
    let (tx, ty, tz) = (taps(nx), taps(ny), taps(nz));
    for z in 0..nz {
        for &(kz, oz) in &tz[z] {
            for y in 0..ny {
                for &(ky, oy_) in &ty[y] {
                    let row_in = nx * (y + ny * z);
                    let row_out = ox * (oy_ + oy * oz);
                    for x in 0..nx {
                        let base = (row_in + x) * kc + (kz * KERNEL + ky) * KERNEL * cout;
                        for &(kx, ox_) in &tx[x] {
                            col[base + kx * cout..base + (kx + 1) * cout]
                                .copy_from_slice(&d[(row_out + ox_) * cout..(row_out + ox_ + 1) * cout]);
                        }
                    }
                }
            }
        }
    }
    gemm(cin, s_in, kc, R::ONE, View::t(x, cin), View::rows(col, kc), R::ONE, gw);
    // dxᵀ = w · colᵀ, written transposed into dx
    let mut dx = vec![R::ZERO; s_in * cin];
    gemm_strided(cin, kc, s_in, R::ONE, View::rows(w, kc), View::t(col, kc), R::ZERO, &mut dx, 1, cin);
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enc(buckets: usize) -> EncoderConfig {
        EncoderConfig {
            kind: EncoderKind::BaselineHashing,
            buckets,
        }
    }

    #[test]
    fn standard_shapes_and_counts() {
        let a = Arch::default();
        assert_eq!(a.output_dims(), [40, 48, 40]);
        assert_eq!(a.fc_out(), 9600);
        assert_eq!((0..4).map(|l| a.grid_at(l)).collect::<Vec<_>>(), [[5, 6, 5], [10, 12, 10], [20, 24, 20], [40, 48, 40]]);
        let m = Model::<f32>::zeros(a, EncoderConfig::default()).unwrap();
        let count = |name: &str| m.params.iter().find(|t| t.name == name).unwrap().data.len();
        assert_eq!(count("fc.weight") + count("fc.bias"), 7_382_400);
        assert_eq!(count("encoder.table"), 8192 * 768);
        assert_eq!(count("deconv1.weight"), 64 * 64 * 32);
        assert_eq!(count("head.weight"), 8);
    }

    #[test]
    fn empty_tokens_give_zero_latent() {
        let m = Model::<f32>::init(Arch::tiny(), enc(16), 1).unwrap();
        assert_eq!(m.encode(&[]), vec![0.0; 8]);
        let t = vec!["pain".to_string(), "insula".to_string()];
        assert_eq!(m.encode(&t), m.encode(&t));
        assert_eq!(m.encode(&t).len(), 8);
    }

    #[test]
    fn hashing_is_fnv1a() {
        // FNV-1a 64 of "a" is 0xaf63dc4c8601ec8c
        assert_eq!(token_bucket("a", usize::MAX), (0xaf63dc4c8601ec8cu64 % usize::MAX as u64) as usize);
    }

    #[test]
    fn zero_model_outputs_zero_and_has_zero_grads() {
        let m = Model::<f64>::zeros(Arch::tiny(), enc(16)).unwrap();
        let b = m.buckets_for("pain insula");
        let out = m.predict(Input::Buckets(&b)).unwrap();
        assert_eq!(out.len(), 512);
        assert!(out.iter().all(|&v| v == 0.0));
        let target = vec![0.0; 512];
        let (loss, g) = m.loss_and_grad(&[(Input::Buckets(&b), &target)]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.tensors().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn latent_length_checked() {
        let m = Model::<f32>::zeros(Arch::tiny(), enc(16)).unwrap();
        assert!(matches!(m.generate(&[0.0; 3]), Err(NetError::LatentLength { expected: 8, found: 3 })));
    }

    /// Direct scatter definition of the transposed convolution.
    fn deconv_reference(x: &[f64], dims: [usize; 3], cin: usize, w: &[f64], b: &[f64], cout: usize) -> Vec<f64> {
        let [nx, ny, nz] = dims;
        let (ox, oy, oz) = (2 * nx as i64, 2 * ny as i64, 2 * nz as i64);
        let mut out: Vec<f64> = (0..(ox * oy * oz) as usize).flat_map(|_| b.to_vec()).collect();
        for z in 0..nz as i64 {
            for y in 0..ny as i64 {
                for xi in 0..nx as i64 {
                    for kz in 0..4i64 {
                        for ky in 0..4i64 {
                            for kx in 0..4i64 {
                                let (px, py, pz) = (2 * xi - 1 + kx, 2 * y - 1 + ky, 2 * z - 1 + kz);
                                if px < 0 || py < 0 || pz < 0 || px >= ox || py >= oy || pz >= oz {
                                    continue;
                                }
                                let o = (px + ox * (py + oy * pz)) as usize;
                                let i = (xi + nx as i64 * (y + ny as i64 * z)) as usize;
                                for ci in 0..cin {
                                    for co in 0..cout {
                                        let wi = (((ci * 4 + kz as usize) * 4 + ky as usize) * 4 + kx as usize) * cout + co;
                                        out[o * cout + co] += x[i * cin + ci] * w[wi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn deconv_matches_scatter_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dims = [3, 2, 2];
        let (cin, cout) = (2, 3);
        let x: Vec<f64> = (0..12 * cin).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..cin * 64 * cout).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = vec![0.1, -0.2, 0.3];
        let fast = deconv_forward(&x, dims, cin, &w, &b, cout, &mut Vec::new());
        let slow = deconv_reference(&x, dims, cin, &w, &b, cout);
        assert_eq!(fast.len(), 6 * 4 * 4 * cout);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_voxel_fc_bias_gradient() {
        // latent 1, one channel, no transposed convolutions: out = w_h·relu(w·z + b) + b_h
        let arch = Arch {
            latent_dim: 1,
            base_grid: [1, 1, 1],
            channels: vec![1],
        };
        let mut m = Model::<f64>::zeros(arch, EncoderConfig { kind: EncoderKind::ExternalVectors, buckets: 0 }).unwrap();
        m.params[FC_W].data[0] = 0.5;
        m.params[FC_B].data[0] = 0.25;
        let n = m.params.len();
        m.params[n - 2].data[0] = 2.0;
        m.params[n - 1].data[0] = 0.1;
        let z = [2.0];
        let t = [3.0];
        // h = 1.25, y = 2.6, dL/dy = 2(y - t) = -0.8, dL/db = -0.8 · 2 = -1.6
        let (loss, g) = m.loss_and_grad(&[(Input::Latent(&z), &t)]).unwrap();
        assert!((loss - 0.16).abs() < 1e-12);
        assert!((g.tensors()[FC_B][0] + 1.6).abs() < 1e-12);
        assert!((g.tensors()[FC_W][0] + 3.2).abs() < 1e-12);
        assert!((g.tensors()[n - 2][0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn dead_rectifiers_block_gradient() {
        let mut m = Model::<f64>::init(Arch::tiny(), enc(16), 5).unwrap();
        m.params[FC_B].data.iter_mut().for_each(|b| *b = -100.0);
        let b = m.buckets_for("pain");
        let target = vec![1.0; 512];
        let (_, g) = m.loss_and_grad(&[(Input::Buckets(&b), &target)]).unwrap();
        for i in [TABLE, FC_W, FC_B, deconv_w(0), deconv_b(0)] {
            assert!(g.tensors()[i].iter().all(|&v| v == 0.0), "{}", m.params[i].name);
        }
        assert!(g.tensors()[m.params.len() - 1][0] != 0.0);
    }
}
