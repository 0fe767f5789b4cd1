use rand::Rng;

use super::NeuroError;

/// Fully connected network: ReLU on hidden layers, identity on the output.
///
/// Parameters live in one flat vector. Layer `l` stores its weight matrix
/// row-major as `out x in`, followed by its `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Layer inputs recorded by [`Mlp::forward`]; entry `l` feeds layer `l`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Vec<f64>>,
}

/// Layer inputs recorded by [`Mlp::forward_batch`]; entry `l` holds the
/// `rows x sizes[l]` row-major input of layer `l`.
#[derive(Debug, Clone)]
pub struct BatchCache {
    rows: usize,
    inputs: Vec<Vec<f64>>,
}

fn param_count_for(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
}

impl Mlp {
    /// All-zero network with the given layer sizes.
    pub fn zeros(sizes: &[usize]) -> Result<Self, NeuroError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NeuroError::TooFewLayers(sizes.to_vec()));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count_for(sizes)],
        })
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization for every weight and bias.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self, NeuroError> {
        let mut net = Self::zeros(sizes)?;
        let mut offset = 0;
        for pair in sizes.windows(2) {
            let (fan_in, out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * out + out] {
                *p = rng.gen_range(-bound..bound);
            }
            offset += fan_in * out + out;
        }
        Ok(net)
    }

    pub(crate) fn from_parts(sizes: Vec<usize>, params: Vec<f64>) -> Result<Self, NeuroError> {
        let mut net = Self::zeros(&sizes)?;
        if params.len() != net.params.len() {
            return Err(NeuroError::Shape {
                expected: net.params.len(),
                got: params.len(),
            });
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Weight matrix and bias vector of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let offset = param_count_for(&self.sizes[..=l]);
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let w = &self.params[offset..offset + n_in * n_out];
        let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
        (w, b)
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let offset = param_count_for(&self.sizes[..=l]);
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let (w, rest) = self.params[offset..].split_at_mut(n_in * n_out);
        (w, &mut rest[..n_out])
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NeuroError> {
        if x.len() != self.input_len() {
            return Err(NeuroError::Shape {
                expected: self.input_len(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(b.iter().zip(w.chunks_exact(x.len())).map(|(bias, row)| {
            bias + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>()
        }));
    }

    /// Output without recording intermediate activations.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>, NeuroError> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l);
            Self::affine(w, b, &cur, &mut next);
            if l + 1 < self.n_layers() {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache), NeuroError> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.n_layers());
        let mut cur = x.to_vec();
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l);
            let mut next = Vec::with_capacity(self.sizes[l + 1]);
            Self::affine(w, b, &cur, &mut next);
            if l + 1 < self.n_layers() {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            inputs.push(std::mem::replace(&mut cur, next));
        }
        Ok((cur, ForwardCache { inputs }))
    }

    /// Adds the gradient of `<dy, y>` with respect to the parameters into
    /// `grads` and returns the gradient with respect to the input.
    pub fn backward_into(&self, cache: &ForwardCache, dy: &[f64], grads: &mut [f64]) -> Result<Vec<f64>, NeuroError> {
        if dy.len() != self.output_len() {
            return Err(NeuroError::Shape {
                expected: self.output_len(),
                got: dy.len(),
            });
        }
        if grads.len() != self.params.len() || cache.inputs.len() != self.n_layers() {
            return Err(NeuroError::Shape {
                expected: self.params.len(),
                got: grads.len(),
            });
        }
        let mut delta = dy.to_vec();
        for l in (0..self.n_layers()).rev() {
            let x = &cache.inputs[l];
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let offset = param_count_for(&self.sizes[..=l]);
            let (w, _) = self.layer(l);
            let (gw, gb) = grads[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let mut dx = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &w[o * n_in..(o + 1) * n_in];
                let grow = &mut gw[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    grow[i] += d * x[i];
                    dx[i] += d * row[i];
                }
            }
            if l > 0 {
                // x is the ReLU output of the previous layer.
                for (g, &a) in dx.iter_mut().zip(x) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            delta = dx;
        }
        Ok(delta)
    }

    /// Parameter and input gradients of `<dy, y>`.
    pub fn backward(&self, cache: &ForwardCache, dy: &[f64]) -> Result<(Vec<f64>, Vec<f64>), NeuroError> {
        let mut grads = vec![0.0; self.params.len()];
        let dx = self.backward_into(cache, dy, &mut grads)?;
        Ok((grads, dx))
    }

    fn check_batch(&self, x: &[f64], rows: usize) -> Result<(), NeuroError> {
        if x.len() != rows * self.input_len() {
            return Err(NeuroError::Shape {
                expected: rows * self.input_len(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `rows x n_out` outputs of layer `l` for `rows x n_in` inputs.
    ///
    /// Accumulates `bias + sum_i x_i w_i` in increasing `i`, skipping zero
    /// inputs; the inner loop runs over contiguous outputs so it vectorizes.
    fn affine_batch(&self, l: usize, x: &[f64], rows: usize, out: &mut Vec<f64>) {
        let (w, b) = self.layer(l);
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let relu = l + 1 < self.n_layers();
        if rows <= SMALL_BATCH {
            // Same accumulation order, without paying for the transpose.
            out.clear();
            out.resize(rows * n_out, 0.0);
            for (y, xr) in out.chunks_exact_mut(n_out).zip(x.chunks_exact(n_in)) {
                for ((yo, &bo), wrow) in y.iter_mut().zip(b).zip(w.chunks_exact(n_in)) {
                    let mut acc = bo;
                    for (&xv, &wv) in xr.iter().zip(wrow) {
                        if xv != 0.0 {
                            acc += xv * wv;
                        }
                    }
                    *yo = if relu { acc.max(0.0) } else { acc };
                }
            }
            return;
        }
        let mut wt = vec![0.0; n_in * n_out];
        for o in 0..n_out {
            for i in 0..n_in {
                wt[i * n_out + o] = w[o * n_in + i];
            }
        }
        simd::dispatch!(affine_rows(&wt, b, x, n_in, n_out, rows, relu, out));
    }

    /// Outputs for `rows` inputs stored row-major in `x`.
    pub fn predict_batch(&self, x: &[f64], rows: usize) -> Result<Vec<f64>, NeuroError> {
        self.check_batch(x, rows)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for l in 0..self.n_layers() {
            self.affine_batch(l, &cur, rows, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward_batch(&self, x: &[f64], rows: usize) -> Result<(Vec<f64>, BatchCache), NeuroError> {
        self.check_batch(x, rows)?;
        let mut inputs = Vec::with_capacity(self.n_layers());
        let mut cur = x.to_vec();
        for l in 0..self.n_layers() {
            let mut next = Vec::new();
            self.affine_batch(l, &cur, rows, &mut next);
            inputs.push(std::mem::replace(&mut cur, next));
        }
        Ok((cur, BatchCache { rows, inputs }))
    }

    /// Adds the parameter gradient of `sum_r <dy_r, y_r>` into `grads`.
    pub fn backward_batch_into(&self, cache: &BatchCache, dy: &[f64], grads: &mut [f64]) -> Result<(), NeuroError> {
        let rows = cache.rows;
        if dy.len() != rows * self.output_len() {
            return Err(NeuroError::Shape {
                expected: rows * self.output_len(),
                got: dy.len(),
            });
        }
        if grads.len() != self.params.len() || cache.inputs.len() != self.n_layers() {
            return Err(NeuroError::Shape {
                expected: self.params.len(),
                got: grads.len(),
            });
        }
        let mut delta = dy.to_vec();
        for l in (0..self.n_layers()).rev() {
            let x = &cache.inputs[l];
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let offset = param_count_for(&self.sizes[..=l]);
            let (gw, gb) = grads[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            simd::dispatch!(param_grads(&delta, x, n_in, n_out, gw, gb));
            if l > 0 {
                let (w, _) = self.layer(l);
                let mut dx = vec![0.0; rows * n_in];
                simd::dispatch!(input_grads(w, &delta, x, n_in, n_out, &mut dx));
                delta = dx;
            }
        }
        Ok(())
    }

    /// Overwrites this network's parameters with `src`'s.
    pub fn copy_params_from(&mut self, src: &Mlp) -> Result<(), NeuroError> {
        if self.sizes != src.sizes {
            return Err(NeuroError::Architecture(self.sizes.clone(), src.sizes.clone()));
        }
        self.params.copy_from_slice(&src.params);
        Ok(())
    }
}

/// Batches up to this many rows skip the weight transpose.
const SMALL_BATCH: usize = 4;

/// Batched kernels, compiled for the baseline target and again with AVX2
/// and with AVX-512F enabled, then picked at runtime. FMA stays off in every
/// variant so results are bit-identical on every machine.
mod simd {
    macro_rules! dispatch {
        ($name:ident($($arg:expr),* $(,)?)) => {{
            #[cfg(target_arch = "x86_64")]
            {
                if std::is_x86_feature_detected!("avx512f") {
                    // SAFETY: the CPU supports AVX-512F, checked just above.
                    unsafe { simd::avx512::$name($($arg),*) }
                } else if std::is_x86_feature_detected!("avx2") {
                    // SAFETY: the CPU supports AVX2, checked just above.
                    unsafe { simd::avx2::$name($($arg),*) }
                } else {
                    simd::$name($($arg),*)
                }
            }
            #[cfg(not(target_arch = "x86_64"))]
            {
                simd::$name($($arg),*)
            }
        }};
    }
    pub(super) use dispatch;

    #[inline(always)]
    fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
        for (yv, &xv) in y.iter_mut().zip(x) {
            *yv += a * xv;
        }
    }

    /// `out[r] = relu?(b + W x[r])` with `wt` the transposed weights (in x out).
    #[allow(clippy::too_many_arguments)]
    #[inline(always)]
    pub fn affine_rows(wt: &[f64], b: &[f64], x: &[f64], n_in: usize, n_out: usize, rows: usize, relu: bool, out: &mut Vec<f64>) {
        out.clear();
        out.resize(rows * n_out, 0.0);
        for (y, xr) in out.chunks_exact_mut(n_out).zip(x.chunks_exact(n_in)) {
            y.copy_from_slice(b);
            for (&xv, wrow) in xr.iter().zip(wt.chunks_exact(n_out)) {
                if xv != 0.0 {
                    axpy(y, xv, wrow);
                }
            }
            if relu {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
    }

    /// Accumulates weight and bias gradients of one layer.
    #[inline(always)]
    pub fn param_grads(delta: &[f64], x: &[f64], n_in: usize, n_out: usize, gw: &mut [f64], gb: &mut [f64]) {
        for d in delta.chunks_exact(n_out) {
            for (g, &v) in gb.iter_mut().zip(d) {
                *g += v;
            }
        }
        if n_in >= n_out {
            for (d, xr) in delta.chunks_exact(n_out).zip(x.chunks_exact(n_in)) {
                for (o, &v) in d.iter().enumerate() {
                    if v != 0.0 {
                        axpy(&mut gw[o * n_in..(o + 1) * n_in], v, xr);
                    }
                }
            }
        } else {
            let mut gwt = vec![0.0; n_in * n_out];
            for (d, xr) in delta.chunks_exact(n_out).zip(x.chunks_exact(n_in)) {
                for (&xv, grow) in xr.iter().zip(gwt.chunks_exact_mut(n_out)) {
                    if xv != 0.0 {
                        axpy(grow, xv, d);
                    }
                }
            }
            for i in 0..n_in {
                for o in 0..n_out {
                    gw[o * n_in + i] += gwt[i * n_out + o];
                }
            }
        }
    }

    /// Gradient with respect to the layer input, masked by the ReLU that
    /// produced `x`.
    #[inline(always)]
    pub fn input_grads(w: &[f64], delta: &[f64], x: &[f64], n_in: usize, n_out: usize, dx: &mut [f64]) {
        for ((dxr, d), xr) in dx.chunks_exact_mut(n_in).zip(delta.chunks_exact(n_out)).zip(x.chunks_exact(n_in)) {
            for (o, &v) in d.iter().enumerate() {
                if v != 0.0 {
                    axpy(dxr, v, &w[o * n_in..(o + 1) * n_in]);
                }
            }
            for (g, &a) in dxr.iter_mut().zip(xr) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
        }
    }

    #[cfg(target_arch = "x86_64")]
    pub mod avx2 {
        #[allow(clippy::too_many_arguments)]
        #[target_feature(enable = "avx2")]
        pub unsafe fn affine_rows(wt: &[f64], b: &[f64], x: &[f64], n_in: usize, n_out: usize, rows: usize, relu: bool, out: &mut Vec<f64>) {
            super::affine_rows(wt, b, x, n_in, n_out, rows, relu, out)
        }

        #[target_feature(enable = "avx2")]
        pub unsafe fn param_grads(delta: &[f64], x: &[f64], n_in: usize, n_out: usize, gw: &mut [f64], gb: &mut [f64]) {
            super::param_grads(delta, x, n_in, n_out, gw, gb)
        }

        #[target_feature(enable = "avx2")]
        pub unsafe fn input_grads(w: &[f64], delta: &[f64], x: &[f64], n_in: usize, n_out: usize, dx: &mut [f64]) {
            super::input_grads(w, delta, x, n_in, n_out, dx)
        }
    }

    #[cfg(target_arch = "x86_64")]
    pub mod avx512 {
        #[allow(clippy::too_many_arguments)]
        #[target_feature(enable = "avx512f")]
        pub unsafe fn affine_rows(wt: &[f64], b: &[f64], x: &[f64], n_in: usize, n_out: usize, rows: usize, relu: bool, out: &mut Vec<f64>) {
            super::affine_rows(wt, b, x, n_in, n_out, rows, relu, out)
        }

        #[target_feature(enable = "avx512f")]
        pub unsafe fn param_grads(delta: &[f64], x: &[f64], n_in: usize, n_out: usize, gw: &mut [f64], gb: &mut [f64]) {
            super::param_grads(delta, x, n_in, n_out, gw, gb)
        }

        #[target_feature(enable = "avx512f")]
        pub unsafe fn input_grads(w: &[f64], delta: &[f64], x: &[f64], n_in: usize, n_out: usize, dx: &mut [f64]) {
            super::input_grads(w, delta, x, n_in, n_out, dx)
        }
    }
}
