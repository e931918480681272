//! Raw forward/backward kernels for convolution and bilinear resizing.
//!
//! These work on flat slices; shape checks happen in [`crate::autograd`].

use crate::scalar::Scalar;
use crate::tensor::Shape4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub input: Shape4,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    /// Output spatial size, or `None` when it would be non-positive.
    pub fn output_hw(&self) -> Option<(usize, usize)> {
        let h = self.input.h + 2 * self.padding;
        let w = self.input.w + 2 * self.padding;
        if h < self.kernel_h || w < self.kernel_w || self.stride == 0 {
            return None;
        }
        Some(((h - self.kernel_h) / self.stride + 1, (w - self.kernel_w) / self.stride + 1))
    }

    pub fn output_shape(&self) -> Option<Shape4> {
        self.output_hw()
            .map(|(h, w)| Shape4::new(self.input.n, self.out_channels, h, w))
    }

    /// Rows of the unfolded patch matrix.
    pub fn patch_len(&self) -> usize {
        self.input.c * self.kernel_h * self.kernel_w
    }

    /// 1x1 kernels with unit stride and no padding read the input directly.
    pub fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.padding == 0
    }

    /// Multiply-accumulate count of one forward pass.
    pub fn macs(&self) -> usize {
        self.output_shape().map_or(0, |o| o.numel() * self.patch_len())
    }
}

/// Unfolds one image (`c x h x w`) into a `patch_len x (oh*ow)` matrix.
fn im2col<T: Scalar>(g: &ConvGeometry, image: &[T], oh: usize, ow: usize, cols: &mut [T]) {
    let (h, w) = (g.input.h as isize, g.input.w as isize);
    let pad = g.padding as isize;
    let plane = oh * ow;
    let mut row = 0;
    for c in 0..g.input.c {
        let chan = &image[c * g.input.plane()..(c + 1) * g.input.plane()];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &chan[(iy as usize) * g.input.w..(iy as usize + 1) * g.input.w];
                    for (ox, d) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        *d = if ix < 0 || ix >= w { T::zero() } else { src[ix as usize] };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Folds a patch-matrix gradient back onto one image gradient (accumulating).
fn col2im<T: Scalar>(g: &ConvGeometry, cols: &[T], oh: usize, ow: usize, image: &mut [T]) {
    let (h, w) = (g.input.h as isize, g.input.w as isize);
    let pad = g.padding as isize;
    let plane = oh * ow;
    let mut row = 0;
    for c in 0..g.input.c {
        let chan = &mut image[c * g.input.plane()..(c + 1) * g.input.plane()];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let dst = &mut chan[(iy as usize) * g.input.w..(iy as usize + 1) * g.input.w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < w {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Convolution forward pass. Returns the output and the unfolded patches
/// (empty for pointwise kernels), which the backward pass reuses.
pub fn conv2d_forward<T: Scalar>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    bias: &[T],
) -> (Vec<T>, Vec<T>) {
    let (oh, ow) = g.output_hw().expect("validated geometry");
    let plane = oh * ow;
    let k = g.patch_len();
    let in_per = g.input.c * g.input.plane();
    let out_per = g.out_channels * plane;
    let mut out = vec![T::zero(); g.input.n * out_per];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); g.input.n * k * plane] };
    for b in 0..g.input.n {
        let dst = &mut out[b * out_per..(b + 1) * out_per];
        for (o, chunk) in dst.chunks_mut(plane).enumerate() {
            chunk.fill(bias[o]);
        }
        let patches: &[T] = if g.is_pointwise() {
            &input[b * in_per..(b + 1) * in_per]
        } else {
            let c = &mut cols[b * k * plane..(b + 1) * k * plane];
            im2col(g, &input[b * in_per..(b + 1) * in_per], oh, ow, c);
            c
        };
        T::gemm(g.out_channels, k, plane, T::one(), weight, false, patches, false, T::one(), dst);
    }
    (out, cols)
}

pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

/// Convolution backward pass for whichever operands need gradients.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    cols: &[T],
    grad_out: &[T],
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> ConvGrads<T> {
    let (oh, ow) = g.output_hw().expect("validated geometry");
    let plane = oh * ow;
    let k = g.patch_len();
    let in_per = g.input.c * g.input.plane();
    let out_per = g.out_channels * plane;

    let mut d_weight = need_weight.then(|| vec![T::zero(); g.out_channels * k]);
    let mut d_bias = need_bias.then(|| vec![T::zero(); g.out_channels]);
    let mut d_input = need_input.then(|| vec![T::zero(); input.len()]);
    let mut d_cols = if need_input && !g.is_pointwise() { vec![T::zero(); k * plane] } else { Vec::new() };

    for b in 0..g.input.n {
        let go = &grad_out[b * out_per..(b + 1) * out_per];
        if let Some(db) = d_bias.as_mut() {
            for (o, chunk) in go.chunks(plane).enumerate() {
                db[o] += chunk.iter().copied().sum::<T>();
            }
        }
        let patches = if g.is_pointwise() {
            &input[b * in_per..(b + 1) * in_per]
        } else {
            &cols[b * k * plane..(b + 1) * k * plane]
        };
        if let Some(dw) = d_weight.as_mut() {
            // dW += dO (O x P) * patches^T (P x K)
            T::gemm(g.out_channels, plane, k, T::one(), go, false, patches, true, T::one(), dw);
        }
        if let Some(di) = d_input.as_mut() {
            let dst = &mut di[b * in_per..(b + 1) * in_per];
            if g.is_pointwise() {
                T::gemm(k, g.out_channels, plane, T::one(), weight, true, go, false, T::one(), dst);
            } else {
                T::gemm(k, g.out_channels, plane, T::one(), weight, true, go, false, T::zero(), &mut d_cols);
                col2im(g, &d_cols, oh, ow, dst);
            }
        }
    }
    ConvGrads { input: d_input, weight: d_weight, bias: d_bias }
}

/// Per-axis sampling table for half-pixel-center bilinear resizing.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisTable<T> {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    /// Weight of `hi`; `lo` gets `1 - frac`.
    pub frac: Vec<T>,
}

impl<T: Scalar> AxisTable<T> {
    pub fn new(src: usize, dst: usize) -> Self {
        let scale = src as f64 / dst as f64;
        let mut table = Self {
            lo: Vec::with_capacity(dst),
            hi: Vec::with_capacity(dst),
            frac: Vec::with_capacity(dst),
        };
        for d in 0..dst {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            table.lo.push(lo);
            table.hi.push((lo + 1).min(src - 1));
            table.frac.push(T::of(s - lo as f64));
        }
        table
    }
}

pub struct ResizePlan<T> {
    pub rows: AxisTable<T>,
    pub cols: AxisTable<T>,
}

impl<T: Scalar> ResizePlan<T> {
    pub fn new(src_h: usize, src_w: usize, dst_h: usize, dst_w: usize) -> Self {
        Self { rows: AxisTable::new(src_h, dst_h), cols: AxisTable::new(src_w, dst_w) }
    }

    /// Resizes every `src_h x src_w` plane in `input`.
    pub fn forward(&self, input: &[T], src_h: usize, src_w: usize) -> Vec<T> {
        let (dh, dw) = (self.rows.lo.len(), self.cols.lo.len());
        let planes = input.len() / (src_h * src_w);
        let mut out = Vec::with_capacity(planes * dh * dw);
        for p in input.chunks(src_h * src_w) {
            for y in 0..dh {
                let (r0, r1, fy) = (self.rows.lo[y], self.rows.hi[y], self.rows.frac[y]);
                let top = &p[r0 * src_w..(r0 + 1) * src_w];
                let bot = &p[r1 * src_w..(r1 + 1) * src_w];
                for x in 0..dw {
                    let (c0, c1, fx) = (self.cols.lo[x], self.cols.hi[x], self.cols.frac[x]);
                    let t = top[c0] * (T::one() - fx) + top[c1] * fx;
                    let b = bot[c0] * (T::one() - fx) + bot[c1] * fx;
                    out.push(t * (T::one() - fy) + b * fy);
                }
            }
        }
        out
    }

    /// Scatter-adds `grad_out` through the same bilinear weights.
    pub fn backward(&self, grad_out: &[T], src_h: usize, src_w: usize) -> Vec<T> {
        let (dh, dw) = (self.rows.lo.len(), self.cols.lo.len());
        let planes = grad_out.len() / (dh * dw);
        let mut grad = vec![T::zero(); planes * src_h * src_w];
        for (g, go) in grad.chunks_mut(src_h * src_w).zip(grad_out.chunks(dh * dw)) {
            for y in 0..dh {
                let (r0, r1, fy) = (self.rows.lo[y], self.rows.hi[y], self.rows.frac[y]);
                for x in 0..dw {
                    let (c0, c1, fx) = (self.cols.lo[x], self.cols.hi[x], self.cols.frac[x]);
                    let v = go[y * dw + x];
                    let top = v * (T::one() - fy);
                    let bot = v * fy;
                    g[r0 * src_w + c0] += top * (T::one() - fx);
                    g[r0 * src_w + c1] += top * fx;
                    g[r1 * src_w + c0] += bot * (T::one() - fx);
                    g[r1 * src_w + c1] += bot * fx;
                }
            }
        }
        grad
    }
}
