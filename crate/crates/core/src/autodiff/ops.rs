use super::{numel, ConvGeom, Op, Tensor, Unary};
use std::rc::Rc;

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    assert_eq!(
        a.shape(),
        b.shape(),
        "elementwise op on mismatched shapes {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Source strides of `from` aligned right against `to`; zero on broadcast axes.
fn broadcast_strides(from: &[usize], to: &[usize]) -> Vec<usize> {
    assert!(
        from.len() <= to.len(),
        "cannot broadcast {:?} to {:?}",
        from,
        to
    );
    let off = to.len() - from.len();
    let mut strides = vec![0; to.len()];
    let mut stride = 1;
    for i in (0..from.len()).rev() {
        let d = from[i];
        assert!(
            d == to[off + i] || d == 1,
            "cannot broadcast {:?} to {:?}",
            from,
            to
        );
        strides[off + i] = if d == 1 { 0 } else { stride };
        stride *= d;
    }
    strides
}

/// Calls `f(out_index, src_index)` for every element of the broadcast result.
fn for_each_broadcast(from: &[usize], to: &[usize], mut f: impl FnMut(usize, usize)) {
    let total = numel(to);
    if total == 0 {
        return;
    }
    let strides = broadcast_strides(from, to);
    let nd = to.len();
    if nd == 0 {
        f(0, 0);
        return;
    }
    let last = to[nd - 1];
    let last_stride = strides[nd - 1];
    let mut counter = vec![0usize; nd];
    let mut base = 0usize;
    let mut out = 0usize;
    while out < total {
        for j in 0..last {
            f(out + j, base + j * last_stride);
        }
        out += last;
        // advance the counter over the leading axes
        let mut axis = nd - 1;
        loop {
            if axis == 0 {
                break;
            }
            axis -= 1;
            counter[axis] += 1;
            base += strides[axis];
            if counter[axis] < to[axis] {
                break;
            }
            base -= strides[axis] * counter[axis];
            counter[axis] = 0;
        }
    }
}

fn matmul_dims(a: &[usize], b: &[usize], ta: bool, tb: bool) -> (usize, usize, usize) {
    assert!(
        a.len() == 2 && b.len() == 2,
        "matmul expects 2-D operands, got {:?} and {:?}",
        a,
        b
    );
    let (m, ka) = if ta { (a[1], a[0]) } else { (a[0], a[1]) };
    let (kb, n) = if tb { (b[1], b[0]) } else { (b[0], b[1]) };
    assert_eq!(ka, kb, "matmul inner dims differ: {:?} x {:?} (ta={ta}, tb={tb})", a, b);
    (m, ka, n)
}

pub(crate) fn gemm(a: &[f64], ash: &[usize], b: &[f64], bsh: &[usize], ta: bool, tb: bool) -> Vec<f64> {
    let (m, k, n) = matmul_dims(ash, bsh, ta, tb);
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    let (rsa, csa) = if ta { (1, ash[1] as isize) } else { (ash[1] as isize, 1) };
    let (rsb, csb) = if tb { (1, bsh[1] as isize) } else { (bsh[1] as isize, 1) };
    // SAFETY: strides and dimensions describe exactly the row-major buffers
    // `a` (ash), `b` (bsh) and `c` (m x n), all of which are live and sized
    // accordingly; `c` does not alias the inputs.
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
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

fn last_dim(shape: &[usize]) -> usize {
    *shape.last().expect("operation needs at least one axis")
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Tensor {
        let data = zip_map(self, other, |a, b| a + b);
        Tensor::from_op(data, self.shape().to_vec(), Op::Add(self.clone(), other.clone()))
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        let data = zip_map(self, other, |a, b| a - b);
        Tensor::from_op(data, self.shape().to_vec(), Op::Sub(self.clone(), other.clone()))
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        let data = zip_map(self, other, |a, b| a * b);
        Tensor::from_op(data, self.shape().to_vec(), Op::Mul(self.clone(), other.clone()))
    }

    pub fn div(&self, other: &Tensor) -> Tensor {
        let data = zip_map(self, other, |a, b| a / b);
        Tensor::from_op(data, self.shape().to_vec(), Op::Div(self.clone(), other.clone()))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&self, scale: f64, shift: f64) -> Tensor {
        let data = self.data().iter().map(|&x| scale * x + shift).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Affine(self.clone(), scale))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.affine(c, 0.0)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.affine(1.0, c)
    }

    pub fn neg(&self) -> Tensor {
        self.affine(-1.0, 0.0)
    }

    pub fn square(&self) -> Tensor {
        self.mul(self)
    }

    fn unary(&self, kind: Unary) -> Tensor {
        let f: fn(f64) -> f64 = match kind {
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
            Unary::Sigmoid => sigmoid,
            Unary::Tanh => f64::tanh,
            Unary::Softplus => softplus,
            Unary::Sqrt => f64::sqrt,
        };
        let data = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Unary(self.clone(), kind))
    }

    pub fn exp(&self) -> Tensor {
        self.unary(Unary::Exp)
    }

    pub fn ln(&self) -> Tensor {
        self.unary(Unary::Log)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(Unary::Sigmoid)
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(Unary::Tanh)
    }

    pub fn softplus(&self) -> Tensor {
        self.unary(Unary::Softplus)
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary(Unary::Sqrt)
    }

    /// Elementwise product with a constant mask.
    pub fn mask(&self, mask: Rc<Vec<f64>>) -> Tensor {
        assert_eq!(mask.len(), self.numel());
        let data = self.data().iter().zip(mask.iter()).map(|(x, m)| x * m).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Mask(self.clone(), mask))
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        let mask: Vec<f64> = self
            .data()
            .iter()
            .map(|&x| if x > 0.0 { 1.0 } else { slope })
            .collect();
        self.mask(Rc::new(mask))
    }

    pub fn relu(&self) -> Tensor {
        self.leaky_relu(0.0)
    }

    /// Clamp into `[lo, hi]`; the gradient is passed through only inside the range.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        let mask: Vec<f64> = self
            .data()
            .iter()
            .map(|&x| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 })
            .collect();
        let data: Vec<f64> = self.data().iter().map(|&x| x.clamp(lo, hi)).collect();
        // value is the clamped input; the graph edge behaves like the mask
        let masked = self.mask(Rc::new(mask));
        let offset: Vec<f64> = data.iter().zip(masked.data()).map(|(c, m)| c - m).collect();
        masked.add(&Tensor::new(offset, self.shape()))
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        self.matmul_t(other, false, false)
    }

    /// `op(self) @ op(other)` where `op` optionally transposes a 2-D operand.
    pub fn matmul_t(&self, other: &Tensor, ta: bool, tb: bool) -> Tensor {
        let (m, _, n) = matmul_dims(self.shape(), other.shape(), ta, tb);
        let data = gemm(self.data(), self.shape(), other.data(), other.shape(), ta, tb);
        Tensor::from_op(data, vec![m, n], Op::MatMul(self.clone(), other.clone(), ta, tb))
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(
            numel(shape),
            self.numel(),
            "cannot reshape {:?} into {:?}",
            self.shape(),
            shape
        );
        Tensor(Rc::new(super::Node {
            shape: shape.to_vec(),
            data: Rc::clone(&self.0.data),
            requires_grad: self.requires_grad() && super::grad_enabled(),
            op: if self.requires_grad() && super::grad_enabled() {
                Op::Reshape(self.clone())
            } else {
                Op::Leaf
            },
        }))
    }

    /// Numpy-style broadcast (right-aligned, size-1 axes expand).
    pub fn broadcast_to(&self, shape: &[usize]) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let mut out = vec![0.0; numel(shape)];
        let src = self.data();
        for_each_broadcast(self.shape(), shape, |o, s| out[o] = src[s]);
        Tensor::from_op(out, shape.to_vec(), Op::Broadcast(self.clone()))
    }

    /// Sums over the axes that [`Tensor::broadcast_to`] would expand.
    pub fn sum_to(&self, shape: &[usize]) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let mut out = vec![0.0; numel(shape)];
        let src = self.data();
        for_each_broadcast(shape, self.shape(), |o, s| out[s] += src[o]);
        Tensor::from_op(out, shape.to_vec(), Op::SumTo(self.clone()))
    }

    pub fn sum(&self) -> Tensor {
        self.sum_to(&[])
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Row sums of a 2-D tensor, shape `[rows, 1]`.
    pub fn sum_rows(&self) -> Tensor {
        assert_eq!(self.shape().len(), 2);
        self.sum_to(&[self.shape()[0], 1])
    }

    pub fn im2col(&self, kernel: usize) -> Tensor {
        let sh = self.shape();
        assert_eq!(sh.len(), 4, "im2col expects NHWC input, got {:?}", sh);
        let geom = ConvGeom {
            batch: sh[0],
            height: sh[1],
            width: sh[2],
            channels: sh[3],
            kernel,
        };
        let data = im2col_forward(self.data(), geom);
        Tensor::from_op(data, geom.cols_shape().to_vec(), Op::Im2Col(self.clone(), geom))
    }

    pub(crate) fn col2im(&self, geom: ConvGeom) -> Tensor {
        assert_eq!(self.shape(), geom.cols_shape());
        let data = col2im_forward(self.data(), geom);
        Tensor::from_op(data, geom.image_shape().to_vec(), Op::Col2Im(self.clone(), geom))
    }

    /// Nearest-neighbour 2x upsampling of an NHWC tensor.
    pub fn upsample2(&self) -> Tensor {
        let sh = self.shape();
        assert_eq!(sh.len(), 4);
        let (b, h, w, c) = (sh[0], sh[1], sh[2], sh[3]);
        let src = self.data();
        let mut out = vec![0.0; b * 4 * h * w * c];
        for bi in 0..b {
            for y in 0..2 * h {
                for x in 0..2 * w {
                    let s = ((bi * h + y / 2) * w + x / 2) * c;
                    let o = ((bi * 2 * h + y) * 2 * w + x) * c;
                    out[o..o + c].copy_from_slice(&src[s..s + c]);
                }
            }
        }
        Tensor::from_op(out, vec![b, 2 * h, 2 * w, c], Op::Upsample(self.clone()))
    }

    /// Sum over non-overlapping 2x2 windows of an NHWC tensor.
    pub fn sum_pool2(&self) -> Tensor {
        let sh = self.shape();
        assert_eq!(sh.len(), 4);
        assert!(sh[1] % 2 == 0 && sh[2] % 2 == 0, "odd spatial size {:?}", sh);
        let (b, h, w, c) = (sh[0], sh[1] / 2, sh[2] / 2, sh[3]);
        let src = self.data();
        let mut out = vec![0.0; b * h * w * c];
        for bi in 0..b {
            for y in 0..2 * h {
                for x in 0..2 * w {
                    let s = ((bi * 2 * h + y) * 2 * w + x) * c;
                    let o = ((bi * h + y / 2) * w + x / 2) * c;
                    for ch in 0..c {
                        out[o + ch] += src[s + ch];
                    }
                }
            }
        }
        Tensor::from_op(out, vec![b, h, w, c], Op::SumPool(self.clone()))
    }

    pub fn avg_pool2(&self) -> Tensor {
        self.sum_pool2().scale(0.25)
    }

    /// Concatenation along the last axis.
    pub fn concat(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty());
        let lead = &parts[0].shape()[..parts[0].shape().len() - 1];
        for p in parts {
            assert_eq!(
                &p.shape()[..p.shape().len() - 1],
                lead,
                "concat leading dims differ"
            );
        }
        let widths: Vec<usize> = parts.iter().map(|p| last_dim(p.shape())).collect();
        let total: usize = widths.iter().sum();
        let rows = numel(lead);
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Tensor::from_op(out, shape, Op::Concat(parts.to_vec()))
    }

    /// `[.., start..start+len]` along the last axis.
    pub fn slice_last(&self, start: usize, len: usize) -> Tensor {
        let w = last_dim(self.shape());
        assert!(start + len <= w, "slice {start}+{len} exceeds width {w}");
        let rows = self.numel() / w.max(1);
        let src = self.data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * w + start..r * w + start + len]);
        }
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        Tensor::from_op(out, shape, Op::Slice(self.clone(), start))
    }

    /// Zero-pads the last axis to `width`, placing `self` at `start`.
    pub(crate) fn pad_last(&self, start: usize, width: usize) -> Tensor {
        let len = last_dim(self.shape());
        assert!(start + len <= width);
        let rows = self.numel() / len.max(1);
        let src = self.data();
        let mut out = vec![0.0; rows * width];
        for r in 0..rows {
            out[r * width + start..r * width + start + len].copy_from_slice(&src[r * len..(r + 1) * len]);
        }
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = width;
        Tensor::from_op(out, shape, Op::Pad(self.clone(), start))
    }

    /// Row-wise log-softmax of a 2-D tensor.
    pub fn log_softmax(&self) -> Tensor {
        let sh = self.shape();
        assert_eq!(sh.len(), 2);
        let (rows, cols) = (sh[0], sh[1]);
        let maxes: Vec<f64> = (0..rows)
            .map(|r| {
                self.data()[r * cols..(r + 1) * cols]
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let shift = Tensor::new(maxes, &[rows, 1]).broadcast_to(sh);
        let shifted = self.sub(&shift);
        let lse = shifted.exp().sum_rows().ln().broadcast_to(sh);
        shifted.sub(&lse)
    }
}

pub(crate) fn im2col_forward(src: &[f64], g: ConvGeom) -> Vec<f64> {
    let (b, h, w, c, k) = (g.batch, g.height, g.width, g.channels, g.kernel);
    let pad = g.pad() as isize;
    let row_len = k * k * c;
    let mut out = vec![0.0; b * h * w * row_len];
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let row = ((bi * h + y) * w + x) * row_len;
                for ky in 0..k {
                    let iy = y as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = x as isize + kx as isize - pad;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let s = ((bi * h + iy as usize) * w + ix as usize) * c;
                        let o = row + (ky * k + kx) * c;
                        out[o..o + c].copy_from_slice(&src[s..s + c]);
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn col2im_forward(cols: &[f64], g: ConvGeom) -> Vec<f64> {
    let (b, h, w, c, k) = (g.batch, g.height, g.width, g.channels, g.kernel);
    let pad = g.pad() as isize;
    let row_len = k * k * c;
    let mut out = vec![0.0; b * h * w * c];
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let row = ((bi * h + y) * w + x) * row_len;
                for ky in 0..k {
                    let iy = y as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = x as isize + kx as isize - pad;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let o = ((bi * h + iy as usize) * w + ix as usize) * c;
                        let s = row + (ky * k + kx) * c;
                        for ch in 0..c {
                            out[o + ch] += cols[s + ch];
                        }
                    }
                }
            }
        }
    }
    out
}
