use crate::error::{dim_err, Result};
use crate::scalar::{matmul, Scalar};
use crate::tensor::Tensor;

/// `floor((n + 2p − k)/s) + 1`, or an error when the window does not fit.
pub fn conv_out_extent(n: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return dim_err("kernel and stride must be positive");
    }
    let span = n + 2 * padding;
    if span < kernel {
        return dim_err(format!("kernel {kernel} does not fit extent {n} with padding {padding}"));
    }
    Ok((span - kernel) / stride + 1)
}

/// `(n − 1)·s − 2p + k`, or an error when that is not positive.
pub fn deconv_out_extent(n: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 || n == 0 {
        return dim_err("kernel, stride and input extent must be positive");
    }
    let full = (n - 1) * stride + kernel;
    if full <= 2 * padding {
        return dim_err(format!("transposed convolution of extent {n} (k={kernel}, s={stride}, p={padding}) is empty"));
    }
    Ok(full - 2 * padding)
}

#[derive(Clone, Copy)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    /// Source pixel for output position `o` and kernel tap `t`, if in bounds.
    #[inline]
    fn source(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + t) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

fn im2col<T: Scalar>(input: &[T], g: &Geometry) -> Vec<T> {
    let l = g.cols();
    let mut cols = vec![T::zero(); g.rows() * l];
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let dst = &mut cols[row * l..(row + 1) * l];
                for oy in 0..g.out_h {
                    let Some(iy) = g.source(oy, ky, g.height) else { continue };
                    for ox in 0..g.out_w {
                        if let Some(ix) = g.source(ox, kx, g.width) {
                            dst[oy * g.out_w + ox] = plane[iy * g.width + ix];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &Geometry, out: &mut [T]) {
    let l = g.cols();
    for c in 0..g.channels {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let src = &cols[row * l..(row + 1) * l];
                for oy in 0..g.out_h {
                    let Some(iy) = g.source(oy, ky, g.height) else { continue };
                    for ox in 0..g.out_w {
                        if let Some(ix) = g.source(ox, kx, g.width) {
                            plane[iy * g.width + ix] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad<T: Scalar>(grad_out: &[T], channels: usize, plane: usize) -> Vec<T> {
    (0..channels).map(|c| grad_out[c * plane..(c + 1) * plane].iter().copied().sum()).collect()
}

fn weight_dims<T: Scalar>(weight: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match weight.shape() {
        &[a, b, k, k2] if k == k2 => Ok((a, b, k)),
        s => dim_err(format!("expected a square 4-d kernel, got {s:?}")),
    }
}

fn check_bias<T: Scalar>(bias: &Tensor<T>, channels: usize) -> Result<()> {
    if bias.shape() != [channels] {
        return dim_err(format!("bias shape {:?} does not match {channels} channels", bias.shape()));
    }
    Ok(())
}

/// Gradients of a (transposed) convolution with respect to its three inputs.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

fn conv_geometry<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Geometry, usize)> {
    let (c, h, w) = input.dims3()?;
    let (out_c, in_c, k) = weight_dims(weight)?;
    if in_c != c {
        return dim_err(format!("kernel expects {in_c} input channels, input has {c}"));
    }
    let g = Geometry {
        channels: c,
        height: h,
        width: w,
        kernel: k,
        stride,
        padding,
        out_h: conv_out_extent(h, k, stride, padding)?,
        out_w: conv_out_extent(w, k, stride, padding)?,
    };
    Ok((g, out_c))
}

/// Cross-correlation of a `C_in×H×W` input with `C_out×C_in×k×k` weights.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (g, out_c) = conv_geometry(input, weight, stride, padding)?;
    check_bias(bias, out_c)?;
    let l = g.cols();
    let mut out = vec![T::zero(); out_c * l];
    if g.is_pointwise() {
        matmul(out_c, g.rows(), l, weight.data(), false, input.data(), false, &mut out, false);
    } else {
        let cols = im2col(input.data(), &g);
        matmul(out_c, g.rows(), l, weight.data(), false, &cols, false, &mut out, false);
    }
    add_bias(&mut out, bias.data(), l);
    Tensor::from_vec(&[out_c, g.out_h, g.out_w], out)
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (g, out_c) = conv_geometry(input, weight, stride, padding)?;
    if grad_out.shape() != [out_c, g.out_h, g.out_w] {
        return dim_err(format!("conv grad shape {:?}, expected {:?}", grad_out.shape(), [out_c, g.out_h, g.out_w]));
    }
    let l = g.cols();
    let rows = g.rows();
    let go = grad_out.data();

    let mut grad_w = vec![T::zero(); out_c * rows];
    let mut grad_in = vec![T::zero(); input.len()];
    if g.is_pointwise() {
        matmul(out_c, l, rows, go, false, input.data(), true, &mut grad_w, false);
        matmul(rows, out_c, l, weight.data(), true, go, false, &mut grad_in, false);
    } else {
        let cols = im2col(input.data(), &g);
        matmul(out_c, l, rows, go, false, &cols, true, &mut grad_w, false);
        let mut grad_cols = vec![T::zero(); rows * l];
        matmul(rows, out_c, l, weight.data(), true, go, false, &mut grad_cols, false);
        col2im(&grad_cols, &g, &mut grad_in);
    }
    Ok(ConvGrads {
        input: Tensor::from_vec(input.shape(), grad_in)?,
        weight: Tensor::from_vec(weight.shape(), grad_w)?,
        bias: Tensor::from_vec(&[out_c], bias_grad(go, out_c, l))?,
    })
}

/// Geometry of the convolution whose adjoint is the requested transposed
/// convolution: its "input" is the deconv output.
fn deconv_geometry<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Geometry, usize)> {
    let (c, h, w) = input.dims3()?;
    let (in_c, out_c, k) = weight_dims(weight)?;
    if in_c != c {
        return dim_err(format!("kernel expects {in_c} input channels, input has {c}"));
    }
    let g = Geometry {
        channels: out_c,
        height: deconv_out_extent(h, k, stride, padding)?,
        width: deconv_out_extent(w, k, stride, padding)?,
        kernel: k,
        stride,
        padding,
        out_h: h,
        out_w: w,
    };
    Ok((g, in_c))
}

/// Transposed convolution: every input element scatters `value·kernel` into
/// the output. Weights are laid out `C_in×C_out×k×k`.
pub fn deconv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (g, in_c) = deconv_geometry(input, weight, stride, padding)?;
    check_bias(bias, g.channels)?;
    let l = g.cols();
    let rows = g.rows();
    let mut cols = vec![T::zero(); rows * l];
    matmul(rows, in_c, l, weight.data(), true, input.data(), false, &mut cols, false);
    let plane = g.height * g.width;
    let mut out = vec![T::zero(); g.channels * plane];
    col2im(&cols, &g, &mut out);
    add_bias(&mut out, bias.data(), plane);
    Tensor::from_vec(&[g.channels, g.height, g.width], out)
}

pub fn deconv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (g, in_c) = deconv_geometry(input, weight, stride, padding)?;
    if grad_out.shape() != [g.channels, g.height, g.width] {
        return dim_err(format!(
            "deconv grad shape {:?}, expected {:?}",
            grad_out.shape(),
            [g.channels, g.height, g.width]
        ));
    }
    let l = g.cols();
    let rows = g.rows();
    let grad_cols = im2col(grad_out.data(), &g);
    let mut grad_in = vec![T::zero(); in_c * l];
    matmul(in_c, rows, l, weight.data(), false, &grad_cols, false, &mut grad_in, false);
    let mut grad_w = vec![T::zero(); in_c * rows];
    matmul(in_c, l, rows, input.data(), false, &grad_cols, true, &mut grad_w, false);
    Ok(ConvGrads {
        input: Tensor::from_vec(input.shape(), grad_in)?,
        weight: Tensor::from_vec(weight.shape(), grad_w)?,
        bias: Tensor::from_vec(&[g.channels], bias_grad(grad_out.data(), g.channels, g.height * g.width))?,
    })
}
