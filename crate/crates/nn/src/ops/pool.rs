//! 2×2 stride-2 pooling. Odd extents are padded on the right/bottom by
//! replicating the last row/column, so the output extent is `ceil(n/2)`.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn pool_out_extent(n: usize) -> usize {
    n.div_ceil(2)
}

/// The four source indices (row-major window order) for pooled cell (oy, ox).
#[inline]
fn window(oy: usize, ox: usize, h: usize, w: usize) -> [usize; 4] {
    let y0 = 2 * oy;
    let x0 = 2 * ox;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1]
}

fn pooled<T: Scalar>(input: &Tensor<T>, reduce: impl Fn([T; 4]) -> T) -> Result<Tensor<T>> {
    let (c, h, w) = input.dims3()?;
    let (oh, ow) = (pool_out_extent(h), pool_out_extent(w));
    let mut out = Vec::with_capacity(c * oh * ow);
    for plane in input.data().chunks(h * w) {
        for oy in 0..oh {
            for ox in 0..ow {
                out.push(reduce(window(oy, ox, h, w).map(|i| plane[i])));
            }
        }
    }
    Tensor::from_vec(&[c, oh, ow], out)
}

pub fn maxpool2_forward<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    pooled(input, |v| v.into_iter().fold(v[0], |m, x| if x > m { x } else { m }))
}

pub fn avgpool2_forward<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let quarter = T::of_f64(0.25);
    pooled(input, |v| (v[0] + v[1] + v[2] + v[3]) * quarter)
}

fn check_grad<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (c, h, w) = input.dims3()?;
    let want = [c, pool_out_extent(h), pool_out_extent(w)];
    if grad_out.shape() != want {
        return crate::error::dim_err(format!("pool grad shape {:?}, expected {want:?}", grad_out.shape()));
    }
    Ok((c, h, w))
}

/// Routes each pooled gradient to the first maximal element of its window.
pub fn maxpool2_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, h, w) = check_grad(input, grad_out)?;
    let (oh, ow) = (pool_out_extent(h), pool_out_extent(w));
    let mut grad = Tensor::zeros(input.shape());
    let go = grad_out.data();
    for (ci, (plane, gplane)) in input.data().chunks(h * w).zip(grad.data_mut().chunks_mut(h * w)).enumerate() {
        for oy in 0..oh {
            for ox in 0..ow {
                let idx = window(oy, ox, h, w);
                let mut best = idx[0];
                for &i in &idx[1..] {
                    if plane[i] > plane[best] {
                        best = i;
                    }
                }
                gplane[best] += go[(ci * oh + oy) * ow + ox];
            }
        }
    }
    Ok(grad)
}

pub fn avgpool2_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, h, w) = check_grad(input, grad_out)?;
    let (oh, ow) = (pool_out_extent(h), pool_out_extent(w));
    let quarter = T::of_f64(0.25);
    let mut grad = Tensor::zeros(input.shape());
    let go = grad_out.data();
    for (ci, gplane) in grad.data_mut().chunks_mut(h * w).enumerate() {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = go[(ci * oh + oy) * ow + ox] * quarter;
                for i in window(oy, ox, h, w) {
                    gplane[i] += g;
                }
            }
        }
    }
    Ok(grad)
}
