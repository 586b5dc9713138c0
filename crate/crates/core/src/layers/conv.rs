use crate::error::{shape_err, Result};
use crate::tensor::{gemm_rows, Shape, Tensor};

/// Square-kernel 2-D convolution parameters. Weight is `(Cout, Cin, K, K)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub padding: usize,
}

pub fn conv2d(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    conv2d_forward(x, &p.weight, p.bias.as_ref(), p.stride, p.padding)
}

/// `floor((size + 2·pad − k) / stride) + 1`, or `None` when the kernel does
/// not fit.
pub fn conv_out_size(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || size + 2 * pad < k {
        return None;
    }
    Some((size + 2 * pad - k) / stride + 1)
}

struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(x: &Shape, w: &Shape, bias: Option<&Tensor>, stride: usize, pad: usize) -> Result<Self> {
        let (xd, wd) = (x.dims(), w.dims());
        if xd.len() != 4 || wd.len() != 4 {
            return shape_err(format!("conv2d expects NCHW input and OIKK weight, got {x} and {w}"));
        }
        if wd[2] != wd[3] {
            return shape_err(format!("conv2d kernel must be square, got {w}"));
        }
        if xd[1] != wd[1] {
            return shape_err(format!("conv2d input has {} channels, weight expects {}", xd[1], wd[1]));
        }
        if let Some(b) = bias {
            if b.dims() != [wd[0]] {
                return shape_err(format!("conv2d bias {} does not match {} outputs", b.shape(), wd[0]));
            }
        }
        let k = wd[2];
        let (ho, wo) = match (conv_out_size(xd[2], k, stride, pad), conv_out_size(xd[3], k, stride, pad)) {
            (Some(a), Some(b)) => (a, b),
            _ => return shape_err(format!("conv2d kernel {k} stride {stride} pad {pad} does not fit {x}")),
        };
        Ok(Geometry {
            n: xd[0],
            cin: xd[1],
            h: xd[2],
            w: xd[3],
            cout: wd[0],
            k,
            ho,
            wo,
            stride,
            pad,
        })
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfolds one sample into `(Cin·K·K, Ho·Wo)`.
    fn im2col(&self, sample: &[f64], cols: &mut [f64]) {
        let (k, hw) = (self.k, self.cols());
        for ci in 0..self.cin {
            let plane = &sample[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for kh in 0..k {
                for kw in 0..k {
                    let row = (ci * k + kh) * k + kw;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    for oh in 0..self.ho {
                        let ih = (oh * self.stride + kh) as isize - self.pad as isize;
                        let out_row = &mut dst[oh * self.wo..(oh + 1) * self.wo];
                        if ih < 0 || ih >= self.h as isize {
                            out_row.fill(0.0);
                            continue;
                        }
                        let src = &plane[ih as usize * self.w..(ih as usize + 1) * self.w];
                        for (ow, o) in out_row.iter_mut().enumerate() {
                            let iw = (ow * self.stride + kw) as isize - self.pad as isize;
                            *o = if iw < 0 || iw >= self.w as isize { 0.0 } else { src[iw as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], sample: &mut [f64]) {
        let (k, hw) = (self.k, self.cols());
        for ci in 0..self.cin {
            let plane = &mut sample[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for kh in 0..k {
                for kw in 0..k {
                    let row = (ci * k + kh) * k + kw;
                    let src = &cols[row * hw..(row + 1) * hw];
                    for oh in 0..self.ho {
                        let ih = (oh * self.stride + kh) as isize - self.pad as isize;
                        if ih < 0 || ih >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[ih as usize * self.w..(ih as usize + 1) * self.w];
                        for ow in 0..self.wo {
                            let iw = (ow * self.stride + kw) as isize - self.pad as isize;
                            if iw >= 0 && iw < self.w as isize {
                                dst[iw as usize] += src[oh * self.wo + ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation with zero padding. Samples are processed independently.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
    let g = Geometry::new(x.shape(), w.shape(), bias, stride, pad)?;
    let (rows, hw) = (g.rows(), g.cols());
    let in_size = g.cin * g.h * g.w;
    let out_size = g.cout * hw;
    let mut out = vec![0.0; g.n * out_size];
    let mut cols = vec![0.0; rows * hw];
    for n in 0..g.n {
        g.im2col(&x.data()[n * in_size..(n + 1) * in_size], &mut cols);
        let dst = &mut out[n * out_size..(n + 1) * out_size];
        gemm_rows(w.data(), &cols, dst, g.cout, rows, hw);
        if let Some(b) = bias {
            for (co, plane) in dst.chunks_exact_mut(hw).enumerate() {
                let bv = b.data()[co];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Tensor::from_vec(&[g.n, g.cout, g.ho, g.wo], out)
}

/// Returns `(dx, dw, db)` for upstream gradient `gy`.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let g = Geometry::new(x.shape(), w.shape(), None, stride, pad)?;
    if gy.dims() != [g.n, g.cout, g.ho, g.wo] {
        return shape_err(format!("conv2d upstream gradient has shape {}", gy.shape()));
    }
    let (rows, hw) = (g.rows(), g.cols());
    let in_size = g.cin * g.h * g.w;
    let out_size = g.cout * hw;
    let wd = w.data();
    let mut dx = vec![0.0; x.numel()];
    let mut dw = vec![0.0; w.numel()];
    let mut db = vec![0.0; g.cout];
    let mut cols = vec![0.0; rows * hw];
    let mut dcols = vec![0.0; rows * hw];
    for n in 0..g.n {
        let gout = &gy.data()[n * out_size..(n + 1) * out_size];
        g.im2col(&x.data()[n * in_size..(n + 1) * in_size], &mut cols);
        for co in 0..g.cout {
            let grow = &gout[co * hw..(co + 1) * hw];
            db[co] += grow.iter().sum::<f64>();
            let dwrow = &mut dw[co * rows..(co + 1) * rows];
            for (r, d) in dwrow.iter_mut().enumerate() {
                let crow = &cols[r * hw..(r + 1) * hw];
                *d += grow.iter().zip(crow).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        dcols.fill(0.0);
        for r in 0..rows {
            let drow = &mut dcols[r * hw..(r + 1) * hw];
            for co in 0..g.cout {
                let wv = wd[co * rows + r];
                if wv == 0.0 {
                    continue;
                }
                for (d, &gv) in drow.iter_mut().zip(&gout[co * hw..(co + 1) * hw]) {
                    *d += wv * gv;
                }
            }
        }
        g.col2im(&dcols, &mut dx[n * in_size..(n + 1) * in_size]);
    }
    Ok((
        Tensor::from_vec(x.dims(), dx)?,
        Tensor::from_vec(w.dims(), dw)?,
        Tensor::from_vec(&[g.cout], db)?,
    ))
}
