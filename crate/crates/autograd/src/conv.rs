//! im2col-based 2-D convolution kernels.

use crate::error::{Result, TensorError};
use crate::tensor::{gemm, gemm_nt, gemm_tn, Tensor};

struct Geometry {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    out_channels: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
    padding: usize,
}

impl Geometry {
    fn new(x: &Tensor, w: &Tensor, stride: usize, padding: usize) -> Result<Self> {
        let shape_err = || TensorError::Shape {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        };
        if x.rank() != 4 || w.rank() != 4 || stride == 0 {
            return Err(shape_err());
        }
        let (batch, channels, height, width) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (out_channels, wc, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        if wc != channels {
            return Err(shape_err());
        }
        let (ph, pw) = (height + 2 * padding, width + 2 * padding);
        if kh == 0 || kw == 0 || kh > ph || kw > pw {
            return Err(shape_err());
        }
        Ok(Self {
            batch,
            channels,
            height,
            width,
            out_channels,
            kh,
            kw,
            out_h: (ph - kh) / stride + 1,
            out_w: (pw - kw) / stride + 1,
            stride,
            padding,
        })
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source pixel for column row `r` at output position `(oy, ox)`, if it
    /// lies inside the unpadded input.
    fn source(&self, r: usize, oy: usize, ox: usize) -> Option<usize> {
        let c = r / (self.kh * self.kw);
        let ky = (r / self.kw) % self.kh;
        let kx = r % self.kw;
        let iy = (oy * self.stride + ky).checked_sub(self.padding)?;
        let ix = (ox * self.stride + kx).checked_sub(self.padding)?;
        (iy < self.height && ix < self.width).then(|| (c * self.height + iy) * self.width + ix)
    }

    /// `[C·kh·kw × Ho·Wo]` patch matrix for one image.
    fn im2col(&self, img: &[f64]) -> Vec<f64> {
        let p = self.positions();
        let mut cols = vec![0.0; self.patch_len() * p];
        for r in 0..self.patch_len() {
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    if let Some(src) = self.source(r, oy, ox) {
                        cols[r * p + oy * self.out_w + ox] = img[src];
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], img: &mut [f64]) {
        let p = self.positions();
        for r in 0..self.patch_len() {
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    if let Some(src) = self.source(r, oy, ox) {
                        img[src] += cols[r * p + oy * self.out_w + ox];
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let geo = Geometry::new(x, w, stride, padding)?;
    if let Some(b) = b {
        if b.shape() != [geo.out_channels] {
            return Err(TensorError::Shape {
                op: "conv2d bias",
                lhs: w.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
    }
    let img_len = geo.channels * geo.height * geo.width;
    let p = geo.positions();
    let mut out = Vec::with_capacity(geo.batch * geo.out_channels * p);
    for n in 0..geo.batch {
        let cols = geo.im2col(&x.data()[n * img_len..(n + 1) * img_len]);
        let mut y = gemm(w.data(), &cols, geo.out_channels, geo.patch_len(), p);
        if let Some(b) = b {
            for (o, row) in y.chunks_mut(p).enumerate() {
                let bo = b.data()[o];
                row.iter_mut().for_each(|v| *v += bo);
            }
        }
        out.extend(y);
    }
    Tensor::new(&[geo.batch, geo.out_channels, geo.out_h, geo.out_w], out)
}

pub(crate) struct ConvGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Tensor,
}

pub(crate) fn conv2d_backward(x: &Tensor, w: &Tensor, g: &Tensor, stride: usize, padding: usize) -> ConvGrads {
    let geo = Geometry::new(x, w, stride, padding).expect("geometry validated in forward");
    let img_len = geo.channels * geo.height * geo.width;
    let p = geo.positions();
    let (o, k) = (geo.out_channels, geo.patch_len());
    let mut dx = vec![0.0; x.numel()];
    let mut dw = vec![0.0; w.numel()];
    let mut db = vec![0.0; o];
    for n in 0..geo.batch {
        let gn = &g.data()[n * o * p..(n + 1) * o * p];
        let cols = geo.im2col(&x.data()[n * img_len..(n + 1) * img_len]);
        for (acc, v) in dw.iter_mut().zip(gemm_nt(gn, &cols, o, p, k)) {
            *acc += v;
        }
        for (oc, row) in gn.chunks(p).enumerate() {
            db[oc] += row.iter().sum::<f64>();
        }
        let dcols = gemm_tn(w.data(), gn, o, k, p);
        geo.col2im(&dcols, &mut dx[n * img_len..(n + 1) * img_len]);
    }
    ConvGrads {
        dx: Tensor::from_vec(x.shape(), dx),
        dw: Tensor::from_vec(w.shape(), dw),
        db: Tensor::from_vec(&[o], db),
    }
}
