//! Loop-nest references for the convolution kernels.

use eyemark::Tensor;

pub fn conv_oracle(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(vec![n, cout, ho, wo]);
    for b in 0..n {
        for o in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = 0.0;
                    for c in 0..cin {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (oy * stride + i) as i64 - pad as i64;
                                let ix = (ox * stride + j) as i64 - pad as i64;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                    continue;
                                }
                                let xv = x.data()[((b * cin + c) * h + iy as usize) * w + ix as usize];
                                let kv = k.data()[((o * cin + c) * kh + i) * kw + j];
                                s += xv * kv;
                            }
                        }
                    }
                    out.data_mut()[((b * cout + o) * ho + oy) * wo + ox] = s;
                }
            }
        }
    }
    out
}

pub fn depthwise_oracle(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw) = (k.shape()[2], k.shape()[3]);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(vec![n, c, ho, wo]);
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = 0.0;
                    for i in 0..kh {
                        for j in 0..kw {
                            let iy = (oy * stride + i) as i64 - pad as i64;
                            let ix = (ox * stride + j) as i64 - pad as i64;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                continue;
                            }
                            s += x.data()[((b * c + ch) * h + iy as usize) * w + ix as usize]
                                * k.data()[(ch * kh + i) * kw + j];
                        }
                    }
                    out.data_mut()[((b * c + ch) * ho + oy) * wo + ox] = s;
                }
            }
        }
    }
    out
}
