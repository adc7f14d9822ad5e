//! Direct N-dimensional (N = 1, 2, 3) cross-correlation.
//!
//! Every case is lifted to three spatial axes with unit extents on the
//! missing leading axes, so one loop nest serves all ranks.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub dims: usize,
    pub batch: usize,
    pub batched: bool,
    pub c_in: usize,
    pub c_out: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    output: [usize; 3],
}

/// `floor((len + 2 padding - kernel) / stride) + 1`, or `None` when the
/// padded input is shorter than the kernel.
pub fn conv_output_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || len + 2 * padding < kernel {
        return None;
    }
    Some((len + 2 * padding - kernel) / stride + 1)
}

impl ConvGeometry {
    pub(crate) fn infer(input: &[usize], weight: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if !(3..=5).contains(&weight.len()) {
            return Err(Error::dim(format!(
                "conv weight must be [C_out, C_in, *kernel], got {weight:?}"
            )));
        }
        let dims = weight.len() - 2;
        let (batch, batched, spatial) = if input.len() == dims + 2 {
            (input[0], true, &input[1..])
        } else if input.len() == dims + 1 {
            (1, false, input)
        } else {
            return Err(Error::dim(format!("{dims}-d conv input has shape {input:?}")));
        };
        if spatial[0] != weight[1] {
            return Err(Error::dim(format!(
                "conv input has {} channels, weight expects {}",
                spatial[0], weight[1]
            )));
        }
        let mut g = ConvGeometry {
            dims,
            batch,
            batched,
            c_in: weight[1],
            c_out: weight[0],
            input: [1; 3],
            kernel: [1; 3],
            stride: [1; 3],
            pad: [0; 3],
            output: [1; 3],
        };
        for a in 0..dims {
            let ax = 3 - dims + a;
            g.input[ax] = spatial[1 + a];
            g.kernel[ax] = weight[2 + a];
            g.stride[ax] = stride;
            g.pad[ax] = padding;
            g.output[ax] = conv_output_len(spatial[1 + a], weight[2 + a], stride, padding).ok_or_else(|| {
                Error::dim(format!(
                    "conv axis {a}: length {} with kernel {} stride {stride} padding {padding} has no output",
                    spatial[1 + a],
                    weight[2 + a]
                ))
            })?;
        }
        Ok(g)
    }

    pub fn output_shape(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.dims + 2);
        if self.batched {
            s.push(self.batch);
        }
        s.push(self.c_out);
        s.extend_from_slice(&self.output[3 - self.dims..]);
        s
    }

    fn in_plane(&self) -> usize {
        self.input.iter().product()
    }

    fn out_plane(&self) -> usize {
        self.output.iter().product()
    }

    fn k_size(&self) -> usize {
        self.kernel.iter().product()
    }
}

/// Output indices `o` in `lo..hi` for which `o * s + k - p` lies in `0..len`.
#[inline]
fn valid_range(len: usize, out: usize, k: usize, s: usize, p: usize) -> (usize, usize) {
    let (len, out, k, s, p) = (len as i64, out as i64, k as i64, s as i64, p as i64);
    let lo = if p > k { (p - k + s - 1) / s } else { 0 };
    let hi_incl = (len - 1 + p - k).div_euclid(s);
    let hi = (hi_incl + 1).clamp(0, out);
    (lo.min(hi) as usize, hi as usize)
}

/// Calls `f(out_offset, in_offset, count)` for every contiguous output run
/// touched by kernel tap `(kz, ky, kx)`. Input elements for a run are spaced
/// by `stride[2]`.
#[inline]
fn for_each_run(g: &ConvGeometry, kz: usize, ky: usize, kx: usize, mut f: impl FnMut(usize, usize, usize)) {
    let [iz_n, iy_n, ix_n] = g.input;
    let [oz_n, oy_n, ox_n] = g.output;
    let (z0, z1) = valid_range(iz_n, oz_n, kz, g.stride[0], g.pad[0]);
    let (y0, y1) = valid_range(iy_n, oy_n, ky, g.stride[1], g.pad[1]);
    let (x0, x1) = valid_range(ix_n, ox_n, kx, g.stride[2], g.pad[2]);
    if x0 >= x1 {
        return;
    }
    for oz in z0..z1 {
        let iz = oz * g.stride[0] + kz - g.pad[0];
        for oy in y0..y1 {
            let iy = oy * g.stride[1] + ky - g.pad[1];
            let ix = x0 * g.stride[2] + kx - g.pad[2];
            let o = (oz * oy_n + oy) * ox_n + x0;
            let i = (iz * iy_n + iy) * ix_n + ix;
            f(o, i, x1 - x0);
        }
    }
}

pub(crate) fn forward(g: &ConvGeometry, x: &[f64], w: &[f64], bias: &[f64]) -> Vec<f64> {
    let (ip, op, ks) = (g.in_plane(), g.out_plane(), g.k_size());
    let [_, kh, kw] = g.kernel;
    let sx = g.stride[2];
    let mut out = vec![0.0; g.batch * g.c_out * op];
    for b in 0..g.batch {
        for co in 0..g.c_out {
            let oplane = &mut out[(b * g.c_out + co) * op..(b * g.c_out + co + 1) * op];
            oplane.fill(bias[co]);
            for ci in 0..g.c_in {
                let iplane = &x[(b * g.c_in + ci) * ip..(b * g.c_in + ci + 1) * ip];
                let wk = &w[(co * g.c_in + ci) * ks..(co * g.c_in + ci + 1) * ks];
                for (t, &wv) in wk.iter().enumerate() {
                    if wv == 0.0 {
                        continue;
                    }
                    let (kz, ky, kx) = (t / (kh * kw), (t / kw) % kh, t % kw);
                    for_each_run(g, kz, ky, kx, |o, i, n| {
                        let dst = &mut oplane[o..o + n];
                        if sx == 1 {
                            for (d, &s) in dst.iter_mut().zip(&iplane[i..i + n]) {
                                *d += wv * s;
                            }
                        } else {
                            for (j, d) in dst.iter_mut().enumerate() {
                                *d += wv * iplane[i + j * sx];
                            }
                        }
                    });
                }
            }
        }
    }
    out
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub(crate) fn backward(
    g: &ConvGeometry,
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    want_input: bool,
    want_params: bool,
) -> ConvGrads {
    let (ip, op, ks) = (g.in_plane(), g.out_plane(), g.k_size());
    let [_, kh, kw] = g.kernel;
    let sx = g.stride[2];
    let mut dx = want_input.then(|| vec![0.0; x.len()]);
    let mut dw = vec![0.0; if want_params { w.len() } else { 0 }];
    let mut db = vec![0.0; if want_params { g.c_out } else { 0 }];
    for b in 0..g.batch {
        for co in 0..g.c_out {
            let gplane = &dout[(b * g.c_out + co) * op..(b * g.c_out + co + 1) * op];
            if want_params {
                db[co] += gplane.iter().sum::<f64>();
            }
            for ci in 0..g.c_in {
                let ioff = (b * g.c_in + ci) * ip;
                let iplane = &x[ioff..ioff + ip];
                let woff = (co * g.c_in + ci) * ks;
                for t in 0..ks {
                    let (kz, ky, kx) = (t / (kh * kw), (t / kw) % kh, t % kw);
                    let wv = w[woff + t];
                    let mut acc = 0.0;
                    for_each_run(g, kz, ky, kx, |o, i, n| {
                        let gs = &gplane[o..o + n];
                        if want_params {
                            if sx == 1 {
                                acc += super::kernels::dot(gs, &iplane[i..i + n]);
                            } else {
                                acc += gs
                                    .iter()
                                    .enumerate()
                                    .map(|(j, &gv)| gv * iplane[i + j * sx])
                                    .sum::<f64>();
                            }
                        }
                        if let Some(dx) = dx.as_mut() {
                            if wv != 0.0 {
                                let dplane = &mut dx[ioff..ioff + ip];
                                for (j, &gv) in gs.iter().enumerate() {
                                    dplane[i + j * sx] += wv * gv;
                                }
                            }
                        }
                    });
                    if want_params {
                        dw[woff + t] += acc;
                    }
                }
            }
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}
