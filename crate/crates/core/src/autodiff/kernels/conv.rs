//! Direct 3D convolution (cross-correlation) kernels on NCDHW buffers.
//!
//! The innermost loop always walks a contiguous run along W so that the
//! stride-1 case compiles to a vectorized axpy/dot.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub in_dims: [usize; 3],
    pub out_dims: [usize; 3],
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn output_len(in_len: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
        let padded = in_len + 2 * padding;
        if stride == 0 || k == 0 || k > padded {
            return None;
        }
        Some((padded - k) / stride + 1)
    }

    fn in_volume(&self) -> usize {
        self.in_dims.iter().product()
    }

    fn out_volume(&self) -> usize {
        self.out_dims.iter().product()
    }

    /// Output index range along one axis whose input index `o*s + koff - p`
    /// falls inside `[0, len)`.
    fn valid_range(&self, koff: usize, in_len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let shift = koff as isize - self.padding as isize;
        // smallest o with o*s + shift >= 0
        let lo = if shift >= 0 { 0 } else { ((-shift) + s - 1) / s };
        // largest o with o*s + shift <= in_len - 1
        let hi_num = in_len as isize - 1 - shift;
        if hi_num < 0 {
            return (0, 0);
        }
        let hi = (hi_num / s + 1).min(out_len as isize);
        if hi <= lo {
            (0, 0)
        } else {
            (lo as usize, hi as usize)
        }
    }

    fn in_index(&self, o: usize, koff: usize) -> usize {
        o * self.stride + koff - self.padding
    }
}

pub fn forward(geo: &ConvGeometry, input: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
    let [d, h, w] = geo.in_dims;
    let [od, oh, ow] = geo.out_dims;
    let k = geo.k;
    let in_vol = geo.in_volume();
    let out_vol = geo.out_volume();
    let mut out = vec![0.0; geo.batch * geo.c_out * out_vol];

    for b in 0..geo.batch {
        for co in 0..geo.c_out {
            let out_base = (b * geo.c_out + co) * out_vol;
            let out_ch = &mut out[out_base..out_base + out_vol];
            out_ch.fill(bias[co]);
            for ci in 0..geo.c_in {
                let in_ch = &input[(b * geo.c_in + ci) * in_vol..][..in_vol];
                let k_base = (co * geo.c_in + ci) * k * k * k;
                for kz in 0..k {
                    let (z0, z1) = geo.valid_range(kz, d, od);
                    for ky in 0..k {
                        let (y0, y1) = geo.valid_range(ky, h, oh);
                        for kx in 0..k {
                            let (x0, x1) = geo.valid_range(kx, w, ow);
                            if x1 == x0 {
                                continue;
                            }
                            let wv = kernel[k_base + (kz * k + ky) * k + kx];
                            for oz in z0..z1 {
                                let iz = geo.in_index(oz, kz);
                                for oy in y0..y1 {
                                    let iy = geo.in_index(oy, ky);
                                    let orow = &mut out_ch[(oz * oh + oy) * ow..][..ow];
                                    let irow = &in_ch[(iz * h + iy) * w..][..w];
                                    if geo.stride == 1 {
                                        let ix0 = x0 + kx - geo.padding;
                                        let len = x1 - x0;
                                        for (o, i) in orow[x0..x1].iter_mut().zip(&irow[ix0..ix0 + len]) {
                                            *o += wv * i;
                                        }
                                    } else {
                                        for ox in x0..x1 {
                                            orow[ox] += wv * irow[geo.in_index(ox, kx)];
                                        }
                                    }
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

pub struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub kernel: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

pub fn backward(geo: &ConvGeometry, input: &[f64], kernel: &[f64], grad_out: &[f64], need: [bool; 3]) -> ConvGrads {
    let [d, h, w] = geo.in_dims;
    let [od, oh, ow] = geo.out_dims;
    let k = geo.k;
    let in_vol = geo.in_volume();
    let out_vol = geo.out_volume();

    let mut g_in = need[0].then(|| vec![0.0; input.len()]);
    let mut g_k = need[1].then(|| vec![0.0; kernel.len()]);
    let g_b = need[2].then(|| {
        let mut gb = vec![0.0; geo.c_out];
        for b in 0..geo.batch {
            for (co, acc) in gb.iter_mut().enumerate() {
                let base = (b * geo.c_out + co) * out_vol;
                *acc += grad_out[base..base + out_vol].iter().sum::<f64>();
            }
        }
        gb
    });

    if g_in.is_none() && g_k.is_none() {
        return ConvGrads { input: None, kernel: None, bias: g_b };
    }

    for b in 0..geo.batch {
        for co in 0..geo.c_out {
            let go_ch = &grad_out[(b * geo.c_out + co) * out_vol..][..out_vol];
            for ci in 0..geo.c_in {
                let in_off = (b * geo.c_in + ci) * in_vol;
                let k_base = (co * geo.c_in + ci) * k * k * k;
                for kz in 0..k {
                    let (z0, z1) = geo.valid_range(kz, d, od);
                    for ky in 0..k {
                        let (y0, y1) = geo.valid_range(ky, h, oh);
                        for kx in 0..k {
                            let (x0, x1) = geo.valid_range(kx, w, ow);
                            if x1 == x0 {
                                continue;
                            }
                            let kidx = k_base + (kz * k + ky) * k + kx;
                            let wv = kernel[kidx];
                            let mut acc = 0.0;
                            for oz in z0..z1 {
                                let iz = geo.in_index(oz, kz);
                                for oy in y0..y1 {
                                    let iy = geo.in_index(oy, ky);
                                    let grow = &go_ch[(oz * oh + oy) * ow..][..ow];
                                    let row_off = in_off + (iz * h + iy) * w;
                                    if geo.stride == 1 {
                                        let ix0 = x0 + kx - geo.padding;
                                        let len = x1 - x0;
                                        if g_k.is_some() {
                                            let irow = &input[row_off + ix0..row_off + ix0 + len];
                                            acc += grow[x0..x1].iter().zip(irow).map(|(g, i)| g * i).sum::<f64>();
                                        }
                                        if let Some(gi) = g_in.as_mut() {
                                            let irow = &mut gi[row_off + ix0..row_off + ix0 + len];
                                            for (i, g) in irow.iter_mut().zip(&grow[x0..x1]) {
                                                *i += wv * g;
                                            }
                                        }
                                    } else {
                                        for ox in x0..x1 {
                                            let ix = row_off + geo.in_index(ox, kx);
                                            acc += grow[ox] * input[ix];
                                            if let Some(gi) = g_in.as_mut() {
                                                gi[ix] += wv * grow[ox];
                                            }
                                        }
                                    }
                                }
                            }
                            if let Some(gk) = g_k.as_mut() {
                                gk[kidx] += acc;
                            }
                        }
                    }
                }
            }
        }
    }

    ConvGrads { input: g_in, kernel: g_k, bias: g_b }
}
