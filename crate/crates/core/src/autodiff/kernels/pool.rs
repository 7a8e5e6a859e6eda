/// Non-overlapping max pooling over `channels` volumes of `dims`.
/// Returns the pooled values and, per output, the flat input index of the
/// winner. Ties go to the first element in row-major window order.
pub fn max_forward(input: &[f64], channels: usize, dims: [usize; 3], window: usize) -> (Vec<f64>, Vec<usize>) {
    let [d, h, w] = dims;
    let (od, oh, ow) = (d / window, h / window, w / window);
    let in_vol = d * h * w;
    let out_vol = od * oh * ow;
    let mut out = Vec::with_capacity(channels * out_vol);
    let mut arg = Vec::with_capacity(channels * out_vol);
    for c in 0..channels {
        let base = c * in_vol;
        for oz in 0..od {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for dz in 0..window {
                        let z = oz * window + dz;
                        for dy in 0..window {
                            let y = oy * window + dy;
                            let row = base + (z * h + y) * w + ox * window;
                            for (dx, &v) in input[row..row + window].iter().enumerate() {
                                if best_idx == usize::MAX || v > best {
                                    best = v;
                                    best_idx = row + dx;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_idx);
                }
            }
        }
    }
    (out, arg)
}

pub fn max_backward(grad_out: &[f64], argmax: &[usize], input_len: usize) -> Vec<f64> {
    let mut g = vec![0.0; input_len];
    for (&go, &idx) in grad_out.iter().zip(argmax) {
        g[idx] += go;
    }
    g
}
