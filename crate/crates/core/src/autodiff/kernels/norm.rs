/// Per-channel batch statistics over an NC(spatial) buffer.
/// Returns `(mean, biased_var)` per channel.
pub fn channel_stats(input: &[f64], batch: usize, channels: usize, spatial: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (batch * spatial) as f64;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for c in 0..channels {
        let mut s = 0.0;
        for b in 0..batch {
            let off = (b * channels + c) * spatial;
            s += input[off..off + spatial].iter().sum::<f64>();
        }
        let m = s / n;
        let mut sq = 0.0;
        for b in 0..batch {
            let off = (b * channels + c) * spatial;
            sq += input[off..off + spatial].iter().map(|x| (x - m) * (x - m)).sum::<f64>();
        }
        mean[c] = m;
        var[c] = sq / n;
    }
    (mean, var)
}

/// Gradients of `y = gamma * xhat + beta` with batch statistics.
/// Returns `(d_input, d_gamma, d_beta)`.
pub fn train_backward(
    grad_out: &[f64],
    xhat: &[f64],
    gamma: &[f64],
    inv_std: &[f64],
    batch: usize,
    channels: usize,
    spatial: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = (batch * spatial) as f64;
    let mut d_in = vec![0.0; grad_out.len()];
    let mut d_gamma = vec![0.0; channels];
    let mut d_beta = vec![0.0; channels];
    for c in 0..channels {
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for b in 0..batch {
            let off = (b * channels + c) * spatial;
            for i in off..off + spatial {
                sum_dy += grad_out[i];
                sum_dy_xhat += grad_out[i] * xhat[i];
            }
        }
        d_gamma[c] = sum_dy_xhat;
        d_beta[c] = sum_dy;
        let scale = gamma[c] * inv_std[c] / n;
        for b in 0..batch {
            let off = (b * channels + c) * spatial;
            for i in off..off + spatial {
                d_in[i] = scale * (n * grad_out[i] - sum_dy - xhat[i] * sum_dy_xhat);
            }
        }
    }
    (d_in, d_gamma, d_beta)
}
