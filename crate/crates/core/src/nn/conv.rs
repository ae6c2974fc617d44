//! 2-D convolution and max-pooling, valid padding, channels-first layout.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Output spatial size for valid padding: floor((in - k) / stride) + 1.
pub fn conv_out_dim(in_dim: usize, k: usize, stride: usize) -> Result<usize> {
    if k > in_dim {
        return Err(Error::Config(format!(
            "filter size {} larger than input {}",
            k, in_dim
        )));
    }
    if stride == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    Ok((in_dim - k) / stride + 1)
}

/// Forward convolution.
///
/// `input` is (batch, in_ch, h, w); `filters` is (out_ch, in_ch, kh, kw);
/// `bias` has one entry per output channel. Returns (batch, out_ch, oh, ow).
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    input: &[f32],
    batch: usize,
    in_ch: usize,
    h: usize,
    w: usize,
    filters: &[f32],
    out_ch: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    bias: &[f32],
) -> Result<Vec<f32>> {
    let oh = conv_out_dim(h, kh, stride)?;
    let ow = conv_out_dim(w, kw, stride)?;
    let mut out = vec![0.0f32; batch * out_ch * oh * ow];

    let in_plane = h * w;
    let out_plane = oh * ow;
    out.par_chunks_mut(out_ch * out_plane)
        .enumerate()
        .for_each(|(b, obatch)| {
            let x = &input[b * in_ch * in_plane..(b + 1) * in_ch * in_plane];
            for oc in 0..out_ch {
                let f = &filters[oc * in_ch * kh * kw..(oc + 1) * in_ch * kh * kw];
                let oplane = &mut obatch[oc * out_plane..(oc + 1) * out_plane];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias[oc];
                        for ic in 0..in_ch {
                            let xc = &x[ic * in_plane..(ic + 1) * in_plane];
                            let fc = &f[ic * kh * kw..(ic + 1) * kh * kw];
                            for ky in 0..kh {
                                let xrow = (oy * stride + ky) * w + ox * stride;
                                let frow = ky * kw;
                                for kx in 0..kw {
                                    acc += xc[xrow + kx] * fc[frow + kx];
                                }
                            }
                        }
                        oplane[oy * ow + ox] = acc;
                    }
                }
            }
        });
    Ok(out)
}

/// Gradients of a valid convolution: returns (d_input, d_filters, d_bias).
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    input: &[f32],
    batch: usize,
    in_ch: usize,
    h: usize,
    w: usize,
    filters: &[f32],
    out_ch: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    d_out: &[f32],
) -> Result<(Vec<f32>, Vec<f32>, Vec<f32>)> {
    let oh = conv_out_dim(h, kh, stride)?;
    let ow = conv_out_dim(w, kw, stride)?;
    let in_plane = h * w;
    let out_plane = oh * ow;

    let mut d_input = vec![0.0f32; input.len()];
    d_input
        .par_chunks_mut(in_ch * in_plane)
        .enumerate()
        .for_each(|(b, dxb)| {
            let dyb = &d_out[b * out_ch * out_plane..(b + 1) * out_ch * out_plane];
            for oc in 0..out_ch {
                let f = &filters[oc * in_ch * kh * kw..(oc + 1) * in_ch * kh * kw];
                let dyp = &dyb[oc * out_plane..(oc + 1) * out_plane];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = dyp[oy * ow + ox];
                        if g == 0.0 {
                            continue;
                        }
                        for ic in 0..in_ch {
                            let fc = &f[ic * kh * kw..(ic + 1) * kh * kw];
                            let dxc = &mut dxb[ic * in_plane..(ic + 1) * in_plane];
                            for ky in 0..kh {
                                let xrow = (oy * stride + ky) * w + ox * stride;
                                for kx in 0..kw {
                                    dxc[xrow + kx] += g * fc[ky * kw + kx];
                                }
                            }
                        }
                    }
                }
            }
        });

    // One task per output channel so each filter slice has a unique writer
    // and batch accumulation stays in a fixed order.
    let mut d_filters = vec![0.0f32; filters.len()];
    d_filters
        .par_chunks_mut(in_ch * kh * kw)
        .enumerate()
        .for_each(|(oc, dfc)| {
            for b in 0..batch {
                let x = &input[b * in_ch * in_plane..(b + 1) * in_ch * in_plane];
                let dyp = &d_out[(b * out_ch + oc) * out_plane..(b * out_ch + oc + 1) * out_plane];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = dyp[oy * ow + ox];
                        if g == 0.0 {
                            continue;
                        }
                        for ic in 0..in_ch {
                            let xc = &x[ic * in_plane..(ic + 1) * in_plane];
                            let dfcc = &mut dfc[ic * kh * kw..(ic + 1) * kh * kw];
                            for ky in 0..kh {
                                let xrow = (oy * stride + ky) * w + ox * stride;
                                for kx in 0..kw {
                                    dfcc[ky * kw + kx] += g * xc[xrow + kx];
                                }
                            }
                        }
                    }
                }
            }
        });

    let mut d_bias = vec![0.0f32; out_ch];
    for b in 0..batch {
        for (oc, db) in d_bias.iter_mut().enumerate() {
            let dyp = &d_out[(b * out_ch + oc) * out_plane..(b * out_ch + oc + 1) * out_plane];
            *db += dyp.iter().sum::<f32>();
        }
    }

    Ok((d_input, d_filters, d_bias))
}

/// Max-pool forward. Ties inside a window go to the first element in
/// row-major order, which the backward pass reproduces.
pub fn maxpool_forward(
    input: &[f32],
    batch: usize,
    ch: usize,
    h: usize,
    w: usize,
    size: usize,
    stride: usize,
) -> Result<Vec<f32>> {
    let oh = conv_out_dim(h, size, stride)?;
    let ow = conv_out_dim(w, size, stride)?;
    let plane = h * w;
    let out_plane = oh * ow;
    let mut out = vec![0.0f32; batch * ch * out_plane];
    out.par_chunks_mut(out_plane)
        .enumerate()
        .for_each(|(bc, oplane)| {
            let x = &input[bc * plane..(bc + 1) * plane];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    for ky in 0..size {
                        let row = (oy * stride + ky) * w + ox * stride;
                        for kx in 0..size {
                            let v = x[row + kx];
                            if v > best {
                                best = v;
                            }
                        }
                    }
                    oplane[oy * ow + ox] = best;
                }
            }
        });
    Ok(out)
}

/// Max-pool backward: the gradient is routed to the argmax element of each
/// window (first index on ties).
#[allow(clippy::too_many_arguments)]
pub fn maxpool_backward(
    input: &[f32],
    batch: usize,
    ch: usize,
    h: usize,
    w: usize,
    size: usize,
    stride: usize,
    d_out: &[f32],
) -> Result<Vec<f32>> {
    let oh = conv_out_dim(h, size, stride)?;
    let ow = conv_out_dim(w, size, stride)?;
    let plane = h * w;
    let out_plane = oh * ow;
    let mut d_input = vec![0.0f32; input.len()];
    d_input
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(bc, dxp)| {
            let x = &input[bc * plane..(bc + 1) * plane];
            let dyp = &d_out[bc * out_plane..(bc + 1) * out_plane];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for ky in 0..size {
                        let row = (oy * stride + ky) * w + ox * stride;
                        for kx in 0..size {
                            let v = x[row + kx];
                            if v > best {
                                best = v;
                                best_idx = row + kx;
                            }
                        }
                    }
                    dxp[best_idx] += dyp[oy * ow + ox];
                }
            }
        });
    let _ = (batch, ch);
    Ok(d_input)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_identity_filter_is_identity() {
        let input: Vec<f32> = (0..9).map(|v| v as f32).collect();
        let out = conv2d_forward(&input, 1, 1, 3, 3, &[1.0], 1, 1, 1, 1, &[0.0]).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn all_ones_filter_sums_window() {
        let input = vec![1.0f32; 25];
        let filters = vec![1.0f32; 9];
        let out = conv2d_forward(&input, 1, 1, 5, 5, &filters, 1, 3, 3, 1, &[0.0]).unwrap();
        assert_eq!(out.len(), 9);
        assert!(out.iter().all(|&v| v == 9.0));
    }

    #[test]
    fn filter_larger_than_input_is_config_error() {
        let input = vec![0.0f32; 4];
        let r = conv2d_forward(&input, 1, 1, 2, 2, &[0.0; 9], 1, 3, 3, 1, &[0.0]);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn maxpool_routes_gradient_to_first_argmax_on_ties() {
        // 2x2 window of equal values: gradient goes to the first element.
        let input = vec![1.0f32, 1.0, 1.0, 1.0];
        let d_out = vec![5.0f32];
        let dx = maxpool_backward(&input, 1, 1, 2, 2, 2, 2, &d_out).unwrap();
        assert_eq!(dx, vec![5.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_forward_picks_window_max() {
        let input = vec![1.0f32, 2.0, 3.0, 4.0, 8.0, 7.0, 6.0, 5.0, 1.0, 1.0, 2.0, 2.0];
        // 3x4 plane, 2x2 pool stride 2 -> 1x2: windows {1,2,8,7} and {3,4,6,5}
        let out = maxpool_forward(&input, 1, 1, 3, 4, 2, 2).unwrap();
        assert_eq!(out, vec![8.0, 6.0]);
    }
}
