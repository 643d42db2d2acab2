//! Independent-oracle equivalence tests: the convolution ops against a naive
//! quadruple-loop direct summation, and the transposed convolution against
//! the inner-product adjoint identity.

use wavemix::nn::{conv2d, conv2d_transposed, ConvSpec};
use wavemix::tensor::Tensor;
use wavemix::DetRng;

fn randn(n: usize, rng: &mut DetRng) -> Vec<f64> {
    (0..n).map(|_| rng.normal::<f64>()).collect()
}

/// Direct cross-correlation: four nested spatial/kernel loops per output.
#[allow(clippy::too_many_arguments)]
fn naive_conv(
    x: &[f64],
    w: &[f64],
    bias: &[f64],
    bsz: usize,
    ic: usize,
    h: usize,
    wd: usize,
    oc: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    groups: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * ph - kh) / sh + 1;
    let ow = (wd + 2 * pw - kw) / sw + 1;
    let icpg = ic / groups;
    let ocpg = oc / groups;
    let mut out = vec![0.0; bsz * oc * oh * ow];
    for b in 0..bsz {
        for o in 0..oc {
            let g = o / ocpg;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[o];
                    for il in 0..icpg {
                        let i = g * icpg + il;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * sh + ky) as isize - ph as isize;
                                let ix = (ox * sw + kx) as isize - pw as isize;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < wd as isize {
                                    let xv = x[((b * ic + i) * h + iy as usize) * wd + ix as usize];
                                    let wv = w[((o * icpg + il) * kh + ky) * kw + kx];
                                    acc += xv * wv;
                                }
                            }
                        }
                    }
                    out[((b * oc + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

#[test]
fn conv2d_matches_naive_oracle_on_20_cases() {
    let cases = [
        (1usize, 3usize, 2usize, 1usize, 1usize, 1usize), // (b, c_in, c_out mult?, k, s, groups)
    ];
    let _ = cases;
    let mut rng = DetRng::new(2024);
    let mut ran = 0usize;
    for k in [1usize, 3, 5] {
        for s in [1usize, 2] {
            for groups_full in [false, true] {
                for pad in [0usize, k / 2] {
                    if ran >= 20 {
                        break;
                    }
                    let ic = 4usize;
                    let oc = 4usize;
                    let g = if groups_full { ic } else { 1 };
                    let (bsz, h, w) = (2usize, 8usize, 8usize);
                    let spec = ConvSpec {
                        in_channels: ic,
                        out_channels: oc,
                        kernel: (k, k),
                        stride: (s, s),
                        padding: (pad, pad),
                        groups: g,
                    };
                    let icpg = ic / g;
                    let xd = randn(bsz * ic * h * w, &mut rng);
                    let wd = randn(oc * icpg * k * k, &mut rng);
                    let bd = randn(oc, &mut rng);
                    let x = Tensor::from_vec(xd.clone(), &[bsz, ic, h, w]).unwrap();
                    let wt = Tensor::from_vec(wd.clone(), &[oc, icpg, k, k]).unwrap();
                    let bt = Tensor::from_vec(bd.clone(), &[oc]).unwrap();
                    let got = conv2d(&x, &wt, &bt, spec).unwrap();
                    let (want, oh, ow) =
                        naive_conv(&xd, &wd, &bd, bsz, ic, h, w, oc, k, k, s, s, pad, pad, g);
                    assert_eq!(got.shape(), &[bsz, oc, oh, ow]);
                    let max = got
                        .to_vec()
                        .iter()
                        .zip(&want)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    assert!(max <= 1e-5, "k{k} s{s} g{g} p{pad}: max abs diff {max}");
                    ran += 1;
                }
            }
        }
    }
    assert!(ran >= 20, "only {ran} oracle cases ran");
}

#[test]
fn random_f32_case_matches_oracle_within_1e5() {
    // the spec's exemplar case: random 1x3x8x8 input, f32 precision
    let mut rng = DetRng::new(7);
    let (bsz, ic, oc, h, w, k) = (1usize, 3usize, 2usize, 8usize, 8usize, 3usize);
    let xd: Vec<f32> = (0..bsz * ic * h * w).map(|_| rng.normal::<f32>()).collect();
    let wd: Vec<f32> = (0..oc * ic * k * k).map(|_| rng.normal::<f32>()).collect();
    let spec = ConvSpec {
        in_channels: ic,
        out_channels: oc,
        kernel: (k, k),
        stride: (1, 1),
        padding: (0, 0),
        groups: 1,
    };
    let x = Tensor::from_vec(xd.clone(), &[bsz, ic, h, w]).unwrap();
    let wt = Tensor::from_vec(wd.clone(), &[oc, ic, k, k]).unwrap();
    let bt = Tensor::<f32>::zeros(&[oc]);
    let got = conv2d(&x, &wt, &bt, spec).unwrap().to_vec();
    let xd64: Vec<f64> = xd.iter().map(|&v| v as f64).collect();
    let wd64: Vec<f64> = wd.iter().map(|&v| v as f64).collect();
    let (want, _, _) = naive_conv(&xd64, &wd64, &[0.0, 0.0], bsz, ic, h, w, oc, k, k, 1, 1, 0, 0, 1);
    let max = got
        .iter()
        .zip(&want)
        .map(|(a, b)| (*a as f64 - b).abs())
        .fold(0.0, f64::max);
    assert!(max <= 1e-5, "max abs diff {max}");
}

#[test]
fn transposed_is_adjoint_of_conv_on_20_seeds() {
    // <conv(x; W), y> == <x, tconv(y; W)> with shared weights and zero bias.
    for seed in 0..20u64 {
        let mut rng = DetRng::new(1000 + seed);
        let k = 1 + (seed as usize % 3) * 2; // 1, 3, 5
        let s = 1 + (seed as usize % 2); // 1, 2
        let (ic, oc) = (3usize, 4usize);
        let (bsz, h, w) = (2usize, 9usize, 9usize);
        // choose padding so the conv geometry inverts exactly
        let p = 0usize;
        if (h + 2 * p) < k {
            continue;
        }
        let spec_fwd = ConvSpec {
            in_channels: ic,
            out_channels: oc,
            kernel: (k, k),
            stride: (s, s),
            padding: (p, p),
            groups: 1,
        };
        let (oh, ow) = spec_fwd.conv_output_size(h, w).unwrap();
        let xd = randn(bsz * ic * h * w, &mut rng);
        let wd = randn(oc * ic * k * k, &mut rng);
        let yd = randn(bsz * oc * oh * ow, &mut rng);
        let x = Tensor::from_vec(xd.clone(), &[bsz, ic, h, w]).unwrap();
        let wt = Tensor::from_vec(wd, &[oc, ic, k, k]).unwrap();
        let y = Tensor::from_vec(yd.clone(), &[bsz, oc, oh, ow]).unwrap();
        let zero_oc = Tensor::<f64>::zeros(&[oc]);
        let zero_ic = Tensor::<f64>::zeros(&[ic]);

        let cx = conv2d(&x, &wt, &zero_oc, spec_fwd).unwrap();
        let lhs: f64 = cx.to_vec().iter().zip(&yd).map(|(a, b)| a * b).sum();

        let spec_adj = ConvSpec {
            in_channels: oc,
            out_channels: ic,
            kernel: (k, k),
            stride: (s, s),
            padding: (p, p),
            groups: 1,
        };
        let ty = conv2d_transposed(&y, &wt, &zero_ic, spec_adj).unwrap();
        // adjoint output covers (oh-1)*s + k rows; the conv consumed only the
        // first rows of x when (h - k) % s != 0, so compare on that region.
        let tyv = ty.to_vec();
        let (th, tw) = (ty.shape()[2], ty.shape()[3]);
        let mut rhs = 0.0f64;
        for b in 0..bsz {
            for c in 0..ic {
                for yy in 0..th.min(h) {
                    for xx in 0..tw.min(w) {
                        rhs += xd[((b * ic + c) * h + yy) * w + xx]
                            * tyv[((b * ic + c) * th + yy) * tw + xx];
                    }
                }
            }
        }
        let denom = lhs.abs().max(1.0);
        assert!(
            (lhs - rhs).abs() / denom <= 1e-5,
            "seed {seed} k{k} s{s}: <Ax,y>={lhs} vs <x,Aty>={rhs}"
        );
    }
}
