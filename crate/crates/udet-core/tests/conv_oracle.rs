//! Convolution kernels against independent naive-loop references.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use udet_core::ops::{convt2x2_param_count, depthwise3x3_param_count, Conv2DSpec, Padding};
use udet_core::{Shape4, Tape, Tensor4};

/// Direct six-loop cross-correlation, zero padded.
#[allow(clippy::too_many_arguments)]
fn naive_conv2d(
    x: &Tensor4<f64>,
    w: &Tensor4<f64>,
    bias: Option<&[f64]>,
    stride: usize,
    pad_h: usize,
    pad_w: usize,
) -> Tensor4<f64> {
    let xs = x.shape();
    let ws = w.shape();
    let (out_c, in_c, kh, kw) = (ws.n, ws.c, ws.h, ws.w);
    assert_eq!(xs.c, in_c);
    let oh = (xs.h + 2 * pad_h - kh) / stride + 1;
    let ow = (xs.w + 2 * pad_w - kw) / stride + 1;
    let mut out = Tensor4::zeros(Shape4::new(xs.n, out_c, oh, ow));
    for n in 0..xs.n {
        for co in 0..out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map(|b| b[co]).unwrap_or(0.0);
                    for ci in 0..in_c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad_h as isize;
                                let ix = (ox * stride + kx) as isize - pad_w as isize;
                                if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize
                                {
                                    continue;
                                }
                                acc += x.at(n, ci, iy as usize, ix as usize)
                                    * w.at(co, ci, ky, kx);
                            }
                        }
                    }
                    out.set(n, co, oy, ox, acc);
                }
            }
        }
    }
    out
}

fn rand_tensor(shape: Shape4, rng: &mut ChaCha8Rng) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_| rng.random::<f64>() * 2.0 - 1.0)
}

fn run_conv(x: &Tensor4<f64>, w: &Tensor4<f64>, b: Option<&Tensor4<f64>>, spec: &Conv2DSpec) -> Tensor4<f64> {
    let mut tape = Tape::inference();
    let xv = tape.leaf(x.clone());
    let wv = tape.leaf(w.clone());
    let bv = b.map(|b| tape.leaf(b.clone()));
    let y = tape.conv2d(xv, wv, bv, spec).unwrap();
    tape.value(y).clone()
}

#[test]
fn one_by_one_identity_kernel() {
    let x = Tensor4::from_fn(Shape4::new(1, 1, 4, 4), |i| i as f64);
    let w = Tensor4::full(Shape4::new(1, 1, 1, 1), 1.0);
    let spec = Conv2DSpec::new_1x1(1, 1, false);
    let y = run_conv(&x, &w, None, &spec);
    assert_eq!(y.data(), x.data());
}

#[test]
fn all_ones_3x3_same_padding_counts_window_size() {
    let x = Tensor4::full(Shape4::new(1, 1, 3, 3), 1.0);
    let w = Tensor4::full(Shape4::new(1, 1, 3, 3), 1.0);
    let spec = Conv2DSpec { bias: false, ..Conv2DSpec::new_3x3_same(1, 1) };
    let y = run_conv(&x, &w, None, &spec);
    assert_eq!(y.at(0, 0, 1, 1), 9.0);
    for &(r, c) in &[(0, 0), (0, 2), (2, 0), (2, 2)] {
        assert_eq!(y.at(0, 0, r, c), 4.0);
    }
    for &(r, c) in &[(0, 1), (1, 0), (1, 2), (2, 1)] {
        assert_eq!(y.at(0, 0, r, c), 6.0);
    }
}

#[test]
fn matches_naive_reference_on_100_random_specs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let n = rng.random_range(1..=2);
        let in_c = rng.random_range(1..=4);
        let out_c = rng.random_range(1..=4);
        let k = *[1usize, 3, 5].get(rng.random_range(0..3)).unwrap();
        let same = rng.random::<f64>() < 0.5;
        let stride = if same { 1 } else { rng.random_range(1..=2) };
        let h = rng.random_range(k.max(4)..=9);
        let w = rng.random_range(k.max(4)..=9);
        let bias = rng.random::<f64>() < 0.5;

        let spec = Conv2DSpec {
            in_channels: in_c,
            out_channels: out_c,
            kernel: (k, k),
            stride,
            padding: if same { Padding::Same } else { Padding::Valid },
            bias,
        };
        let x = rand_tensor(Shape4::new(n, in_c, h, w), &mut rng);
        let wt = rand_tensor(Shape4::new(out_c, in_c, k, k), &mut rng);
        let b = bias.then(|| rand_tensor(Shape4::new(1, out_c, 1, 1), &mut rng));

        let got = run_conv(&x, &wt, b.as_ref(), &spec);
        let pad = if same { (k - 1) / 2 } else { 0 };
        let want = naive_conv2d(&x, &wt, b.as_ref().map(|b| b.data()), stride, pad, pad);
        assert_eq!(got.shape(), want.shape(), "case {case} shape");
        for (g, e) in got.data().iter().zip(want.data()) {
            assert!(
                (g - e).abs() <= 1e-6 * e.abs().max(1.0),
                "case {case}: {g} vs {e}"
            );
        }
    }
}

#[test]
fn conv_rejects_channel_mismatch_and_oversized_kernel() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor4::zeros(Shape4::new(1, 2, 4, 4)));
    let w = tape.leaf(Tensor4::zeros(Shape4::new(1, 3, 3, 3)));
    let spec = Conv2DSpec { bias: false, ..Conv2DSpec::new_3x3_same(3, 1) };
    let err = tape.conv2d(x, w, None, &spec).unwrap_err();
    assert!(err.to_string().contains("channels"), "{err}");

    let big = Conv2DSpec {
        in_channels: 2,
        out_channels: 1,
        kernel: (7, 7),
        stride: 1,
        padding: Padding::Valid,
        bias: false,
    };
    let w2 = tape.leaf(Tensor4::zeros(Shape4::new(1, 2, 7, 7)));
    let err2 = tape.conv2d(x, w2, None, &big).unwrap_err();
    assert!(err2.to_string().contains("larger than"), "{err2}");
}

#[test]
fn depthwise_identity_and_channel_independence() {
    // center-one kernels pass the input through
    let x = Tensor4::from_fn(Shape4::new(1, 2, 4, 4), |i| i as f64 * 0.1);
    let mut w = Tensor4::zeros(Shape4::new(2, 1, 3, 3));
    w.set(0, 0, 1, 1, 1.0);
    w.set(1, 0, 1, 1, 1.0);
    let mut tape = Tape::inference();
    let xv = tape.leaf(x.clone());
    let wv = tape.leaf(w);
    let y = tape.depthwise_conv2d(xv, wv).unwrap();
    assert_eq!(tape.value(y).data(), x.data());

    // zeroing channel 1's kernel zeroes only channel 1
    let mut w2 = Tensor4::zeros(Shape4::new(2, 1, 3, 3));
    w2.set(0, 0, 1, 1, 1.0);
    let w2v = tape.leaf(w2);
    let y2 = tape.depthwise_conv2d(xv, w2v).unwrap();
    let plane = 16;
    assert_eq!(&tape.value(y2).data()[..plane], &x.data()[..plane]);
    assert!(tape.value(y2).data()[plane..].iter().all(|&v| v == 0.0));
}

#[test]
fn depthwise_matches_grouped_naive_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let c = rng.random_range(1..=5);
        let h = rng.random_range(4..=8);
        let w = rng.random_range(4..=8);
        let x = rand_tensor(Shape4::new(2, c, h, w), &mut rng);
        let k = rand_tensor(Shape4::new(c, 1, 3, 3), &mut rng);

        let mut tape = Tape::inference();
        let xv = tape.leaf(x.clone());
        let kv = tape.leaf(k.clone());
        let y = tape.depthwise_conv2d(xv, kv).unwrap();

        // per-channel naive conv through the shared reference
        for ch in 0..c {
            let xc = Tensor4::from_fn(Shape4::new(2, 1, h, w), |i| {
                let (n, rest) = (i / (h * w), i % (h * w));
                x.at(n, ch, rest / w, rest % w)
            });
            let kc = Tensor4::from_fn(Shape4::new(1, 1, 3, 3), |i| k.at(ch, 0, i / 3, i % 3));
            let want = naive_conv2d(&xc, &kc, None, 1, 1, 1);
            for n in 0..2 {
                for yy in 0..h {
                    for xx in 0..w {
                        let g = tape.value(y).at(n, ch, yy, xx);
                        let e = want.at(n, 0, yy, xx);
                        assert!((g - e).abs() <= 1e-6 * e.abs().max(1.0), "{g} vs {e}");
                    }
                }
            }
        }
    }
    assert_eq!(depthwise3x3_param_count(64), 576);
}

#[test]
fn transposed_conv_spreads_single_pixel() {
    let x = Tensor4::full(Shape4::new(1, 1, 1, 1), 3.5);
    let w = Tensor4::full(Shape4::new(1, 1, 2, 2), 1.0);
    let mut tape = Tape::inference();
    let xv = tape.leaf(x);
    let wv = tape.leaf(w);
    let y = tape.conv_transpose2d(xv, wv, None).unwrap();
    assert_eq!(tape.shape(y), Shape4::new(1, 1, 2, 2));
    assert_eq!(tape.value(y).data(), &[3.5; 4]);
}

#[test]
fn transposed_conv_equals_adjoint_of_strided_conv() {
    // the forward map must be the input-gradient of a 2x2 stride-2
    // convolution carrying the same kernel, probed by finite differences
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (cin, cout) = (2usize, 3usize);
    let x = rand_tensor(Shape4::new(1, cin, 2, 2), &mut rng);
    let w = rand_tensor(Shape4::new(cin, cout, 2, 2), &mut rng);

    let mut tape = Tape::inference();
    let xv = tape.leaf(x.clone());
    let wv = tape.leaf(w.clone());
    let y = tape.conv_transpose2d(xv, wv, None).unwrap();
    assert_eq!(tape.shape(y), Shape4::new(1, cout, 4, 4));

    // L(I) = sum(conv_stride2(I, V) * x) with V[a][b] = w[b][a]; then
    // dL/dI == transposed-conv output
    let v = Tensor4::from_fn(Shape4::new(cin, cout, 2, 2), |i| {
        let (a, rest) = (i / (cout * 4), i % (cout * 4));
        let (b, k) = (rest / 4, rest % 4);
        w.at(a, b, k / 2, k % 2)
    });
    let loss = |input: &Tensor4<f64>| -> f64 {
        let conv = naive_conv2d(input, &v, None, 2, 0, 0); // (1, cin, 2, 2)
        conv.data().iter().zip(x.data()).map(|(c, xx)| c * xx).sum()
    };
    let h = 1e-6;
    for e in 0..16 * cout {
        let mut plus = Tensor4::zeros(Shape4::new(1, cout, 4, 4));
        plus.data_mut()[e] = h;
        let mut minus = Tensor4::zeros(Shape4::new(1, cout, 4, 4));
        minus.data_mut()[e] = -h;
        let grad = (loss(&plus) - loss(&minus)) / (2.0 * h);
        let got = tape.value(y).data()[e];
        assert!((grad - got).abs() < 1e-6, "element {e}: {got} vs adjoint {grad}");
    }
}

#[test]
fn transposed_conv_parameter_count() {
    assert_eq!(convt2x2_param_count(1024, 512), 2_097_664);
    let four_layers = convt2x2_param_count(1024, 512)
        + convt2x2_param_count(512, 256)
        + convt2x2_param_count(256, 128)
        + convt2x2_param_count(128, 64);
    assert_eq!(four_layers, 2_786_240);
}
