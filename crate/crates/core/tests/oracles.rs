//! Layer and generator outputs checked against naive reimplementations.

use precipnet::dataio::{central_mask, generate_synthetic, softplus, variable_kind, Coefficients, SyntheticSpec};
use precipnet::gradcheck::{run_gradcheck, GradcheckOptions};
use precipnet::layers::{Conv2d, Conv3d};
use precipnet::{LevelSet, Precision, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Direct-loop convolution over any number of spatial axes, with its adjoint.
/// `x` is `[N, M, s...]`, `k` is `[P, M, k...]`.
struct NaiveConv<'a> {
    x: &'a Tensor,
    k: &'a Tensor,
    b: &'a Tensor,
    stride: usize,
    pad: usize,
}

impl NaiveConv<'_> {
    fn out_dims(&self) -> Vec<usize> {
        let xd = self.x.dims();
        let kd = self.k.dims();
        let mut d = vec![xd[0], kd[0]];
        for a in 2..xd.len() {
            d.push((xd[a] + 2 * self.pad - kd[a]) / self.stride + 1);
        }
        d
    }

    /// Calls `f(out_index, in_index, kernel_index)` for every in-bounds tap.
    fn taps(&self, mut f: impl FnMut(&[usize], &[usize], &[usize])) {
        let xd = self.x.dims().to_vec();
        let kd = self.k.dims().to_vec();
        let od = self.out_dims();
        let spatial = xd.len() - 2;
        for o in indices(&od) {
            for m in 0..xd[1] {
                'tap: for t in indices(&kd[2..]) {
                    let mut xi = vec![o[0], m];
                    for a in 0..spatial {
                        let pos = (o[2 + a] * self.stride + t[a]) as isize - self.pad as isize;
                        if pos < 0 || pos >= xd[2 + a] as isize {
                            continue 'tap;
                        }
                        xi.push(pos as usize);
                    }
                    let mut ki = vec![o[1], m];
                    ki.extend(&t);
                    f(&o, &xi, &ki);
                }
            }
        }
    }

    fn forward(&self) -> Tensor {
        let mut out = Tensor::zeros(&self.out_dims()).unwrap();
        for o in indices(&self.out_dims()) {
            out.set(&o, self.b.data()[o[1]]).unwrap();
        }
        self.taps(|o, xi, ki| {
            let v = out.get(o).unwrap() + self.x.get(xi).unwrap() * self.k.get(ki).unwrap();
            out.set(o, v).unwrap();
        });
        out
    }

    fn backward(&self, g: &Tensor) -> (Tensor, Tensor, Tensor) {
        let mut gx = Tensor::zeros_like(self.x);
        let mut gk = Tensor::zeros_like(self.k);
        let mut gb = Tensor::zeros_like(self.b);
        for o in indices(g.dims()) {
            gb.data_mut()[o[1]] += g.get(&o).unwrap();
        }
        self.taps(|o, xi, ki| {
            let go = g.get(o).unwrap();
            gx.set(xi, gx.get(xi).unwrap() + go * self.k.get(ki).unwrap()).unwrap();
            gk.set(ki, gk.get(ki).unwrap() + go * self.x.get(xi).unwrap()).unwrap();
        });
        (gx, gk, gb)
    }
}

fn indices(dims: &[usize]) -> Vec<Vec<usize>> {
    let mut all = vec![vec![]];
    for &d in dims {
        all = all
            .into_iter()
            .flat_map(|p| {
                (0..d).map(move |i| {
                    let mut q = p.clone();
                    q.push(i);
                    q
                })
            })
            .collect();
    }
    all
}

#[test]
fn conv2d_matches_direct_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..12 {
        let (stride, pad) = (1 + case % 2, case % 3 / 2 + case % 2);
        let k = random(&mut rng, &[3, 2, 3, 2]);
        let b = random(&mut rng, &[3]);
        let x = random(&mut rng, &[2, 2, 6, 5]);
        let conv = Conv2d::new(k.clone(), b.clone(), stride, pad).unwrap();
        let naive = NaiveConv { x: &x, k: &k, b: &b, stride, pad };
        let (y, cache) = conv.forward(&x).unwrap();
        let expected = naive.forward();
        assert_eq!(y.dims(), expected.dims());
        assert!(max_abs_diff(y.data(), expected.data()) < 1e-12);

        let g = random(&mut rng, y.dims());
        let grads = conv.backward(&cache, &g).unwrap();
        let (gx, gk, gb) = naive.backward(&g);
        assert!(max_abs_diff(grads.input.data(), gx.data()) < 1e-12);
        assert!(max_abs_diff(grads.kernels.data(), gk.data()) < 1e-12);
        assert!(max_abs_diff(grads.bias.data(), gb.data()) < 1e-12);
    }
}

#[test]
fn conv3d_matches_direct_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for case in 0..8 {
        let (stride, pad) = (1 + case % 2, case / 2 % 2);
        let k = random(&mut rng, &[2, 3, 2, 3, 3]);
        let b = random(&mut rng, &[2]);
        let x = random(&mut rng, &[2, 3, 4, 5, 5]);
        let conv = Conv3d::new(k.clone(), b.clone(), stride, pad).unwrap();
        let naive = NaiveConv { x: &x, k: &k, b: &b, stride, pad };
        let (y, cache) = conv.forward(&x).unwrap();
        assert!(max_abs_diff(y.data(), naive.forward().data()) < 1e-12);

        let g = random(&mut rng, y.dims());
        let grads = conv.backward(&cache, &g).unwrap();
        let (gx, gk, gb) = naive.backward(&g);
        assert!(max_abs_diff(grads.input.data(), gx.data()) < 1e-12);
        assert!(max_abs_diff(grads.kernels.data(), gk.data()) < 1e-12);
        assert!(max_abs_diff(grads.bias.data(), gb.data()) < 1e-12);
    }
}

#[test]
fn conv3d_with_unit_depth_is_conv2d() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for _ in 0..100 {
        let (p, m, h, w) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(3..7), rng.random_range(3..7));
        // a 3x3x3 kernel on one padded depth slice only touches its middle plane
        let k3 = random(&mut rng, &[p, m, 3, 3, 3]);
        let b = random(&mut rng, &[p]);
        let x2 = random(&mut rng, &[2, m, h, w]);
        let mut k2 = Tensor::zeros(&[p, m, 3, 3]).unwrap();
        for idx in indices(&[p, m, 3, 3]) {
            k2.set(&idx, k3.get(&[idx[0], idx[1], 1, idx[2], idx[3]]).unwrap()).unwrap();
        }
        let x3 = x2.reshape(&[2, m, 1, h, w]).unwrap();
        let (y2, _) = Conv2d::new(k2, b.clone(), 1, 1).unwrap().forward(&x2).unwrap();
        let (y3, _) = Conv3d::new(k3, b, 1, 1).unwrap().forward(&x3).unwrap();
        assert_eq!(y3.dims(), &[2, p, 1, h, w]);
        assert!(max_abs_diff(y2.data(), y3.data()) <= 1e-12);
    }
}

#[test]
fn finite_difference_suite_passes() {
    let results = run_gradcheck(&GradcheckOptions::default()).unwrap();
    assert_eq!(results.len(), 11);
    for r in &results {
        assert!(r.instances >= 20, "{}", r.name);
        assert!(r.passed, "{} rel error {:e}", r.name, r.max_rel_error);
    }
}

/// Target recomputed from the stored fields with hand-written level lookup.
fn expected_target(stack: &Tensor, day: usize, levels: &[f64], coef: Coefficients) -> f64 {
    let d = stack.dims();
    let (v, h, w) = (d[2], d[4], d[5]);
    let level = |p: f64| {
        let mut best = 0;
        for (i, &l) in levels.iter().enumerate() {
            if (l - p).abs() < (levels[best] - p).abs() {
                best = i;
            }
        }
        best
    };
    let (rows, cols) = central_mask(h, w);
    let mean_anomaly = |slot: usize, var: usize, p: f64| {
        let li = level(p);
        let kind = variable_kind(var, v);
        let hpa = levels[li];
        let mut acc = Vec::new();
        for i in rows.clone() {
            for j in cols.clone() {
                let x = stack.get(&[day, slot, var, li, i, j]).unwrap();
                acc.push((x - kind.offset(hpa)) / kind.scale(hpa));
            }
        }
        acc.iter().sum::<f64>() / acc.len() as f64
    };
    let q15 = mean_anomaly(2, 0, 925.0);
    let q03 = mean_anomaly(0, 0, 925.0);
    let q500 = mean_anomaly(2, 0, 500.0);
    let t850 = mean_anomaly(2, v - 1, 850.0);
    let z = coef.a * q15 + coef.b * (q15 - q500) * t850 + coef.c * (q15 - q03);
    softplus(z).max(0.0)
}

#[test]
fn noiseless_targets_follow_the_mapping() {
    for (levels, coef, precision) in [
        (LevelSet::v1(), Coefficients::default(), Precision::Double),
        (LevelSet::v3(), Coefficients { a: 0.5, b: -2.0, c: 1.5 }, Precision::Single),
        (LevelSet::new(vec![450.0, 900.0]).unwrap(), Coefficients { a: 1.0, b: 0.0, c: 0.0 }, Precision::Double),
    ] {
        let spec = SyntheticSpec {
            days: 12,
            height: 9,
            width: 7,
            levels: levels.clone(),
            coefficients: coef,
            precision,
            seed: 42,
            ..SyntheticSpec::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        for day in 0..12 {
            let want = expected_target(ds.stack(), day, levels.hpa(), coef);
            let got = ds.targets()[day];
            // stored targets are rounded to the dataset precision
            let tol = match precision {
                Precision::Double => 1e-12,
                Precision::Single => 1e-7,
            };
            assert!((got - want).abs() <= tol * (1.0 + want.abs()), "day {day}: {got} vs {want}");
        }
    }
}
