use indexmap::IndexMap;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::{Architecture, BackboneConfig, Network};

fn small_cfg() -> BackboneConfig {
    BackboneConfig {
        conv1_channels: 3,
        conv1_kernel: 3,
        conv1_stride: 2,
        pool_width: 2,
        conv2_channels: 4,
        conv2_kernel: 2,
        conv2_stride: 1,
        dropout: 0.0,
    }
}

fn random_ckpt(seed: u64, classes: usize) -> Checkpoint {
    let arch = Architecture::compact_cnn(12, classes, &small_cfg()).unwrap();
    let net = Network::new(arch, seed).unwrap();
    let mut ckpt = Checkpoint::from_network(&net, seed as u32);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for (_, t) in ckpt.params.iter_mut().chain(ckpt.bn_stats.iter_mut()) {
        for v in t.data_mut() {
            *v += rng.random_range(-0.5..0.5);
            *v = v.abs().max(1e-3) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
    }
    for (k, t) in ckpt.bn_stats.iter_mut() {
        if k.ends_with("running_var") {
            for v in t.data_mut() {
                *v = v.abs();
            }
        }
    }
    ckpt
}

fn fixed(l: f64) -> LambdaPolicy {
    LambdaPolicy::FixedGlobal(l)
}

fn all_values(c: &Checkpoint) -> Vec<(String, Vec<f64>)> {
    c.params
        .iter()
        .chain(c.bn_stats.iter())
        .map(|(k, t)| (k.to_owned(), t.data().to_vec()))
        .collect()
}

#[test]
fn equal_shifts_give_lambda_max() {
    let shifts: IndexMap<String, f64> = ["a", "b", "c"].iter().map(|k| (k.to_string(), 0.37)).collect();
    let l = adaptive_lambdas(&shifts, 0.4, 0.6, 1e-8).unwrap();
    assert!(l.values().all(|&v| v == 0.6));
}

#[test]
fn two_layer_shift_plug_in() {
    let eps = 1e-8;
    let shifts: IndexMap<String, f64> = [("a".to_string(), 0.0), ("b".to_string(), 1.0)].into_iter().collect();
    let l = adaptive_lambdas(&shifts, 0.4, 0.6, eps).unwrap();
    assert_eq!(l["a"], 0.6);
    let expected = 0.4 + 0.2 * eps / (1.0 + eps);
    assert!((l["b"] - expected).abs() < 1e-15);
}

#[test]
fn empty_shifts_error() {
    assert!(matches!(
        adaptive_lambdas(&IndexMap::new(), 0.4, 0.6, 1e-8),
        Err(Error::Empty(_))
    ));
}

#[test]
fn extreme_shifts_get_extreme_lambdas() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let n = rng.random_range(2..10);
        let shifts: IndexMap<String, f64> = (0..n).map(|i| (format!("l{i}"), rng.random_range(0.0..3.0))).collect();
        let l = adaptive_lambdas(&shifts, 0.4, 0.6, 1e-8).unwrap();
        let argmax = shifts.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let argmin = shifts.iter().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let lmin = l.values().copied().fold(f64::INFINITY, f64::min);
        let lmax = l.values().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(l[argmax], lmin);
        assert_eq!(l[argmin], lmax);
        assert_eq!(lmax, 0.6);
        assert!(l.values().all(|v| (0.4..=0.6).contains(v)));
    }
}

#[test]
fn pair_endpoints_reproduce_models() {
    let a = random_ckpt(1, 4);
    let b = random_ckpt(2, 4);
    let at0 = interpolate_pair(&a, &b, &fixed(0.0), &BlockMask::all(), HeadMerge::CopyCurrent).unwrap();
    assert_eq!(all_values(&at0.checkpoint), all_values(&a));
    let at1 = interpolate_pair(&a, &b, &fixed(1.0), &BlockMask::all(), HeadMerge::CopyCurrent).unwrap();
    assert_eq!(at1.checkpoint, b);
}

#[test]
fn pair_at_point_six_matches_scalar_loop() {
    let a = random_ckpt(3, 4);
    let b = random_ckpt(4, 4);
    let m = interpolate_pair(&a, &b, &fixed(0.6), &BlockMask::all(), HeadMerge::CopyCurrent).unwrap();
    for ((key, got), (_, pa)) in all_values(&m.checkpoint).iter().zip(all_values(&a)) {
        let pb = b.params.get(key).or_else(|| b.bn_stats.get(key)).unwrap().data();
        for i in 0..got.len() {
            assert!((got[i] - (0.4 * pa[i] + 0.6 * pb[i])).abs() < 1e-12, "{key}[{i}]");
        }
    }
    assert_eq!(m.effective_lambda(), Some(0.6));
}

#[test]
fn grown_head_is_copied_from_current() {
    let a = random_ckpt(5, 4);
    let b = random_ckpt(6, 6);
    let m = interpolate_pair(&a, &b, &fixed(0.5), &BlockMask::all(), HeadMerge::CopyCurrent).unwrap();
    assert_eq!(m.checkpoint.params.get("head.weight"), b.params.get("head.weight"));
    assert_eq!(m.checkpoint.params.get("head.bias"), b.params.get("head.bias"));
    assert!(!m.lambdas.contains_key("head"));
    let conv = m.checkpoint.params.get("block1.conv.weight").unwrap().data()[0];
    let expected = 0.5 * a.params.get("block1.conv.weight").unwrap().data()[0]
        + 0.5 * b.params.get("block1.conv.weight").unwrap().data()[0];
    assert!((conv - expected).abs() < 1e-15);
    assert_eq!(m.checkpoint.n_classes(), 6);
}

#[test]
fn shared_head_rows_interpolate() {
    let a = random_ckpt(5, 4);
    let b = random_ckpt(6, 6);
    let m = interpolate_pair(&a, &b, &fixed(0.5), &BlockMask::all(), HeadMerge::InterpolateShared).unwrap();
    let got = m.checkpoint.params.get("head.weight").unwrap();
    let (wa, wb) = (a.params.get("head.weight").unwrap(), b.params.get("head.weight").unwrap());
    let width = wb.row_len();
    for i in 0..4 * width {
        assert!((got.data()[i] - 0.5 * (wa.data()[i] + wb.data()[i])).abs() < 1e-15);
    }
    assert_eq!(&got.data()[4 * width..], &wb.data()[4 * width..]);
    assert!(m.lambdas.contains_key("head"));
}

#[test]
fn masked_out_layers_equal_current() {
    let a = random_ckpt(7, 4);
    let b = random_ckpt(8, 4);
    let mask = BlockMask::only(["block1"]);
    let m = interpolate_pair(&a, &b, &fixed(0.3), &mask, HeadMerge::CopyCurrent).unwrap();
    for (key, t) in m.checkpoint.params.iter().chain(m.checkpoint.bn_stats.iter()) {
        let cur = b.params.get(key).or_else(|| b.bn_stats.get(key)).unwrap();
        if key.starts_with("block1") {
            assert_ne!(t, cur, "{key}");
        } else {
            assert_eq!(t, cur, "{key}");
        }
    }
    let none = interpolate_pair(&a, &b, &fixed(0.3), &BlockMask::none(), HeadMerge::CopyCurrent).unwrap();
    assert_eq!(none.checkpoint, b);
}

#[test]
fn adaptive_pair_uses_layer_lambdas() {
    let a = random_ckpt(9, 4);
    let b = random_ckpt(10, 4);
    let policy = LambdaPolicy::default();
    let m = interpolate_pair(&a, &b, &policy, &BlockMask::all(), HeadMerge::CopyCurrent).unwrap();
    assert_eq!(m.shifts, crate::params::shift_per_layer(&a.params, &b.params).unwrap());
    for (key, t) in m.checkpoint.bn_stats.iter() {
        let lam = m.lambdas[crate::params::layer_of(key)];
        let (pa, pb) = (a.bn_stats.get(key).unwrap().data(), b.bn_stats.get(key).unwrap().data());
        for i in 0..t.len() {
            assert!((t.data()[i] - ((1.0 - lam) * pa[i] + lam * pb[i])).abs() < 1e-12);
        }
    }
}

#[test]
fn incompatible_trunks_are_rejected() {
    let a = random_ckpt(1, 4);
    let arch = Architecture::compact_cnn(14, 4, &small_cfg()).unwrap();
    let b = Checkpoint::from_network(&Network::new(arch, 0).unwrap(), 0);
    assert!(matches!(
        interpolate_pair(&a, &b, &fixed(0.5), &BlockMask::all(), HeadMerge::CopyCurrent),
        Err(Error::Incompatible(_))
    ));
}

fn kinds() -> [PathKind; 3] {
    [
        PathKind::Linear,
        PathKind::CubicSpline { window: 4 },
        PathKind::Polynomial { window: 4 },
    ]
}

#[test]
fn integer_positions_return_knots() {
    let history: Vec<Checkpoint> = (0..4).map(|s| random_ckpt(20 + s, 4)).collect();
    for kind in kinds() {
        for (i, knot) in history.iter().enumerate() {
            let p = path_point(&history, &kind, i as f64, HeadMerge::CopyCurrent).unwrap();
            assert_eq!(all_values(&p), all_values(knot), "{kind:?} at {i}");
        }
    }
}

#[test]
fn two_knot_paths_are_linear() {
    let history = vec![random_ckpt(30, 4), random_ckpt(31, 4)];
    let lin = path_point(&history, &PathKind::Linear, 0.35, HeadMerge::CopyCurrent).unwrap();
    for kind in kinds() {
        let p = path_point(&history, &kind, 0.35, HeadMerge::CopyCurrent).unwrap();
        for ((_, x), (_, y)) in all_values(&p).iter().zip(all_values(&lin)) {
            for (u, v) in x.iter().zip(&y) {
                assert!((u - v).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn collinear_knots_give_linear_spline() {
    let base = random_ckpt(40, 4);
    let dir = random_ckpt(41, 4);
    let history: Vec<Checkpoint> = (0..4)
        .map(|k| {
            let mut c = base.clone();
            for (key, t) in c.params.iter_mut() {
                let d = dir.params.get(key).unwrap().data();
                for (v, dv) in t.data_mut().iter_mut().zip(d) {
                    *v += k as f64 * dv;
                }
            }
            c
        })
        .collect();
    for step in 0..=30 {
        let p = 3.0 * step as f64 / 30.0;
        let spline = path_point(&history, &PathKind::CubicSpline { window: 4 }, p, HeadMerge::CopyCurrent).unwrap();
        for (key, t) in spline.params.iter() {
            let b = base.params.get(key).unwrap().data();
            let d = dir.params.get(key).unwrap().data();
            for i in 0..t.len() {
                assert!((t.data()[i] - (b[i] + p * d[i])).abs() < 1e-12, "{key} at {p}");
            }
        }
    }
}

#[test]
fn out_of_range_position_errors() {
    let history = vec![random_ckpt(1, 4), random_ckpt(2, 4), random_ckpt(3, 4)];
    assert!(matches!(
        path_point(&history, &PathKind::Linear, 2.5, HeadMerge::CopyCurrent),
        Err(Error::PositionOutOfRange { .. })
    ));
    assert!(path_point(&history, &PathKind::Linear, -0.1, HeadMerge::CopyCurrent).is_err());
    assert!(path_point(&history[..1], &PathKind::Linear, 0.0, HeadMerge::CopyCurrent).is_err());
}

#[test]
fn single_link_chain_matches_pair() {
    let a = random_ckpt(50, 4);
    let b = random_ckpt(51, 4);
    let cfg = Consolidation {
        policy: fixed(0.6),
        ..Consolidation::default()
    };
    let c = consolidate(std::slice::from_ref(&a), &b, &cfg).unwrap();
    let p = interpolate_pair(&a, &b, &fixed(0.6), &BlockMask::all(), HeadMerge::CopyCurrent).unwrap();
    assert_eq!(c, p);
}

#[test]
fn lambda_one_returns_current_for_all_kinds() {
    let chain: Vec<Checkpoint> = (0..3).map(|s| random_ckpt(60 + s, 4)).collect();
    let curr = random_ckpt(70, 4);
    for path in kinds() {
        let cfg = Consolidation {
            path,
            policy: fixed(1.0),
            ..Consolidation::default()
        };
        let m = consolidate(&chain, &curr, &cfg).unwrap();
        assert_eq!(m.checkpoint, curr, "{path:?}");
    }
}

/// Natural cubic spline through (0, y0), (1, y1), (2, y2) by direct dense
/// solve of the full coefficient system, evaluated at `x`.
fn spline_oracle(ys: [f64; 3], x: f64) -> f64 {
    // S0(t) = a0 + b0 t + c0 t^2 + d0 t^3 on [0,1], S1(t) = a1 + b1 u + c1 u^2 + d1 u^3, u = t - 1
    // unknowns: b0 c0 d0 b1 c1 d1 with a0 = y0, a1 = y1
    let mut m = [[0.0f64; 7]; 6];
    // S0(1) = y1
    m[0] = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0, ys[1] - ys[0]];
    // S1(1) = y2
    m[1] = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0, ys[2] - ys[1]];
    // S0'(1) = S1'(0)
    m[2] = [1.0, 2.0, 3.0, -1.0, 0.0, 0.0, 0.0];
    // S0''(1) = S1''(0)
    m[3] = [0.0, 2.0, 6.0, 0.0, -2.0, 0.0, 0.0];
    // S0''(0) = 0
    m[4] = [0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    // S1''(1) = 0
    m[5] = [0.0, 0.0, 0.0, 0.0, 2.0, 6.0, 0.0];
    for col in 0..6 {
        let piv = (col..6).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
        m.swap(col, piv);
        for row in 0..6 {
            if row != col {
                let f = m[row][col] / m[col][col];
                for k in col..7 {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
    }
    let sol: Vec<f64> = (0..6).map(|i| m[i][6] / m[i][i]).collect();
    if x <= 1.0 {
        ys[0] + sol[0] * x + sol[1] * x * x + sol[2] * x * x * x
    } else {
        let u = x - 1.0;
        ys[1] + sol[3] * u + sol[4] * u * u + sol[5] * u * u * u
    }
}

#[test]
fn window_of_three_spline_matches_dense_oracle() {
    let chain = vec![random_ckpt(80, 4), random_ckpt(81, 4)];
    let curr = random_ckpt(82, 4);
    let cfg = Consolidation {
        path: PathKind::CubicSpline { window: 3 },
        policy: fixed(0.5),
        ..Consolidation::default()
    };
    let m = consolidate(&chain, &curr, &cfg).unwrap();
    for (key, t) in m.checkpoint.params.iter() {
        for i in 0..t.len() {
            let ys = [
                chain[0].params.get(key).unwrap().data()[i],
                chain[1].params.get(key).unwrap().data()[i],
                curr.params.get(key).unwrap().data()[i],
            ];
            assert!((t.data()[i] - spline_oracle(ys, 1.5)).abs() < 1e-12, "{key}[{i}]");
        }
    }
}

#[test]
fn polynomial_window_is_capped() {
    let cfg = Consolidation {
        path: PathKind::Polynomial { window: 6 },
        ..Consolidation::default()
    };
    assert!(cfg.validate().is_err());
    assert!(PathKind::CubicSpline { window: 2 }.validate().is_err());
}

#[test]
fn spline_window_only_uses_recent_models() {
    let chain: Vec<Checkpoint> = (0..5).map(|s| random_ckpt(90 + s, 4)).collect();
    let curr = random_ckpt(99, 4);
    let cfg = Consolidation {
        path: PathKind::CubicSpline { window: 3 },
        policy: fixed(0.25),
        ..Consolidation::default()
    };
    let full = consolidate(&chain, &curr, &cfg).unwrap();
    let tail = consolidate(&chain[3..], &curr, &cfg).unwrap();
    assert_eq!(full, tail);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pair_commutes_with_constant_offset(seed in 0u64..1000, lam in 0.0f64..=1.0, offset in -2.0f64..2.0) {
        let a = random_ckpt(seed, 4);
        let b = random_ckpt(seed + 1000, 4);
        let shift = |c: &Checkpoint| {
            let mut c = c.clone();
            for (_, t) in c.params.iter_mut() {
                for v in t.data_mut() { *v += offset; }
            }
            c
        };
        let base = interpolate_pair(&a, &b, &fixed(lam), &BlockMask::all(), HeadMerge::CopyCurrent).unwrap();
        let moved = interpolate_pair(&shift(&a), &shift(&b), &fixed(lam), &BlockMask::all(), HeadMerge::CopyCurrent).unwrap();
        for (key, t) in moved.checkpoint.params.iter() {
            let reference = base.checkpoint.params.get(key).unwrap();
            for (x, y) in t.data().iter().zip(reference.data()) {
                prop_assert!((x - (y + offset)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adaptive_is_monotone(shifts in proptest::collection::vec(0.0f64..10.0, 1..12)) {
        let map: IndexMap<String, f64> = shifts.iter().enumerate().map(|(i, s)| (format!("l{i}"), *s)).collect();
        let l = adaptive_lambdas(&map, 0.2, 0.9, 1e-8).unwrap();
        for (ka, sa) in &map {
            for (kb, sb) in &map {
                if sa >= sb {
                    prop_assert!(l[ka] <= l[kb]);
                }
            }
        }
    }
}
