mod common;

use common::{param_check, rand_t, rng, unrolled_cross_attention, wsum};
use mmfuse::gradcheck::grad_check;
use mmfuse::layers::Linear;
use mmfuse::msca::*;
use mmfuse::tensor::Tensor;
use mmfuse::{Error, ParamStore, Tape, Var};

const GRAD_TOL: f64 = 1e-5;

fn attn(store: &mut ParamStore<f64>, dq: usize, dkv: usize, heads: usize, seed: u64) -> CrossAttnParams {
    CrossAttnParams::init(store, "attn", dq, dkv, heads, &mut rng(seed)).unwrap()
}

fn set_identity(store: &mut ParamStore<f64>, l: &Linear) {
    store.set(l.weight, Tensor::eye(l.in_dim)).unwrap();
    if let Some(b) = l.bias {
        store.set(b, Tensor::zeros(&[l.out_dim])).unwrap();
    }
}

#[test]
fn cross_attention_matches_unrolled_loops() {
    for case in 0..20u64 {
        let mut store = ParamStore::new();
        let heads = [1, 2, 4][case as usize % 3];
        let (dq, dkv) = (4 * heads, 3 + case as usize % 4);
        let (b, n, m) = (2, 3, 5 - case as usize % 3);
        let p = attn(&mut store, dq, dkv, heads, case);
        let q = rand_t(&[b, n, dq], 100 + case);
        let kv = rand_t(&[b, m, dkv], 200 + case);
        let mut tape = Tape::new();
        let (qv, kvv) = (tape.leaf(q.clone()), tape.leaf(kv.clone()));
        let o = cross_attention(&mut tape, &store, qv, kvv, &p).unwrap();
        let want = unrolled_cross_attention(&q, &kv, store.get(p.w_q), store.get(p.w_k), store.get(p.w_v), heads);
        let diff = tape.value(o).max_abs_diff(&want);
        assert!(diff <= 1e-12, "case {case}: {diff:e}");
    }
}

#[test]
fn single_key_returns_value_projection() {
    let mut store = ParamStore::new();
    let p = attn(&mut store, 4, 4, 2, 1);
    for id in [p.w_q, p.w_k, p.w_v] {
        store.set(id, Tensor::eye(4)).unwrap();
    }
    let q = rand_t(&[1, 1, 4], 2);
    let kv = rand_t(&[1, 1, 4], 3);
    let mut tape = Tape::new();
    let (qv, kvv) = (tape.leaf(q), tape.leaf(kv.clone()));
    let o = cross_attention(&mut tape, &store, qv, kvv, &p).unwrap();
    assert_eq!(tape.value(o), &kv);

    // With random projections the output is still exactly kv·W_v.
    let p = attn(&mut store, 4, 3, 2, 4);
    let kv = rand_t(&[2, 1, 3], 5);
    let mut tape = Tape::new();
    let qv = tape.leaf(rand_t(&[2, 6, 4], 6));
    let kvv = tape.leaf(kv.clone());
    let o = cross_attention(&mut tape, &store, qv, kvv, &p).unwrap();
    let vproj = mmfuse::kernels::matmul(&kv, store.get(p.w_v)).unwrap();
    for bi in 0..2 {
        for i in 0..6 {
            for c in 0..4 {
                let got = tape.value(o).get(&[bi, i, c]).unwrap();
                assert!((got - vproj.get(&[bi, 0, c]).unwrap()).abs() <= 1e-15);
            }
        }
    }
}

#[test]
fn logit_is_scaled_by_root_head_width() {
    let mut tape = Tape::<f64>::new();
    let q = tape.leaf(Tensor::from_f64(&[1, 1, 1, 4], &[2.0, 2.0, 0.0, 0.0]).unwrap());
    let k = tape.leaf(Tensor::from_f64(&[1, 1, 1, 4], &[2.0, 2.0, 1.0, 5.0]).unwrap());
    let l = attention_logits(&mut tape, q, k).unwrap();
    assert_eq!(tape.value(l).data(), &[4.0]);
}

#[test]
fn attention_weights_are_row_stochastic() {
    for seed in 0..5 {
        let mut store = ParamStore::new();
        let p = attn(&mut store, 16, 16, 4, seed);
        let mut tape = Tape::new();
        let q = tape.leaf(rand_t(&[3, 8, 16], seed + 10).map(|v| 4.0 * v));
        let kv = tape.leaf(rand_t(&[3, 16, 16], seed + 20).map(|v| 4.0 * v));
        let (_, w) = cross_attention_with_weights(&mut tape, &store, q, kv, &p).unwrap();
        let w = tape.value(w);
        assert_eq!(w.shape(), &[3, 4, 8, 16]);
        for row in w.data().chunks(16) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(row.iter().all(|&x| x > 0.0));
        }
    }
}

#[test]
fn head_count_must_divide_query_width() {
    let mut store = ParamStore::<f64>::new();
    assert!(matches!(CrossAttnParams::init(&mut store, "a", 6, 6, 4, &mut rng(0)), Err(Error::Config(_))));
    // Empty token sets cannot even be represented.
    assert!(matches!(Tensor::<f64>::new(vec![1, 0, 4], vec![]), Err(Error::Contract(_))));
}

#[test]
fn symmetric_inputs_give_doubled_output() {
    let mut store = ParamStore::new();
    let p = attn(&mut store, 16, 16, 4, 30);
    let x = rand_t(&[2, 8, 16], 31);
    let mut tape = Tape::new();
    let (a, b) = (tape.leaf(x.clone()), tape.leaf(x));
    let fused = fuse_scale(&mut tape, &store, a, b, &p, &p).unwrap();
    let o1 = cross_attention(&mut tape, &store, a, b, &p).unwrap();
    let o1 = tape.value(o1).reshape(&[2, 128]).unwrap();
    assert_eq!(tape.value(fused), &o1.map(|v| 2.0 * v));
}

#[test]
fn pyramid_shapes_and_identity_level() {
    let mut store = ParamStore::new();
    let p = ScalePyramid::init(&mut store, "pyr", 256, DEFAULT_DIMS, DEFAULT_TOKEN_DIM, &mut rng(40)).unwrap();
    let img = rand_t(&[3, 256], 41);
    let tab = rand_t(&[3, 256], 42);
    let mut tape = Tape::new();
    let (i, t) = (tape.leaf(img.clone()), tape.leaf(tab));
    let pairs = pyramid_project(&mut tape, &store, i, t, &p).unwrap();
    let shapes: Vec<_> = pairs.iter().map(|&(a, b)| (tape.shape(a).to_vec(), tape.shape(b).to_vec())).collect();
    assert_eq!(shapes[0], (vec![3, 16, 16], vec![3, 16, 16]));
    assert_eq!(shapes[1], (vec![3, 8, 16], vec![3, 8, 16]));
    assert_eq!(shapes[2], (vec![3, 4, 16], vec![3, 4, 16]));

    set_identity(&mut store, &p.levels[0].img_proj);
    let mut tape = Tape::new();
    let (i, t) = (tape.leaf(img.clone()), tape.leaf(rand_t(&[3, 256], 43)));
    let pairs = pyramid_project(&mut tape, &store, i, t, &p).unwrap();
    assert_eq!(tape.value(pairs[0].0), &img.reshape(&[3, 16, 16]).unwrap());

    let mut tape = Tape::new();
    let (i, t) = (tape.leaf(rand_t(&[3, 128], 44)), tape.leaf(rand_t(&[3, 256], 45)));
    assert!(matches!(pyramid_project(&mut tape, &store, i, t, &p), Err(Error::Config(_))));
}

#[test]
fn fuse_scale_width_equals_level_dim_and_rejects_mixed_levels() {
    let mut store = ParamStore::new();
    let p = MscaParams::init(&mut store, "m", 256, DEFAULT_DIMS, 16, 4, &mut rng(50)).unwrap();
    let mut tape = Tape::new();
    let (i, t) = (tape.leaf(rand_t(&[2, 256], 51)), tape.leaf(rand_t(&[2, 256], 52)));
    let levels = msca_levels(&mut tape, &store, i, t, &p).unwrap();
    let dims: Vec<_> = levels.iter().map(|&v| tape.shape(v).to_vec()).collect();
    assert_eq!(dims, vec![vec![2, 256], vec![2, 128], vec![2, 64]]);
    let pairs = pyramid_project(&mut tape, &store, i, t, &p.pyramid).unwrap();
    let err = fuse_scale(&mut tape, &store, pairs[0].0, pairs[1].1, &p.img2tab[0], &p.tab2img[0]);
    assert!(matches!(err, Err(Error::Config(_))));
}

fn direct_bsf(u: &Tensor<f64>, v: &Tensor<f64>, store: &ParamStore<f64>, p: &BsfParams) -> Tensor<f64> {
    let lin = |x: &Tensor<f64>, l: &Linear| {
        let (b, din) = (x.shape()[0], x.shape()[1]);
        let w = store.get(l.weight);
        let bias = store.get(l.bias.unwrap());
        Tensor::from_fn(&[b, l.out_dim], |i| {
            let (r, c) = (i / l.out_dim, i % l.out_dim);
            bias.data()[c] + (0..din).map(|k| x.data()[r * din + k] * w.data()[k * l.out_dim + c]).sum::<f64>()
        })
    };
    let (ua, va) = (lin(u, &p.align_a), lin(v, &p.align_b));
    let d = p.out_dim();
    let mut out = Tensor::zeros(ua.shape());
    for r in 0..ua.shape()[0] {
        let prod: Vec<f64> = (0..d).map(|c| ua.data()[r * d + c] * va.data()[r * d + c]).collect();
        let mx = prod.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = prod.iter().map(|x| (x - mx).exp()).sum();
        for c in 0..d {
            let w = (prod[c] - mx).exp() / z;
            out.data_mut()[r * d + c] = w * (ua.data()[r * d + c] + va.data()[r * d + c]) * d as f64 / 2.0;
        }
    }
    out
}

#[test]
fn bsf_constant_fixed_point_and_formula() {
    let mut store = ParamStore::new();
    let p = BsfParams::init(&mut store, "bsf", 2, 2, 2, &mut rng(60));
    set_identity(&mut store, &p.align_a);
    set_identity(&mut store, &p.align_b);
    let mut tape = Tape::new();
    let one = Tensor::ones(&[1, 2]);
    let (u, v) = (tape.leaf(one.clone()), tape.leaf(one.clone()));
    let (_, _, w) = bsf_importance(&mut tape, &store, u, v, &p).unwrap();
    let out = bsf_merge(&mut tape, &store, u, v, &p).unwrap();
    assert_eq!(tape.value(w).data(), &[0.5, 0.5]);
    assert_eq!(tape.value(out), &one);

    for seed in 0..5 {
        let mut store = ParamStore::new();
        let p = BsfParams::init(&mut store, "bsf", 12, 7, 9, &mut rng(seed));
        let bias_ids: Vec<_> = [p.align_a.bias, p.align_b.bias].into_iter().flatten().collect();
        for (k, id) in bias_ids.into_iter().enumerate() {
            store.set(id, rand_t(&[9], 70 + seed * 2 + k as u64)).unwrap();
        }
        let u = rand_t(&[3, 12], 80 + seed);
        let v = rand_t(&[3, 7], 90 + seed);
        let mut tape = Tape::new();
        let (uv, vv) = (tape.leaf(u.clone()), tape.leaf(v.clone()));
        let (_, _, w) = bsf_importance(&mut tape, &store, uv, vv, &p).unwrap();
        for row in tape.value(w).data().chunks(9) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let w_before = tape.value(w).clone();
        let out = bsf_merge(&mut tape, &store, uv, vv, &p).unwrap();
        assert!(tape.value(out).max_abs_diff(&direct_bsf(&u, &v, &store, &p)) <= 1e-12);

        // Rescaling v moves the weights but the merge stays finite and shaped.
        let mut tape = Tape::new();
        let (uv, vv) = (tape.leaf(u.clone()), tape.leaf(v.map(|x| 37.0 * x)));
        let (_, _, w2) = bsf_importance(&mut tape, &store, uv, vv, &p).unwrap();
        let out2 = bsf_merge(&mut tape, &store, uv, vv, &p).unwrap();
        assert_eq!(tape.shape(out2), &[3, 9]);
        assert!(tape.value(out2).is_finite());
        assert!(tape.value(w2).max_abs_diff(&w_before) > 0.0);
    }
}

fn msca_out(store: &ParamStore<f64>, p: &MscaParams, img: &Tensor<f64>, tab: &Tensor<f64>) -> Tensor<f64> {
    let mut tape = Tape::new();
    let (i, t) = (tape.leaf(img.clone()), tape.leaf(tab.clone()));
    let o = msca_forward(&mut tape, store, i, t, p).unwrap();
    tape.value(o).clone()
}

#[test]
fn msca_shapes_and_batch_permutation() {
    let mut store = ParamStore::new();
    let p = MscaParams::init(&mut store, "m", 256, DEFAULT_DIMS, 16, 4, &mut rng(100)).unwrap();
    for b in [1, 4] {
        assert_eq!(msca_out(&store, &p, &rand_t(&[b, 256], 101), &rand_t(&[b, 256], 102)).shape(), &[b, 256]);
    }
    let img = rand_t(&[4, 256], 103);
    let tab = rand_t(&[4, 256], 104);
    let perm = [2, 0, 3, 1];
    let permute = |x: &Tensor<f64>| {
        let d = x.shape()[1];
        Tensor::from_fn(x.shape(), |i| x.data()[perm[i / d] * d + i % d])
    };
    let out = msca_out(&store, &p, &img, &tab);
    let out_p = msca_out(&store, &p, &permute(&img), &permute(&tab));
    assert!(out_p.max_abs_diff(&permute(&out)) <= 1e-12);
}

#[test]
fn gradients_through_attention_pyramid_and_msca() {
    let dims = [24, 16, 8];
    for seed in 0..3u64 {
        let mut store = ParamStore::new();
        let p = MscaParams::init(&mut store, "m", 24, dims, 4, 2, &mut rng(200 + seed)).unwrap();
        let img = rand_t(&[2, 24], 210 + seed);
        let tab = rand_t(&[2, 24], 220 + seed);

        let tab_c = tab.clone();
        let pp = &p;
        let st = &store;
        let via_img = |f: fn(&mut Tape<f64>, &ParamStore<f64>, Var, Var, &MscaParams) -> mmfuse::Result<Var>| {
            grad_check(|t, i| {
                let tv = t.constant(tab_c.clone());
                let y = f(t, st, i, tv, pp)?;
                wsum(t, y, seed)
            }, &img, 1e-5).unwrap()
        };
        let pyr = via_img(|t, s, i, tv, p| {
            let pairs = pyramid_project(t, s, i, tv, &p.pyramid)?;
            let parts: Vec<Var> = pairs.iter().flat_map(|&(a, b)| [a, b]).map(|v| {
                let n = t.shape(v).iter().product();
                t.reshape(v, &[n])
            }).collect::<mmfuse::Result<_>>()?;
            t.concat(&parts, 0)
        });
        assert!(pyr <= GRAD_TOL, "pyramid seed {seed}: {pyr:e}");
        let fuse = via_img(|t, s, i, tv, p| {
            let pairs = pyramid_project(t, s, i, tv, &p.pyramid)?;
            fuse_scale(t, s, pairs[1].0, pairs[1].1, &p.img2tab[1], &p.tab2img[1])
        });
        assert!(fuse <= GRAD_TOL, "fuse_scale seed {seed}: {fuse:e}");
        let full = via_img(msca_forward);
        assert!(full <= GRAD_TOL, "msca seed {seed}: {full:e}");

        let img_c = img.clone();
        let err = grad_check(|t, tv| {
            let i = t.constant(img_c.clone());
            let y = msca_forward(t, &store, i, tv, &p)?;
            wsum(t, y, seed)
        }, &tab, 1e-5).unwrap();
        assert!(err <= GRAD_TOL, "msca tabular seed {seed}: {err:e}");

        for id in [p.img2tab[0].w_q, p.tab2img[2].w_k, p.img2tab[1].w_v, p.bsf[1].align_a.weight, p.pyramid.levels[1].tab_proj.weight] {
            let err = param_check(&store, id, |t| {
                let i = t.constant(img.clone());
                let tv = t.constant(tab.clone());
                let y = msca_forward(t, &store, i, tv, &p)?;
                wsum(t, y, seed)
            });
            assert!(err <= GRAD_TOL, "{} seed {seed}: {err:e}", store.name(id));
        }
    }
}

#[test]
fn cross_attention_and_bsf_gradients() {
    for seed in 0..5u64 {
        let mut store = ParamStore::new();
        let p = attn(&mut store, 8, 6, 2, 300 + seed);
        let q = rand_t(&[2, 3, 8], 310 + seed);
        let kv = rand_t(&[2, 4, 6], 320 + seed);
        let kvc = kv.clone();
        let err = grad_check(|t, qv| {
            let k = t.constant(kvc.clone());
            let y = cross_attention(t, &store, qv, k, &p)?;
            wsum(t, y, seed)
        }, &q, 1e-5).unwrap();
        assert!(err <= GRAD_TOL, "attention q seed {seed}: {err:e}");
        let qc = q.clone();
        let err = grad_check(|t, k| {
            let qv = t.constant(qc.clone());
            let y = cross_attention(t, &store, qv, k, &p)?;
            wsum(t, y, seed)
        }, &kv, 1e-5).unwrap();
        assert!(err <= GRAD_TOL, "attention kv seed {seed}: {err:e}");

        let bsf = BsfParams::init(&mut store, "bsf", 5, 3, 4, &mut rng(330 + seed));
        let v = rand_t(&[2, 3], 340 + seed);
        let err = grad_check(|t, u| {
            let vv = t.constant(v.clone());
            let y = bsf_merge(t, &store, u, vv, &bsf)?;
            wsum(t, y, seed)
        }, &rand_t(&[2, 5], 350 + seed), 1e-5).unwrap();
        assert!(err <= GRAD_TOL, "bsf seed {seed}: {err:e}");
    }
}
