use hsd_core::attention::{
    attention_weights, compressed_multi_head, encoder_forward, encoder_grad, linformer_project, multi_head,
    scaled_dot_attention, AttentionConfig, AttentionParams, EncoderParams, Example,
};
use hsd_core::corpus::Label;
use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;

type Mat = Vec<Vec<f64>>;

fn to_vec(a: &ArrayView2<f64>) -> Mat {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, m, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for j in 0..p {
            let mut s = 0.0;
            for k in 0..m {
                s += a[i][k] * b[k][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

fn naive_attention(q: &Mat, k: &Mat, v: &Mat) -> Mat {
    let scale = 1.0 / (q[0].len() as f64).sqrt();
    q.iter()
        .map(|qi| {
            let scores: Vec<f64> = k
                .iter()
                .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale)
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            (0..v[0].len())
                .map(|d| exps.iter().zip(v).map(|(e, vj)| e / z * vj[d]).sum())
                .collect()
        })
        .collect()
}

fn naive_block(x: &Mat, p: &AttentionParams, e: Option<&Mat>) -> Mat {
    let mut concat: Mat = vec![Vec::new(); x.len()];
    for h in &p.heads {
        let q = matmul(x, &to_vec(&h.query.view()));
        let mut k = matmul(x, &to_vec(&h.key.view()));
        let mut v = matmul(x, &to_vec(&h.value.view()));
        if let Some(e) = e {
            let et = transpose(e);
            k = matmul(&et, &k);
            v = matmul(&et, &v);
        }
        for (row, out) in concat.iter_mut().zip(naive_attention(&q, &k, &v)) {
            row.extend(out);
        }
    }
    matmul(&concat, &to_vec(&p.output.view()))
}

fn naive_forward(ids: &[usize], mask: &[bool], p: &EncoderParams) -> [f64; 2] {
    let emb = to_vec(&p.embedding.view());
    let pos: Vec<usize> = (0..ids.len()).filter(|&i| mask[i]).collect();
    let x0: Mat = pos.iter().map(|&i| emb[ids[i]].clone()).collect();
    let e_full = to_vec(&p.compressed.projection.as_ref().unwrap().view());
    let e: Mat = pos.iter().map(|&i| e_full[i].clone()).collect();
    let x1 = add(&x0, &naive_block(&x0, &p.compressed, Some(&e)));
    let x2 = add(&x1, &naive_block(&x1, &p.dense, None));
    let d = x2[0].len();
    let pooled: Vec<f64> = (0..d)
        .map(|j| x2.iter().map(|r| r[j]).sum::<f64>() / x2.len() as f64)
        .collect();
    let w = to_vec(&p.head_weight.view());
    let mut out = [p.head_bias[[0, 0]], p.head_bias[[0, 1]]];
    for (c, o) in out.iter_mut().enumerate() {
        *o += (0..d).map(|j| pooled[j] * w[j][c]).sum::<f64>();
    }
    out
}

fn tiny_config() -> AttentionConfig {
    AttentionConfig {
        heads: 2,
        d_k: 4,
        d_v: 4,
        d_model: 8,
        n_max: 4,
        projection_dim: 2,
    }
}

fn arr(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        (((i * 31 + j * 17) as f64) + seed as f64 * 0.37).sin()
    })
}

#[test]
fn forward_matches_straight_line_oracle() {
    let p = EncoderParams::seeded(tiny_config(), 9, 4).unwrap();
    for (ids, mask) in [
        (vec![1, 4, 8, 0], vec![true, true, true, false]),
        (vec![2, 2, 3, 7], vec![true; 4]),
        (vec![6], vec![true]),
    ] {
        let got = encoder_forward(&ids, &mask, &p).unwrap();
        let want = naive_forward(&ids, &mask, &p);
        for c in 0..2 {
            assert!((got[c] - want[c]).abs() < 1e-12, "{got:?} vs {want:?}");
        }
    }
}

#[test]
fn single_token_pools_to_itself() {
    let mut p = EncoderParams::seeded(tiny_config(), 9, 4).unwrap();
    // Selector head weights expose the first two pooled coordinates.
    p.head_weight.fill(0.0);
    p.head_weight[[0, 0]] = 1.0;
    p.head_weight[[1, 1]] = 1.0;
    let x0 = vec![to_vec(&p.embedding.view())[5].clone()];
    let e0 = vec![to_vec(&p.compressed.projection.as_ref().unwrap().view())[0].clone()];
    let x1 = add(&x0, &naive_block(&x0, &p.compressed, Some(&e0)));
    let x2 = add(&x1, &naive_block(&x1, &p.dense, None));
    let logits = encoder_forward(&[5], &[true], &p).unwrap();
    assert!((logits[0] - x2[0][0]).abs() < 1e-12 && (logits[1] - x2[0][1]).abs() < 1e-12);
}

#[test]
fn random_projection_matches_matmul() {
    let k = arr(5, 3, 1);
    let v = arr(5, 4, 2);
    let e = arr(5, 2, 3);
    let (kp, vp) = linformer_project(&k.view(), &v.view(), &e.view()).unwrap();
    let et = transpose(&to_vec(&e.view()));
    let want_k = matmul(&et, &to_vec(&k.view()));
    let want_v = matmul(&et, &to_vec(&v.view()));
    assert_eq!(kp.dim(), (2, 3));
    for (a, b) in to_vec(&kp.view()).concat().iter().zip(want_k.concat()) {
        assert!((a - b).abs() < 1e-12);
    }
    for (a, b) in to_vec(&vp.view()).concat().iter().zip(want_v.concat()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn identity_projection_equals_dense() {
    let n = 6;
    let cfg = AttentionConfig {
        heads: 3,
        d_k: 2,
        d_v: 2,
        d_model: 6,
        n_max: n,
        projection_dim: n,
    };
    let mut p = AttentionParams::seeded(&cfg, true, 5);
    p.projection = Some(Array2::eye(n));
    let x = arr(n, 6, 8);
    let a = multi_head(&x.view(), &p).unwrap();
    let b = compressed_multi_head(&x.view(), &p).unwrap();
    for (u, w) in a.iter().zip(b.iter()) {
        assert!((u - w).abs() <= 1e-6);
    }
}

#[test]
fn one_head_identity_reduces_to_attention() {
    let cfg = AttentionConfig {
        heads: 1,
        d_k: 3,
        d_v: 3,
        d_model: 3,
        n_max: 4,
        projection_dim: 1,
    };
    let mut p = AttentionParams::zeros(&cfg, false);
    p.heads[0].query = Array2::eye(3);
    p.heads[0].key = Array2::eye(3);
    p.heads[0].value = Array2::eye(3);
    p.output = Array2::eye(3);
    let x = arr(4, 3, 2);
    let a = multi_head(&x.view(), &p).unwrap();
    let b = scaled_dot_attention(&x.view(), &x.view(), &x.view()).unwrap();
    for (u, w) in a.iter().zip(b.iter()) {
        assert!((u - w).abs() < 1e-12);
    }
}

#[test]
fn identical_rows_give_identical_outputs() {
    let cfg = AttentionConfig::scaled(2, 3, 5);
    let p = AttentionParams::seeded(&cfg, false, 1);
    let mut x = arr(4, 6, 3);
    let row = x.row(1).to_owned();
    x.row_mut(3).assign(&row);
    let out = multi_head(&x.view(), &p).unwrap();
    for j in 0..6 {
        assert!((out[[1, j]] - out[[3, j]]).abs() < 1e-12);
    }
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn batch() -> Vec<Example> {
    vec![
        Example {
            ids: vec![1, 3, 5, 0],
            mask: vec![true, true, true, false],
            label: Label::Hateful,
        },
        Example {
            ids: vec![2, 4, 6, 7],
            mask: vec![true; 4],
            label: Label::NotHateful,
        },
        Example {
            ids: vec![8, 0, 0, 0],
            mask: vec![true, false, false, false],
            label: Label::Hateful,
        },
    ]
}

#[test]
fn gradient_matches_finite_differences() {
    let p = EncoderParams::seeded(tiny_config(), 9, 21).unwrap();
    let data = batch();
    let (_, g) = encoder_grad(&data, &p).unwrap();
    let analytic = g.flat();
    let base = p.flat();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut probe = p.clone();
    for i in 0..base.len() {
        let mut v = base.clone();
        v[i] = base[i] + h;
        probe.set_flat(&v).unwrap();
        let plus = encoder_grad(&data, &probe).unwrap().0;
        v[i] = base[i] - h;
        probe.set_flat(&v).unwrap();
        let minus = encoder_grad(&data, &probe).unwrap().0;
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    assert!(worst <= 1e-4, "max relative error {worst}");
}

#[test]
fn saturated_batch_has_vanishing_gradient() {
    let mut p = EncoderParams::seeded(tiny_config(), 9, 2).unwrap();
    p.head_weight.fill(0.0);
    p.head_bias[[0, Label::Hateful.index()]] = 60.0;
    let data: Vec<Example> = batch().into_iter().filter(|e| e.label == Label::Hateful).collect();
    let (loss, g) = encoder_grad(&data, &p).unwrap();
    assert!(loss < 1e-20);
    assert!(g.flat().iter().all(|x| x.abs() < 1e-20));
}

proptest! {
    #[test]
    fn weights_are_stochastic_and_outputs_convex(
        q in proptest::collection::vec(-30.0f64..30.0, 6),
        k in proptest::collection::vec(-30.0f64..30.0, 8),
        v in proptest::collection::vec(-5.0f64..5.0, 12),
    ) {
        let q = Array2::from_shape_vec((3, 2), q).unwrap();
        let k = Array2::from_shape_vec((4, 2), k).unwrap();
        let v = Array2::from_shape_vec((4, 3), v).unwrap();
        let w = attention_weights(&q.view(), &k.view()).unwrap();
        for row in w.rows() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-6);
        }
        let out = scaled_dot_attention(&q.view(), &k.view(), &v.view()).unwrap();
        for d in 0..3 {
            let col = v.column(d);
            let lo = col.fold(f64::INFINITY, |m, &x| m.min(x));
            let hi = col.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            for i in 0..3 {
                prop_assert!(out[[i, d]] >= lo - 1e-9 && out[[i, d]] <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn forward_is_deterministic(seed in 0u64..1000, len in 1usize..=4) {
        let a = EncoderParams::seeded(tiny_config(), 9, seed).unwrap();
        let b = EncoderParams::seeded(tiny_config(), 9, seed).unwrap();
        let ids: Vec<usize> = (0..len).map(|i| (i * 7 + seed as usize) % 9).collect();
        let mask = vec![true; len];
        prop_assert_eq!(encoder_forward(&ids, &mask, &a).unwrap(), encoder_forward(&ids, &mask, &b).unwrap());
    }
}
