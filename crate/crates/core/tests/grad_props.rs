use hybridcast::grad::{adam_step, gradient_check, AdamState, CheckOptions, Graph, Mode};
use hybridcast::rng::seeded;
use ndarray::Array2;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-1.5f64..1.5, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smooth_composites_match_finite_differences(
        a in matrix(3, 4), b in matrix(4, 2), c in matrix(3, 2), bias in matrix(1, 2), t in matrix(3, 2)
    ) {
        let report = gradient_check(&[a, b, c, bias], &CheckOptions::default(), |g, v| {
            let ab = g.matmul(v[0], v[1])?;
            let h = g.tanh(g.add_row(ab, v[3])?);
            let gate = g.sigmoid(v[2]);
            let mixed = g.hadamard(h, gate)?;
            let joined = g.concat_cols(mixed, g.scale(v[2], 0.5))?;
            let back = g.slice_cols(joined, 1, 2)?;
            g.mse_loss(back, g.constant(t.clone()))
        }).unwrap();
        prop_assert!(report.max_rel_error < 1e-4, "{:?}", report);
    }

    #[test]
    fn lstm_cell_and_propagation_match_finite_differences(
        x in matrix(4, 3), state in matrix(4, 4), w in matrix(5, 8), b in matrix(1, 8), t in matrix(4, 2)
    ) {
        let adj = Array2::from_shape_fn((2, 2), |(i, j)| if i == j { 0.6 } else { 0.4 });
        let report = gradient_check(&[x, state, w, b], &CheckOptions::default(), |g, v| {
            let hc = g.lstm_cell(v[0], v[1], v[2], v[3])?;
            let h = g.slice_cols(hc, 0, 2)?;
            let mixed = g.propagate(adj.view(), h)?;
            g.mse_loss(mixed, g.constant(t.clone()))
        }).unwrap();
        prop_assert!(report.max_rel_error < 1e-4, "{:?}", report);
    }

    #[test]
    fn mse_is_nonnegative_and_zero_only_on_equality(p in matrix(3, 3), q in matrix(3, 3)) {
        let g = Graph::new();
        let loss = g.mse_loss(g.constant(p.clone()), g.constant(q.clone())).unwrap();
        let same = g.mse_loss(g.constant(p.clone()), g.constant(p.clone())).unwrap();
        prop_assert!(g.scalar(loss) >= 0.0);
        prop_assert_eq!(g.scalar(same), 0.0);
        prop_assert_eq!(g.scalar(loss) == 0.0, p == q);
    }

    #[test]
    fn dropout_and_gradients_are_deterministic(x in matrix(5, 6), seed in any::<u64>()) {
        let run = || {
            let g = Graph::new();
            let p = g.param(x.clone());
            let d = g.dropout(p, 0.5, Mode::Train, &mut seeded(seed)).unwrap();
            let loss = g.mse_loss(g.tanh(d), g.constant(Array2::zeros((5, 6)))).unwrap();
            let grads = g.backward(loss).unwrap();
            let out = g.value(d).clone();
            (out, grads.get(p).unwrap().clone())
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        prop_assert_eq!(v1.as_slice().unwrap().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                        v2.as_slice().unwrap().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(g1, g2);
    }

    #[test]
    fn adam_step_ignores_gradient_scale(
        p in matrix(3, 3), grads in prop::collection::vec(matrix(3, 3), 1..5), c in 0.01f64..100.0
    ) {
        let mut pa = vec![p.clone()];
        let mut pb = vec![p];
        let mut sa = AdamState::new(0.01, &pa);
        let mut sb = AdamState::new(0.01, &pb);
        sa.eps = 0.0;
        sb.eps = 0.0;
        for gr in &grads {
            adam_step(&mut pa, &[gr.clone()], &mut sa).unwrap();
            adam_step(&mut pb, &[gr * c], &mut sb).unwrap();
        }
        for (m1, m2) in sa.m[0].iter().zip(sb.m[0].iter()) {
            prop_assert!((m1 * c - m2).abs() <= 1e-9 * m2.abs().max(1e-12));
        }
        for (x, y) in pa[0].iter().zip(pb[0].iter()) {
            prop_assert!((x - y).abs() < 1e-9, "{} vs {}", x, y);
        }
    }
}

#[test]
fn inverted_dropout_preserves_expectation() {
    let n = 200_000;
    let rate = 0.5;
    let g = Graph::new();
    let x = g.constant(Array2::from_elem((1, n), 2.0));
    let y = g.dropout(x, rate, Mode::Train, &mut seeded(123)).unwrap();
    let v = g.value(y);
    let mean = v.sum() / n as f64;
    // each output is 0 or 4 with equal odds: sd 2, standard error 2 / sqrt(n)
    let se = 2.0 / (n as f64).sqrt();
    assert!((mean - 2.0).abs() < 3.0 * se, "mean {mean}, se {se}");
}
