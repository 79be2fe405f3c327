//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Just enough machinery for small text classifiers: matmul, elementwise
//! nonlinearities, softmax, reductions. No broadcasting, no views, no
//! higher-order gradients.

mod tape;
mod tensor;

pub use tape::{BackwardPass, GradientResult, NodeId, Tape};
pub use tensor::Tensor;

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    /// Composite scalar function exercising every primitive at once.
    fn composite(xdata: &[f64; 6], wdata: &[f64; 3]) -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2, 3], xdata.to_vec()));
        let w = tape.leaf(Tensor::new(vec![3, 1], wdata.to_vec()));
        let h = tape.matmul(x, w).unwrap();
        let ht = tape.tanh(h);
        let hr = tape.relu(h);
        let mix = tape.add(ht, hr).unwrap();
        let sq = tape.mul(mix, mix).unwrap();
        let s = tape.softmax(sq);
        let picked = tape.dot(s, mix).unwrap();
        let y = tape.scale(picked, 1.5);
        let res = tape.backward_wrt(y, x).unwrap();
        (res.value, res.gradient.data().to_vec())
    }

    proptest! {
        #[test]
        fn gradients_match_central_differences(
            xdata in proptest::array::uniform6(-2.0f64..2.0),
            wdata in proptest::array::uniform3(-1.5f64..1.5),
        ) {
            let (_, grad) = composite(&xdata, &wdata);
            let h = 1e-5;
            for i in 0..6 {
                // relu kinks make the comparison meaningless right at zero
                let pre: f64 = (0..3).map(|j| xdata[i / 3 * 3 + j] * wdata[j]).sum();
                prop_assume!(pre.abs() > 1e-3);

                let mut up = xdata;
                let mut dn = xdata;
                up[i] += h;
                dn[i] -= h;
                let fd = (composite(&up, &wdata).0 - composite(&dn, &wdata).0) / (2.0 * h);
                if grad[i].abs() > 1e-6 {
                    // the difference quotient itself carries ~1e-10 of
                    // truncation and roundoff noise, so tiny gradients pass
                    // on absolute agreement
                    let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs());
                    prop_assert!(
                        rel < 1e-4 || (grad[i] - fd).abs() < 1e-9,
                        "component {}: {} vs {}", i, grad[i], fd
                    );
                } else {
                    prop_assert!(fd.abs() < 1e-3, "component {}: {} vs {}", i, grad[i], fd);
                }
            }
        }

        #[test]
        fn gradient_of_linear_form_is_the_weight_vector(
            (w, x) in (1usize..8).prop_flat_map(|n| (
                proptest::collection::vec(-5.0f64..5.0, n),
                proptest::collection::vec(-5.0f64..5.0, n),
            )),
        ) {
            let mut tape = Tape::new();
            let wn = tape.leaf(Tensor::vector(&w));
            let xn = tape.leaf(Tensor::vector(&x));
            let y = tape.dot(wn, xn).unwrap();
            let g = tape.backward_wrt(y, xn).unwrap();
            prop_assert_eq!(g.gradient.data(), &w[..]);
        }
    }
}
