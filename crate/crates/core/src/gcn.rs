//! Graph convolution over a merged scene graph, mean readout and the
//! snippet classifier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{softmax, Tape, Tensor, Var};
use crate::tube::argmax;

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` for a symmetric 0/1 adjacency `a` (`n × n`).
pub fn normalize_adjacency(a: &[f64], n: usize) -> Result<Vec<f64>> {
    if a.len() != n * n {
        return Err(Error::shape("normalize_adjacency", &[n, n], &[a.len()]));
    }
    let deg: Vec<f64> = (0..n)
        .map(|i| 1.0 + (0..n).filter(|&j| j != i).map(|j| a[i * n + j]).sum::<f64>())
        .collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let aij = if i == j { 1.0 } else { a[i * n + j] };
            if aij != 0.0 {
                out[i * n + j] = aij / (deg[i].sqrt() * deg[j].sqrt());
            }
        }
    }
    Ok(out)
}

/// `relu(Â·H·W + b)`.
pub fn gcn_layer_forward(tape: &mut Tape, h: Var, a_hat: Var, w: Var, b: Var) -> Result<Var> {
    let hw = tape.matmul(h, w)?;
    let (rows, cols) = (tape.shape(hw)[0], tape.shape(hw)[1]);
    if tape.shape(a_hat) != [rows, rows] {
        return Err(Error::shape("gcn_layer", tape.shape(a_hat), &[rows, rows]));
    }
    if tape.shape(b) != [1, cols] {
        return Err(Error::shape("gcn_layer bias", tape.shape(b), &[1, cols]));
    }
    let ones = tape.constant(Tensor::full(vec![rows, 1], 1.0));
    let propagated = tape.matmul(a_hat, hw)?;
    let bias = tape.matmul(ones, b)?;
    let pre = tape.add(propagated, bias)?;
    Ok(tape.relu(pre))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    /// Mean over nodes of the last layer.
    #[default]
    Final,
    /// Concatenated node means of every layer.
    Concat,
}

/// Node-mean readout, `[1, d]`.
pub fn graph_readout(tape: &mut Tape, layer_outputs: &[Var], readout: Readout) -> Result<Var> {
    let last = *layer_outputs
        .last()
        .ok_or_else(|| Error::InvalidArgument("readout of no layers".into()))?;
    match readout {
        Readout::Final => tape.mean_rows(last),
        Readout::Concat => {
            let means = layer_outputs.iter().map(|&h| tape.mean_rows(h)).collect::<Result<Vec<_>>>()?;
            tape.concat_cols(&means)
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub weight: Var,
    pub bias: Var,
}

/// Runs the layer stack and returns each layer's node features.
pub fn gcn_forward(tape: &mut Tape, h0: Var, adjacency: &[f64], layers: &[LayerVars]) -> Result<Vec<Var>> {
    let n = tape.shape(h0)[0];
    let a_hat = tape.constant(Tensor::new(vec![n, n], normalize_adjacency(adjacency, n)?)?);
    let mut outs = Vec::with_capacity(layers.len());
    let mut h = h0;
    for l in layers {
        h = gcn_layer_forward(tape, h, a_hat, l.weight, l.bias)?;
        outs.push(h);
    }
    Ok(outs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub logits: Var,
    pub probabilities: Vec<f64>,
    pub label: usize,
}

/// Softmax classification of a graph representation; ties go to the lowest
/// class index.
pub fn classify_snippet(tape: &mut Tape, x_g: Var, classifier: &LayerVars) -> Result<Classification> {
    let logits = tape.linear(x_g, classifier.weight, classifier.bias)?;
    let probabilities = softmax(tape.value(logits).data());
    let (label, _) = argmax(&probabilities);
    Ok(Classification {
        logits,
        probabilities,
        label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::check_gradients;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_adjacency(&[0.0], 1).unwrap(), vec![1.0]);
        let two = normalize_adjacency(&[0.0, 1.0, 1.0, 0.0], 2).unwrap();
        for v in two {
            assert_abs_diff_eq!(v, 0.5, epsilon = 1e-15);
        }
        let eye = normalize_adjacency(&[0.0; 9], 3).unwrap();
        assert_eq!(eye, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    fn leaf(tape: &mut Tape, shape: &[usize], data: Vec<f64>) -> Var {
        tape.leaf(&Tensor::new(shape.to_vec(), data).unwrap())
    }

    #[test]
    fn layer_examples() {
        let mut tape = Tape::new();
        let h = leaf(&mut tape, &[2, 2], vec![1.0, 0.5, 2.0, 0.0]);
        let eye = leaf(&mut tape, &[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let zb = leaf(&mut tape, &[1, 2], vec![0.0, 0.0]);
        let out = gcn_layer_forward(&mut tape, h, eye, eye, zb).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 0.5, 2.0, 0.0]);

        let zh = leaf(&mut tape, &[2, 2], vec![0.0; 4]);
        let out = gcn_layer_forward(&mut tape, zh, eye, eye, zb).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));

        let h = leaf(&mut tape, &[2, 1], vec![1.0, 3.0]);
        let a = leaf(&mut tape, &[2, 2], normalize_adjacency(&[0.0, 1.0, 1.0, 0.0], 2).unwrap());
        let w = leaf(&mut tape, &[1, 1], vec![1.0]);
        let b = leaf(&mut tape, &[1, 1], vec![0.0]);
        let out = gcn_layer_forward(&mut tape, h, a, w, b).unwrap();
        for &v in tape.value(out).data() {
            assert_abs_diff_eq!(v, 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn readout_examples() {
        let mut tape = Tape::new();
        let one = leaf(&mut tape, &[1, 3], vec![1.0, 2.0, 3.0]);
        let r = graph_readout(&mut tape, &[one], Readout::Final).unwrap();
        assert_eq!(tape.value(r).data(), &[1.0, 2.0, 3.0]);
        let same = leaf(&mut tape, &[3, 2], vec![4.0, 5.0, 4.0, 5.0, 4.0, 5.0]);
        let r = graph_readout(&mut tape, &[same], Readout::Final).unwrap();
        for (v, e) in tape.value(r).data().iter().zip([4.0, 5.0]) {
            assert_abs_diff_eq!(*v, e, epsilon = 1e-12);
        }
        let two = leaf(&mut tape, &[2, 3], vec![0.0, 0.0, 0.0, 2.0, 2.0, 2.0]);
        let r = graph_readout(&mut tape, &[two], Readout::Final).unwrap();
        assert_eq!(tape.value(r).data(), &[1.0, 1.0, 1.0]);
        let r = graph_readout(&mut tape, &[one, one], Readout::Concat).unwrap();
        assert_eq!(tape.shape(r), &[1, 6]);
    }

    #[test]
    fn classifier_examples() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 3], vec![0.2, -0.4, 1.0]);
        let zero = LayerVars {
            weight: leaf(&mut tape, &[3, 4], vec![0.0; 12]),
            bias: leaf(&mut tape, &[1, 4], vec![0.0; 4]),
        };
        let c = classify_snippet(&mut tape, x, &zero).unwrap();
        assert_eq!(c.label, 0);
        assert!(c.probabilities.iter().all(|&p| (p - 0.25).abs() < 1e-15));

        let dominant = LayerVars {
            bias: leaf(&mut tape, &[1, 4], vec![0.0, 0.0, 1000.0, 0.0]),
            ..zero
        };
        let c = classify_snippet(&mut tape, x, &dominant).unwrap();
        assert_eq!(c.label, 2);
        assert!((c.probabilities[2] - 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let w = leaf(&mut tape, &[3, 5], (0..15).map(|_| rng.random_range(-5.0..5.0)).collect());
            let b = leaf(&mut tape, &[1, 5], (0..5).map(|_| rng.random_range(-5.0..5.0)).collect());
            let c = classify_snippet(&mut tape, x, &LayerVars { weight: w, bias: b }).unwrap();
            let total: f64 = c.probabilities.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(c.probabilities.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 4;
        let h = random(&mut rng, &[n, 3]);
        let ws: Vec<Tensor> = [[3, 5], [5, 5], [5, 6]].iter().map(|s| random(&mut rng, s)).collect();
        let bs: Vec<Tensor> = [5, 5, 6].iter().map(|&c| random(&mut rng, &[1, c])).collect();
        let adj = vec![0., 1., 0., 1., 1., 0., 1., 0., 0., 1., 0., 0., 1., 0., 0., 0.];
        let perm = [2, 0, 3, 1];

        let run = |h: &Tensor, adj: &[f64]| {
            let mut tape = Tape::new();
            let hv = tape.leaf(h);
            let layers: Vec<LayerVars> = ws
                .iter()
                .zip(&bs)
                .map(|(w, b)| LayerVars {
                    weight: tape.leaf(w),
                    bias: tape.leaf(b),
                })
                .collect();
            let outs = gcn_forward(&mut tape, hv, adj, &layers).unwrap();
            let r = graph_readout(&mut tape, &outs, Readout::Final).unwrap();
            (tape.value(*outs.last().unwrap()).data().to_vec(), tape.value(r).data().to_vec())
        };
        let (out, read) = run(&h, &adj);
        let mut hp = vec![0.0; n * 3];
        let mut ap = vec![0.0; n * n];
        for (new, &old) in perm.iter().enumerate() {
            hp[new * 3..new * 3 + 3].copy_from_slice(&h.data()[old * 3..old * 3 + 3]);
            for (new2, &old2) in perm.iter().enumerate() {
                ap[new * n + new2] = adj[old * n + old2];
            }
        }
        let (out_p, read_p) = run(&Tensor::new(vec![n, 3], hp).unwrap(), &ap);
        for (new, &old) in perm.iter().enumerate() {
            for c in 0..6 {
                assert_abs_diff_eq!(out_p[new * 6 + c], out[old * 6 + c], epsilon = 1e-12);
            }
        }
        for (a, b) in read.iter().zip(&read_p) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn end_to_end_gradient() {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 1 + (seed as usize % 4);
            let h = random(&mut rng, &[n, 4]);
            let w1 = random(&mut rng, &[4, 8]);
            let w2 = random(&mut rng, &[8, 6]);
            let wc = random(&mut rng, &[6, 3]);
            let adj: Vec<f64> = (0..n * n)
                .map(|i| if i / n != i % n && (i / n + i % n) % 2 == 1 { 1.0 } else { 0.0 })
                .collect();
            let f = |t: &mut Tape, x: Var| -> Result<Var> {
                let layers = [
                    LayerVars {
                        weight: t.leaf(&w1),
                        bias: t.leaf(&Tensor::full(vec![1, 8], 0.1)),
                    },
                    LayerVars {
                        weight: t.leaf(&w2),
                        bias: t.leaf(&Tensor::full(vec![1, 6], 0.1)),
                    },
                ];
                let outs = gcn_forward(t, x, &adj, &layers)?;
                let r = graph_readout(t, &outs, Readout::Concat)?;
                let r = t.slice_rows(r, 0, 1)?;
                let wcat = t.leaf(&Tensor::new(vec![14, 3], (0..42).map(|i| wc.data()[i % 18]).collect())?);
                let cls = LayerVars {
                    weight: wcat,
                    bias: t.leaf(&Tensor::zeros(vec![1, 3])),
                };
                let c = classify_snippet(t, r, &cls)?;
                t.softmax_cross_entropy(c.logits, 1)
            };
            let err = check_gradients(f, &h, 1e-6);
            assert!(err < 1e-4, "seed {seed}: err {err}");
        }
    }
}
