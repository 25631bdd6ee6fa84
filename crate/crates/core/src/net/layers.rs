//! Graph layers of the encoder: k-nearest-neighbor graphs and EdgeConv.

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};

/// For each row, the `k` nearest other rows by Euclidean distance, lowest
/// index first among ties. Returned flat: row `i` owns `[i*k, (i+1)*k)`.
pub fn knn_graph(points: &Matrix, k: usize) -> Result<Vec<usize>> {
    let n = points.rows();
    if k == 0 || n <= k {
        return Err(Error::TooFewPoints { n, k });
    }
    let mut out = Vec::with_capacity(n * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        let pi = points.row(i);
        cand.clear();
        for j in (0..n).filter(|&j| j != i) {
            let d: f64 = pi.iter().zip(points.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            cand.push((d, j));
        }
        let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, by);
        }
        let head = &mut cand[..k];
        head.sort_unstable_by(by);
        out.extend(head.iter().map(|&(_, j)| j));
    }
    Ok(out)
}

/// Weights of a per-edge MLP: `(weight, bias)` pairs applied in order, each
/// followed by a leaky ReLU with `slope`.
#[derive(Debug, Clone, Copy)]
pub struct EdgeMlp<'a> {
    pub layers: &'a [(Var, Var)],
    pub slope: f64,
}

/// EdgeConv: for every point `i` and neighbor `j`, the edge feature is
/// `mlp([f_i, f_j - f_i])`; the output row `i` is the channelwise max over
/// its `k` edges.
pub fn edge_conv(tape: &mut Tape, features: Var, graph: &[usize], k: usize, mlp: EdgeMlp<'_>) -> Result<Var> {
    let n = tape.value(features).rows();
    if k == 0 || graph.len() != n * k {
        return Err(Error::shape(
            "edge_conv",
            format!("graph of {} entries for {n} points with k={k}", graph.len()),
        ));
    }
    let centers: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, k)).collect();
    let fi = tape.gather_rows(features, centers)?;
    let fj = tape.gather_rows(features, graph.to_vec())?;
    let diff = tape.sub(fj, fi)?;
    let mut h = tape.concat_cols(fi, diff)?;
    for &(w, b) in mlp.layers {
        let z = tape.matmul(h, w)?;
        let z = tape.add_bias(z, b)?;
        h = tape.leaky_relu(z, mlp.slope);
    }
    tape.group_max(h, k)
}
