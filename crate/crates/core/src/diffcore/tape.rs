use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::{DiffError, ParamStore, Result, SparseMatrix, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM(Arc<SparseMatrix>, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    HCat(Var, Var),
    VCat(Var, Var),
    RowMean(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    CosAffine { omega: Var, phi: Var, t: f64 },
    RowCosine(Var, Var),
    Ln(Var),
    ClampBelow(Var, f64),
    BroadcastRow(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// A single-threaded computation record for reverse-mode differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> DiffError {
    DiffError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dense_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = a.dims2();
    let (_, n) = b.dims2();
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = ad[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (o, y) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o += x * y;
            }
        }
    }
    Tensor::matrix(m, n, out).expect("matmul shape")
}

fn transpose(a: &Tensor) -> Tensor {
    let (m, n) = a.dims2();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data()[i * n + j];
        }
    }
    Tensor::matrix(n, m, out).expect("transpose shape")
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(DiffError::NonFiniteValue { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant input (no gradient is reported for it).
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push("constant", value, Op::Leaf)
    }

    /// Binds a registered parameter; repeated calls return the same handle.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(v) = self.params.get(name) {
            return Ok(*v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| DiffError::UnknownParameter(name.to_string()))?
            .clone();
        let v = self.push("param", value, Op::Leaf)?;
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(mismatch("matmul", ta, tb));
        }
        let out = dense_matmul(ta, tb);
        self.push("matmul", out, Op::MatMul(a, b))
    }

    /// Sparse (constant) times dense.
    pub fn spmm(&mut self, s: &Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let out = s.matmul_dense(self.value(x))?;
        self.push("spmm", out, Op::SpMM(Arc::clone(s), x))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = transpose(self.value(a));
        self.push("transpose", out, Op::Transpose(a))
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.dims2() != tb.dims2() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let (r, c) = ta.dims2();
        self.push(name, Tensor::matrix(r, c, data)?, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let ta = self.value(a);
        let out = ta.with_shape_of(ta.data().iter().map(|x| x * s).collect());
        self.push("scale", out, Op::Scale(a, s))
    }

    /// Joins two matrices side by side: `m x p` and `m x q` give `m x (p+q)`.
    pub fn hcat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((m, p), (m2, q)) = (ta.dims2(), tb.dims2());
        if m != m2 {
            return Err(mismatch("hcat", ta, tb));
        }
        let mut data = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            data.extend_from_slice(ta.row(i));
            data.extend_from_slice(tb.row(i));
        }
        self.push("hcat", Tensor::matrix(m, p + q, data)?, Op::HCat(a, b))
    }

    /// Stacks two matrices vertically: `m x n` and `p x n` give `(m+p) x n`.
    pub fn vcat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((m, n), (p, n2)) = (ta.dims2(), tb.dims2());
        if n != n2 {
            return Err(mismatch("vcat", ta, tb));
        }
        let mut data = Vec::with_capacity((m + p) * n);
        data.extend_from_slice(ta.data());
        data.extend_from_slice(tb.data());
        self.push("vcat", Tensor::matrix(m + p, n, data)?, Op::VCat(a, b))
    }

    /// Mean of each row, as an `m x 1` column.
    pub fn row_mean(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.dims2();
        let data = (0..m).map(|i| ta.row(i).iter().sum::<f64>() / n as f64).collect();
        self.push("row_mean", Tensor::matrix(m, 1, data)?, Op::RowMean(a))
    }

    fn map(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let ta = self.value(a);
        let out = ta.with_shape_of(ta.data().iter().map(|x| f(*x)).collect());
        self.push(name, out, op)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.map("ln", a, f64::ln, Op::Ln(a))
    }

    pub fn clamp_below(&mut self, a: Var, eps: f64) -> Result<Var> {
        self.map("clamp_below", a, |x| x.max(eps), Op::ClampBelow(a, eps))
    }

    /// `cos(omega * t + phi)` elementwise for a constant scalar `t`.
    pub fn cos_affine(&mut self, omega: Var, phi: Var, t: f64) -> Result<Var> {
        let (to, tp) = (self.value(omega), self.value(phi));
        if to.dims2() != tp.dims2() {
            return Err(mismatch("cos_affine", to, tp));
        }
        let data = to
            .data()
            .iter()
            .zip(tp.data())
            .map(|(w, p)| (w * t + p).cos())
            .collect();
        let (r, c) = to.dims2();
        self.push(
            "cos_affine",
            Tensor::matrix(r, c, data)?,
            Op::CosAffine { omega, phi, t },
        )
    }

    /// Cosine similarity of matching rows, as an `m x 1` column. Rows with
    /// zero norm give 0.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.dims2() != tb.dims2() {
            return Err(mismatch("row_cosine", ta, tb));
        }
        let m = ta.rows();
        let data = (0..m).map(|i| cosine_parts(ta.row(i), tb.row(i)).0).collect();
        self.push("row_cosine", Tensor::matrix(m, 1, data)?, Op::RowCosine(a, b))
    }

    /// Repeats a `1 x n` row `rows` times.
    pub fn broadcast_row(&mut self, a: Var, rows: usize) -> Result<Var> {
        let ta = self.value(a);
        let (r, n) = ta.dims2();
        if r != 1 {
            return Err(mismatch("broadcast_row", ta, &Tensor::zeros(&[1, n])));
        }
        let mut data = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            data.extend_from_slice(ta.data());
        }
        self.push("broadcast_row", Tensor::matrix(rows, n, data)?, Op::BroadcastRow(a))
    }

    /// Reverse pass from a scalar output. Returns one gradient per parameter
    /// registered in `store`; parameters that never reached the output get
    /// zeros.
    pub fn backward(&self, output: Var, store: &ParamStore) -> Result<BTreeMap<String, Tensor>> {
        let grads = self.backward_all(output)?;
        let mut out = BTreeMap::new();
        for (name, value) in store.iter() {
            let g = self
                .params
                .get(name)
                .and_then(|v| grads[v.0].clone())
                .unwrap_or_else(|| Tensor::zeros(value.shape()));
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    /// Gradients of `output` with respect to every recorded node (None when
    /// the node does not influence the output).
    pub fn backward_all(&self, output: Var) -> Result<Vec<Option<Tensor>>> {
        let out = self.value(output);
        if out.numel() != 1 {
            return Err(DiffError::NotScalarOutput(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(out.with_shape_of(vec![1.0]));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(grads)
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let mut acc = |v: Var, delta: Tensor| {
            let slot = &mut grads[v.0];
            match slot {
                Some(t) => t.add_assign(&delta),
                None => {
                    let shape = self.value(v).shape().to_vec();
                    *slot = Some(Tensor::new(shape, delta.into_data()).expect("grad shape"));
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, dense_matmul(g, &transpose(tb)));
                acc(*b, dense_matmul(&transpose(ta), g));
            }
            Op::SpMM(s, x) => {
                acc(*x, s.transpose_matmul_dense(g).expect("spmm grad"));
            }
            Op::Transpose(a) => acc(*a, transpose(g)),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.with_shape_of(g.data().iter().map(|x| -x).collect()));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, g.with_shape_of(zip(g, tb, |gi, bi| gi * bi)));
                acc(*b, g.with_shape_of(zip(g, ta, |gi, ai| gi * ai)));
            }
            Op::Scale(a, s) => acc(*a, g.with_shape_of(g.data().iter().map(|x| x * s).collect())),
            Op::HCat(a, b) => {
                let p = self.value(*a).cols();
                let q = self.value(*b).cols();
                let m = g.rows();
                let mut ga = Vec::with_capacity(m * p);
                let mut gb = Vec::with_capacity(m * q);
                for i in 0..m {
                    let row = g.row(i);
                    ga.extend_from_slice(&row[..p]);
                    gb.extend_from_slice(&row[p..]);
                }
                acc(*a, Tensor::matrix(m, p, ga).expect("hcat grad"));
                acc(*b, Tensor::matrix(m, q, gb).expect("hcat grad"));
            }
            Op::VCat(a, b) => {
                let (m, n) = self.value(*a).dims2();
                let split = m * n;
                let p = self.value(*b).rows();
                acc(*a, Tensor::matrix(m, n, g.data()[..split].to_vec()).expect("vcat grad"));
                acc(*b, Tensor::matrix(p, n, g.data()[split..].to_vec()).expect("vcat grad"));
            }
            Op::RowMean(a) => {
                let (m, n) = self.value(*a).dims2();
                let mut data = Vec::with_capacity(m * n);
                for i in 0..m {
                    let gi = g.data()[i] / n as f64;
                    data.extend(std::iter::repeat_n(gi, n));
                }
                acc(*a, Tensor::matrix(m, n, data).expect("row_mean grad"));
            }
            Op::Sigmoid(a) => acc(*a, g.with_shape_of(zip(g, y, |gi, s| gi * s * (1.0 - s)))),
            Op::Tanh(a) => acc(*a, g.with_shape_of(zip(g, y, |gi, t| gi * (1.0 - t * t)))),
            Op::Relu(a) => {
                let x = self.value(*a);
                acc(*a, g.with_shape_of(zip(g, x, |gi, xi| if xi > 0.0 { gi } else { 0.0 })));
            }
            Op::Ln(a) => {
                let x = self.value(*a);
                acc(*a, g.with_shape_of(zip(g, x, |gi, xi| gi / xi)));
            }
            Op::ClampBelow(a, eps) => {
                let x = self.value(*a);
                acc(
                    *a,
                    g.with_shape_of(zip(g, x, |gi, xi| if xi > *eps { gi } else { 0.0 })),
                );
            }
            Op::CosAffine { omega, phi, t } => {
                let (to, tp) = (self.value(*omega), self.value(*phi));
                let sin: Vec<f64> = to
                    .data()
                    .iter()
                    .zip(tp.data())
                    .map(|(w, p)| (w * t + p).sin())
                    .collect();
                let gphi: Vec<f64> = g.data().iter().zip(&sin).map(|(gi, s)| -gi * s).collect();
                let gomega: Vec<f64> = gphi.iter().map(|x| x * t).collect();
                acc(*omega, to.with_shape_of(gomega));
                acc(*phi, tp.with_shape_of(gphi));
            }
            Op::RowCosine(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, n) = ta.dims2();
                let mut ga = Vec::with_capacity(m * n);
                let mut gb = Vec::with_capacity(m * n);
                for i in 0..m {
                    let (ra, rb) = (ta.row(i), tb.row(i));
                    let (c, na, nb) = cosine_parts(ra, rb);
                    let gi = g.data()[i];
                    if na == 0.0 || nb == 0.0 {
                        ga.extend(std::iter::repeat_n(0.0, n));
                        gb.extend(std::iter::repeat_n(0.0, n));
                        continue;
                    }
                    for j in 0..n {
                        ga.push(gi * (rb[j] / (na * nb) - c * ra[j] / (na * na)));
                        gb.push(gi * (ra[j] / (na * nb) - c * rb[j] / (nb * nb)));
                    }
                }
                acc(*a, Tensor::matrix(m, n, ga).expect("cos grad"));
                acc(*b, Tensor::matrix(m, n, gb).expect("cos grad"));
            }
            Op::BroadcastRow(a) => {
                let n = g.cols();
                let mut sums = vec![0.0; n];
                for i in 0..g.rows() {
                    for (s, x) in sums.iter_mut().zip(g.row(i)) {
                        *s += x;
                    }
                }
                let shape = self.value(*a).shape().to_vec();
                acc(*a, Tensor::new(shape, sums).expect("broadcast grad"));
            }
        }
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect()
}

/// (cosine, |a|, |b|), cosine 0 when either norm is 0.
fn cosine_parts(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        (0.0, na, nb)
    } else {
        (dot / (na * nb), na, nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(entries: &[(&str, Tensor)]) -> ParamStore {
        let mut s = ParamStore::new();
        for (n, t) in entries {
            s.register(n, t.clone()).unwrap();
        }
        s
    }

    #[test]
    fn row_mean_and_sigmoid_values() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[&[1.0, 3.0], &[5.0, 7.0]])).unwrap();
        let m = tape.row_mean(a).unwrap();
        assert_eq!(tape.value(m).data(), &[2.0, 6.0]);
        let z = tape.constant(Tensor::scalar(0.0)).unwrap();
        let s = tape.sigmoid(z).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5]);
    }

    #[test]
    fn sparse_transpose_product() {
        let h = Arc::new(SparseMatrix::new(2, 1, vec![(0, 0, 1.0), (1, 0, 1.0)]).unwrap());
        let ht = Arc::new(h.transpose());
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[&[2.0], &[4.0]])).unwrap();
        let y = tape.spmm(&ht, x).unwrap();
        assert_eq!(tape.value(y).data(), &[6.0]);
    }

    #[test]
    fn linear_gradient() {
        let store = store_with(&[("w", Tensor::row_vector(vec![2.0]))]);
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let x = tape.constant(Tensor::column_vector(vec![3.0])).unwrap();
        let f = tape.matmul(w, x).unwrap();
        let g = tape.backward(f, &store).unwrap();
        assert_eq!(g["w"].data(), &[3.0]);
    }

    #[test]
    fn constant_path_has_zero_gradient() {
        let store = store_with(&[("w", Tensor::row_vector(vec![1.5, -2.0]))]);
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let zw = tape.scale(w, 0.0).unwrap();
        let s = tape.sigmoid(zw).unwrap();
        let s = tape.row_mean(s).unwrap();
        let g = tape.backward(s, &store).unwrap();
        assert_eq!(g["w"].data(), &[0.0, 0.0]);
    }

    #[test]
    fn mean_of_matrix_vector_product() {
        // f(W) = mean(W x) with x = [1, 1]: every entry gets 1/2.
        let store = store_with(&[("W", Tensor::from_rows(&[&[0.3, -1.0], &[2.0, 0.7]]))]);
        let mut tape = Tape::new();
        let w = tape.param(&store, "W").unwrap();
        let x = tape.constant(Tensor::column_vector(vec![1.0, 1.0])).unwrap();
        let y = tape.matmul(w, x).unwrap();
        let yt = tape.transpose(y).unwrap();
        let f = tape.row_mean(yt).unwrap();
        let g = tape.backward(f, &store).unwrap();
        assert_eq!(g["W"].data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn unused_parameter_gets_zeros() {
        let store = store_with(&[("a", Tensor::scalar(1.0)), ("b", Tensor::from_rows(&[&[1.0, 2.0]]))]);
        let mut tape = Tape::new();
        let a = tape.param(&store, "a").unwrap();
        let y = tape.scale(a, 4.0).unwrap();
        let g = tape.backward(y, &store).unwrap();
        assert_eq!(g["a"].data(), &[4.0]);
        assert_eq!(g["b"].data(), &[0.0, 0.0]);
        assert_eq!(g["b"].shape(), &[1, 2]);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let store = ParamStore::new();
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 2])).unwrap();
        assert!(matches!(tape.backward(a, &store), Err(DiffError::NotScalarOutput(_))));
    }

    #[test]
    fn shape_and_finiteness_errors() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        assert!(matches!(tape.matmul(a, b), Err(DiffError::ShapeMismatch { .. })));
        let c = tape.constant(Tensor::zeros(&[3, 2])).unwrap();
        assert!(tape.add(a, c).is_err());
        let z = tape.constant(Tensor::scalar(0.0)).unwrap();
        assert!(matches!(tape.ln(z), Err(DiffError::NonFiniteValue { op: "ln" })));
        assert!(tape.constant(Tensor::scalar(f64::INFINITY)).is_err());
    }

    #[test]
    fn zero_rows_have_zero_cosine() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[&[0.0, 0.0], &[1.0, 0.0]])).unwrap();
        let b = tape.constant(Tensor::from_rows(&[&[1.0, 1.0], &[0.0, 2.0]])).unwrap();
        let c = tape.row_cosine(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[0.0, 0.0]);
    }
}
