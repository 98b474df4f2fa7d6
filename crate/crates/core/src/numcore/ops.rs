use super::tape::{gelu, rbf_basis, sigmoid, Op, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn same_tape(a: &Var<'_>, b: &Var<'_>) -> Result<()> {
    if std::ptr::eq(a.tape, b.tape) {
        Ok(())
    } else {
        Err(Error::InvalidArgument("operands live on different tapes".into()))
    }
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("zip_with preserves shape")
}

impl<'t> Var<'t> {
    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let out = self.value().map(f);
        self.tape.push(out, op, &[self.id])
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        same_tape(&self, &other)?;
        let (a, b) = (self.value(), other.value());
        check_same_shape("add", &a, &b)?;
        let out = zip_with(&a, &b, |x, y| x + y);
        Ok(self.tape.push(out, Op::Add(self.id, other.id), &[self.id, other.id]))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        same_tape(&self, &other)?;
        let (a, b) = (self.value(), other.value());
        check_same_shape("sub", &a, &b)?;
        let out = zip_with(&a, &b, |x, y| x - y);
        Ok(self.tape.push(out, Op::Sub(self.id, other.id), &[self.id, other.id]))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        same_tape(&self, &other)?;
        let (a, b) = (self.value(), other.value());
        check_same_shape("mul", &a, &b)?;
        let out = zip_with(&a, &b, |x, y| x * y);
        Ok(self.tape.push(out, Op::Mul(self.id, other.id), &[self.id, other.id]))
    }

    /// Adds a `[1, m]` row to every row of an `[n, m]` matrix.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        same_tape(&self, &row)?;
        let (a, r) = (self.value(), row.value());
        if r.rows() != 1 || r.cols() != a.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + row {:?}", a.shape(), r.shape()),
            ));
        }
        let cols = a.cols();
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + r.data()[i % cols])
            .collect();
        let out = Tensor::new(a.rows(), cols, data)?;
        Ok(self.tape.push(out, Op::AddRow(self.id, row.id), &[self.id, row.id]))
    }

    /// Multiplies every row of an `[n, m]` matrix by a `[1, m]` row.
    pub fn mul_row(self, row: Var<'t>) -> Result<Var<'t>> {
        same_tape(&self, &row)?;
        let (a, r) = (self.value(), row.value());
        if r.rows() != 1 || r.cols() != a.cols() {
            return Err(Error::shape(
                "mul_row",
                format!("{:?} * row {:?}", a.shape(), r.shape()),
            ));
        }
        let cols = a.cols();
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * r.data()[i % cols])
            .collect();
        let out = Tensor::new(a.rows(), cols, data)?;
        Ok(self.tape.push(out, Op::MulRow(self.id, row.id), &[self.id, row.id]))
    }

    /// Scales row `i` of an `[n, m]` matrix by entry `i` of an `[n, 1]` column.
    pub fn mul_col(self, col: Var<'t>) -> Result<Var<'t>> {
        same_tape(&self, &col)?;
        let (a, c) = (self.value(), col.value());
        if c.cols() != 1 || c.rows() != a.rows() {
            return Err(Error::shape(
                "mul_col",
                format!("{:?} * column {:?}", a.shape(), c.shape()),
            ));
        }
        let cols = a.cols().max(1);
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * c.data()[i / cols])
            .collect();
        let out = Tensor::new(a.rows(), a.cols(), data)?;
        Ok(self.tape.push(out, Op::MulCol(self.id, col.id), &[self.id, col.id]))
    }

    pub fn scale(self, factor: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, factor), |v| v * factor)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |v| v + c)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        same_tape(&self, &other)?;
        let out = self.value().matmul(&other.value())?;
        Ok(self.tape.push(out, Op::MatMul(self.id, other.id), &[self.id, other.id]))
    }

    pub fn transpose(self) -> Var<'t> {
        let out = self.value().transpose();
        self.tape.push(out, Op::Transpose(self.id), &[self.id])
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(Op::Sqrt(self.id), f64::sqrt)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square(self.id), |v| v * v)
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(Op::Abs(self.id), f64::abs)
    }

    pub fn silu(self) -> Var<'t> {
        self.unary(Op::Silu(self.id), |v| v * sigmoid(v))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(self) -> Var<'t> {
        self.unary(Op::Gelu(self.id), gelu)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    /// Sum of all entries as a `1x1` value.
    pub fn sum(self) -> Var<'t> {
        let s = self.value().data().iter().sum();
        self.tape.push(Tensor::scalar(s), Op::SumAll(self.id), &[self.id])
    }

    /// Column sums: `[n, m] -> [1, m]`.
    pub fn sum_rows(self) -> Var<'t> {
        let v = self.value();
        let cols = v.cols();
        let mut sums = vec![0.0; cols];
        for (i, x) in v.data().iter().enumerate() {
            sums[i % cols] += x;
        }
        self.tape
            .push(Tensor::row_vector(sums), Op::SumRows(self.id), &[self.id])
    }

    /// Row sums: `[n, m] -> [n, 1]`.
    pub fn sum_cols(self) -> Var<'t> {
        let v = self.value();
        let sums = (0..v.rows()).map(|r| v.row(r).iter().sum()).collect();
        self.tape
            .push(Tensor::column(sums), Op::SumCols(self.id), &[self.id])
    }

    /// Mean over rows: `[n, m] -> [1, m]`.
    pub fn mean_rows(self) -> Result<Var<'t>> {
        let n = self.rows();
        if n == 0 {
            return Err(Error::InvalidArgument("mean over zero rows".into()));
        }
        Ok(self.sum_rows().scale(1.0 / n as f64))
    }

    /// Row-wise softmax of `x / temperature` along the last axis.
    ///
    /// Uses max subtraction, which leaves the result unchanged because the
    /// softmax is invariant to a per-row additive shift.
    pub fn softmax(self, temperature: f64) -> Result<Var<'t>> {
        if temperature.is_nan() || temperature <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "softmax temperature must be positive, got {temperature}"
            )));
        }
        let x = self.value();
        if x.cols() == 0 {
            return Err(Error::EmptySoftmaxAxis);
        }
        let out = softmax_rows(&x, temperature);
        Ok(self.tape.push(
            out,
            Op::Softmax {
                input: self.id,
                temperature,
            },
            &[self.id],
        ))
    }

    /// Layer normalization over the last axis with affine `gain`/`bias` rows.
    pub fn layer_norm(self, gain: Var<'t>, bias: Var<'t>, eps: f64) -> Result<Var<'t>> {
        same_tape(&self, &gain)?;
        same_tape(&self, &bias)?;
        let x = self.value();
        let (g, b) = (gain.value(), bias.value());
        let d = x.cols();
        if g.shape() != [1, d] || b.shape() != [1, d] {
            return Err(Error::shape(
                "layer_norm",
                format!("input {:?}, gain {:?}, bias {:?}", x.shape(), g.shape(), b.shape()),
            ));
        }
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::InvalidArgument("layer_norm eps must be positive".into()));
        }
        let mut normalized = Tensor::zeros(x.rows(), d);
        let mut out = Tensor::zeros(x.rows(), d);
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + eps).sqrt();
            inv_std.push(s);
            for j in 0..d {
                let xh = (row[j] - mean) * s;
                normalized.set(r, j, xh);
                out.set(r, j, xh * g.data()[j] + b.data()[j]);
            }
        }
        Ok(self.tape.push(
            out,
            Op::LayerNorm {
                input: self.id,
                gain: gain.id,
                bias: bias.id,
                normalized,
                inv_std,
            },
            &[self.id, gain.id, bias.id],
        ))
    }

    /// Selects rows by index (repeats allowed).
    pub fn gather_rows(self, index: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let cols = x.cols();
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index {
            if i >= x.rows() {
                return Err(Error::shape(
                    "gather_rows",
                    format!("row index {i} out of range for {:?}", x.shape()),
                ));
            }
            data.extend_from_slice(x.row(i));
        }
        let out = Tensor::new(index.len(), cols, data)?;
        Ok(self.tape.push(
            out,
            Op::GatherRows {
                input: self.id,
                index: index.to_vec(),
            },
            &[self.id],
        ))
    }

    /// Sums row `r` of the input into output row `index[r]`.
    pub fn scatter_add_rows(self, index: &[usize], rows: usize) -> Result<Var<'t>> {
        let x = self.value();
        if index.len() != x.rows() {
            return Err(Error::shape(
                "scatter_add_rows",
                format!("{} indices for {} rows", index.len(), x.rows()),
            ));
        }
        let mut out = Tensor::zeros(rows, x.cols());
        for (r, &dst) in index.iter().enumerate() {
            if dst >= rows {
                return Err(Error::shape(
                    "scatter_add_rows",
                    format!("target row {dst} out of range {rows}"),
                ));
            }
            for (o, v) in out.row_mut(dst).iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        Ok(self.tape.push(
            out,
            Op::ScatterAddRows {
                input: self.id,
                index: index.to_vec(),
            },
            &[self.id],
        ))
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        if start + len > x.rows() {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {start}..{} of {:?}", start + len, x.shape()),
            ));
        }
        let cols = x.cols();
        let data = x.data()[start * cols..(start + len) * cols].to_vec();
        let out = Tensor::new(len, cols, data)?;
        Ok(self
            .tape
            .push(out, Op::SliceRows { input: self.id, start }, &[self.id]))
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        if start + len > x.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("cols {start}..{} of {:?}", start + len, x.shape()),
            ));
        }
        let out = Tensor::from_fn(x.rows(), len, |r, c| x.get(r, start + c));
        Ok(self
            .tape
            .push(out, Op::SliceCols { input: self.id, start }, &[self.id]))
    }

    pub fn reshape(self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let x = self.value();
        let out = Tensor::new(rows, cols, x.data().to_vec())?;
        Ok(self.tape.push(out, Op::Reshape(self.id), &[self.id]))
    }

    /// Membership-weighted pooling.
    ///
    /// With `W: [n, k]` and `X: [n, d]`, returns `T: [k, d]` where
    /// `m_a = sum_i W_ia + eps` and `T_a = sum_i (W_ia / m_a) X_i`.
    /// The backward pass uses the closed forms
    /// `dT_a/dX_i = W_ia / m_a` and `dT_a/dW_ia = (X_i - T_a) / m_a`.
    pub fn pool(self, features: Var<'t>, eps: f64) -> Result<Var<'t>> {
        same_tape(&self, &features)?;
        let w = self.value();
        let x = features.value();
        if w.rows() != x.rows() {
            return Err(Error::shape(
                "pool",
                format!("weights {:?} vs features {:?}", w.shape(), x.shape()),
            ));
        }
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::InvalidArgument("pooling eps must be positive".into()));
        }
        let (n, k, d) = (w.rows(), w.cols(), x.cols());
        let mass: Vec<f64> = (0..k)
            .map(|a| (0..n).map(|i| w.get(i, a)).sum::<f64>() + eps)
            .collect();
        let mut out = Tensor::zeros(k, d);
        for a in 0..k {
            let row = out.row_mut(a);
            for i in 0..n {
                let coef = w.get(i, a) / mass[a];
                for (o, v) in row.iter_mut().zip(x.row(i)) {
                    *o += coef * v;
                }
            }
        }
        Ok(self.tape.push(
            out,
            Op::Pool {
                weights: self.id,
                features: features.id,
                mass,
            },
            &[self.id, features.id],
        ))
    }

    /// `-sum_t mask_t * log softmax(logits_t)[target_t]`.
    ///
    /// Rows with `mask_t == false` contribute nothing to the value and their
    /// gradient rows are exactly zero.
    pub fn masked_nll(self, targets: &[usize], mask: &[bool]) -> Result<Var<'t>> {
        let logits = self.value();
        let (t_len, vocab) = (logits.rows(), logits.cols());
        if targets.len() != t_len || mask.len() != t_len {
            return Err(Error::shape(
                "masked_nll",
                format!(
                    "{t_len} logit rows, {} targets, {} mask entries",
                    targets.len(),
                    mask.len()
                ),
            ));
        }
        let mut probs = Tensor::zeros(t_len, vocab);
        let mut loss = 0.0;
        for t in 0..t_len {
            if !mask[t] {
                continue;
            }
            if targets[t] >= vocab {
                return Err(Error::shape(
                    "masked_nll",
                    format!("target {} out of vocabulary {vocab}", targets[t]),
                ));
            }
            let row = logits.row(t);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + denom.ln();
            loss -= row[targets[t]] - log_z;
            for (p, v) in probs.row_mut(t).iter_mut().zip(row) {
                *p = (v - log_z).exp();
            }
        }
        Ok(self.tape.push(
            Tensor::scalar(loss),
            Op::MaskedNll {
                logits: self.id,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
            },
            &[self.id],
        ))
    }

    /// Expands an `[e, 1]` column of distances into `[e, centers.len()]`
    /// Gaussian basis activations under a cosine cutoff envelope.
    pub fn rbf(self, centers: &[f64], gamma: f64, cutoff: f64) -> Result<Var<'t>> {
        let d = self.value();
        if d.cols() != 1 {
            return Err(Error::shape("rbf", format!("expected a column, got {:?}", d.shape())));
        }
        let out = Tensor::from_fn(d.rows(), centers.len(), |e, r| {
            rbf_basis(d.get(e, 0), centers[r], gamma, cutoff).0
        });
        Ok(self.tape.push(
            out,
            Op::Rbf {
                input: self.id,
                centers: centers.to_vec(),
                gamma,
                cutoff,
            },
            &[self.id],
        ))
    }
}

/// Concatenates along columns; all parts need the same row count.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat_cols of nothing".into()))?;
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let rows = values[0].rows();
    for (p, v) in parts.iter().zip(&values) {
        same_tape(first, p)?;
        if v.rows() != rows {
            return Err(Error::shape(
                "concat_cols",
                format!("row counts {rows} and {}", v.rows()),
            ));
        }
    }
    let cols: usize = values.iter().map(|v| v.cols()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for v in &values {
            data.extend_from_slice(v.row(r));
        }
    }
    let out = Tensor::new(rows, cols, data)?;
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    Ok(first.tape.push(out, Op::ConcatCols(ids.clone()), &ids))
}

/// Concatenates along rows; all parts need the same column count.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat_rows of nothing".into()))?;
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let cols = values[0].cols();
    let mut data = Vec::new();
    let mut rows = 0;
    for (p, v) in parts.iter().zip(&values) {
        same_tape(first, p)?;
        if v.cols() != cols {
            return Err(Error::shape(
                "concat_rows",
                format!("column counts {cols} and {}", v.cols()),
            ));
        }
        data.extend_from_slice(v.data());
        rows += v.rows();
    }
    let out = Tensor::new(rows, cols, data)?;
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    Ok(first.tape.push(out, Op::ConcatRows(ids.clone()), &ids))
}

pub fn softmax_rows(x: &Tensor, temperature: f64) -> Tensor {
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let row = x.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let o = out.row_mut(r);
        let mut total = 0.0;
        for (o, v) in o.iter_mut().zip(row) {
            *o = ((v - max) / temperature).exp();
            total += *o;
        }
        for o in o.iter_mut() {
            *o /= total;
        }
    }
    out
}

/// Additive score applied to masked attention entries.
pub const MASKED_SCORE: f64 = -1e30;

/// Which (query, key) pairs may attend.
#[derive(Clone, Debug)]
pub enum AttentionMask {
    /// Every query sees every key.
    None,
    /// Per-key validity shared by all queries.
    Keys(Vec<bool>),
    /// Full `[queries, keys]` validity matrix in row-major order.
    Pairs { queries: usize, keys: usize, allowed: Vec<bool> },
}

impl AttentionMask {
    fn allowed(&self, q: usize, k: usize, n_keys: usize) -> bool {
        match self {
            AttentionMask::None => true,
            AttentionMask::Keys(valid) => valid[k],
            AttentionMask::Pairs { allowed, .. } => allowed[q * n_keys + k],
        }
    }
}

/// What to do with a query row that has no visible key.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmptyRows {
    Error,
    /// Output a zero row (used for padded queries).
    Zero,
}

/// Output of [`scaled_dot_attention`].
pub struct Attention<'t> {
    pub output: Var<'t>,
    pub weights: Var<'t>,
}

/// Single-head scaled dot-product attention.
///
/// Masked entries get an additive `-1e30` score before the softmax, which
/// drives their weight to exactly zero.
pub fn scaled_dot_attention<'t>(
    q: Var<'t>,
    k: Var<'t>,
    v: Var<'t>,
    mask: &AttentionMask,
    empty_rows: EmptyRows,
) -> Result<Attention<'t>> {
    let ([nq, dq], [nk, dk], [nv, _]) = (q.shape(), k.shape(), v.shape());
    if dq != dk {
        return Err(Error::shape(
            "attention",
            format!("query width {dq} vs key width {dk}"),
        ));
    }
    if nv != nk {
        return Err(Error::shape(
            "attention",
            format!("{nk} keys but {nv} value rows"),
        ));
    }
    match mask {
        AttentionMask::Keys(valid) if valid.len() != nk => {
            return Err(Error::shape("attention", "key mask length"));
        }
        AttentionMask::Pairs { queries, keys, allowed }
            if *queries != nq || *keys != nk || allowed.len() != nq * nk =>
        {
            return Err(Error::shape("attention", "pair mask shape"));
        }
        _ => {}
    }
    let mut additive = Tensor::zeros(nq, nk);
    let mut row_live = vec![1.0; nq];
    let mut any_masked = false;
    for (qi, live) in row_live.iter_mut().enumerate() {
        let mut visible = 0;
        for ki in 0..nk {
            if mask.allowed(qi, ki, nk) {
                visible += 1;
            } else {
                additive.set(qi, ki, MASKED_SCORE);
                any_masked = true;
            }
        }
        if visible == 0 {
            match empty_rows {
                EmptyRows::Error => return Err(Error::FullyMaskedRow),
                EmptyRows::Zero => *live = 0.0,
            }
        }
    }
    let tape = q.tape();
    let scores = q.matmul(k.transpose())?.scale(1.0 / (dq as f64).sqrt());
    let scores = if any_masked {
        scores.add(tape.constant(additive))?
    } else {
        scores
    };
    let mut weights = scores.softmax(1.0)?;
    if row_live.contains(&0.0) {
        weights = weights.mul_col(tape.constant(Tensor::column(row_live)))?;
    }
    let output = weights.matmul(v)?;
    Ok(Attention { output, weights })
}
